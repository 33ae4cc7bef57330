#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dan/tensor.hpp"

// Central-difference gradient verification.
//
// The loss closure must be a pure, re-evaluable function of the listed
// parameter tensors (freeze any stateful layer updates before calling). The
// analytic gradient comes from one backward() pass; each probed entry is then
// perturbed by ±step and the slope (f+ - f-) / (2*step) compared with
// relative error |a - n| / max(1, |a|, |n|).

namespace dan {

struct GradCheckEntry {
  std::string param;
  std::int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  bool passed = false;
  double max_rel_err = 0.0;
  std::int64_t entries_checked = 0;
  GradCheckEntry worst;
};

struct GradCheckOptions {
  double step = 1e-4;
  double tol = 1e-4;
  // Per-parameter cap on probed entries; <= 0 checks every entry. When capped,
  // the subset is drawn with `rng` (required in that case).
  std::int64_t max_entries_per_param = -1;
  Rng* rng = nullptr;
};

GradCheckReport gradcheck(const std::function<Tensor()>& loss_fn,
                          const std::vector<std::pair<std::string, Tensor>>& params,
                          const GradCheckOptions& opts = {});

}  // namespace dan
