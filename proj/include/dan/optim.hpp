#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dan/config.hpp"
#include "dan/tensor.hpp"

// SGD with momentum and Adam, operating on a fixed named-parameter list.
// Slot tensors are exposed by name so checkpoints can persist them.

namespace dan {

class Optimizer {
 public:
  // `params` fixes the parameter order; slots are allocated zero-filled.
  Optimizer(const OptimSpec& spec, const std::vector<std::pair<std::string, Tensor>>& params);

  // Applies one update with the given learning rate. A parameter without a
  // gradient contributes a zero gradient. Gradients are left untouched
  // (callers zero them between steps).
  void step(std::vector<std::pair<std::string, Tensor>>& params, double lr);

  // Persistent state: slot tensors plus the Adam step counter, all named.
  std::vector<std::pair<std::string, Tensor>> named_state();
  std::int64_t steps_taken() const { return t_; }
  void set_steps_taken(std::int64_t t) { t_ = t; }

  static constexpr double kAdamBeta1 = 0.9;
  static constexpr double kAdamBeta2 = 0.999;
  static constexpr double kAdamEps = 1e-8;

 private:
  OptimSpec spec_;
  std::int64_t t_ = 0;            // adam bias-correction counter
  std::vector<Tensor> slot1_;     // sgd velocity | adam first moment
  std::vector<Tensor> slot2_;     // adam second moment
  std::vector<std::string> names_;
};

// Learning rate for 0-based `step` of `total_steps`: constant, or cosine
// decay from lr to min_lr_frac * lr across the run.
double scheduled_lr(const OptimSpec& spec, std::int64_t step, std::int64_t total_steps);

}  // namespace dan
