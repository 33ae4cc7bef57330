#pragma once

#include <cstdint>

#include "dan/fcn.hpp"

// Closed-form parameter and multiply-accumulate accounting, derived purely
// from the architecture descriptor (no tensors are built).

namespace dan {

struct CostBreakdown {
  std::int64_t backbone_params = 0;
  std::int64_t attention_params = 0;  // all K heads
  std::int64_t center_params = 0;
  std::int64_t classifier_params = 0;
  std::int64_t total_params = 0;

  // Per-image multiply-accumulates at the given input size. Convolutions,
  // linear layers and batch-norm scale/shift are counted; activations and
  // pooling are not.
  double backbone_macs = 0.0;
  double attention_macs = 0.0;
  double classifier_macs = 0.0;
  double total_macs = 0.0;
};

CostBreakdown count_params_flops(const BackbonePlan& plan, std::int64_t k, std::int64_t classes,
                                 std::int64_t input_size);

}  // namespace dan
