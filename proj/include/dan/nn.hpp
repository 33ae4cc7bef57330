#pragma once

#include "dan/tensor.hpp"

// Dense layer, pooling and batch normalization building blocks.

namespace dan {

// y[N, Out] = x[N, In] * w[Out, In]^T (+ bias[Out] if defined).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

// [B, C, H, W] -> [B, C]; mean over the spatial plane in ascending order.
Tensor global_avg_pool(const Tensor& x);

// Running statistics of one batch-norm layer. Buffers, not parameters: they
// carry no gradient but are saved in checkpoints.
struct BatchNormState {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C], population variance
};

BatchNormState make_batch_norm_state(std::int64_t channels);

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Batch normalization over [B, C, H, W] with per-channel affine parameters.
//
// training=true normalizes with batch statistics (population variance, i.e.
// divide by the element count); running stats are folded in with
// new = (1 - momentum) * old + momentum * batch only when update_running is
// also set, so finite-difference probes can rerun the forward pass without
// side effects. training=false normalizes with the running statistics and is
// still differentiable with respect to x, gamma and beta.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training, bool update_running, double momentum = kBatchNormMomentum,
                  double eps = kBatchNormEps);

}  // namespace dan
