#pragma once

#include <vector>

#include "dan/tensor.hpp"

// Attention Fusion Network: log-softmax scaling of the K head vectors across
// the head axis, the partition loss rewarding variance between heads, fusion
// by summation, a linear classifier, and the weighted joint objective.

namespace dan {

struct LossWeights {
  double lambda1 = 1.0;  // affinity term
  double lambda2 = 1.0;  // partition term
  void validate() const;
};

inline constexpr double kPartitionVarFloor = 1e-6;

// v_{j}^{l} = a_j^l - log sum_k exp(a_k^l), per (batch, l) across heads.
// Input/output [B, K, L]; computed with max subtraction. Every output entry
// is <= 0 and exp-sums to 1 across heads.
Tensor scale_features(const Tensor& a);

// L_pt = mean over (batch, l) of log(1 + K / var_j(v_{.,j,l})), population
// variance over heads floored at kPartitionVarFloor. K = 1 is rejected: the
// variance across one head is meaningless, disable the partition loss
// (lambda2 = 0) instead.
Tensor partition_loss(const Tensor& v);

// fused_i = sum_j v_{i,j,.}; logits = fused * w^T + b.
Tensor fuse_and_classify(const Tensor& v, const Tensor& w, const Tensor& bias);

// Mean over the batch of -log softmax(logits)[label], max-subtracted.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// lambda1 * af + lambda2 * pt + cls, composed left to right.
Tensor total_loss(const Tensor& af, const Tensor& pt, const Tensor& cls, const LossWeights& w);

}  // namespace dan
