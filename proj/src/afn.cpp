#include "dan/afn.hpp"

#include <algorithm>
#include <cmath>

#include "dan/nn.hpp"

namespace dan {

void LossWeights::validate() const {
  if (!std::isfinite(lambda1) || lambda1 < 0.0) throw ConfigError("lambda1 must be finite and >= 0");
  if (!std::isfinite(lambda2) || lambda2 < 0.0) throw ConfigError("lambda2 must be finite and >= 0");
}

Tensor scale_features(const Tensor& a) {
  if (a.rank() != 3) {
    throw ShapeError("scale_features: input must be [B,K,L], got " + shape_str(a.shape()));
  }
  for (double x : a.values()) {
    if (!std::isfinite(x)) throw ValueError("scale_features: non-finite input entry");
  }
  return log_softmax_axis1(a);
}

Tensor partition_loss(const Tensor& v) {
  if (v.rank() != 3) {
    throw ShapeError("partition_loss: input must be [B,K,L], got " + shape_str(v.shape()));
  }
  const std::int64_t k = v.dim(1);
  if (k < 2) {
    throw ValueError(
        "partition_loss: variance across a single head is meaningless; "
        "disable the partition loss (lambda2 = 0) for K = 1");
  }
  Tensor mu = mean_axis1(v);                               // [B, L]
  Tensor diff = sub(v, expand_axis1(mu, k));               // [B, K, L]
  Tensor var = mean_axis1(mul(diff, diff));                // [B, L], population
  Tensor floored = clamp_min(var, kPartitionVarFloor);
  Tensor ratio = scalar_div(static_cast<double>(k), floored);
  return mean(log(add_scalar(ratio, 1.0)));
}

Tensor fuse_and_classify(const Tensor& v, const Tensor& w, const Tensor& bias) {
  if (v.rank() != 3) {
    throw ShapeError("fuse_and_classify: input must be [B,K,L], got " + shape_str(v.shape()));
  }
  if (w.rank() != 2 || w.dim(1) != v.dim(2)) {
    throw ShapeError("fuse_and_classify: classifier expects width " +
                     (w.rank() == 2 ? std::to_string(w.dim(1)) : std::string("?")) +
                     ", fused vectors have width " + std::to_string(v.dim(2)));
  }
  return linear(sum_axis1(v), w, bias);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy: logits must be [B,Y], got " + shape_str(logits.shape()));
  }
  const std::int64_t b = logits.dim(0), y = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != b) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(b));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= y) {
      throw ValueError("cross_entropy: label " + std::to_string(labels[i]) + " at row " +
                       std::to_string(i) + " outside [0, " + std::to_string(y) + ")");
    }
  }

  const double* z = logits.values().data();
  const double inv_b = 1.0 / static_cast<double>(b);
  // Cache softmax rows for the adjoint.
  auto softmax = std::make_shared<std::vector<double>>(logits.values().size());
  double loss = 0.0;
  for (std::int64_t i = 0; i < b; ++i) {
    const double* row = z + i * y;
    double m = -HUGE_VAL;
    for (std::int64_t c = 0; c < y; ++c) m = std::max(m, row[c]);
    double zsum = 0.0;
    for (std::int64_t c = 0; c < y; ++c) zsum += std::exp(row[c] - m);
    const double lse = m + std::log(zsum);
    double* soft = softmax->data() + i * y;
    for (std::int64_t c = 0; c < y; ++c) soft[c] = std::exp(row[c] - lse);
    loss += lse - row[labels[static_cast<std::size_t>(i)]];
  }
  loss *= inv_b;

  auto li = logits.impl();
  auto labels_copy = labels;
  return detail::make_result({1}, {loss}, {li}, "cross_entropy",
                             [li, softmax, labels_copy, b, y, inv_b](const TensorImpl& o) {
                               if (!li->requires_grad) return;
                               li->ensure_grad();
                               const double g = o.grad[0] * inv_b;
                               for (std::int64_t i = 0; i < b; ++i) {
                                 const double* soft = softmax->data() + i * y;
                                 double* dst = li->grad.data() + i * y;
                                 for (std::int64_t c = 0; c < y; ++c) dst[c] += g * soft[c];
                                 dst[labels_copy[static_cast<std::size_t>(i)]] -= g;
                               }
                             });
}

Tensor total_loss(const Tensor& af, const Tensor& pt, const Tensor& cls, const LossWeights& w) {
  w.validate();
  for (const Tensor* t : {&af, &pt, &cls}) {
    if (t->numel() != 1) throw ShapeError("total_loss: components must be scalars");
    if (!std::isfinite(t->item())) throw ValueError("total_loss: non-finite loss component");
  }
  return add(add(mul_scalar(af, w.lambda1), mul_scalar(pt, w.lambda2)), cls);
}

}  // namespace dan
