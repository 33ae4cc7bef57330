#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dan/afn.hpp"
#include "dan/fcn.hpp"
#include "dan/man.hpp"

// The full network: backbone -> K attention heads -> scaled fusion ->
// classifier, with the three loss components and their weighted total.

namespace dan {

struct DanForward {
  Tensor feature_map;  // [B, D, h, w]
  Tensor features;     // [B, D] pooled backbone features
  ManOutput man;       // per-head vectors [B,K,L] and spatial gates
  Tensor v;            // [B, K, L] log-softmax-scaled vectors
  Tensor logits;       // [B, |Y|]
  Tensor af, pt, cls, total;  // scalar loss components; pt is constant 0 when K = 1
};

struct DanPrediction {
  Tensor feature_map;
  Tensor features;
  ManOutput man;
  Tensor v;
  Tensor logits;
};

struct DanModel {
  BackbonePlan plan;
  std::int64_t k = 0;
  std::int64_t num_classes = 0;
  Backbone backbone;
  std::vector<AttentionHead> heads;
  ClassCenters centers;
  Tensor cls_w;  // [|Y|, L]
  Tensor cls_b;  // [|Y|]

  std::int64_t feature_dim() const { return plan.feature_dim(); }

  // Stable, fixed-order parameter/buffer enumeration (checkpoints, optimizer
  // slot alignment and parameter counting all rely on this order).
  std::vector<std::pair<std::string, Tensor>> named_params();
  std::vector<std::pair<std::string, Tensor>> named_buffers();
  std::int64_t param_count();

  DanPrediction predict(const Tensor& images, bool training, bool update_running);
  DanForward forward(const Tensor& images, const std::vector<int>& labels, const LossWeights& w,
                     bool training, bool update_running);
};

DanModel make_dan_model(const BackbonePlan& plan, std::int64_t k, std::int64_t num_classes,
                        std::uint64_t seed);

}  // namespace dan
