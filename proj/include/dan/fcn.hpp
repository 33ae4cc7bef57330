#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dan/nn.hpp"
#include "dan/tensor.hpp"

// Feature Clustering Network: residual backbone producing feature maps plus
// the affinity loss over pooled features and learnable class centers. The
// affinity loss divides the summed feature-to-own-center squared distances by
// the variance of the centers themselves, so one term tightens clusters while
// the denominator pushes centers apart.

namespace dan {

// Architecture descriptor. Parameter and FLOP counts are pure functions of
// this plan (trainer's accounting relies on that).
struct BackbonePlan {
  std::string name;
  std::int64_t in_channels = 3;
  std::int64_t stem_channels = 0;
  std::int64_t stem_kernel = 3;
  std::int64_t stem_stride = 1;
  std::int64_t stem_pad = 1;
  bool stem_maxpool = false;  // 3x3 stride-2 max pool after the stem
  std::vector<std::int64_t> stage_channels;
  std::vector<std::int64_t> stage_blocks;
  std::vector<std::int64_t> stage_strides;  // stride of each stage's first block

  std::int64_t feature_dim() const { return stage_channels.back(); }
  // Product of all strides; input sides must be divisible by this.
  std::int64_t downsample_factor() const;
  void validate() const;

  // Desk-scale default: 4 stages of one block, widths 16/32/64/128, D=128,
  // 32x32 input -> 4x4 maps.
  static BackbonePlan toy();
  // Standard 18-layer residual layout, D=512, 224x224 -> 7x7 maps.
  static BackbonePlan resnet18();
  // Gradient-check scale: 2 stages, widths 4/8, D=8, 8x8 input -> 4x4 maps.
  static BackbonePlan mini();
  static BackbonePlan by_name(const std::string& name);
};

// Convolution (bias-free) followed by batch normalization.
struct ConvBn {
  Tensor w;      // [Cout, Cin, K, K]
  Tensor gamma;  // [Cout]
  Tensor beta;   // [Cout]
  BatchNormState bn;
  std::int64_t stride = 1;
  std::int64_t pad = 0;
};

// Two 3x3 ConvBn units with identity (or 1x1-projected) skip connection.
struct BasicBlock {
  ConvBn conv1;
  ConvBn conv2;
  bool has_projection = false;
  ConvBn projection;  // 1x1, present when shape changes across the block
};

struct Backbone {
  BackbonePlan plan;
  ConvBn stem;
  std::vector<std::vector<BasicBlock>> stages;

  // images [B, in_channels, H, W] -> feature map [B, D, H/f, W/f].
  Tensor forward(const Tensor& images, bool training, bool update_running);

  void visit_params(const std::function<void(const std::string&, Tensor&)>& fn);
  void visit_buffers(const std::function<void(const std::string&, Tensor&)>& fn);
};

Backbone make_backbone(const BackbonePlan& plan, Rng& rng);

// Learnable class centers, one column per class.
struct ClassCenters {
  Tensor c;  // [D, |Y|]
};

ClassCenters make_centers(std::int64_t d, std::int64_t num_classes, Rng& rng);

inline constexpr double kCenterStdFloor = 1e-8;

// Mean over dimensions of the per-dimension population variance across class
// columns, floored at kCenterStdFloor^2. Differentiable scalar.
Tensor center_var(const Tensor& centers);
// sqrt(center_var): the spread statistic sigma_c. Requires >= 2 classes.
Tensor center_std(const Tensor& centers);

// [B, D, h, w] -> [B, D] global average pooling of the feature map.
Tensor pooled_features(const Tensor& feature_map);

// L_af = sum_i ||features_i - c_{labels_i}||^2 / sigma_c^2 (no batch-size
// normalization, as the definition is written). Differentiable with respect
// to features and centers; the centers' gradient flows through both the
// numerator and sigma_c.
Tensor affinity_loss(const Tensor& features, const std::vector<int>& labels,
                     const Tensor& centers);

}  // namespace dan
