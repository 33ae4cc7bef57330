#include "dan/fcn.hpp"

#include <cmath>

#include "dan/conv.hpp"

namespace dan {

std::int64_t BackbonePlan::downsample_factor() const {
  std::int64_t f = stem_stride * (stem_maxpool ? 2 : 1);
  for (auto s : stage_strides) f *= s;
  return f;
}

void BackbonePlan::validate() const {
  if (stem_channels < 1) throw ConfigError("backbone plan '" + name + "': stem_channels must be >= 1");
  if (stage_channels.empty()) throw ConfigError("backbone plan '" + name + "': no stages");
  if (stage_channels.size() != stage_blocks.size() || stage_channels.size() != stage_strides.size()) {
    throw ConfigError("backbone plan '" + name + "': stage lists must have equal length");
  }
  for (std::size_t i = 0; i < stage_channels.size(); ++i) {
    if (stage_channels[i] < 4 || stage_channels[i] % 4 != 0) {
      throw ConfigError("backbone plan '" + name + "': stage widths must be positive multiples of 4 (attention units reduce by 2 and 4)");
    }
    if (stage_blocks[i] < 1) throw ConfigError("backbone plan '" + name + "': each stage needs >= 1 block");
    if (stage_strides[i] != 1 && stage_strides[i] != 2) {
      throw ConfigError("backbone plan '" + name + "': stage strides must be 1 or 2");
    }
  }
  if (stem_kernel != 3 && stem_kernel != 7) throw ConfigError("backbone plan '" + name + "': stem kernel must be 3 or 7");
}

BackbonePlan BackbonePlan::toy() {
  BackbonePlan p;
  p.name = "toy";
  p.stem_channels = 16;
  p.stem_kernel = 3;
  p.stem_stride = 1;
  p.stem_pad = 1;
  p.stem_maxpool = false;
  p.stage_channels = {16, 32, 64, 128};
  p.stage_blocks = {1, 1, 1, 1};
  p.stage_strides = {1, 2, 2, 2};
  return p;
}

BackbonePlan BackbonePlan::resnet18() {
  BackbonePlan p;
  p.name = "resnet18";
  p.stem_channels = 64;
  p.stem_kernel = 7;
  p.stem_stride = 2;
  p.stem_pad = 3;
  p.stem_maxpool = true;
  p.stage_channels = {64, 128, 256, 512};
  p.stage_blocks = {2, 2, 2, 2};
  p.stage_strides = {1, 2, 2, 2};
  return p;
}

BackbonePlan BackbonePlan::mini() {
  BackbonePlan p;
  p.name = "mini";
  p.stem_channels = 4;
  p.stem_kernel = 3;
  p.stem_stride = 1;
  p.stem_pad = 1;
  p.stem_maxpool = false;
  p.stage_channels = {4, 8};
  p.stage_blocks = {1, 1};
  p.stage_strides = {1, 2};
  return p;
}

BackbonePlan BackbonePlan::by_name(const std::string& name) {
  if (name == "toy") return toy();
  if (name == "resnet18") return resnet18();
  if (name == "mini") return mini();
  throw ConfigError("unknown backbone plan '" + name + "' (expected toy, resnet18 or mini)");
}

namespace {

// He-normal initialization for a conv kernel [Cout, Cin, KH, KW].
Tensor conv_init(std::int64_t cout, std::int64_t cin, std::int64_t kh, std::int64_t kw, Rng& rng) {
  const double fan_in = static_cast<double>(cin * kh * kw);
  return randn({cout, cin, kh, kw}, rng, std::sqrt(2.0 / fan_in), true);
}

ConvBn make_conv_bn(std::int64_t cout, std::int64_t cin, std::int64_t k, std::int64_t stride,
                    std::int64_t pad, Rng& rng) {
  ConvBn cb;
  cb.w = conv_init(cout, cin, k, k, rng);
  cb.gamma = full({cout}, 1.0, true);
  cb.beta = zeros({cout}, true);
  cb.bn = make_batch_norm_state(cout);
  cb.stride = stride;
  cb.pad = pad;
  return cb;
}

Tensor conv_bn_forward(ConvBn& cb, const Tensor& x, bool training, bool update_running) {
  Tensor y = conv2d(x, cb.w, Tensor(), cb.stride, cb.pad);
  return batch_norm(y, cb.gamma, cb.beta, cb.bn, training, update_running);
}

Tensor block_forward(BasicBlock& blk, const Tensor& x, bool training, bool update_running) {
  Tensor y = relu(conv_bn_forward(blk.conv1, x, training, update_running));
  y = conv_bn_forward(blk.conv2, y, training, update_running);
  Tensor skip = blk.has_projection ? conv_bn_forward(blk.projection, x, training, update_running) : x;
  return relu(add(y, skip));
}

void visit_conv_bn_params(const std::string& prefix, ConvBn& cb,
                          const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(prefix + ".w", cb.w);
  fn(prefix + ".gamma", cb.gamma);
  fn(prefix + ".beta", cb.beta);
}

void visit_conv_bn_buffers(const std::string& prefix, ConvBn& cb,
                           const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(prefix + ".running_mean", cb.bn.running_mean);
  fn(prefix + ".running_var", cb.bn.running_var);
}

}  // namespace

Tensor Backbone::forward(const Tensor& images, bool training, bool update_running) {
  if (images.rank() != 4) {
    throw ShapeError("backbone: input must be [B,C,H,W], got " + shape_str(images.shape()));
  }
  if (images.dim(1) != plan.in_channels) {
    throw ConfigError("backbone: plan expects " + std::to_string(plan.in_channels) +
                      " input channels, got " + std::to_string(images.dim(1)));
  }
  const std::int64_t f = plan.downsample_factor();
  if (images.dim(2) % f != 0 || images.dim(3) % f != 0) {
    throw ConfigError("backbone: input " + std::to_string(images.dim(2)) + "x" +
                      std::to_string(images.dim(3)) + " not divisible by downsampling factor " +
                      std::to_string(f));
  }

  Tensor y = relu(conv_bn_forward(stem, images, training, update_running));
  if (plan.stem_maxpool) y = max_pool2d(y, 3, 2, 1);
  for (auto& stage : stages) {
    for (auto& blk : stage) y = block_forward(blk, y, training, update_running);
  }
  return y;
}

void Backbone::visit_params(const std::function<void(const std::string&, Tensor&)>& fn) {
  visit_conv_bn_params("backbone.stem", stem, fn);
  for (std::size_t si = 0; si < stages.size(); ++si) {
    for (std::size_t bi = 0; bi < stages[si].size(); ++bi) {
      const std::string p = "backbone.stage" + std::to_string(si) + ".block" + std::to_string(bi);
      visit_conv_bn_params(p + ".conv1", stages[si][bi].conv1, fn);
      visit_conv_bn_params(p + ".conv2", stages[si][bi].conv2, fn);
      if (stages[si][bi].has_projection) visit_conv_bn_params(p + ".proj", stages[si][bi].projection, fn);
    }
  }
}

void Backbone::visit_buffers(const std::function<void(const std::string&, Tensor&)>& fn) {
  visit_conv_bn_buffers("backbone.stem", stem, fn);
  for (std::size_t si = 0; si < stages.size(); ++si) {
    for (std::size_t bi = 0; bi < stages[si].size(); ++bi) {
      const std::string p = "backbone.stage" + std::to_string(si) + ".block" + std::to_string(bi);
      visit_conv_bn_buffers(p + ".conv1", stages[si][bi].conv1, fn);
      visit_conv_bn_buffers(p + ".conv2", stages[si][bi].conv2, fn);
      if (stages[si][bi].has_projection) visit_conv_bn_buffers(p + ".proj", stages[si][bi].projection, fn);
    }
  }
}

Backbone make_backbone(const BackbonePlan& plan, Rng& rng) {
  plan.validate();
  Backbone bb;
  bb.plan = plan;
  bb.stem = make_conv_bn(plan.stem_channels, plan.in_channels, plan.stem_kernel, plan.stem_stride,
                         plan.stem_pad, rng);
  std::int64_t in_ch = plan.stem_channels;
  for (std::size_t si = 0; si < plan.stage_channels.size(); ++si) {
    const std::int64_t out_ch = plan.stage_channels[si];
    std::vector<BasicBlock> stage;
    for (std::int64_t bi = 0; bi < plan.stage_blocks[si]; ++bi) {
      const std::int64_t stride = (bi == 0) ? plan.stage_strides[si] : 1;
      BasicBlock blk;
      blk.conv1 = make_conv_bn(out_ch, in_ch, 3, stride, 1, rng);
      blk.conv2 = make_conv_bn(out_ch, out_ch, 3, 1, 1, rng);
      blk.has_projection = (stride != 1 || in_ch != out_ch);
      if (blk.has_projection) blk.projection = make_conv_bn(out_ch, in_ch, 1, stride, 0, rng);
      stage.push_back(std::move(blk));
      in_ch = out_ch;
    }
    bb.stages.push_back(std::move(stage));
  }
  return bb;
}

ClassCenters make_centers(std::int64_t d, std::int64_t num_classes, Rng& rng) {
  if (num_classes < 2) throw ConfigError("class centers need at least 2 classes");
  ClassCenters cc;
  cc.c = randn({d, num_classes}, rng, 1.0, true);
  return cc;
}

Tensor center_var(const Tensor& centers) {
  if (centers.rank() != 2) {
    throw ShapeError("center_var: centers must be [D,Y], got " + shape_str(centers.shape()));
  }
  const std::int64_t d = centers.dim(0), y = centers.dim(1);
  if (y < 2) throw ValueError("center_var: spread over " + std::to_string(y) + " class is undefined; need >= 2");
  // Treat [D, Y] as [D, Y, 1] so the head-axis reductions compute per-dimension
  // statistics across classes.
  Tensor c3 = reshape(centers, {d, y, 1});
  Tensor mu = mean_axis1(c3);                       // [D, 1]
  Tensor diff = sub(c3, expand_axis1(mu, y));       // [D, Y, 1]
  Tensor per_dim_var = mean_axis1(mul(diff, diff)); // [D, 1], population
  return clamp_min(mean(per_dim_var), kCenterStdFloor * kCenterStdFloor);
}

Tensor center_std(const Tensor& centers) { return sqrt(center_var(centers)); }

Tensor pooled_features(const Tensor& feature_map) { return global_avg_pool(feature_map); }

Tensor affinity_loss(const Tensor& features, const std::vector<int>& labels,
                     const Tensor& centers) {
  if (features.rank() != 2) {
    throw ShapeError("affinity_loss: features must be [N,D], got " + shape_str(features.shape()));
  }
  if (static_cast<std::int64_t>(labels.size()) != features.dim(0)) {
    throw ShapeError("affinity_loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(features.dim(0)) + " feature rows");
  }
  if (labels.empty()) throw ValueError("affinity_loss: empty batch");
  if (centers.dim(0) != features.dim(1)) {
    throw ShapeError("affinity_loss: feature dimension " + std::to_string(features.dim(1)) +
                     " does not match center dimension " + std::to_string(centers.dim(0)));
  }
  Tensor own = take_columns(centers, labels);  // [N, D], validates label range
  Tensor diff = sub(features, own);
  Tensor numerator = sum(mul(diff, diff));
  return div(numerator, center_var(centers));
}

}  // namespace dan
