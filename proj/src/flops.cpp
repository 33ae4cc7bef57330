#include "dan/flops.hpp"

#include "dan/error.hpp"

namespace dan {

CostBreakdown count_params_flops(const BackbonePlan& plan, std::int64_t k, std::int64_t classes,
                                 std::int64_t input_size) {
  plan.validate();
  if (k < 1) throw ConfigError("count_params_flops: heads must be >= 1");
  if (classes < 2) throw ConfigError("count_params_flops: classes must be >= 2");
  if (input_size % plan.downsample_factor() != 0)
    throw ConfigError("count_params_flops: input size " + std::to_string(input_size) +
                      " not divisible by the plan's downsample factor " +
                      std::to_string(plan.downsample_factor()));

  CostBreakdown cost;
  const double hw0 = static_cast<double>(input_size);

  // Backbone. Convolutions are bias-free; every convolution is followed by a
  // batch norm (2C params, C*H*W scale/shift MACs).
  double side = hw0 / static_cast<double>(plan.stem_stride);
  auto conv_cost = [&](std::int64_t cout, std::int64_t cin, std::int64_t kh, std::int64_t kw,
                       double out_side) {
    const std::int64_t w_params = cout * cin * kh * kw;
    cost.backbone_params += w_params + 2 * cout;  // + batch norm
    cost.backbone_macs +=
        static_cast<double>(w_params) * out_side * out_side + static_cast<double>(cout) * out_side * out_side;
  };
  conv_cost(plan.stem_channels, plan.in_channels, plan.stem_kernel, plan.stem_kernel, side);
  if (plan.stem_maxpool) side /= 2.0;

  std::int64_t in_ch = plan.stem_channels;
  for (std::size_t si = 0; si < plan.stage_channels.size(); ++si) {
    const std::int64_t width = plan.stage_channels[si];
    const std::int64_t stride = plan.stage_strides[si];
    side /= static_cast<double>(stride);
    for (std::int64_t bi = 0; bi < plan.stage_blocks[si]; ++bi) {
      const std::int64_t cin = bi == 0 ? in_ch : width;
      conv_cost(width, cin, 3, 3, side);   // conv1 (stage stride folded into side)
      conv_cost(width, width, 3, 3, side);  // conv2
      if (bi == 0 && (stride != 1 || cin != width)) conv_cost(width, cin, 1, 1, side);
    }
    in_ch = width;
  }

  // Attention heads at the final map size. Spatial: 1x1 reduce D -> D/2 with
  // bias, then three parallel convolutions (3x3, 1x3, 3x1) D/2 -> D with
  // bias. Channel: squeeze D -> D/4 and excite D/4 -> D, both with bias.
  const std::int64_t d = plan.feature_dim();
  const double fs = side;  // final side
  auto head_conv = [&](std::int64_t cout, std::int64_t cin, std::int64_t kh, std::int64_t kw) {
    const std::int64_t w_params = cout * cin * kh * kw;
    cost.attention_params += w_params + cout;  // bias
    cost.attention_macs += static_cast<double>(w_params) * fs * fs;
  };
  for (std::int64_t j = 0; j < k; ++j) {
    head_conv(d / 2, d, 1, 1);
    head_conv(d, d / 2, 3, 3);
    head_conv(d, d / 2, 1, 3);
    head_conv(d, d / 2, 3, 1);
    cost.attention_params += (d / 4) * d + d / 4;  // squeeze
    cost.attention_params += d * (d / 4) + d;      // excite
    cost.attention_macs += static_cast<double>((d / 4) * d + d * (d / 4));
  }

  cost.center_params = d * classes;
  cost.classifier_params = classes * d + classes;
  cost.classifier_macs = static_cast<double>(classes * d);

  cost.total_params = cost.backbone_params + cost.attention_params + cost.center_params +
                      cost.classifier_params;
  cost.total_macs = cost.backbone_macs + cost.attention_macs + cost.classifier_macs;
  return cost;
}

}  // namespace dan
