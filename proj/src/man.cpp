#include "dan/man.hpp"

#include <cmath>

#include "dan/conv.hpp"
#include "dan/nn.hpp"

namespace dan {

namespace {

Tensor he_conv(std::int64_t cout, std::int64_t cin, std::int64_t kh, std::int64_t kw, Rng& rng) {
  const double fan_in = static_cast<double>(cin * kh * kw);
  return randn({cout, cin, kh, kw}, rng, std::sqrt(2.0 / fan_in), true);
}

Tensor he_linear(std::int64_t out, std::int64_t in, Rng& rng) {
  return randn({out, in}, rng, std::sqrt(2.0 / static_cast<double>(in)), true);
}

void check_d(std::int64_t d) {
  if (d < 4 || d % 4 != 0) {
    throw ConfigError("attention units need a channel count that is a positive multiple of 4, got " +
                      std::to_string(d));
  }
}

}  // namespace

SpatialUnit make_spatial_unit(std::int64_t d, Rng& rng) {
  check_d(d);
  const std::int64_t mid = d / 2;
  SpatialUnit u;
  u.w_reduce = he_conv(mid, d, 1, 1, rng);
  u.b_reduce = zeros({mid}, true);
  u.w_3x3 = he_conv(d, mid, 3, 3, rng);
  u.b_3x3 = zeros({d}, true);
  u.w_1x3 = he_conv(d, mid, 1, 3, rng);
  u.b_1x3 = zeros({d}, true);
  u.w_3x1 = he_conv(d, mid, 3, 1, rng);
  u.b_3x1 = zeros({d}, true);
  return u;
}

ChannelUnit make_channel_unit(std::int64_t d, Rng& rng) {
  check_d(d);
  const std::int64_t mid = d / 4;
  ChannelUnit u;
  u.w_squeeze = he_linear(mid, d, rng);
  u.b_squeeze = zeros({mid}, true);
  u.w_excite = he_linear(d, mid, rng);
  u.b_excite = zeros({d}, true);
  return u;
}

AttentionHead make_attention_head(std::int64_t d, Rng& rng) {
  AttentionHead h;
  h.spatial = make_spatial_unit(d, rng);
  h.channel = make_channel_unit(d, rng);
  return h;
}

std::vector<AttentionHead> make_heads(std::int64_t k, std::int64_t d, Rng& rng) {
  if (k < 1) throw ConfigError("head count must be >= 1, got " + std::to_string(k));
  std::vector<AttentionHead> heads;
  heads.reserve(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < k; ++i) heads.push_back(make_attention_head(d, rng));
  return heads;
}

SpatialResult spatial_attention(const Tensor& x, const SpatialUnit& unit) {
  if (x.rank() != 4) {
    throw ShapeError("spatial_attention: input must be [B,D,h,w], got " + shape_str(x.shape()));
  }
  if (x.dim(1) != unit.w_reduce.dim(1)) {
    throw ShapeError("spatial_attention: unit expects " + std::to_string(unit.w_reduce.dim(1)) +
                     " channels, input has " + std::to_string(x.dim(1)));
  }
  Tensor mid = conv2d(x, unit.w_reduce, unit.b_reduce, 1, 0);
  Tensor pre = add(add(conv2d(mid, unit.w_3x3, unit.b_3x3, 1, 1),
                       conv2d(mid, unit.w_1x3, unit.b_1x3, 1, 0, 1)),
                   conv2d(mid, unit.w_3x1, unit.b_3x1, 1, 1, 0));
  SpatialResult r;
  r.gate = sigmoid(pre);
  r.s = mul(x, r.gate);
  return r;
}

ChannelResult channel_attention(const Tensor& s, const ChannelUnit& unit) {
  if (s.rank() != 4) {
    throw ShapeError("channel_attention: input must be [B,D,h,w], got " + shape_str(s.shape()));
  }
  if (s.dim(1) != unit.w_squeeze.dim(1)) {
    throw ShapeError("channel_attention: unit expects " + std::to_string(unit.w_squeeze.dim(1)) +
                     " channels, input has " + std::to_string(s.dim(1)));
  }
  Tensor pooled = global_avg_pool(s);
  Tensor squeezed = relu(linear(pooled, unit.w_squeeze, unit.b_squeeze));
  ChannelResult r;
  r.gate = sigmoid(linear(squeezed, unit.w_excite, unit.b_excite));
  r.a = global_avg_pool(scale_channels(s, r.gate));
  return r;
}

ManOutput man_forward(const Tensor& x, const std::vector<AttentionHead>& heads) {
  if (heads.empty()) throw ValueError("man_forward: empty head list");
  std::vector<Tensor> vectors;
  std::vector<Tensor> gates;
  vectors.reserve(heads.size());
  gates.reserve(heads.size());
  for (const auto& head : heads) {
    SpatialResult sr = spatial_attention(x, head.spatial);
    ChannelResult cr = channel_attention(sr.s, head.channel);
    vectors.push_back(cr.a);
    gates.push_back(sr.gate);
  }
  ManOutput out;
  out.vectors = stack_axis1(vectors);       // [B, K, L]
  out.spatial_gates = stack_axis1(gates);   // [B, K, D, h, w]
  return out;
}

std::vector<std::vector<double>> head_overlap(const Tensor& spatial_gates) {
  if (spatial_gates.rank() != 5) {
    throw ShapeError("head_overlap: gates must be [B,K,D,h,w], got " + shape_str(spatial_gates.shape()));
  }
  const std::int64_t b = spatial_gates.dim(0), k = spatial_gates.dim(1);
  const std::int64_t flat = spatial_gates.dim(2) * spatial_gates.dim(3) * spatial_gates.dim(4);
  if (k < 2) throw ValueError("head_overlap: need at least 2 heads, got " + std::to_string(k));

  const double* g = spatial_gates.values().data();
  std::vector<std::vector<double>> m(static_cast<std::size_t>(k),
                                     std::vector<double>(static_cast<std::size_t>(k), 0.0));
  std::vector<double> norms(static_cast<std::size_t>(k));
  for (std::int64_t bi = 0; bi < b; ++bi) {
    const double* img = g + bi * k * flat;
    for (std::int64_t j = 0; j < k; ++j) {
      const double* v = img + j * flat;
      double acc = 0.0;
      for (std::int64_t p = 0; p < flat; ++p) acc += v[p] * v[p];
      norms[static_cast<std::size_t>(j)] = std::sqrt(acc);
    }
    for (std::int64_t j1 = 0; j1 < k; ++j1) {
      for (std::int64_t j2 = j1; j2 < k; ++j2) {
        const double* v1 = img + j1 * flat;
        const double* v2 = img + j2 * flat;
        double dot = 0.0;
        for (std::int64_t p = 0; p < flat; ++p) dot += v1[p] * v2[p];
        const double cosine =
            dot / (norms[static_cast<std::size_t>(j1)] * norms[static_cast<std::size_t>(j2)]);
        m[static_cast<std::size_t>(j1)][static_cast<std::size_t>(j2)] += cosine;
      }
    }
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::int64_t j1 = 0; j1 < k; ++j1) {
    for (std::int64_t j2 = j1; j2 < k; ++j2) {
      const double v = m[static_cast<std::size_t>(j1)][static_cast<std::size_t>(j2)] * inv_b;
      m[static_cast<std::size_t>(j1)][static_cast<std::size_t>(j2)] = v;
      m[static_cast<std::size_t>(j2)][static_cast<std::size_t>(j1)] = v;
    }
  }
  for (std::int64_t j = 0; j < k; ++j) m[static_cast<std::size_t>(j)][static_cast<std::size_t>(j)] = 1.0;
  return m;
}

double mean_off_diagonal(const std::vector<std::vector<double>>& overlap) {
  const std::size_t k = overlap.size();
  if (k < 2) throw ValueError("mean_off_diagonal: need at least a 2x2 matrix");
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      acc += overlap[i][j];
      ++count;
    }
  }
  return acc / static_cast<double>(count);
}

}  // namespace dan
