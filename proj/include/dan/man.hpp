#pragma once

#include <vector>

#include "dan/tensor.hpp"

// Multi-head Attention Network: K parallel heads with independent parameters,
// each a spatial attention unit followed by a channel attention unit. Every
// head reads the same backbone feature map.

namespace dan {

// Multi-scale convolutional gate over the feature map. Four convolutions and
// a single sigmoid: a 1x1 reduction D -> D/2 feeds three parallel
// shape-preserving convolutions (3x3, 1x3, 3x1, each D/2 -> D) whose sum is
// squashed into the gate.
struct SpatialUnit {
  Tensor w_reduce, b_reduce;  // 1x1, D -> D/2
  Tensor w_3x3, b_3x3;        // 3x3 pad 1, D/2 -> D
  Tensor w_1x3, b_1x3;        // 1x3 pad (0,1), D/2 -> D
  Tensor w_3x1, b_3x1;        // 3x1 pad (1,0), D/2 -> D
};

// Squeeze-and-excite style channel gate: pool, squeeze D -> D/4, relu,
// excite D/4 -> D, sigmoid.
struct ChannelUnit {
  Tensor w_squeeze, b_squeeze;  // [D/4, D]
  Tensor w_excite, b_excite;    // [D, D/4]
};

struct AttentionHead {
  SpatialUnit spatial;
  ChannelUnit channel;
};

struct ManOutput {
  Tensor vectors;        // [B, K, L], the per-head attention feature vectors
  Tensor spatial_gates;  // [B, K, D, h, w], retained for diversity analysis
};

SpatialUnit make_spatial_unit(std::int64_t d, Rng& rng);
ChannelUnit make_channel_unit(std::int64_t d, Rng& rng);
AttentionHead make_attention_head(std::int64_t d, Rng& rng);
std::vector<AttentionHead> make_heads(std::int64_t k, std::int64_t d, Rng& rng);

// gate = sigmoid of the multi-scale stack; s = x' (Hadamard) gate.
// Returns (s, gate), both [B, D, h, w].
struct SpatialResult {
  Tensor s;
  Tensor gate;
};
SpatialResult spatial_attention(const Tensor& x, const SpatialUnit& unit);

// gate = sigmoid(excite(relu(squeeze(pool(s))))); a = pool(s * gate).
// Returns (a [B, D], gate [B, D]).
struct ChannelResult {
  Tensor a;
  Tensor gate;
};
ChannelResult channel_attention(const Tensor& s, const ChannelUnit& unit);

ManOutput man_forward(const Tensor& x, const std::vector<AttentionHead>& heads);

// Mean-over-batch pairwise cosine similarity between flattened spatial gates.
// Symmetric K x K, unit diagonal. Requires K >= 2. Not differentiated.
std::vector<std::vector<double>> head_overlap(const Tensor& spatial_gates);

// Mean of the off-diagonal entries of head_overlap.
double mean_off_diagonal(const std::vector<std::vector<double>>& overlap);

}  // namespace dan
