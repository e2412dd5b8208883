#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "ftea/encoders.hpp"
#include "ftea/params.hpp"

namespace ftea {

struct AlignmentDims {
  std::size_t width = 256;  // C
  std::size_t heads = 8;
  std::size_t ffn_hidden = 1024;
  std::size_t candidates = 50;  // K
  std::size_t kernel_width = 8;  // C0
  std::size_t layers = 3;
  double dropout = 0.1;
};

/// 2D sine encoding [h*w, c]: the first c/2 channels encode the row index,
/// the rest the column index, sine and cosine interleaved at geometric frequencies.
Tensor sine_pos_2d(std::size_t h, std::size_t w, std::size_t c);

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t width, std::size_t heads, Rng& rng);

  /// query [B, Lq, C], key/value [B, Lk, C] -> [B, Lq, C]. Attention never mixes batch rows.
  /// When `probs` is non-null it receives the attention weights [B, heads, Lq, Lk].
  Tensor operator()(const Tensor& query, const Tensor& key, const Tensor& value, Tensor* probs = nullptr) const;
  void collect(ParamSet& set, const std::string& prefix) const;

  Linear q, k, v, o;

 private:
  Tensor split_heads(const Tensor& x) const;
  std::size_t heads_ = 1;
};

struct EncoderLayer {
  MultiHeadAttention attn;
  LayerNormParams norm1;
  FeedForward ffn;
  LayerNormParams norm2;
};

struct DecoderLayer {
  MultiHeadAttention self_attn;
  LayerNormParams norm1;
  MultiHeadAttention cross_attn;  // W'_query, W'_key, W'_value
  LayerNormParams norm2;
  FeedForward ffn;
  LayerNormParams norm3;
};

/// Coarse-to-fine hidden features H = [O1; O2; O3], each [T, K, C].
struct HiddenFeature {
  std::vector<Tensor> levels;
};

/// Z1, Z2, Z3, each [T, K, C0].
struct DynamicKernels {
  std::array<Tensor, 3> z;
};

class CrossModalAlignment {
 public:
  CrossModalAlignment() = default;
  CrossModalAlignment(const AlignmentDims& dims, Rng& rng);

  /// Positional encoding for X: sine rows for the visual grid, zeros for text rows.
  static Tensor joint_position(const JointFeature& x, std::size_t width);

  /// X' = three self-attention encoder layers over X, frames treated as batch.
  Tensor encode(const JointFeature& x, const ForwardContext& ctx) const;

  /// Candidate queries O [T, K, C]: the learned embedding replicated over frames.
  Tensor candidate_queries(std::size_t frames) const;

  /// Runs the decoder stack from `queries` against X'.
  HiddenFeature decode(const Tensor& queries, const Tensor& x_prime, const Tensor& position,
                       const ForwardContext& ctx) const;

  DynamicKernels kernel_heads(const HiddenFeature& h) const;

  /// Pre-sigmoid referring logits [T, K] from the finest level of H.
  Tensor referring_logits(const HiddenFeature& h) const;

  void collect(ParamSet& set, const std::string& prefix) const;

  const AlignmentDims& dims() const { return dims_; }

  std::vector<EncoderLayer> encoders;
  std::vector<DecoderLayer> decoders;
  Tensor query_embed;  // [K, C]
  std::array<FeedForward, 3> kernel_head;
  Linear referring;

 private:
  AlignmentDims dims_;
};

/// R~ = sigmoid(logits); entries strictly inside (0, 1).
inline Tensor referring_scores(const Tensor& logits) { return sigmoid(logits); }

}  // namespace ftea
