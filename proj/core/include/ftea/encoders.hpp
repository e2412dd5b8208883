#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ftea/params.hpp"

namespace ftea {

/// Channel widths of the encoder outputs. Defaults are the full-size model.
struct EncoderDims {
  std::size_t c1 = 96;
  std::size_t c2 = 192;
  std::size_t c3 = 384;
  std::size_t text_width = 768;
  std::size_t width = 256;  // shared space C
  std::size_t max_tokens = 32;
};

/// Flattened feature map [T, h*w, c] together with its spatial extent.
struct FeatureMap {
  Tensor data;
  std::size_t height = 0;
  std::size_t width = 0;
};

/// Appearance features at strides 4, 8 and 16.
struct VisualPyramid {
  FeatureMap f4;
  FeatureMap f8;
  FeatureMap f16;
};

/// Word-level text feature Y [S, text_width]. Never tracks gradients.
struct TextFeature {
  Tensor y;
};

/// Joint visual-text feature X [T, h3*w3 + S, C]; visual rows first.
struct JointFeature {
  Tensor x;
  std::size_t visual_tokens = 0;
  std::size_t text_tokens = 0;
  std::size_t grid_height = 0;
  std::size_t grid_width = 0;
};

/// Per-frame toy visual encoder: 4x4 patch embedding to c1 followed by
/// layer-norm/MLP blocks and 2x2 patch merges that double the width.
class VisualEncoder {
 public:
  VisualEncoder() = default;
  VisualEncoder(const EncoderDims& dims, Rng& rng);

  /// clip [T, H, W, 3] with H and W divisible by 16.
  VisualPyramid operator()(const Tensor& clip) const;
  void collect(ParamSet& set, const std::string& prefix) const;

 private:
  struct Block {
    LayerNormParams norm;
    FeedForward mlp;
  };
  static Tensor run_block(const Block& b, const Tensor& x);

  EncoderDims dims_;
  Tensor patch_embed_;  // [48, c1], no bias
  Block stage1_, stage2_, stage3_;
  Tensor merge1_;  // [4*c1, c2]
  Tensor merge2_;  // [4*c2, c3]
};

/// Lowercases, strips punctuation and splits on whitespace.
std::vector<std::string> tokenize(std::string_view query);

/// FNV-1a 64-bit hash; the seed of each token's frozen embedding.
std::uint64_t token_hash(std::string_view token);

/// Frozen hash embedding: every token maps to a deterministic unit vector.
TextFeature encode_text(const std::vector<std::string>& tokens, std::size_t text_width, std::size_t max_tokens);

/// Projects F16 and Y to the shared width and concatenates them per frame.
class FuseProjection {
 public:
  FuseProjection() = default;
  FuseProjection(const EncoderDims& dims, Rng& rng);

  JointFeature operator()(const VisualPyramid& pyramid, const TextFeature& text) const;
  void collect(ParamSet& set, const std::string& prefix) const;

  Linear visual;
  Linear text;
};

/// Rearranges a [T, H, W, C] tensor into [T, (H/f)*(W/f), f*f*C] non-overlapping patches.
Tensor space_to_depth(const Tensor& x, std::size_t factor);

}  // namespace ftea
