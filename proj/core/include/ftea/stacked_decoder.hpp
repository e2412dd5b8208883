#pragma once

#include <cstddef>
#include <string>

#include "ftea/alignment.hpp"
#include "ftea/encoders.hpp"
#include "ftea/params.hpp"

namespace ftea {

/// Spatial grid of a flattened feature map.
struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t cells() const { return height * width; }
};

/// Visual rows of X' (the first `visual_tokens` of each frame), order preserved.
Tensor strip_text(const Tensor& x_prime, std::size_t visual_tokens);

/// One Stacked Transformer: stacked attention followed by the grouped FFN.
///
/// Every reduction whose summed axis is indexed by candidates uses
/// Reduction::kCanonical, so relabelling candidates (kernels, parameter
/// columns and groups) relabels the outputs bit-exactly.
class StackedStage {
 public:
  StackedStage() = default;
  /// `fine_width` = Cf, `coarse_width` = Cx, `group_width` = alpha.
  StackedStage(std::size_t fine_width, std::size_t coarse_width, std::size_t candidates, std::size_t group_width,
               std::size_t kernel_width, Rng& rng);

  /// f [T, HfWf, Cf], x [T, HxWx, Cx], z [T, K, C0] -> x^' [T, HfWf, alpha*K].
  /// When `gate` is non-null it receives the candidate weight map m [T, HfWf, K].
  Tensor attention(const Tensor& f, Grid fine, const Tensor& x, Grid coarse, const Tensor& z,
                   Tensor* gate = nullptr) const;

  /// x^'' = LN_out(SFFN(LN_in(x^')) + x^').
  Tensor ffn(const Tensor& x) const;

  /// The grouped two-layer MLP alone: K groups of alpha channels, ReLU between.
  Tensor sffn(const Tensor& x) const;

  Tensor operator()(const Tensor& f, Grid fine, const Tensor& x, Grid coarse, const Tensor& z) const {
    return ffn(attention(f, fine, x, coarse, z));
  }

  void collect(ParamSet& set, const std::string& prefix, ParamGroup group = ParamGroup::kMain) const;

  std::size_t candidates() const { return candidates_; }
  std::size_t group_width() const { return group_width_; }

  Tensor w_query;  // [Cf, K]
  Tensor w_key;    // [Cx, K]
  Tensor w_value;  // [Cx, alpha*K]
  Tensor w0;       // [Cx, C0]
  Tensor sffn_w1;  // [K, alpha, alpha]
  Tensor sffn_b1;  // [alpha*K]
  Tensor sffn_w2;  // [K, alpha, alpha]
  Tensor sffn_b2;  // [alpha*K]
  LayerNormParams ln_in;
  LayerNormParams ln_out;

 private:
  std::size_t candidates_ = 0;
  std::size_t group_width_ = 0;
};

/// Number of SFFN weights (biases excluded) for K groups of width alpha.
constexpr std::size_t sffn_weight_count(std::size_t candidates, std::size_t alpha) {
  return candidates * 2 * alpha * alpha;
}
constexpr std::size_t sffn_bias_count(std::size_t candidates, std::size_t alpha) { return candidates * 2 * alpha; }

/// Counts the SFFN weight entries actually allocated by `stage`.
std::size_t sffn_weight_count(const StackedStage& stage);

struct MaskDecoderDims {
  std::size_t c1 = 96;
  std::size_t c2 = 192;
  std::size_t width = 256;  // C
  std::size_t candidates = 50;
  std::size_t kernel_width = 8;
  std::size_t alpha = 4;
  std::size_t alpha2 = 2;
};

/// Candidate mask sequences: `logits` and `probs` = sigmoid(logits), both [T, K, H, W].
struct MaskOutput {
  Tensor logits;
  Tensor probs;
};

/// Intermediate decoding features, exposed for tests.
struct DecodingFeatures {
  Tensor x8;  // [T, H2W2, alpha*K]
  Tensor x4;  // [T, H1W1, alpha'*K]
};

class MaskDecoder {
 public:
  MaskDecoder() = default;
  MaskDecoder(const MaskDecoderDims& dims, Rng& rng);

  /// Runs both stages and the final dynamic convolution at output size out_h x out_w.
  MaskOutput operator()(const VisualPyramid& pyramid, const Tensor& x_prime, std::size_t visual_tokens,
                        const DynamicKernels& kernels, std::size_t out_h, std::size_t out_w,
                        DecodingFeatures* features = nullptr) const;

  /// sigma(Upsample(Z3 * (X_4 W_proj))) given X_4 on grid `fine`.
  MaskOutput decode_masks(const Tensor& x4, Grid fine, const Tensor& z3, std::size_t out_h, std::size_t out_w) const;

  void collect(ParamSet& set, const std::string& prefix) const;

  StackedStage stage1;
  StackedStage stage2;
  Tensor w_proj;  // [alpha'*K, C0]

 private:
  MaskDecoderDims dims_;
};

}  // namespace ftea
