#include "ftea/stacked_decoder.hpp"

#include <cmath>

namespace ftea {

namespace {

// [T, h*w, c] -> [T, oh*ow, c] through bilinear resampling.
Tensor upsample_flat(const Tensor& x, Grid from, Grid to) {
  const std::size_t t = x.size(0), c = x.size(2);
  if (from.height == to.height && from.width == to.width) return x;
  Tensor grid = reshape(x, {t, from.height, from.width, c});
  return reshape(bilinear_upsample(grid, to.height, to.width), {t, to.cells(), c});
}

void expect_rows(const Tensor& x, Grid g, const char* what) {
  if (x.dim() != 3 || x.size(1) != g.cells()) {
    throw ShapeError(std::string(what) + " " + to_string(x.shape()) + " does not match a " + std::to_string(g.height) +
                     "x" + std::to_string(g.width) + " grid");
  }
}

}  // namespace

Tensor strip_text(const Tensor& x_prime, std::size_t visual_tokens) {
  if (x_prime.dim() != 3 || visual_tokens > x_prime.size(1)) {
    throw ShapeError("strip_text: " + to_string(x_prime.shape()) + " has fewer than " + std::to_string(visual_tokens) +
                     " rows");
  }
  return narrow(x_prime, 1, 0, visual_tokens);
}

StackedStage::StackedStage(std::size_t fine_width, std::size_t coarse_width, std::size_t candidates,
                           std::size_t group_width, std::size_t kernel_width, Rng& rng)
    : candidates_(candidates), group_width_(group_width) {
  const std::size_t channels = candidates * group_width;
  w_query = xavier_uniform({fine_width, candidates}, rng);
  w_key = xavier_uniform({coarse_width, candidates}, rng);
  w_value = xavier_uniform({coarse_width, channels}, rng);
  w0 = xavier_uniform({coarse_width, kernel_width}, rng);
  sffn_w1 = xavier_uniform({candidates, group_width, group_width}, rng);
  sffn_b1 = Tensor({channels}, true);
  sffn_w2 = xavier_uniform({candidates, group_width, group_width}, rng);
  sffn_b2 = Tensor({channels}, true);
  ln_in = LayerNormParams(channels);
  ln_out = LayerNormParams(channels);
}

Tensor StackedStage::attention(const Tensor& f, Grid fine, const Tensor& x, Grid coarse, const Tensor& z,
                               Tensor* gate) const {
  expect_rows(f, fine, "fine feature");
  expect_rows(x, coarse, "coarse feature");
  if (fine.height < coarse.height || fine.width < coarse.width) {
    throw ContractError("stacked attention: fine grid " + std::to_string(fine.height) + "x" +
                        std::to_string(fine.width) + " is coarser than " + std::to_string(coarse.height) + "x" +
                        std::to_string(coarse.width));
  }
  if (z.dim() != 3 || z.size(1) != candidates_ || z.size(0) != x.size(0) || z.size(0) != f.size(0)) {
    throw ShapeError("stacked attention: kernels " + to_string(z.shape()) + " do not match " + to_string(x.shape()));
  }
  constexpr auto kCanon = Reduction::kCanonical;
  Tensor q = matmul(f, w_query);
  Tensor k = matmul(x, w_key, kCanon);
  Tensor v = matmul(x, w_value, kCanon);

  Tensor m = sigmoid(upsample_flat(matmul(matmul(x, w0, kCanon), transpose_last2(z)), coarse, fine));
  if (gate != nullptr) *gate = m;
  if (m.shape() != q.shape()) {
    throw ContractError("stacked attention: weight map " + to_string(m.shape()) + " does not match query " +
                        to_string(q.shape()));
  }
  Tensor qt = mul(q, m);
  const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(candidates_));
  Tensor attn = softmax_last(scale(matmul(qt, transpose_last2(k), kCanon), inv_sqrt_k));
  return add(matmul(attn, v), upsample_flat(v, coarse, fine));
}

Tensor StackedStage::sffn(const Tensor& x) const {
  Tensor h = relu(add(grouped_linear(x, sffn_w1, candidates_), sffn_b1));
  return add(grouped_linear(h, sffn_w2, candidates_), sffn_b2);
}

Tensor StackedStage::ffn(const Tensor& x) const {
  constexpr auto kCanon = Reduction::kCanonical;
  return ln_out(add(sffn(ln_in(x, kCanon)), x), kCanon);
}

void StackedStage::collect(ParamSet& set, const std::string& prefix, ParamGroup group) const {
  set.add(prefix + ".w_query", w_query, group);
  set.add(prefix + ".w_key", w_key, group);
  set.add(prefix + ".w_value", w_value, group);
  set.add(prefix + ".w0", w0, group);
  set.add(prefix + ".sffn_w1", sffn_w1, group);
  set.add(prefix + ".sffn_b1", sffn_b1, group);
  set.add(prefix + ".sffn_w2", sffn_w2, group);
  set.add(prefix + ".sffn_b2", sffn_b2, group);
  ln_in.collect(set, prefix + ".ln_in", group);
  ln_out.collect(set, prefix + ".ln_out", group);
}

std::size_t sffn_weight_count(const StackedStage& stage) { return stage.sffn_w1.numel() + stage.sffn_w2.numel(); }

MaskDecoder::MaskDecoder(const MaskDecoderDims& dims, Rng& rng)
    : stage1(dims.c2, dims.width, dims.candidates, dims.alpha, dims.kernel_width, rng),
      stage2(dims.c1, dims.alpha * dims.candidates, dims.candidates, dims.alpha2, dims.kernel_width, rng),
      w_proj(xavier_uniform({dims.alpha2 * dims.candidates, dims.kernel_width}, rng)),
      dims_(dims) {}

MaskOutput MaskDecoder::decode_masks(const Tensor& x4, Grid fine, const Tensor& z3, std::size_t out_h,
                                     std::size_t out_w) const {
  expect_rows(x4, fine, "decoding feature");
  const std::size_t t = x4.size(0), k = z3.size(1);
  Tensor logits = matmul(matmul(x4, w_proj, Reduction::kCanonical), transpose_last2(z3));
  logits = bilinear_upsample(reshape(logits, {t, fine.height, fine.width, k}), out_h, out_w);
  logits = permute(logits, {0, 3, 1, 2});
  return {logits, sigmoid(logits)};
}

MaskOutput MaskDecoder::operator()(const VisualPyramid& pyramid, const Tensor& x_prime, std::size_t visual_tokens,
                                   const DynamicKernels& kernels, std::size_t out_h, std::size_t out_w,
                                   DecodingFeatures* features) const {
  const Grid g4{pyramid.f4.height, pyramid.f4.width};
  const Grid g8{pyramid.f8.height, pyramid.f8.width};
  const Grid g16{pyramid.f16.height, pyramid.f16.width};
  Tensor x_tilde = strip_text(x_prime, visual_tokens);
  Tensor x8 = stage1(pyramid.f8.data, g8, x_tilde, g16, kernels.z[0]);
  Tensor x4 = stage2(pyramid.f4.data, g4, x8, g8, kernels.z[1]);
  if (features != nullptr) *features = {x8, x4};
  return decode_masks(x4, g4, kernels.z[2], out_h, out_w);
}

void MaskDecoder::collect(ParamSet& set, const std::string& prefix) const {
  stage1.collect(set, prefix + ".stage1");
  stage2.collect(set, prefix + ".stage2");
  set.add(prefix + ".w_proj", w_proj, ParamGroup::kMain);
}

}  // namespace ftea
