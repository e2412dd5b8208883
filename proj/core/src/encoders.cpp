#include "ftea/encoders.hpp"

#include <cctype>
#include <cmath>
#include <random>

namespace ftea {

Tensor space_to_depth(const Tensor& x, std::size_t factor) {
  if (x.dim() != 4) throw ShapeError("space_to_depth expects [T, H, W, C], got " + to_string(x.shape()));
  const std::size_t t = x.size(0), h = x.size(1), w = x.size(2), c = x.size(3);
  if (h % factor != 0 || w % factor != 0) {
    throw ContractError("space_to_depth: " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by " +
                        std::to_string(factor));
  }
  const std::size_t oh = h / factor, ow = w / factor, depth = factor * factor * c;
  std::vector<std::size_t> index;
  index.reserve(x.numel());
  for (std::size_t f = 0; f < t; ++f)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t dy = 0; dy < factor; ++dy)
          for (std::size_t dx = 0; dx < factor; ++dx)
            for (std::size_t ch = 0; ch < c; ++ch)
              index.push_back(((f * h + i * factor + dy) * w + j * factor + dx) * c + ch);
  return gather(x, std::move(index), {t, oh * ow, depth});
}

VisualEncoder::VisualEncoder(const EncoderDims& dims, Rng& rng) : dims_(dims) {
  patch_embed_ = xavier_uniform({48, dims.c1}, rng);
  stage1_ = {LayerNormParams(dims.c1), FeedForward(dims.c1, 2 * dims.c1, dims.c1, rng)};
  merge1_ = xavier_uniform({4 * dims.c1, dims.c2}, rng);
  stage2_ = {LayerNormParams(dims.c2), FeedForward(dims.c2, 2 * dims.c2, dims.c2, rng)};
  merge2_ = xavier_uniform({4 * dims.c2, dims.c3}, rng);
  stage3_ = {LayerNormParams(dims.c3), FeedForward(dims.c3, 2 * dims.c3, dims.c3, rng)};
}

Tensor VisualEncoder::run_block(const Block& b, const Tensor& x) { return add(x, b.mlp(b.norm(x))); }

VisualPyramid VisualEncoder::operator()(const Tensor& clip) const {
  if (clip.dim() != 4 || clip.size(3) != 3) {
    throw ShapeError("encode_video expects [T, H, W, 3], got " + to_string(clip.shape()));
  }
  const std::size_t t = clip.size(0), h = clip.size(1), w = clip.size(2);
  if (h % 16 != 0 || w % 16 != 0) {
    throw ContractError("encode_video: frame size " + std::to_string(h) + "x" + std::to_string(w) +
                        " is not divisible by 16");
  }
  VisualPyramid out;
  Tensor x = matmul(space_to_depth(clip, 4), patch_embed_);
  out.f4 = {run_block(stage1_, x), h / 4, w / 4};

  x = reshape(out.f4.data, {t, h / 4, w / 4, dims_.c1});
  x = matmul(space_to_depth(x, 2), merge1_);
  out.f8 = {run_block(stage2_, x), h / 8, w / 8};

  x = reshape(out.f8.data, {t, h / 8, w / 8, dims_.c2});
  x = matmul(space_to_depth(x, 2), merge2_);
  out.f16 = {run_block(stage3_, x), h / 16, w / 16};
  return out;
}

void VisualEncoder::collect(ParamSet& set, const std::string& prefix) const {
  const auto g = ParamGroup::kVisualEncoder;
  set.add(prefix + ".patch_embed", patch_embed_, g);
  stage1_.norm.collect(set, prefix + ".stage1.norm", g);
  stage1_.mlp.collect(set, prefix + ".stage1.mlp", g);
  set.add(prefix + ".merge1", merge1_, g);
  stage2_.norm.collect(set, prefix + ".stage2.norm", g);
  stage2_.mlp.collect(set, prefix + ".stage2.mlp", g);
  set.add(prefix + ".merge2", merge2_, g);
  stage3_.norm.collect(set, prefix + ".stage3.norm", g);
  stage3_.mlp.collect(set, prefix + ".stage3.mlp", g);
}

std::vector<std::string> tokenize(std::string_view query) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : query) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isspace(u)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else if (!std::ispunct(u)) {
      current.push_back(static_cast<char>(std::tolower(u)));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::uint64_t token_hash(std::string_view token) {
  std::uint64_t h = 14695981039346656037ull;
  for (char ch : token) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ull;
  }
  return h;
}

TextFeature encode_text(const std::vector<std::string>& tokens, std::size_t text_width, std::size_t max_tokens) {
  if (tokens.empty()) throw ContractError("encode_text: empty query");
  if (tokens.size() > max_tokens) {
    throw ContractError("encode_text: " + std::to_string(tokens.size()) + " tokens exceed the limit of " +
                        std::to_string(max_tokens));
  }
  std::vector<double> y(tokens.size() * text_width);
  for (std::size_t s = 0; s < tokens.size(); ++s) {
    std::mt19937_64 gen(token_hash(tokens[s]));
    std::normal_distribution<double> normal;
    double norm2 = 0.0;
    double* row = y.data() + s * text_width;
    for (std::size_t c = 0; c < text_width; ++c) {
      row[c] = normal(gen);
      norm2 += row[c] * row[c];
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t c = 0; c < text_width; ++c) row[c] *= inv;
  }
  return {Tensor({tokens.size(), text_width}, std::move(y))};
}

FuseProjection::FuseProjection(const EncoderDims& dims, Rng& rng)
    : visual(dims.c3, dims.width, rng), text(dims.text_width, dims.width, rng) {}

JointFeature FuseProjection::operator()(const VisualPyramid& pyramid, const TextFeature& txt) const {
  const Tensor& f16 = pyramid.f16.data;
  if (f16.dim() != 3 || f16.size(2) != visual.weight.size(0)) {
    throw ShapeError("fuse_project: F16 " + to_string(f16.shape()) + " does not match projection " +
                     to_string(visual.weight.shape()));
  }
  if (txt.y.dim() != 2 || txt.y.size(1) != text.weight.size(0)) {
    throw ShapeError("fuse_project: text feature " + to_string(txt.y.shape()) + " does not match projection " +
                     to_string(text.weight.shape()));
  }
  const std::size_t t = f16.size(0), s = txt.y.size(0), c = visual.weight.size(1);
  Tensor xv = visual(f16);
  // The same text rows are replicated into every frame.
  Tensor xt = broadcast_to(text(txt.y), {t, s, c});
  JointFeature out;
  out.x = concat({xv, xt}, 1);
  out.visual_tokens = f16.size(1);
  out.text_tokens = s;
  out.grid_height = pyramid.f16.height;
  out.grid_width = pyramid.f16.width;
  return out;
}

void FuseProjection::collect(ParamSet& set, const std::string& prefix) const {
  visual.collect(set, prefix + ".visual", ParamGroup::kMain);
  text.collect(set, prefix + ".text", ParamGroup::kMain);
}

}  // namespace ftea
