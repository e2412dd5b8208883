#include <gtest/gtest.h>

#include <cmath>

#include "ftea/encoders.hpp"

using namespace ftea;

namespace {

void zero_all(ParamSet& set) {
  for (auto& p : set.items())
    for (double& v : p.value.data()) v = 0.0;
}

}  // namespace

TEST(VisualEncoder, PyramidShapesAtDefaultWidths) {
  Rng rng(1);
  VisualEncoder enc(EncoderDims{}, rng);
  Tensor clip = uniform_tensor({2, 64, 64, 3}, rng, 0.0, 1.0);
  const VisualPyramid p = enc(clip);
  EXPECT_EQ(p.f4.data.shape(), (Shape{2, 256, 96}));
  EXPECT_EQ(p.f8.data.shape(), (Shape{2, 64, 192}));
  EXPECT_EQ(p.f16.data.shape(), (Shape{2, 16, 384}));
  EXPECT_EQ(p.f16.height, 4u);
  EXPECT_EQ(p.f16.width, 4u);
}

TEST(VisualEncoder, ShapeContractOverRandomSizes) {
  Rng rng(2);
  EncoderDims d{8, 16, 32, 16, 16, 8};
  VisualEncoder enc(d, rng);
  for (int trial = 0; trial < 8; ++trial) {
    const auto t = static_cast<std::size_t>(rng.integer(1, 3));
    const auto h = 16 * static_cast<std::size_t>(rng.integer(1, 4));
    const auto w = 16 * static_cast<std::size_t>(rng.integer(1, 4));
    const VisualPyramid p = enc(uniform_tensor({t, h, w, 3}, rng, 0.0, 1.0));
    EXPECT_EQ(p.f4.data.shape(), (Shape{t, (h / 4) * (w / 4), 8}));
    EXPECT_EQ(p.f8.data.shape(), (Shape{t, (h / 8) * (w / 8), 16}));
    EXPECT_EQ(p.f16.data.shape(), (Shape{t, (h / 16) * (w / 16), 32}));
  }
}

TEST(VisualEncoder, ZeroInputAndZeroParamsGiveZeroPyramid) {
  Rng rng(3);
  VisualEncoder enc(EncoderDims{8, 16, 32, 16, 16, 8}, rng);
  ParamSet set;
  enc.collect(set, "v");
  zero_all(set);
  const VisualPyramid p = enc(Tensor({2, 32, 32, 3}));
  for (const auto* f : {&p.f4, &p.f8, &p.f16})
    for (double v : f->data.data()) EXPECT_EQ(v, 0.0);
}

TEST(VisualEncoder, DeterministicForSameSeed) {
  Rng a(9), b(9), data(4);
  VisualEncoder ea(EncoderDims{8, 16, 32, 16, 16, 8}, a), eb(EncoderDims{8, 16, 32, 16, 16, 8}, b);
  Tensor clip = uniform_tensor({2, 32, 32, 3}, data, 0.0, 1.0);
  EXPECT_EQ(ea(clip).f16.data.values(), eb(clip).f16.data.values());
}

TEST(VisualEncoder, FramesAreIndependent) {
  Rng rng(5);
  VisualEncoder enc(EncoderDims{8, 16, 32, 16, 16, 8}, rng);
  Tensor clip = uniform_tensor({2, 32, 32, 3}, rng, 0.0, 1.0);
  Tensor single = narrow(clip, 0, 1, 1);
  EXPECT_EQ(select(enc(clip).f8.data, 0, 1).values(), select(enc(single).f8.data, 0, 0).values());
}

TEST(VisualEncoder, RejectsSizesNotDivisibleBy16) {
  Rng rng(6);
  VisualEncoder enc(EncoderDims{8, 16, 32, 16, 16, 8}, rng);
  EXPECT_THROW(enc(Tensor({1, 24, 32, 3})), ContractError);
}

TEST(Tokenize, LowercasesAndStripsPunctuation) {
  EXPECT_EQ(tokenize("The RED, circle!  moving left."),
            (std::vector<std::string>{"the", "red", "circle", "moving", "left"}));
}

TEST(TextEncoder, RepeatedTokensShareRows) {
  const TextFeature t = encode_text({"cat", "cat"}, 768, 32);
  EXPECT_EQ(select(t.y, 0, 0).values(), select(t.y, 0, 1).values());
}

TEST(TextEncoder, RowsHaveUnitNorm) {
  const TextFeature t = encode_text({"a", "red", "square", "moving", "up"}, 768, 32);
  for (std::size_t s = 0; s < 5; ++s) {
    double n = 0.0;
    for (double v : select(t.y, 0, s).values()) n += v * v;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-12);
  }
}

TEST(TextEncoder, SwappingTokensSwapsRows) {
  const TextFeature ab = encode_text({"a", "b"}, 96, 32);
  const TextFeature ba = encode_text({"b", "a"}, 96, 32);
  EXPECT_EQ(select(ab.y, 0, 0).values(), select(ba.y, 0, 1).values());
  EXPECT_EQ(select(ab.y, 0, 1).values(), select(ba.y, 0, 0).values());
}

TEST(TextEncoder, IsFrozen) {
  const TextFeature t = encode_text({"frozen"}, 96, 32);
  EXPECT_FALSE(t.y.requires_grad());
}

TEST(TextEncoder, RejectsEmptyAndOverlongQueries) {
  EXPECT_THROW(encode_text({}, 96, 32), ContractError);
  EXPECT_THROW(encode_text(std::vector<std::string>(33, "x"), 96, 32), ContractError);
}

TEST(FuseProjection, ShapeAndRowOrder) {
  Rng rng(7);
  EncoderDims d;
  VisualEncoder enc(d, rng);
  FuseProjection fuse(d, rng);
  const VisualPyramid p = enc(uniform_tensor({2, 64, 64, 3}, rng, 0.0, 1.0));
  const TextFeature txt = encode_text({"the", "red", "circle", "moving", "up"}, d.text_width, d.max_tokens);
  const JointFeature x = fuse(p, txt);
  EXPECT_EQ(x.x.shape(), (Shape{2, 21, 256}));
  EXPECT_EQ(x.visual_tokens, 16u);
  EXPECT_EQ(x.text_tokens, 5u);

  // Zeroing the visual projection leaves the text block untouched and zeroes the visual block.
  ParamSet set;
  fuse.visual.collect(set, "v", ParamGroup::kMain);
  zero_all(set);
  const JointFeature y = fuse(p, txt);
  for (double v : narrow(y.x, 1, 0, 16).values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(narrow(y.x, 1, 16, 5).values(), narrow(x.x, 1, 16, 5).values());
  // Text rows are replicated into every frame.
  EXPECT_EQ(select(narrow(y.x, 1, 16, 5), 0, 0).values(), select(narrow(y.x, 1, 16, 5), 0, 1).values());
}

TEST(FuseProjection, ZeroProjectionsGiveZeroX) {
  Rng rng(8);
  EncoderDims d{8, 16, 32, 16, 16, 8};
  VisualEncoder enc(d, rng);
  FuseProjection fuse(d, rng);
  ParamSet set;
  fuse.collect(set, "f");
  zero_all(set);
  const JointFeature x = fuse(enc(uniform_tensor({1, 32, 32, 3}, rng, 0.0, 1.0)), encode_text({"a"}, 16, 8));
  for (double v : x.x.data()) EXPECT_EQ(v, 0.0);
}

TEST(FuseProjection, IdentityProjectionCopiesF16) {
  Rng rng(9);
  EncoderDims d{8, 16, 32, 16, 32, 8};
  VisualEncoder enc(d, rng);
  FuseProjection fuse(d, rng);
  auto w = fuse.visual.weight.data();
  std::fill(w.begin(), w.end(), 0.0);
  for (std::size_t i = 0; i < 32; ++i) w[i * 32 + i] = 1.0;
  const VisualPyramid p = enc(uniform_tensor({2, 32, 32, 3}, rng, 0.0, 1.0));
  const JointFeature x = fuse(p, encode_text({"a", "b"}, 16, 8));
  EXPECT_EQ(narrow(x.x, 1, 0, 4).values(), p.f16.data.values());
}
