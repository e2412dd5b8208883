#include <gtest/gtest.h>

#include <cmath>

#include "ftea/grad_check.hpp"
#include "ftea/ops.hpp"

using namespace ftea;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, bool requires_grad = false) {
  return uniform_tensor(std::move(shape), rng, -1.0, 1.0, requires_grad);
}

// Reference product for rank-2 operands.
std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
  const auto m = a.size(0), k = a.size(1), n = b.size(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a.data()[i * k + p] * b.data()[p * n + j];
      out[i * n + j] = s;
    }
  return out;
}

}  // namespace

TEST(Matmul, IdentityAndZero) {
  Rng rng(1);
  Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor a = rand_tensor({3, 4}, rng);
  EXPECT_EQ(matmul(eye, a).values(), a.values());

  Tensor m({2, 2}, {1, 2, 3, 4});
  Tensor z({2, 2});
  EXPECT_EQ(matmul(m, z).values(), std::vector<double>(4, 0.0));
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(7);
  Tensor a = rand_tensor({4, 5}, rng), b = rand_tensor({5, 3}, rng);
  const auto expect = naive_matmul(a, b);
  const auto got = matmul(a, b).values();
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_LE(std::abs(got[i] - expect[i]), 1e-12);
}

TEST(Matmul, BroadcastsBatchAxes) {
  Rng rng(3);
  Tensor a = rand_tensor({2, 3, 4, 5}, rng), b = rand_tensor({5, 2}, rng);
  Tensor c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 3, 4, 2}));
  Tensor a1 = select(select(a, 0, 1), 0, 2);
  const auto expect = naive_matmul(a1, b);
  const auto got = select(select(c, 0, 1), 0, 2).values();
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_LE(std::abs(got[i] - expect[i]), 1e-12);
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  Tensor a({2, 3}), b({4, 2});
  try {
    matmul(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2,3)"), std::string::npos);
    EXPECT_NE(msg.find("(4,2)"), std::string::npos);
  }
}

TEST(Matmul, CanonicalReductionIsOrderInvariant) {
  Rng rng(11);
  Tensor a = rand_tensor({3, 6}, rng), b = rand_tensor({6, 2}, rng);
  // Reverse the contraction axis on both operands.
  std::vector<double> ar(18), br(12);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t p = 0; p < 6; ++p) ar[i * 6 + p] = a.data()[i * 6 + (5 - p)];
  for (std::size_t p = 0; p < 6; ++p)
    for (std::size_t j = 0; j < 2; ++j) br[p * 2 + j] = b.data()[(5 - p) * 2 + j];
  Tensor x = matmul(a, b, Reduction::kCanonical);
  Tensor y = matmul(Tensor({3, 6}, ar), Tensor({6, 2}, br), Reduction::kCanonical);
  EXPECT_EQ(x.values(), y.values());
}

TEST(Softmax, ClosedForms) {
  auto s = softmax_last(Tensor({3}, {1, 1, 1})).values();
  for (double v : s) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  s = softmax_last(Tensor({2}, {0.0, std::log(2.0)})).values();
  EXPECT_NEAR(s[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(s[1], 2.0 / 3.0, 1e-15);
  s = softmax_last(Tensor({2}, {1000.0, 1001.0})).values();
  const double e = std::exp(1.0);
  EXPECT_NEAR(s[0], 1.0 / (1.0 + e), 1e-15);
  EXPECT_NEAR(s[1], e / (1.0 + e), 1e-15);
}

TEST(Softmax, RowsSumToOneProperty) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto rows = static_cast<std::size_t>(rng.integer(1, 6));
    const auto cols = static_cast<std::size_t>(rng.integer(1, 12));
    Tensor x = uniform_tensor({rows, cols}, rng, -50.0, 50.0);
    auto y = softmax_last(x).values();
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < cols; ++c) s += y[r * cols + c];
      ASSERT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(LayerNorm, Cases) {
  Tensor one({3}, {1, 1, 1}), zero({3});
  EXPECT_EQ(layer_norm(Tensor({3}, {5, 5, 5}), one, zero).values(), std::vector<double>(3, 0.0));

  Tensor one2({2}, {1, 1}), zero2({2});
  auto y = layer_norm(Tensor({2}, {-1, 1}), one2, zero2).values();
  const double expect = 1.0 / std::sqrt(1.0 + kLayerNormEps);
  EXPECT_DOUBLE_EQ(y[0], -expect);
  EXPECT_DOUBLE_EQ(y[1], expect);
  EXPECT_LE(std::abs(y[1]), 1.0);

  Rng rng(2);
  Tensor x = uniform_tensor({1, 64}, rng, -3.0, 7.0);
  Tensor g = Tensor::full({64}, 1.0), b({64});
  auto out = layer_norm(x, g, b).values();
  double mu = 0.0, var = 0.0;
  for (double v : out) mu += v;
  mu /= 64.0;
  for (double v : out) var += (v - mu) * (v - mu);
  var /= 64.0;
  EXPECT_LE(std::abs(mu), 1e-9);
  EXPECT_LE(std::abs(var - 1.0), 1e-4);
}

TEST(Bilinear, ConstantAndIdentity) {
  Tensor c = Tensor::full({2, 2, 1}, 5.0);
  for (double v : bilinear_upsample(c, 4, 4).values()) EXPECT_EQ(v, 5.0);

  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const double val = rng.uniform(-100, 100);
    Tensor k = Tensor::full({3, 5, 2}, val);
    for (double v : bilinear_upsample(k, 7, 13).values()) ASSERT_EQ(v, val);
  }
  Tensor x = rand_tensor({3, 4, 2}, rng);
  EXPECT_EQ(bilinear_upsample(x, 3, 4).values(), x.values());
}

TEST(Bilinear, RowMatchesClosedForm) {
  Tensor row({1, 2, 1}, {0.0, 1.0});
  auto out = bilinear_upsample(row, 1, 4).values();
  ASSERT_EQ(out.size(), 4u);
  // Independent scalar evaluation of the half-pixel convention.
  const std::vector<double> src{0.0, 1.0};
  for (std::size_t j = 0; j < 4; ++j) {
    double s = (j + 0.5) * 2.0 / 4.0 - 0.5;
    s = std::max(s, 0.0);
    const auto i0 = static_cast<std::size_t>(std::floor(s));
    const std::size_t i1 = std::min<std::size_t>(i0 + 1, 1);
    const double l = s - static_cast<double>(i0);
    EXPECT_NEAR(out[j], (1 - l) * src[std::min<std::size_t>(i0, 1)] + l * src[i1], 1e-15);
  }
  EXPECT_NEAR(out[0], 0.0, 1e-15);
  EXPECT_NEAR(out[1], 0.25, 1e-15);
  EXPECT_NEAR(out[2], 0.75, 1e-15);
  EXPECT_NEAR(out[3], 1.0, 1e-15);
}

TEST(Bilinear, RejectsDownsampling) {
  EXPECT_THROW(bilinear_upsample(Tensor({4, 4, 1}), 2, 4), ContractError);
}

TEST(GroupedLinear, IdentityBlocks) {
  Rng rng(4);
  Tensor x = rand_tensor({5, 6}, rng);
  std::vector<double> w(2 * 3 * 3, 0.0);
  for (std::size_t g = 0; g < 2; ++g)
    for (std::size_t i = 0; i < 3; ++i) w[g * 9 + i * 3 + i] = 1.0;
  EXPECT_EQ(grouped_linear(x, Tensor({2, 3, 3}, w), 2).values(), x.values());
}

TEST(GroupedLinear, GroupIsolationProperty) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto groups = static_cast<std::size_t>(rng.integer(1, 6));
    const auto cin = static_cast<std::size_t>(rng.integer(1, 4));
    const auto cout = static_cast<std::size_t>(rng.integer(1, 4));
    Tensor x = rand_tensor({7, groups * cin}, rng);
    Tensor w = rand_tensor({groups, cin, cout}, rng);
    auto base = grouped_linear(x, w, groups).values();
    const auto g = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(groups) - 1));
    // Zero every other group; group g's outputs must be unchanged bit for bit.
    std::vector<double> xz = x.values();
    for (std::size_t r = 0; r < 7; ++r)
      for (std::size_t c = 0; c < groups * cin; ++c)
        if (c / cin != g) xz[r * groups * cin + c] = 0.0;
    auto iso = grouped_linear(Tensor(x.shape(), xz), w, groups).values();
    for (std::size_t r = 0; r < 7; ++r)
      for (std::size_t o = 0; o < cout; ++o)
        ASSERT_EQ(iso[r * groups * cout + g * cout + o], base[r * groups * cout + g * cout + o]);
  }
}

TEST(GroupedLinear, SingleGroupEqualsDense) {
  Rng rng(12);
  Tensor x = rand_tensor({6, 5}, rng), w = rand_tensor({1, 5, 4}, rng);
  auto g = grouped_linear(x, w, 1).values();
  auto d = matmul(x, reshape(w, {5, 4})).values();
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_LE(std::abs(g[i] - d[i]), 1e-12);
}

TEST(GroupedLinear, IndivisibleChannels) {
  EXPECT_THROW(grouped_linear(Tensor({2, 5}), Tensor({2, 2, 2}), 2), ContractError);
}

TEST(Elementwise, Basics) {
  EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  EXPECT_EQ(relu(Tensor::scalar(-3.0)).item(), 0.0);
  Rng rng(1);
  Tensor x = rand_tensor({3, 4}, rng);
  EXPECT_EQ(mul(x, Tensor::full({3, 4}, 1.0)).values(), x.values());
  EXPECT_THROW(add(Tensor({3, 4}), Tensor({3, 5})), ShapeError);
  auto s = sigmoid(Tensor({2}, {-800.0, 800.0})).values();
  EXPECT_GT(s[0], 0.0);
  EXPECT_LT(s[1], 1.0);
}

TEST(Backward, ClosedForms) {
  Rng rng(6);
  Tensor x = rand_tensor({4, 3}, rng, true);
  sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);

  Tensor y = rand_tensor({5}, rng, true);
  sum(mul(y, y)).backward();
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(y.grad()[i], 2.0 * y.data()[i]);
}

TEST(Backward, RejectsNonScalarAndReuse) {
  Tensor x({3}, {1, 2, 3}, true);
  EXPECT_THROW(scale(x, 2.0).backward(), ContractError);
  Tensor loss = sum(scale(x, 2.0));
  loss.backward();
  EXPECT_THROW(loss.backward(), ContractError);
}

TEST(Backward, AccumulatesAcrossCalls) {
  Tensor x({2}, {1, 2}, true);
  sum(x).backward();
  sum(scale(x, 3.0)).backward();
  EXPECT_EQ(x.grad()[0], 4.0);
}

TEST(GradCheck, LinearIsExact) {
  Rng rng(3);
  Tensor x = rand_tensor({4, 3}, rng, true);
  std::vector<double> wv(12);
  for (auto& v : wv) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.5, 1.5);
  Tensor w({4, 3}, wv);
  auto report = grad_check("linear", [&] { return sum(mul(x, w)); }, {{"x", x}});
  EXPECT_LE(report.max_rel_error, 1e-10);
}

TEST(GradCheck, SoftmaxMatmulChain) {
  Rng rng(21);
  Tensor a = rand_tensor({3, 4}, rng, true), b = rand_tensor({4, 5}, rng, true);
  Tensor r = rand_tensor({3, 5}, rng);
  auto report = grad_check("softmax_matmul", [&] { return sum(mul(softmax_last(matmul(a, b)), r)); },
                           {{"a", a}, {"b", b}});
  EXPECT_LE(report.max_rel_error, 1e-4);
}

TEST(GradCheck, CompositeGraph) {
  Rng rng(17);
  Tensor x = rand_tensor({2, 3, 4, 6}, rng, true);
  Tensor g = rand_tensor({6}, rng, true), b = rand_tensor({6}, rng, true);
  Tensor w = rand_tensor({2, 3, 2}, rng, true);
  Tensor r = rand_tensor({2, 6, 8, 4}, rng);
  auto fn = [&] {
    Tensor y = layer_norm(x, g, b);
    y = bilinear_upsample(y, 6, 8);
    y = grouped_linear(sigmoid(y), w, 2);
    return sum(mul(y, r));
  };
  auto report = grad_check("composite", fn, {{"x", x}, {"gain", g}, {"bias", b}, {"w", w}});
  EXPECT_LE(report.max_rel_error, 1e-4);
}

TEST(Determinism, OpsAreBitReproducible) {
  auto run = [] {
    Rng rng(99);
    Tensor a = rand_tensor({2, 3, 8}, rng), b = rand_tensor({8, 4}, rng);
    Tensor y = softmax_last(matmul(a, b));
    return bilinear_upsample(reshape(y, {2, 3, 4, 1}), 5, 7).values();
  };
  EXPECT_EQ(run(), run());
}

TEST(ShapeOps, ConcatSelectNarrowPermute) {
  Tensor a({2, 2}, {1, 2, 3, 4}), b({2, 1}, {5, 6});
  Tensor c = concat({a, b}, 1);
  EXPECT_EQ(c.values(), (std::vector<double>{1, 2, 5, 3, 4, 6}));
  EXPECT_EQ(narrow(c, 1, 1, 2).values(), (std::vector<double>{2, 5, 4, 6}));
  EXPECT_EQ(select(c, 0, 1).values(), (std::vector<double>{3, 4, 6}));
  EXPECT_EQ(transpose_last2(a).values(), (std::vector<double>{1, 3, 2, 4}));
  EXPECT_EQ(broadcast_to(b, {3, 2, 1}).values(), (std::vector<double>{5, 6, 5, 6, 5, 6}));
}
