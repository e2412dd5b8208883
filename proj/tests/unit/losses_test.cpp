#include <gtest/gtest.h>

#include <cmath>

#include "ftea/grad_check.hpp"
#include "ftea/losses.hpp"
#include "oracles.hpp"

using namespace ftea;

namespace {

Tensor ones(Shape s) { return Tensor::full(std::move(s), 1.0); }

// Binary mask with `count` ones starting at `start` in a 16-pixel image.
Tensor strip(std::size_t start, std::size_t count, std::size_t total = 16) {
  std::vector<double> v(total, 0.0);
  for (std::size_t i = start; i < start + count; ++i) v[i] = 1.0;
  return Tensor({4, total / 4}, std::move(v));
}

std::vector<double> random_binary(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.bernoulli(0.4) ? 1.0 : 0.0;
  return v;
}

MaskOutput from_logits(const Tensor& logits) { return {logits, sigmoid(logits)}; }

struct Instance {
  Tensor logits;  // [T, K, H, W]
  Tensor ref;     // [T, K]
  GroundTruth gt;
};

Instance random_instance(std::size_t t, std::size_t k, std::size_t n, std::size_t h, std::size_t w, Rng& rng) {
  Instance in;
  in.logits = uniform_tensor({t, k, h, w}, rng, -3, 3, true);
  in.ref = uniform_tensor({t, k}, rng, -3, 3, true);
  in.gt.masks = Tensor({n, t, h, w}, random_binary(n * t * h * w, rng));
  in.gt.flags = Tensor({n, t}, random_binary(n * t, rng));
  return in;
}

}  // namespace

// --- mask-level losses --------------------------------------------------------

TEST(DiceLoss, IdenticalMasksGiveZero) {
  const Tensor g = strip(3, 8);
  EXPECT_EQ(dice_loss(g, g).item(), 0.0);
}

TEST(DiceLoss, DisjointEightPixelMasks) {
  EXPECT_DOUBLE_EQ(dice_loss(strip(0, 8), strip(8, 8)).item(), 16.0 / 17.0);
}

TEST(DiceLoss, FullPredictionHalfTarget) {
  EXPECT_NEAR(dice_loss(ones({4, 4}), strip(0, 8)).item(), 0.32, 1e-15);
}

TEST(DiceLoss, MatchesOracleAndStaysInRange) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor p = uniform_tensor({5, 7}, rng, 0.001, 0.999);
    const Tensor g({5, 7}, random_binary(35, rng));
    const double got = dice_loss(p, g).item();
    EXPECT_NEAR(got, oracle::dice_loss(p.values(), g.values()), 1e-12);
    EXPECT_GE(got, 0.0);
    EXPECT_LT(got, 1.0);
  }
}

TEST(DiceLoss, RejectsShapeMismatch) { EXPECT_THROW(dice_loss(ones({2, 2}), ones({2, 3})), ShapeError); }

TEST(FocalLoss, SinglePixelClosedForm) {
  const Tensor p(Shape{1}, std::vector<double>{0.5}), g(Shape{1}, std::vector<double>{1.0});
  EXPECT_NEAR(focal_loss(p, g).item(), -0.25 * 0.25 * std::log(0.5), 1e-15);
  EXPECT_NEAR(focal_loss(p, g).item(), 0.04332, 5e-6);
}

TEST(FocalLoss, GammaZeroIsHalfBce) {
  Rng rng(2);
  const Tensor p = uniform_tensor({3, 6}, rng, 0.01, 0.99);
  const Tensor g({3, 6}, random_binary(18, rng));
  double bce = 0.0;
  for (std::size_t i = 0; i < 18; ++i) bce += oracle::bce(p.values()[i], g.values()[i]);
  bce /= 18.0;
  EXPECT_NEAR(focal_loss(p, g, 0.5, 0.0).item(), 0.5 * bce, 1e-12);
}

TEST(FocalLoss, ConfidentCorrectPixelIsTiny) {
  EXPECT_LT(focal_loss(Tensor({2}, {0.999, 0.001}), Tensor({2}, {1.0, 0.0})).item(), 1e-5);
}

TEST(FocalLoss, MatchesOracleAndIsNonNegative) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor p = uniform_tensor({4, 4}, rng, 0.001, 0.999);
    const Tensor g({4, 4}, random_binary(16, rng));
    const double got = focal_loss(p, g).item();
    EXPECT_NEAR(got, oracle::focal_loss(p.values(), g.values(), 0.25, 2.0), 1e-12);
    EXPECT_GE(got, 0.0);
  }
}

TEST(FocalLoss, LogitFormAgreesWithProbabilityForm) {
  Rng rng(4);
  const Tensor l = uniform_tensor({3, 5}, rng, -4, 4);
  const Tensor g({3, 5}, random_binary(15, rng));
  EXPECT_NEAR(sigmoid_focal_loss(l, g.data(), 0.25, 2.0).item(), focal_loss(sigmoid(l), g).item(), 1e-12);
}

// --- matching -----------------------------------------------------------------

TEST(MatchingCost, PerfectPredictionIsMinusTen) {
  const std::vector<double> m{1, 0, 1, 1, 0, 0, 1, 0};
  const std::vector<double> r{1, 1};
  EXPECT_DOUBLE_EQ(matching_cost(m, m, r, r, 2, LossWeights{}), -10.0);
}

TEST(MatchingCost, ZeroScoresDropReferringTerm) {
  Rng rng(5);
  const auto p = uniform_tensor({2, 6}, rng, 0.01, 0.99).values();
  const auto g = random_binary(12, rng);
  const std::vector<double> zeros{0, 0}, flags{1, 0};
  const double dice = (oracle::dice_loss({p.begin(), p.begin() + 6}, {g.begin(), g.begin() + 6}) - 1.0 +
                       oracle::dice_loss({p.begin() + 6, p.end()}, {g.begin() + 6, g.end()}) - 1.0) /
                      2.0;
  EXPECT_NEAR(matching_cost(p, g, zeros, flags, 2, LossWeights{}), 5.0 * dice, 1e-12);
}

TEST(MatchingCost, CostMatrixMatchesOracle) {
  Rng rng(6);
  const std::size_t t = 3, k = 4, n = 2, h = 3, w = 5, px = h * w;
  const Instance in = random_instance(t, k, n, h, w, rng);
  const Tensor probs = sigmoid(in.logits), scores = sigmoid(in.ref);
  const auto c = cost_matrix(probs, scores, in.gt, LossWeights{});
  ASSERT_EQ(c.size(), n * k);
  const auto pv = probs.values(), gv = in.gt.masks.values(), sv = scores.values(), fv = in.gt.flags.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double dice = 0, ref = 0;
      for (std::size_t f = 0; f < t; ++f) {
        std::vector<double> p(pv.begin() + long((f * k + j) * px), pv.begin() + long((f * k + j + 1) * px));
        std::vector<double> g(gv.begin() + long((i * t + f) * px), gv.begin() + long((i * t + f + 1) * px));
        dice += 1.0 - oracle::dice_loss(p, g);
        ref += fv[i * t + f] * sv[f * k + j];
      }
      EXPECT_NEAR(c[i * k + j], -5.0 * dice / double(t) - 5.0 * ref / double(t), 1e-9);
    }
}

TEST(Hungarian, SmallExamples) {
  const MatchResult a = hungarian(std::vector<double>{1, 2, 2, 1}, 2, 2);
  EXPECT_EQ(a.assignment, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(a.cost, 2.0);
  const MatchResult b = hungarian(std::vector<double>{2, 1, 1, 2}, 2, 2);
  EXPECT_EQ(b.assignment, (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(b.cost, 2.0);
}

TEST(Hungarian, TiesPickLexicographicallySmallest) {
  EXPECT_EQ(hungarian(std::vector<double>(9, 1.0), 3, 3).assignment, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(hungarian(std::vector<double>{1, 1, 1, 0, 0, 1}, 2, 3).assignment, (std::vector<std::size_t>{0, 1}));
  Rng rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const auto n = std::size_t(rng.integer(1, 5)), k = std::size_t(rng.integer(long(n), 6));
    std::vector<double> c(n * k);
    for (double& x : c) x = double(rng.integer(0, 3));
    EXPECT_EQ(hungarian(c, n, k).assignment, oracle::brute_force_assignment(c, n, k).cols);
  }
}

TEST(Hungarian, MatchesBruteForce) {
  Rng rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto k = std::size_t(rng.integer(1, 8)), n = std::size_t(rng.integer(1, long(k)));
    std::vector<double> c(n * k);
    for (double& x : c) x = rng.uniform() * 20.0 - 10.0;
    const MatchResult got = hungarian(c, n, k);
    const oracle::Assignment want = oracle::brute_force_assignment(c, n, k);
    EXPECT_EQ(got.cost, want.cost);
    EXPECT_EQ(got.assignment, want.cols);
  }
}

TEST(Hungarian, ColumnPermutationPermutesAssignment) {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 3, k = 5;
    std::vector<double> c(n * k);
    for (double& x : c) x = rng.uniform();
    std::vector<std::size_t> perm{0, 1, 2, 3, 4};
    for (std::size_t i = k; i > 1; --i) std::swap(perm[i - 1], perm[std::size_t(rng.integer(0, long(i) - 1))]);
    std::vector<double> cp(n * k);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) cp[i * k + j] = c[i * k + perm[j]];
    const MatchResult a = hungarian(c, n, k), b = hungarian(cp, n, k);
    EXPECT_EQ(a.cost, b.cost);
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(perm[b.assignment[i]], a.assignment[i]);
  }
}

TEST(Hungarian, Errors) {
  EXPECT_THROW(hungarian(std::vector<double>(6, 0.0), 3, 2), ContractError);
  EXPECT_THROW(hungarian(std::vector<double>{0.0, NAN}, 1, 2), ContractError);
  EXPECT_EQ(hungarian(std::vector<double>{}, 0, 3).assignment.size(), 0u);
}

// --- supervised losses ----------------------------------------------------------

TEST(MaskLoss, MatchesOracle) {
  Rng rng(10);
  const std::size_t t = 2, k = 4, n = 2, h = 4, w = 3, px = h * w;
  const Instance in = random_instance(t, k, n, h, w, rng);
  const MatchResult m{{3, 1}, 0.0};
  const LossWeights lw;
  const double got = mask_loss(from_logits(in.logits), in.gt, m, lw).item();
  const auto pv = sigmoid(in.logits).values(), gv = in.gt.masks.values();
  double want = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t f = 0; f < t; ++f) {
      std::vector<double> p(pv.begin() + long((f * k + m.assignment[i]) * px),
                            pv.begin() + long((f * k + m.assignment[i] + 1) * px));
      std::vector<double> g(gv.begin() + long((i * t + f) * px), gv.begin() + long((i * t + f + 1) * px));
      want += lw.dice * oracle::dice_loss(p, g) + lw.focal * oracle::focal_loss(p, g, 0.25, 2.0);
    }
  EXPECT_NEAR(got, want, 1e-9);
}

TEST(MaskLoss, PerfectPredictionIsNearZero) {
  const std::vector<double> g{1, 0, 0, 1, 1, 1, 0, 0};
  std::vector<double> logits;
  for (double x : g) logits.push_back(x > 0.5 ? 30.0 : -30.0);
  GroundTruth gt{Tensor({1, 2, 2, 2}, g), Tensor({1, 2}, {1, 1})};
  const double loss = mask_loss(from_logits(Tensor({2, 1, 2, 2}, logits)), gt, {{0}, 0.0}, LossWeights{}).item();
  EXPECT_LT(loss, 1e-9);
}

TEST(MaskLoss, NoReferredObjectGivesZero) {
  Rng rng(11);
  const Tensor logits = uniform_tensor({2, 3, 2, 2}, rng);
  EXPECT_EQ(mask_loss(from_logits(logits), GroundTruth{}, {}, LossWeights{}).item(), 0.0);
}

TEST(RefLoss, UnmatchedHalfScoreClosedForm) {
  const std::size_t t = 3;
  const double got = ref_loss(Tensor({t, 1}), GroundTruth{}, {}, LossWeights{}).item();
  EXPECT_NEAR(got, 0.1 * 5.0 * double(t) * std::log(2.0), 1e-12);
}

TEST(RefLoss, ConfidentMatchedIsNearZero) {
  GroundTruth gt{Tensor({1, 2, 1, 1}, {1, 1}), Tensor({1, 2}, {1, 1})};
  const double l = std::log((1 - 1e-9) / 1e-9);
  EXPECT_LT(ref_loss(Tensor({2, 1}, {l, l}), gt, {{0}, 0.0}, LossWeights{}).item(), 1e-7);
}

TEST(RefLoss, MatchesOracleAndDecomposesAdditively) {
  Rng rng(12);
  const std::size_t t = 3, k = 5, n = 2;
  const Instance in = random_instance(t, k, n, 2, 2, rng);
  const MatchResult m{{4, 0}, 0.0};
  const auto lv = in.ref.values(), fv = in.gt.flags.values();
  double want = 0;
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t f = 0; f < t; ++f) {
      const double p = oracle::sigmoid(lv[f * k + j]);
      double term = 0.1 * oracle::bce(p, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        if (m.assignment[i] == j) term = oracle::bce(p, fv[i * t + f]);
      want += term;
    }
  EXPECT_NEAR(ref_loss(in.ref, in.gt, m, LossWeights{}).item(), 5.0 * want, 1e-9);
}

// --- diversity and total --------------------------------------------------------

TEST(DiversityLoss, OrthonormalKernelsGiveC0) {
  const std::size_t c0 = 8, k = 5;
  DynamicKernels z;
  for (auto& zj : z.z) {
    std::vector<double> v(2 * k * c0, 0.0);
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t r = 0; r < k; ++r) v[(t * k + r) * c0 + (r + t) % c0] = 1.0;
    zj = Tensor({2, k, c0}, v);
  }
  std::vector<double> eye(c0 * c0, 0.0);
  for (std::size_t i = 0; i < c0; ++i) eye[i * c0 + i] = 1.0;
  EXPECT_EQ(diversity_loss(z, Tensor({c0, c0}, eye)).item(), double(c0));
}

TEST(DiversityLoss, IdenticalUnitRowsClosedForm) {
  const std::size_t c0 = 8, k = 6;
  DynamicKernels z;
  std::vector<double> row(c0, 0.0);
  for (std::size_t i = 0; i < c0; ++i) row[i] = (i % 2 ? -1.0 : 1.0) / std::sqrt(double(c0));
  std::vector<double> v;
  for (std::size_t r = 0; r < k; ++r) v.insert(v.end(), row.begin(), row.end());
  z.z[0] = Tensor({1, k, c0}, v);
  // The other levels contribute nothing: orthonormal rows.
  for (std::size_t j = 1; j < 3; ++j) {
    std::vector<double> o(k * c0, 0.0);
    for (std::size_t r = 0; r < k; ++r) o[r * c0 + r] = 1.0;
    z.z[j] = Tensor({1, k, c0}, o);
  }
  std::vector<double> eye(c0 * c0, 0.0);
  for (std::size_t i = 0; i < c0; ++i) eye[i * c0 + i] = 1.0;
  EXPECT_NEAR(diversity_loss(z, Tensor({c0, c0}, eye)).item(), std::sqrt(double(k * k - k)) + double(c0), 1e-12);
}

TEST(DiversityLoss, MatchesOracle) {
  Rng rng(13);
  const std::size_t t = 2, k = 4, c0 = 3;
  DynamicKernels z;
  for (auto& zj : z.z) zj = uniform_tensor({t, k, c0}, rng);
  const Tensor w = uniform_tensor({c0, c0}, rng);
  const auto wv = w.values();
  double want = 0;
  for (const auto& zj : z.z) {
    const auto v = zj.values();
    for (std::size_t f = 0; f < t; ++f) {
      double fro = 0;
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) {
          double s = 0;
          for (std::size_t x = 0; x < c0; ++x)
            for (std::size_t y = 0; y < c0; ++y) s += v[(f * k + a) * c0 + x] * wv[x * c0 + y] * v[(f * k + b) * c0 + y];
          const double d = s - (a == b ? 1.0 : 0.0);
          fro += d * d;
        }
      want += std::sqrt(fro);
    }
  }
  for (double x : wv) want += std::abs(x);
  const double got = diversity_loss(z, w).item();
  EXPECT_NEAR(got, want, 1e-9);
  EXPECT_GE(got, 0.0);
}

TEST(TotalLoss, Composition) {
  const Tensor m = Tensor::scalar(1.25), r = Tensor::scalar(0.5), d = Tensor::scalar(3.0);
  EXPECT_EQ(total_loss(m, r, d, 0.0).total.item(), 1.25 + 0.5);
  EXPECT_EQ(total_loss(m, r, d, 0.07).total.item(), 1.25 + 0.5 + 0.07 * 3.0);
  const Tensor z = Tensor::scalar(0.0);
  EXPECT_EQ(total_loss(z, z, z, 0.07).total.item(), 0.0);
}

TEST(TotalLoss, GradientReachesEveryInputIncludingWDiv) {
  Rng rng(14);
  const std::size_t t = 2, k = 3, c0 = 4;
  Instance in = random_instance(t, k, 1, 3, 3, rng);
  DynamicKernels z;
  for (auto& zj : z.z) zj = uniform_tensor({t, k, c0}, rng, -1, 1, true);
  Tensor w = uniform_tensor({c0, c0}, rng, 0.2, 1.0, true);  // entries away from the l1 kink
  auto fn = [&] { return clip_losses(from_logits(in.logits), in.ref, z, w, in.gt, LossWeights{}).total; };
  const GradReport r = grad_check("total", fn,
                                  {{"w_div", w}, {"z1", z.z[0]}, {"z3", z.z[2]}, {"logits", in.logits}, {"ref", in.ref}});
  EXPECT_LE(r.max_rel_error, 1e-4);
}

TEST(ClipLosses, UsesOptimalAssignment) {
  Rng rng(15);
  const Instance in = random_instance(2, 5, 2, 3, 3, rng);
  DynamicKernels z;
  for (auto& zj : z.z) zj = uniform_tensor({2, 5, 4}, rng);
  Tensor w = uniform_tensor({4, 4}, rng);
  MatchResult m;
  const MaskOutput out = from_logits(in.logits);
  const LossBreakdown b = clip_losses(out, in.ref, z, w, in.gt, LossWeights{}, &m);
  const auto c = cost_matrix(out.probs, sigmoid(in.ref), in.gt, LossWeights{});
  EXPECT_EQ(m.assignment, oracle::brute_force_assignment(c, 2, 5).cols);
  EXPECT_NEAR(b.total.item(), b.mask.item() + b.ref.item() + 0.07 * b.div.item(), 1e-12);
  EXPECT_NEAR(b.mask.item(), mask_loss(out, in.gt, m, LossWeights{}).item(), 1e-12);
}
