#include <gtest/gtest.h>

#include <cmath>

#include "ftea/metrics.hpp"
#include "ftea/rng.hpp"
#include "oracles.hpp"

using namespace ftea;

namespace {

Mask rect(std::size_t h, std::size_t w, std::size_t y0, std::size_t x0, std::size_t rh, std::size_t rw) {
  Mask m(h, w);
  for (std::size_t y = y0; y < y0 + rh; ++y)
    for (std::size_t x = x0; x < x0 + rw; ++x) m.at(y, x) = 1;
  return m;
}

Mask random_mask(std::size_t h, std::size_t w, double p, Rng& rng) {
  Mask m(h, w);
  for (auto& v : m.data) v = rng.bernoulli(p) ? 1 : 0;
  return m;
}

// Blob-like random mask: union of a few random rectangles.
Mask random_blobs(std::size_t h, std::size_t w, Rng& rng) {
  Mask m(h, w);
  const auto n = rng.integer(1, 3);
  for (int b = 0; b < n; ++b) {
    const auto y0 = std::size_t(rng.integer(0, long(h) - 2)), x0 = std::size_t(rng.integer(0, long(w) - 2));
    const auto rh = std::size_t(rng.integer(1, long(h - y0))), rw = std::size_t(rng.integer(1, long(w - x0)));
    for (std::size_t y = y0; y < y0 + rh; ++y)
      for (std::size_t x = x0; x < x0 + rw; ++x) m.at(y, x) = 1;
  }
  return m;
}

Mask translate(const Mask& m, long dy, long dx) {
  Mask out(m.height, m.width);
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x)
      if (m.at(y, x)) out.at(std::size_t(long(y) + dy), std::size_t(long(x) + dx)) = 1;
  return out;
}

}  // namespace

TEST(Iou, ClosedForms) {
  const Mask a = rect(4, 4, 0, 0, 4, 4);
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(rect(4, 4, 0, 0, 2, 4), rect(4, 4, 2, 0, 2, 4)), 0.0);
  EXPECT_EQ(iou(a, rect(4, 4, 0, 0, 2, 4)), 0.5);
  EXPECT_EQ(iou(Mask(4, 4), Mask(4, 4)), 1.0);
  EXPECT_EQ(iou(Mask(4, 4), a), 0.0);
  EXPECT_THROW(iou(Mask(4, 4), Mask(4, 5)), ShapeError);
}

TEST(PrecisionAt, Cases) {
  const std::vector<double> ious{0.55, 0.65, 0.45, 0.95};
  EXPECT_EQ(precision_at(ious, 0.5), 0.75);
  const std::vector<double> perfect(5, 1.0);
  for (double th : kPrecisionThresholds) EXPECT_EQ(precision_at(perfect, th), 1.0);
  EXPECT_EQ(precision_at(std::vector<double>{0.5, 0.7}, 0.5), 0.5);
  EXPECT_THROW(precision_at(std::vector<double>{}, 0.5), ContractError);
}

TEST(PrecisionAt, NonIncreasingInThreshold) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> ious(12);
    for (double& v : ious) v = rng.uniform();
    for (std::size_t i = 1; i < kPrecisionThresholds.size(); ++i)
      EXPECT_LE(precision_at(ious, kPrecisionThresholds[i]), precision_at(ious, kPrecisionThresholds[i - 1]));
  }
}

TEST(MeanAveragePrecision, SingleSample) {
  EXPECT_NEAR(mean_average_precision(std::vector<double>{0.72}, std::vector<double>{0.3}), 0.5, 1e-15);
}

TEST(MeanAveragePrecision, PerfectSamples) {
  EXPECT_EQ(mean_average_precision(std::vector<double>(6, 1.0), std::vector<double>{0.1, 0.9, 0.4, 0.4, 0.2, 0.8}),
            1.0);
}

TEST(MeanAveragePrecision, MatchesDefinitionalOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const auto n = std::size_t(rng.integer(1, 12));
    std::vector<double> ious(n), conf(n);
    for (double& v : ious) v = rng.uniform();
    // Coarse confidences so that tie groups occur.
    for (double& c : conf) c = double(rng.integer(0, 4)) / 4.0;
    EXPECT_NEAR(mean_average_precision(ious, conf), oracle::mean_average_precision(ious, conf), 1e-9);
    for (double th : kMapThresholds)
      EXPECT_NEAR(average_precision(ious, conf, th), oracle::average_precision(ious, conf, th), 1e-9);
  }
}

TEST(MeanAveragePrecision, BoundedByPrecisionWhenConfidencesEqual) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> ious(9), conf(9, 0.5);
    for (double& v : ious) v = rng.uniform();
    EXPECT_LE(mean_average_precision(ious, conf), precision_at(ious, 0.5) + 1e-15);
  }
}

TEST(MeanAveragePrecision, RejectsEmpty) {
  EXPECT_THROW(mean_average_precision(std::vector<double>{}, std::vector<double>{}), ContractError);
}

TEST(RegionSimilarity, Cases) {
  const std::vector<double> ious{0.55, 0.65, 0.45, 0.95};
  EXPECT_NEAR(region_similarity_j(ious), 0.65, 1e-15);
  EXPECT_EQ(region_similarity_j(std::vector<double>(3, 1.0)), 1.0);
}

TEST(Boundary, MatchesOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const Mask m = random_mask(7, 9, 0.6, rng);
    EXPECT_EQ(boundary(m).data, oracle::boundary(m).data);
  }
  // A filled frame keeps its border ring only.
  const Mask full = rect(4, 5, 0, 0, 4, 5);
  EXPECT_EQ(boundary(full).area(), 14u);
}

TEST(ContourF, Cases) {
  const Mask sq = rect(12, 12, 3, 3, 5, 5);
  EXPECT_EQ(contour_accuracy_f(sq, sq), 1.0);
  EXPECT_EQ(contour_accuracy_f(translate(sq, 0, 1), sq), 1.0);
  EXPECT_EQ(contour_accuracy_f(Mask(6, 6), Mask(6, 6)), 1.0);
  EXPECT_EQ(contour_accuracy_f(Mask(12, 12), sq), 0.0);
  const Mask shifted = translate(sq, 0, 3);
  EXPECT_NEAR(contour_accuracy_f(shifted, sq), oracle::contour_f(shifted, sq, 1.0), 1e-12);
  EXPECT_LT(contour_accuracy_f(shifted, sq), 1.0);
  EXPECT_THROW(contour_accuracy_f(Mask(3, 3), Mask(3, 4)), ShapeError);
}

TEST(ContourF, MatchesOracleAndIsSymmetric) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Mask a = random_blobs(10, 11, rng), b = random_blobs(10, 11, rng);
    const double tol = trial % 2 ? 1.0 : 2.0;
    EXPECT_NEAR(contour_accuracy_f(a, b, tol), oracle::contour_f(a, b, tol), 1e-9);
    EXPECT_EQ(contour_accuracy_f(a, b, tol), contour_accuracy_f(b, a, tol));
  }
}

TEST(Metrics, TranslationInvariance) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    Mask a(20, 20), b(20, 20);
    const Mask sa = random_blobs(8, 8, rng), sb = random_blobs(8, 8, rng);
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) {
        a.at(y + 4, x + 4) = sa.at(y, x);
        b.at(y + 4, x + 4) = sb.at(y, x);
      }
    const Mask ta = translate(a, 3, -2), tb = translate(b, 3, -2);
    EXPECT_EQ(iou(a, b), iou(ta, tb));
    EXPECT_EQ(contour_accuracy_f(a, b), contour_accuracy_f(ta, tb));
  }
}

TEST(Evaluate, PerfectPredictions) {
  std::vector<SamplePrediction> s;
  for (std::size_t i = 0; i < 4; ++i) {
    const Mask m = rect(8, 8, i, i, 3, 3);
    s.push_back({m, m, 0.25 * double(i)});
  }
  const MetricsReport r = evaluate(s);
  EXPECT_EQ(r.overall_iou, 1.0);
  EXPECT_EQ(r.mean_iou, 1.0);
  for (double p : r.precision) EXPECT_EQ(p, 1.0);
  EXPECT_EQ(r.map, 1.0);
  EXPECT_EQ(r.j, 1.0);
  EXPECT_EQ(r.f, 1.0);
  EXPECT_EQ(r.jf, 1.0);
}

TEST(Evaluate, OverallDiffersFromMean) {
  // (intersection, union) = (1, 2) and (8, 8).
  std::vector<SamplePrediction> s;
  s.push_back({rect(4, 4, 0, 0, 1, 2), rect(4, 4, 0, 0, 1, 1), 0.5});
  s.push_back({rect(4, 4, 0, 0, 2, 4), rect(4, 4, 0, 0, 2, 4), 0.5});
  const MetricsReport r = evaluate(s);
  EXPECT_DOUBLE_EQ(r.overall_iou, 0.9);
  EXPECT_DOUBLE_EQ(r.mean_iou, 0.75);
  EXPECT_EQ(r.j, r.mean_iou);
  EXPECT_EQ(r.jf, (r.j + r.f) / 2.0);
  EXPECT_THROW(evaluate(std::vector<SamplePrediction>{}), ContractError);
}

TEST(Evaluate, FieldsInUnitInterval) {
  Rng rng(7);
  std::vector<SamplePrediction> s;
  for (int i = 0; i < 15; ++i) s.push_back({random_blobs(9, 9, rng), random_blobs(9, 9, rng), rng.uniform()});
  const MetricsReport r = evaluate(s);
  for (double v : {r.overall_iou, r.mean_iou, r.map, r.j, r.f, r.jf}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Report, SerializeRoundTrip) {
  MetricsReport r{0.123456, 0.5, {0.9, 0.8, 0.7, 0.6, 0.5}, 0.25, 0.5, 0.75, 0.625};
  const std::string text = serialize(r);
  EXPECT_NE(text.find("overall_iou=0.123456\n"), std::string::npos);
  EXPECT_NE(text.find("precision@0.7=0.700000\n"), std::string::npos);
  const MetricsReport back = parse_report(text);
  EXPECT_EQ(serialize(back), text);
  EXPECT_EQ(back.overall_iou, r.overall_iou);
  EXPECT_EQ(back.precision, r.precision);
}

TEST(Report, RoundTripWithinPrintedPrecision) {
  Rng rng(8);
  MetricsReport r{rng.uniform(), rng.uniform(), {}, rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
  for (double& p : r.precision) p = rng.uniform();
  const MetricsReport back = parse_report(serialize(r));
  EXPECT_NEAR(back.map, r.map, 5e-7);
  EXPECT_NEAR(back.f, r.f, 5e-7);
  EXPECT_EQ(serialize(back), serialize(r));
}

TEST(Report, RejectsMalformedText) {
  const std::string good = serialize(MetricsReport{});
  EXPECT_THROW(parse_report(good + "extra=1\n"), std::invalid_argument);
  EXPECT_THROW(parse_report(good + "map=0.5\n"), std::invalid_argument);
  EXPECT_THROW(parse_report(good.substr(good.find('\n') + 1)), std::invalid_argument);
}
