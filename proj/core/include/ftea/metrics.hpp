#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ftea {

/// Binary mask, row-major, entries 0 or 1.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(std::size_t h, std::size_t w) : height(h), width(w), data(h * w, 0) {}
  std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
  std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  std::size_t area() const;
  bool operator==(const Mask&) const = default;
};

struct SamplePrediction {
  Mask pred;
  Mask gt;
  double confidence = 0.0;
};

struct Overlap {
  std::size_t intersection = 0;
  std::size_t union_ = 0;
};

Overlap overlap(const Mask& pred, const Mask& gt);

/// |pred & gt| / |pred | gt|; 1 when both are empty.
double iou(const Mask& pred, const Mask& gt);

inline constexpr std::array<double, 5> kPrecisionThresholds = {0.5, 0.6, 0.7, 0.8, 0.9};
inline constexpr std::array<double, 10> kMapThresholds = {0.50, 0.55, 0.60, 0.65, 0.70,
                                                          0.75, 0.80, 0.85, 0.90, 0.95};

/// Fraction of samples whose IoU is strictly above `threshold`.
double precision_at(std::span<const double> ious, double threshold);

/// Average precision at one IoU threshold with 101-point interpolation.
/// Samples with equal confidence form one rank group and enter the curve together.
double average_precision(std::span<const double> ious, std::span<const double> confidences, double threshold);

/// Mean of average_precision over kMapThresholds.
double mean_average_precision(std::span<const double> ious, std::span<const double> confidences);

/// Mean IoU over samples.
double region_similarity_j(std::span<const double> ious);

/// Pixels of `m` with at least one 4-neighbour outside the mask; the frame border counts as outside.
Mask boundary(const Mask& m);

/// Boundary F1 where a boundary pixel matches when a pixel of the other boundary lies
/// within Euclidean distance `tolerance`.
double contour_accuracy_f(const Mask& pred, const Mask& gt, double tolerance = 1.0);

struct MetricsReport {
  double overall_iou = 0.0;
  double mean_iou = 0.0;
  std::array<double, 5> precision{};  // at kPrecisionThresholds
  double map = 0.0;
  double j = 0.0;
  double f = 0.0;
  double jf = 0.0;
};

MetricsReport evaluate(std::span<const SamplePrediction> samples);

/// Flat "key=value" lines with fixed key order and six decimals.
std::string serialize(const MetricsReport& report);
/// Inverse of serialize; rejects unknown, missing or duplicate keys.
MetricsReport parse_report(const std::string& text);

}  // namespace ftea
