#include "ftea/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "ftea/tensor.hpp"

namespace ftea {

namespace {

void expect_same(const Mask& a, const Mask& b, const char* op) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError(std::string(op) + ": masks " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                     " and " + std::to_string(b.height) + "x" + std::to_string(b.width) + " differ");
  }
}

void expect_nonempty(std::size_t n, const char* op) {
  if (n == 0) throw ContractError(std::string(op) + ": empty sample set");
}

// Fraction of boundary pixels of `a` that have a boundary pixel of `b` within `tol`.
double matched_fraction(const Mask& a, const Mask& b, double tol) {
  const auto r = static_cast<std::ptrdiff_t>(std::floor(tol));
  const double tol2 = tol * tol;
  const auto h = static_cast<std::ptrdiff_t>(a.height), w = static_cast<std::ptrdiff_t>(a.width);
  std::size_t total = 0, hit = 0;
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      if (!a.data[static_cast<std::size_t>(y * w + x)]) continue;
      ++total;
      bool found = false;
      for (std::ptrdiff_t dy = -r; dy <= r && !found; ++dy) {
        for (std::ptrdiff_t dx = -r; dx <= r && !found; ++dx) {
          const std::ptrdiff_t yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          if (static_cast<double>(dy * dy + dx * dx) > tol2) continue;
          found = b.data[static_cast<std::size_t>(yy * w + xx)] != 0;
        }
      }
      if (found) ++hit;
    }
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace

std::size_t Mask::area() const { return static_cast<std::size_t>(std::count(data.begin(), data.end(), 1)); }

Overlap overlap(const Mask& pred, const Mask& gt) {
  expect_same(pred, gt, "iou");
  Overlap o;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    o.intersection += (pred.data[i] && gt.data[i]) ? 1 : 0;
    o.union_ += (pred.data[i] || gt.data[i]) ? 1 : 0;
  }
  return o;
}

double iou(const Mask& pred, const Mask& gt) {
  const Overlap o = overlap(pred, gt);
  if (o.union_ == 0) return 1.0;
  return static_cast<double>(o.intersection) / static_cast<double>(o.union_);
}

double precision_at(std::span<const double> ious, double threshold) {
  expect_nonempty(ious.size(), "precision_at");
  const auto above = std::count_if(ious.begin(), ious.end(), [threshold](double v) { return v > threshold; });
  return static_cast<double>(above) / static_cast<double>(ious.size());
}

double average_precision(std::span<const double> ious, std::span<const double> confidences, double threshold) {
  expect_nonempty(ious.size(), "average_precision");
  if (ious.size() != confidences.size()) throw ShapeError("average_precision: ious and confidences differ in length");
  const std::size_t n = ious.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return confidences[a] > confidences[b]; });

  std::vector<double> recall, precision;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += ious[order[i]] > threshold ? 1 : 0;
    ++seen;
    const bool group_end = i + 1 == n || confidences[order[i + 1]] != confidences[order[i]];
    if (!group_end) continue;
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(seen));
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);

  double total = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), level);
    if (it != recall.end()) total += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return total / 101.0;
}

double mean_average_precision(std::span<const double> ious, std::span<const double> confidences) {
  double total = 0.0;
  for (double th : kMapThresholds) total += average_precision(ious, confidences, th);
  return total / static_cast<double>(kMapThresholds.size());
}

double region_similarity_j(std::span<const double> ious) {
  expect_nonempty(ious.size(), "region_similarity_j");
  double total = 0.0;
  for (double v : ious) total += v;
  return total / static_cast<double>(ious.size());
}

Mask boundary(const Mask& m) {
  Mask out(m.height, m.width);
  for (std::size_t y = 0; y < m.height; ++y) {
    for (std::size_t x = 0; x < m.width; ++x) {
      if (!m.at(y, x)) continue;
      const bool interior = y > 0 && x > 0 && y + 1 < m.height && x + 1 < m.width && m.at(y - 1, x) &&
                            m.at(y + 1, x) && m.at(y, x - 1) && m.at(y, x + 1);
      out.at(y, x) = interior ? 0 : 1;
    }
  }
  return out;
}

double contour_accuracy_f(const Mask& pred, const Mask& gt, double tolerance) {
  expect_same(pred, gt, "contour_accuracy_f");
  const Mask bp = boundary(pred), bg = boundary(gt);
  const bool ep = bp.area() == 0, eg = bg.area() == 0;
  if (ep && eg) return 1.0;
  if (ep || eg) return 0.0;
  const double p = matched_fraction(bp, bg, tolerance);
  const double r = matched_fraction(bg, bp, tolerance);
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

MetricsReport evaluate(std::span<const SamplePrediction> samples) {
  expect_nonempty(samples.size(), "evaluate");
  std::vector<double> ious, conf;
  std::size_t inter = 0, uni = 0;
  double f_total = 0.0;
  for (const auto& s : samples) {
    const Overlap o = overlap(s.pred, s.gt);
    inter += o.intersection;
    uni += o.union_;
    ious.push_back(o.union_ == 0 ? 1.0 : static_cast<double>(o.intersection) / static_cast<double>(o.union_));
    conf.push_back(s.confidence);
    f_total += contour_accuracy_f(s.pred, s.gt);
  }
  MetricsReport r;
  r.overall_iou = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  r.mean_iou = region_similarity_j(ious);
  for (std::size_t i = 0; i < kPrecisionThresholds.size(); ++i) r.precision[i] = precision_at(ious, kPrecisionThresholds[i]);
  r.map = mean_average_precision(ious, conf);
  r.j = r.mean_iou;
  r.f = f_total / static_cast<double>(samples.size());
  r.jf = (r.j + r.f) / 2.0;
  return r;
}

namespace {

std::vector<std::pair<std::string, double MetricsReport::*>> scalar_fields() {
  return {{"overall_iou", &MetricsReport::overall_iou}, {"mean_iou", &MetricsReport::mean_iou},
          {"map", &MetricsReport::map},                 {"j", &MetricsReport::j},
          {"f", &MetricsReport::f},                     {"jf", &MetricsReport::jf}};
}

std::string precision_key(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "precision@%.1f", kPrecisionThresholds[i]);
  return buf;
}

void put(std::ostringstream& os, const std::string& key, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  os << key << '=' << buf << '\n';
}

}  // namespace

std::string serialize(const MetricsReport& report) {
  std::ostringstream os;
  put(os, "overall_iou", report.overall_iou);
  put(os, "mean_iou", report.mean_iou);
  for (std::size_t i = 0; i < report.precision.size(); ++i) put(os, precision_key(i), report.precision[i]);
  put(os, "map", report.map);
  put(os, "j", report.j);
  put(os, "f", report.f);
  put(os, "jf", report.jf);
  return os.str();
}

MetricsReport parse_report(const std::string& text) {
  std::map<std::string, double> values;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("metrics report: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    std::size_t used = 0;
    const std::string raw = line.substr(eq + 1);
    const double v = std::stod(raw, &used);
    if (used != raw.size()) throw std::invalid_argument("metrics report: bad value for " + key);
    if (!values.emplace(key, v).second) throw std::invalid_argument("metrics report: duplicate key " + key);
  }
  MetricsReport r;
  std::size_t consumed = 0;
  auto take = [&](const std::string& key) {
    const auto it = values.find(key);
    if (it == values.end()) throw std::invalid_argument("metrics report: missing key " + key);
    ++consumed;
    return it->second;
  };
  for (const auto& [key, field] : scalar_fields()) r.*field = take(key);
  for (std::size_t i = 0; i < r.precision.size(); ++i) r.precision[i] = take(precision_key(i));
  if (consumed != values.size()) throw std::invalid_argument("metrics report: unknown keys present");
  return r;
}

}  // namespace ftea
