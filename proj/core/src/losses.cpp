#include "ftea/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ftea {

namespace {

void expect_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                     " differ");
  }
}

// Core O(n^2 m) shortest-augmenting-path solver with potentials; rows <= cols.
std::vector<std::size_t> solve_assignment(const std::vector<double>& a, std::size_t n, std::size_t m) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> out(n);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) out[p[j] - 1] = j - 1;
  }
  return out;
}

double row_order_cost(std::span<const double> cost, std::size_t cols, const std::vector<std::size_t>& assignment) {
  double total = 0.0;
  for (std::size_t i = 0; i < assignment.size(); ++i) total += cost[i * cols + assignment[i]];
  return total;
}

// Best completion of `prefix` over the remaining rows and the unused columns.
std::vector<std::size_t> complete(std::span<const double> cost, std::size_t rows, std::size_t cols,
                                  const std::vector<std::size_t>& prefix) {
  std::vector<std::size_t> free_cols;
  for (std::size_t j = 0; j < cols; ++j) {
    if (std::find(prefix.begin(), prefix.end(), j) == prefix.end()) free_cols.push_back(j);
  }
  const std::size_t n = rows - prefix.size(), m = free_cols.size();
  std::vector<double> sub(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) sub[i * m + j] = cost[(prefix.size() + i) * cols + free_cols[j]];
  std::vector<std::size_t> full = prefix;
  for (std::size_t c : solve_assignment(sub, n, m)) full.push_back(free_cols[c]);
  return full;
}

Tensor plain(std::span<const double> values, Shape shape) {
  return Tensor(std::move(shape), std::vector<double>(values.begin(), values.end()));
}

}  // namespace

Tensor dice_loss(const Tensor& p, const Tensor& g, double eps) {
  expect_same(p, g, "dice_loss");
  Tensor num = add_scalar(scale(sum(mul(p, g)), 2.0), eps);
  Tensor den = add_scalar(add(sum(p), sum(g)), eps);
  return add_scalar(scale(div(num, den), -1.0), 1.0);
}

double dice_coefficient(std::span<const double> p, std::span<const double> g, double eps) {
  if (p.size() != g.size()) throw ShapeError("dice_coefficient: mask sizes differ");
  double inter = 0.0, sp = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += p[i] * g[i];
    sp += p[i];
    sg += g[i];
  }
  return (2.0 * inter + eps) / (sp + sg + eps);
}

Tensor focal_loss(const Tensor& p, const Tensor& g, double alpha, double gamma) {
  expect_same(p, g, "focal_loss");
  const auto pd = p.data();
  const auto gd = g.data();
  const double n = static_cast<double>(pd.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pd.size(); ++i) {
    if (gd[i] > 0.5) {
      total += -alpha * std::pow(1.0 - pd[i], gamma) * std::log(pd[i]);
    } else {
      total += -(1.0 - alpha) * std::pow(pd[i], gamma) * std::log(1.0 - pd[i]);
    }
  }
  auto pn = p.node();
  std::vector<double> target(gd.begin(), gd.end());
  return make_result(Shape{}, {total / n}, {p}, [pn, target = std::move(target), alpha, gamma, n](const detail::Node& self) {
    auto& gp = pn->grad_buffer();
    const double gs = self.grad[0] / n;
    for (std::size_t i = 0; i < gp.size(); ++i) {
      const double x = pn->data[i];
      double d;
      if (target[i] > 0.5) {
        const double lead = gamma == 0.0 ? 0.0 : gamma * std::pow(1.0 - x, gamma - 1.0) * std::log(x);
        d = alpha * lead - alpha * std::pow(1.0 - x, gamma) / x;
      } else {
        const double lead = gamma == 0.0 ? 0.0 : gamma * std::pow(x, gamma - 1.0) * std::log(1.0 - x);
        d = -(1.0 - alpha) * lead + (1.0 - alpha) * std::pow(x, gamma) / (1.0 - x);
      }
      gp[i] += gs * d;
    }
  });
}

double matching_cost(std::span<const double> p, std::span<const double> g, std::span<const double> scores,
                     std::span<const double> flags, std::size_t frames, const LossWeights& w) {
  if (frames == 0 || p.size() != g.size() || p.size() % frames != 0 || scores.size() != frames ||
      flags.size() != frames) {
    throw ShapeError("matching_cost: inconsistent sequence lengths");
  }
  const std::size_t px = p.size() / frames;
  double dice = 0.0, ref = 0.0;
  for (std::size_t t = 0; t < frames; ++t) {
    dice += dice_coefficient(p.subspan(t * px, px), g.subspan(t * px, px), w.dice_eps);
    ref += flags[t] * scores[t];
  }
  const double inv_t = 1.0 / static_cast<double>(frames);
  return w.dice * (-dice * inv_t) + w.ref * (-ref * inv_t);
}

std::vector<double> cost_matrix(const Tensor& probs, const Tensor& scores, const GroundTruth& gt,
                                const LossWeights& w) {
  if (probs.dim() != 4 || scores.dim() != 2 || scores.size(0) != probs.size(0) || scores.size(1) != probs.size(1)) {
    throw ShapeError("cost_matrix: masks " + to_string(probs.shape()) + " and scores " + to_string(scores.shape()) +
                     " disagree");
  }
  const std::size_t t = probs.size(0), k = probs.size(1), px = probs.size(2) * probs.size(3), n = gt.count();
  if (n > 0 && (gt.masks.size(1) != t || gt.masks.size(2) * gt.masks.size(3) != px)) {
    throw ShapeError("cost_matrix: ground truth " + to_string(gt.masks.shape()) + " does not match " +
                     to_string(probs.shape()));
  }
  if (n == 0) return {};
  const auto pd = probs.data();
  const auto sd = scores.data();
  const auto gd = gt.masks.data();
  const auto fd = gt.flags.data();
  std::vector<double> cost(n * k);
  std::vector<double> seq(t * px), sc(t);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t f = 0; f < t; ++f) {
      std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>((f * k + c) * px), px,
                  seq.begin() + static_cast<std::ptrdiff_t>(f * px));
      sc[f] = sd[f * k + c];
    }
    for (std::size_t i = 0; i < n; ++i) {
      cost[i * k + c] = matching_cost(seq, gd.subspan(i * t * px, t * px), sc, fd.subspan(i * t, t), t, w);
    }
  }
  return cost;
}

MatchResult hungarian(std::span<const double> cost, std::size_t rows, std::size_t cols) {
  if (rows > cols) {
    throw ContractError("hungarian: " + std::to_string(rows) + " objects exceed " + std::to_string(cols) +
                        " candidates");
  }
  if (cost.size() != rows * cols) throw ShapeError("hungarian: cost size does not match rows x cols");
  for (double c : cost) {
    if (!std::isfinite(c)) throw ContractError("hungarian: non-finite cost");
  }
  MatchResult result;
  if (rows == 0) return result;

  const std::vector<double> dense(cost.begin(), cost.end());
  const double best = row_order_cost(cost, cols, solve_assignment(dense, rows, cols));
  double scale_ref = 1.0;
  for (double c : cost) scale_ref = std::max(scale_ref, std::abs(c));
  const double tol = 1e-12 * scale_ref * static_cast<double>(rows);

  // Fix rows one at a time to the smallest column that still admits an optimal completion.
  std::vector<std::size_t> prefix;
  for (std::size_t i = 0; i < rows; ++i) {
    std::size_t chosen = cols;
    double chosen_cost = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j) {
      if (std::find(prefix.begin(), prefix.end(), j) != prefix.end()) continue;
      std::vector<std::size_t> trial = prefix;
      trial.push_back(j);
      const double c = row_order_cost(cost, cols, complete(cost, rows, cols, trial));
      if (c <= best + tol) {
        chosen = j;
        break;
      }
      if (c < chosen_cost) {
        chosen_cost = c;
        chosen = j;
      }
    }
    prefix.push_back(chosen);
  }
  result.assignment = std::move(prefix);
  result.cost = row_order_cost(cost, cols, result.assignment);
  return result;
}

Tensor mask_loss(const MaskOutput& masks, const GroundTruth& gt, const MatchResult& match, const LossWeights& w) {
  Tensor total = Tensor::scalar(0.0);
  if (gt.count() == 0) return total;
  const std::size_t t = masks.probs.size(0), h = masks.probs.size(2), wd = masks.probs.size(3), px = h * wd;
  const auto gd = gt.masks.data();
  for (std::size_t i = 0; i < match.assignment.size(); ++i) {
    const std::size_t k = match.assignment[i];
    Tensor p_seq = select(masks.probs, 1, k);
    Tensor l_seq = select(masks.logits, 1, k);
    for (std::size_t f = 0; f < t; ++f) {
      const auto g = gd.subspan((i * t + f) * px, px);
      Tensor dice = dice_loss(select(p_seq, 0, f), plain(g, {h, wd}), w.dice_eps);
      Tensor focal = sigmoid_focal_loss(select(l_seq, 0, f), g, w.focal_alpha, w.focal_gamma);
      total = add(total, add(scale(dice, w.dice), scale(focal, w.focal)));
    }
  }
  return total;
}

Tensor ref_loss(const Tensor& logits, const GroundTruth& gt, const MatchResult& match, const LossWeights& w) {
  if (logits.dim() != 2) throw ShapeError("ref_loss: logits must be [T, K], got " + to_string(logits.shape()));
  const std::size_t t = logits.size(0), k = logits.size(1);
  std::vector<double> target(t * k, 0.0), weight(t * k, w.negative);
  if (match.assignment.size() > gt.count()) throw ContractError("ref_loss: more matches than referred objects");
  for (std::size_t i = 0; i < match.assignment.size(); ++i) {
    const auto fd = gt.flags.data();
    for (std::size_t f = 0; f < t; ++f) {
      target[f * k + match.assignment[i]] = fd[i * t + f];
      weight[f * k + match.assignment[i]] = 1.0;
    }
  }
  return scale(bce_with_logits(logits, target, weight), w.ref);
}

Tensor diversity_loss(const DynamicKernels& kernels, const Tensor& w_div) {
  const std::size_t k = kernels.z[0].size(1), t = kernels.z[0].size(0);
  std::vector<double> eye(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) eye[i * k + i] = 1.0;
  const Tensor identity({k, k}, std::move(eye));
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t f = 0; f < t; ++f) {
    for (const Tensor& z : kernels.z) {
      Tensor zt = select(z, 0, f);
      Tensor gram = matmul(matmul(zt, w_div), transpose_last2(zt));
      total = add(total, frobenius_norm(sub(gram, identity)));
    }
  }
  return add(total, sum(abs(w_div)));
}

LossBreakdown total_loss(Tensor mask, Tensor ref, Tensor div, double div_weight) {
  Tensor total = add(add(mask, ref), scale(div, div_weight));
  return {std::move(mask), std::move(ref), std::move(div), std::move(total)};
}

LossBreakdown clip_losses(const MaskOutput& masks, const Tensor& ref_logits, const DynamicKernels& kernels,
                          const Tensor& w_div, const GroundTruth& gt, const LossWeights& w, MatchResult* match) {
  const Tensor scores = referring_scores(ref_logits.detach());
  const std::vector<double> cost = cost_matrix(masks.probs.detach(), scores, gt, w);
  MatchResult m = hungarian(cost, gt.count(), ref_logits.size(1));
  LossBreakdown out = total_loss(mask_loss(masks, gt, m, w), ref_loss(ref_logits, gt, m, w),
                                 diversity_loss(kernels, w_div), w.div);
  if (match != nullptr) *match = std::move(m);
  return out;
}

}  // namespace ftea
