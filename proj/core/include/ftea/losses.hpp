#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ftea/alignment.hpp"
#include "ftea/stacked_decoder.hpp"

namespace ftea {

struct LossWeights {
  double dice = 5.0;
  double ref = 5.0;  // shared by the matching cost and the referring loss
  double focal = 2.0;
  double div = 0.07;
  double negative = 0.1;  // weight of unmatched candidates in the referring loss
  double dice_eps = 1.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
};

/// Referred objects of one clip. Slots beyond `count()` are the empty set.
struct GroundTruth {
  Tensor masks;  // [N, T, H, W], entries 0 or 1
  Tensor flags;  // [N, T], 1 where the object is visible

  std::size_t count() const { return masks.defined() ? masks.size(0) : 0; }
};

struct MatchResult {
  std::vector<std::size_t> assignment;  // ground-truth object i -> candidate assignment[i]
  double cost = 0.0;                    // sum of cost[i][assignment[i]] in row order
};

/// 1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps).
Tensor dice_loss(const Tensor& p, const Tensor& g, double eps = 1.0);
/// The smoothed Dice coefficient on plain values.
double dice_coefficient(std::span<const double> p, std::span<const double> g, double eps = 1.0);

/// Mean focal loss over pixels from probabilities p in (0, 1).
Tensor focal_loss(const Tensor& p, const Tensor& g, double alpha = 0.25, double gamma = 2.0);

/// Pairwise cost of candidate k against object i for a clip of T frames.
/// `p` and `g` hold T consecutive masks; `scores` and `flags` hold T values.
double matching_cost(std::span<const double> p, std::span<const double> g, std::span<const double> scores,
                     std::span<const double> flags, std::size_t frames, const LossWeights& w);

/// [N, K] costs for mask probabilities [T, K, H, W] and referring scores [T, K].
std::vector<double> cost_matrix(const Tensor& probs, const Tensor& scores, const GroundTruth& gt,
                                const LossWeights& w);

/// Minimum-cost injective assignment of the rows of a row-major [rows, cols]
/// matrix to columns; among optimal assignments the lexicographically smallest wins.
MatchResult hungarian(std::span<const double> cost, std::size_t rows, std::size_t cols);

/// Sum over matched pairs and frames of dice * L_dice + focal * L_focal.
Tensor mask_loss(const MaskOutput& masks, const GroundTruth& gt, const MatchResult& match, const LossWeights& w);

/// Weighted BCE on referring logits [T, K]; unmatched candidates target 0 at weight `negative`.
Tensor ref_loss(const Tensor& logits, const GroundTruth& gt, const MatchResult& match, const LossWeights& w);

/// sum_t sum_j ||Z_{j,t} W Z_{j,t}^T - I||_F + ||W||_1.
Tensor diversity_loss(const DynamicKernels& kernels, const Tensor& w_div);

struct LossBreakdown {
  Tensor mask;
  Tensor ref;
  Tensor div;
  Tensor total;
};

/// total = mask + ref + div_weight * div.
LossBreakdown total_loss(Tensor mask, Tensor ref, Tensor div, double div_weight);

/// Matches the prediction of one clip against its ground truth and evaluates every loss term.
LossBreakdown clip_losses(const MaskOutput& masks, const Tensor& ref_logits, const DynamicKernels& kernels,
                          const Tensor& w_div, const GroundTruth& gt, const LossWeights& w,
                          MatchResult* match = nullptr);

}  // namespace ftea
