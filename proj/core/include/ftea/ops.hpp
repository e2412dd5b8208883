#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ftea/rng.hpp"
#include "ftea/tensor.hpp"

namespace ftea {

/// Summation order used by contractions and normalisation statistics.
///
/// kCanonical sums the terms of every reduction in ascending value order, so a
/// relabelling of the reduced axis yields bit-identical results. The stacked
/// mask decoder uses it on every reduction that runs over candidate channels.
enum class Reduction { kSequential, kCanonical };

// --- linear algebra -------------------------------------------------------

/// a[..., m, k] x b[..., k, n] with numpy-style broadcasting of the batch axes.
Tensor matmul(const Tensor& a, const Tensor& b, Reduction reduction = Reduction::kSequential);

/// Swaps the last two axes.
Tensor transpose_last2(const Tensor& x);

/// x[..., G*cin] through per-group weights w[G, cin, cout] -> [..., G*cout].
Tensor grouped_linear(const Tensor& x, const Tensor& weights, std::size_t groups);

// --- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

Tensor sigmoid(const Tensor& x);
Tensor log_sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);

/// Inverted dropout; identity when `training` is false or p == 0.
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);

// --- reductions and normalisation -----------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// sqrt(sum(x^2)); the gradient at the origin is taken as zero.
Tensor frobenius_norm(const Tensor& x);

Tensor softmax_last(const Tensor& x);

inline constexpr double kLayerNormEps = 1e-5;

/// Normalises each last-axis slice to zero mean / unit variance, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  Reduction reduction = Reduction::kSequential);

// --- resampling -------------------------------------------------------------

/// x[..., h, w, c] -> [..., out_h, out_w, c], half-pixel centres (align_corners = false).
Tensor bilinear_upsample(const Tensor& x, std::size_t out_h, std::size_t out_w);

// --- shape manipulation -------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
/// Removes `axis`, keeping slice `index`.
Tensor select(const Tensor& x, std::size_t axis, std::size_t index);
Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor broadcast_to(const Tensor& x, const Shape& shape);
/// out.data[i] = x.data[index[i]]; the backward pass scatters.
Tensor gather(const Tensor& x, std::vector<std::size_t> index, Shape shape);

// --- fused losses -----------------------------------------------------------

/// Mean over elements of the sigmoid focal loss computed from logits.
Tensor sigmoid_focal_loss(const Tensor& logits, std::span<const double> target, double alpha, double gamma);

/// Sum over elements of weight * BCE(sigmoid(logit), target), computed from logits.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> target, std::span<const double> weight);

// --- helpers ---------------------------------------------------------------

/// Shape produced by numpy broadcasting; throws ShapeError naming both shapes.
Shape broadcast_shapes(const Shape& a, const Shape& b);

/// Sum of `terms` in the given reduction order; may reorder `terms`.
double reduce_sum(std::span<double> terms, Reduction reduction);

}  // namespace ftea
