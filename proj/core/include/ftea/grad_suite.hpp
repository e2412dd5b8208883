#pragma once

#include <cstdint>
#include <vector>

#include "ftea/grad_check.hpp"

namespace ftea {

/// Size of the composed stacked-attention -> stacked-FFN -> decode_masks check.
struct StackedPathDims {
  std::size_t frames = 2;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t candidates = 4;
  std::size_t channels = 32;  // C
};

/// Finite-difference checks of every differentiable op, one report per op.
/// Inputs are drawn from `seed` and kept away from the kinks of relu, abs and the l1 norm.
std::vector<GradReport> op_gradient_suite(std::uint64_t seed);

/// Checks the full mask decoder (both stacked stages and the final dynamic
/// convolution) against central differences with respect to its inputs and parameters.
/// `options.seed` is replaced by `seed`.
GradReport stacked_path_gradient(std::uint64_t seed, const StackedPathDims& dims = {},
                                 GradCheckOptions options = {1e-5, 16, 0});

}  // namespace ftea
