#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ftea/tensor.hpp"

namespace ftea {

struct ParamGradError {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
};

struct GradReport {
  std::string op;
  double max_rel_error = 0.0;
  std::vector<ParamGradError> per_parameter;
};

struct GradCheckOptions {
  double h = 1e-5;
  // Entries probed per input; 0 checks every entry, otherwise a seeded sample.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
};

using NamedTensor = std::pair<std::string, Tensor>;

/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
double relative_error(double analytic, double numeric);

/// Compares reverse-mode gradients of the scalar `fn()` against central
/// differences with respect to each input. `fn` must read the inputs through
/// their handles; they are perturbed in place and restored afterwards.
GradReport grad_check(std::string op, const std::function<Tensor()>& fn, const std::vector<NamedTensor>& inputs,
                      const GradCheckOptions& options = {});

}  // namespace ftea
