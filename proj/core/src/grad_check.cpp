#include "ftea/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ftea/rng.hpp"

namespace ftea {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradReport grad_check(std::string op, const std::function<Tensor()>& fn, const std::vector<NamedTensor>& inputs,
                      const GradCheckOptions& options) {
  GradReport report;
  report.op = std::move(op);

  for (const auto& [name, t] : inputs) {
    Tensor handle = t;
    handle.zero_grad();
    handle.set_requires_grad(true);
  }
  Tensor loss = fn();
  if (loss.numel() != 1) throw ContractError("grad_check: function must return a scalar");
  loss.backward();

  std::vector<std::vector<double>> analytic;
  for (const auto& [name, t] : inputs) {
    analytic.emplace_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                       : std::vector<double>(t.numel(), 0.0));
  }

  Rng rng(options.seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor handle = inputs[k].second;
    std::vector<std::size_t> entries(handle.numel());
    std::iota(entries.begin(), entries.end(), 0);
    if (options.max_entries != 0 && entries.size() > options.max_entries) {
      std::shuffle(entries.begin(), entries.end(), rng.engine());
      entries.resize(options.max_entries);
      std::sort(entries.begin(), entries.end());
    }
    ParamGradError err{inputs[k].first, 0.0, entries.size()};
    auto values = handle.data();
    for (std::size_t i : entries) {
      const double saved = values[i];
      const double hi = saved + options.h;
      const double lo = saved - options.h;
      values[i] = hi;
      const double up = fn().item();
      values[i] = lo;
      const double down = fn().item();
      values[i] = saved;
      // Divide by the step actually realised in floating point.
      const double numeric = (up - down) / (hi - lo);
      err.max_rel_error = std::max(err.max_rel_error, relative_error(analytic[k][i], numeric));
    }
    report.max_rel_error = std::max(report.max_rel_error, err.max_rel_error);
    report.per_parameter.push_back(std::move(err));
  }
  for (const auto& [name, t] : inputs) {
    Tensor handle = t;
    handle.zero_grad();
  }
  return report;
}

}  // namespace ftea
