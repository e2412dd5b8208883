#include "ftea/rng.hpp"

#include <cmath>
#include <sstream>

namespace ftea {

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& text) {
  std::istringstream is(text);
  is >> engine_;
  if (!is) throw ContractError("malformed RNG state");
}

Rng Rng::derived(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  Rng rng;
  rng.engine_.seed(seq);
  return rng;
}

Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor xavier_uniform(Shape shape, Rng& rng) {
  if (shape.size() < 2) throw ContractError("xavier_uniform needs at least 2 axes, got " + to_string(shape));
  const double fan_in = static_cast<double>(shape[shape.size() - 2]);
  const double fan_out = static_cast<double>(shape[shape.size() - 1]);
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  return uniform_tensor(std::move(shape), rng, -bound, bound, true);
}

}  // namespace ftea
