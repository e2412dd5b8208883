#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "ftea/tensor.hpp"

namespace ftea {

/// Explicitly seeded random stream. Every stochastic component takes one by reference.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  /// Uniform integer in [lo, hi].
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t next() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

  std::string state() const;
  void set_state(const std::string& text);

  /// Independent stream for sample `index` of a run seeded with `seed`.
  static Rng derived(std::uint64_t seed, std::uint64_t index);

 private:
  std::mt19937_64 engine_;
};

Tensor uniform_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false);

/// Xavier/Glorot uniform init for a weight whose last two axes are (fan_in, fan_out).
Tensor xavier_uniform(Shape shape, Rng& rng);

}  // namespace ftea
