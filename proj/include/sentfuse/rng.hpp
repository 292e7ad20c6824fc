// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "sentfuse/tensor.hpp"

namespace sentfuse {

// Deterministic draws built directly on mt19937 words so generated bytes do
// not depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(static_cast<std::uint32_t>(seed ^ (seed >> 32))) {}

  // Uniform in [0, 1) with 24-bit resolution.
  double unit() { return static_cast<double>(eng_() >> 8) * (1.0 / 16777216.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  double normal() {
    // Box-Muller; one value per call keeps the stream position predictable.
    const double u1 = std::max(unit(), 5.96e-8);
    const double u2 = unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::size_t index(std::size_t n) { return static_cast<std::size_t>(eng_() % n); }

  std::mt19937& engine() { return eng_; }

 private:
  std::mt19937 eng_;
};

template <class S>
Tensor<S> random_uniform(Rng& rng, std::vector<std::size_t> shape, double lo, double hi) {
  Tensor<S> t(std::move(shape));
  for (auto& x : t.data()) x = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

template <class S>
Tensor<S> random_normal(Rng& rng, std::vector<std::size_t> shape, double stddev = 1.0) {
  Tensor<S> t(std::move(shape));
  for (auto& x : t.data()) x = static_cast<S>(rng.normal() * stddev);
  return t;
}

// Uniform Xavier/Glorot bound for a [fan_in × fan_out] map.
template <class S>
Tensor<S> xavier_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return random_uniform<S>(rng, {fan_in, fan_out}, -a, a);
}

}  // namespace sentfuse
