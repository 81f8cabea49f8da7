#pragma once

// Sampling helpers on top of std::mt19937_64. The engine's output sequence is
// fixed by the standard; the std:: distributions are not, so the variates are
// derived here by inversion to keep simulated streams identical across
// standard-library implementations.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace photonstat {

class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1].
  double uniform_pos() { return 1.0 - uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  double exponential(double mean) { return -mean * std::log(uniform_pos()); }

  double normal() {
    const double r = std::sqrt(-2.0 * std::log(uniform_pos()));
    return r * std::cos(2.0 * std::numbers::pi * uniform());
  }

  /// Number of failures before the first success, success probability p in (0, 1].
  std::uint64_t geometric(double p) {
    if (p >= 1.0) return 0;
    const double k = std::floor(std::log(uniform_pos()) / std::log1p(-p));
    return k > 9.0e18 ? std::uint64_t{9'000'000'000'000'000'000ull}
                      : static_cast<std::uint64_t>(k);
  }

  /// Poisson variate by sequential inversion; intended for small means.
  std::uint64_t poisson(double mean) {
    if (mean <= 0.0) return 0;
    if (mean > 500.0) {
      const double x = std::round(mean + std::sqrt(mean) * normal());
      return x < 0.0 ? 0 : static_cast<std::uint64_t>(x);
    }
    double u = uniform();
    double p = std::exp(-mean);
    std::uint64_t k = 0;
    double cdf = p;
    while (u >= cdf && k < 100000) {
      ++k;
      p *= mean / static_cast<double>(k);
      cdf += p;
      if (p == 0.0 && cdf <= u) break;
    }
    return k;
  }

  std::mt19937_64& engine() { return engine_; }

private:
  std::mt19937_64 engine_;
};

}  // namespace photonstat
