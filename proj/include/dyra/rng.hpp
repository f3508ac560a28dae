#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dyra {

/// Deterministic RNG: mt19937_64 (standard-specified stream) with hand-rolled
/// transforms, so sequences do not depend on library distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return engine_() % n; }

  /// Box-Muller; consumes exactly two draws per call.
  double normal(double mu = 0.0, double sigma = 1.0) {
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    return mu + sigma * mag * std::cos(2.0 * M_PI * u2);
  }

  double log_normal(double log_mean, double log_std) {
    return std::exp(normal(log_mean, log_std));
  }

  /// Independent child stream (for per-purpose sub-generators).
  Rng fork(std::uint64_t salt) {
    return Rng(next_u64() ^ (0x9e3779b97f4a7c15ull * (salt + 1)));
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dyra
