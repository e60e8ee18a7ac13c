#pragma once

// Counter-based 64-bit generator (SplitMix64 finalizer applied to
// seed + counter * golden gamma) with Box-Muller normals. Output depends only
// on (seed, counter), so streams are reproducible across platforms and
// standard libraries.

#include "simplex_flows/simplex.hpp"
#include "simplex_flows/types.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>

namespace sflow {

class CounterRng {
public:
  explicit CounterRng(std::uint64_t seed = 0) : seed_(seed) {}

  /// Independent generator for a sub-stream (e.g. one initialization).
  CounterRng derive(std::uint64_t stream) const {
    return CounterRng(mix(seed_ ^ mix(stream + 0x632be59bd9b4e019ULL)));
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() { return mix(seed_ + (++counter_) * kGamma); }

  /// Uniform in the open interval (0, 1).
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound) {
    // Lemire's multiply-shift with rejection; bound > 0.
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * bound;
    std::uint64_t low = static_cast<std::uint64_t>(m);
    if (low < bound) {
      const std::uint64_t threshold = -bound % bound;
      while (low < threshold) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * bound;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(angle);
    has_spare_ = true;
    return r * std::cos(angle);
  }

  double exponential() { return -std::log(uniform()); }

private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// i.i.d. standard normal vector.
inline Vector gaussian_noise(Index dim, CounterRng &rng) {
  Vector v(dim);
  for (Index i = 0; i < dim; ++i)
    v[i] = rng.normal();
  return v;
}

/// Uniform point on the open simplex with n+1 outcomes (symmetric Dirichlet(1)
/// via normalized exponentials).
inline SimplexPointd random_simplex_point(Index n, CounterRng &rng) {
  Vector w(n + 1);
  for (Index i = 0; i <= n; ++i)
    w[i] = rng.exponential();
  return SimplexPointd(w / w.sum());
}

} // namespace sflow
