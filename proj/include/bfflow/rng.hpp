#pragma once

// Portable random numbers: xoshiro256** (Blackman & Vigna reference
// constants) seeded through SplitMix64, normals by Box-Muller. Streams depend
// only on the seed, never on the standard library implementation.

#include <array>
#include <cstdint>

#include "bfflow/grid.hpp"

namespace bfflow {

class Xoshiro256 {
 public:
  explicit Xoshiro256(std::uint64_t seed);

  std::uint64_t next();
  /// Uniform in [0,1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();

 private:
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

/// Independent N(0,1) node values.
ScalarField white_noise(const Grid& g, Xoshiro256& rng);
VectorField white_noise_vector(const Grid& g, Xoshiro256& rng);

/// sum over modes 1..kmax per axis of xi_k prod_a sin(k_a pi x_a), xi_k ~ N(0,1).
/// The function is defined on the unit box, so it is the same field on every grid.
ScalarField smooth_random(const Grid& g, std::uint64_t seed, int kmax);
VectorField smooth_random_vector(const Grid& g, std::uint64_t seed, int kmax);

/// White noise on the sine modes of `coarse`, evaluated on `g` (g.n >= coarse.n).
/// On g == coarse this is plain white noise in the orthonormal sine basis.
ScalarField band_limited_noise(const Grid& g, const Grid& coarse, std::uint64_t seed);

}  // namespace bfflow
