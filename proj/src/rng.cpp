#include "bfflow/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace bfflow {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {
inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

Xoshiro256::Xoshiro256(std::uint64_t seed) {
  std::uint64_t st = seed;
  for (auto& w : s_) w = splitmix64(st);
}

std::uint64_t Xoshiro256::next() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Xoshiro256::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double Xoshiro256::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

ScalarField white_noise(const Grid& g, Xoshiro256& rng) {
  ScalarField f(g);
  for (double& v : f.values) v = rng.normal();
  return f;
}

VectorField white_noise_vector(const Grid& g, Xoshiro256& rng) {
  VectorField u(g);
  for (double& v : u.values) v = rng.normal();
  return u;
}

namespace {

// Evaluates sum_k coef_k prod_a sin(k_a pi x_a) on g for k_a in 1..kmax.
std::vector<double> sine_series(const Grid& g, const std::vector<double>& coef, int kmax) {
  std::vector<double> table(static_cast<std::size_t>(kmax) * g.n);
  for (int k = 0; k < kmax; ++k)
    for (int i = 0; i < g.n; ++i) table[k * g.n + i] = std::sin((k + 1) * std::numbers::pi * g.coord(i));
  std::vector<double> out(g.size(), 0.0);
  const int modes = static_cast<int>(coef.size());
  for (int m = 0; m < modes; ++m) {
    int km[3] = {m % kmax, (m / kmax) % kmax, g.dim == 3 ? m / (kmax * kmax) : 0};
    for (std::size_t j = 0; j < g.size(); ++j) {
      const auto idx = g.unravel(j);
      double v = coef[m];
      for (int a = 0; a < g.dim; ++a) v *= table[km[a] * g.n + idx[a]];
      out[j] += v;
    }
  }
  return out;
}

std::vector<double> normal_coefficients(int count, Xoshiro256& rng) {
  std::vector<double> c(count);
  for (double& v : c) v = rng.normal();
  return c;
}

int mode_count(const Grid& g, int kmax) {
  int m = 1;
  for (int a = 0; a < g.dim; ++a) m *= kmax;
  return m;
}

}  // namespace

ScalarField smooth_random(const Grid& g, std::uint64_t seed, int kmax) {
  Xoshiro256 rng(seed);
  const auto coef = normal_coefficients(mode_count(g, kmax), rng);
  return ScalarField(g, sine_series(g, coef, kmax));
}

VectorField smooth_random_vector(const Grid& g, std::uint64_t seed, int kmax) {
  Xoshiro256 rng(seed);
  VectorField u(g);
  for (int c = 0; c < g.dim; ++c) {
    const auto coef = normal_coefficients(mode_count(g, kmax), rng);
    const auto vals = sine_series(g, coef, kmax);
    std::copy(vals.begin(), vals.end(), u.component(c).begin());
  }
  return u;
}

ScalarField band_limited_noise(const Grid& g, const Grid& coarse, std::uint64_t seed) {
  if (g.dim != coarse.dim || g.n < coarse.n) throw std::invalid_argument("band_limited_noise: bad grids");
  Xoshiro256 rng(seed);
  // Orthonormal sine functions sqrt(2)^d prod sin(k pi x) with N(0,1) weights,
  // scaled so that the expected squared L2 norm is 1.
  const int modes = mode_count(coarse, coarse.n);
  auto coef = normal_coefficients(modes, rng);
  const double scale = std::pow(2.0, 0.5 * g.dim) / std::sqrt(static_cast<double>(modes));
  for (double& c : coef) c *= scale;
  return ScalarField(g, sine_series(g, coef, coarse.n));
}

}  // namespace bfflow
