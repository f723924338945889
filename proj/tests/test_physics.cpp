#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "bfflow/analysis.hpp"
#include "bfflow/physics.hpp"
#include "bfflow/rng.hpp"
#include "test_util.hpp"

using namespace bfflow;
using namespace bfflow::testing;

namespace {

NonlinearityParams quintic() {
  NonlinearityParams p;
  p.alpha = 1.0;
  p.beta = 1.0;
  p.gamma = 0.0;
  p.l = 2.0;
  return p;
}

VectorField constant_field(const Grid& g, double a, double b) {
  VectorField u(g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    u.at(0, i) = a;
    u.at(1, i) = b;
  }
  return u;
}

}  // namespace

TEST_CASE("nonlinearity parameters are validated") {
  NonlinearityParams p = quintic();
  CHECK_NOTHROW(p.validate());
  p.l = 3.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p.l = 0.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = quintic();
  p.beta = -1.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = quintic();
  CHECK(p.dissipative());
  p.beta = 0.0;
  CHECK_FALSE(p.dissipative());
  p.l = 0.5;
  p.gamma = 1.0;
  CHECK(p.dissipative());
}

TEST_CASE("eval_phi") {
  NonlinearityParams p = quintic();
  CHECK(eval_phi(0.0, p) == 1.0);
  CHECK(eval_phi(2.0, p) == doctest::Approx(5.0).epsilon(1e-15));
  NonlinearityParams s;
  s.gamma = 3.0;
  CHECK(eval_phi(4.0, s) == doctest::Approx(6.0).epsilon(1e-15));
  CHECK_THROWS_AS(eval_phi(-1.0, p), std::invalid_argument);
}

TEST_CASE("eval_f") {
  const Grid g = Grid::make(2, 8);
  NonlinearityParams p;
  p.alpha = 1.0;
  p.beta = 1.0;
  p.l = 1.0;
  CHECK(max_abs(eval_f(VectorField(g), p).values) == 0.0);
  const VectorField f = eval_f(constant_field(g, 1.0, 0.0), p);
  for (std::size_t i = 0; i < g.size(); ++i) {
    CHECK(f.at(0, i) == doctest::Approx(2.0));
    CHECK(f.at(1, i) == 0.0);
  }
  // Anti-drag case alpha = -1, beta = 1, l = 1: f(u).u = z^2 - z >= -|u|/2 with z = |u|^2.
  NonlinearityParams a;
  a.alpha = -1.0;
  a.beta = 1.0;
  a.l = 1.0;
  Xoshiro256 rng(1);
  double worst = 1e300;
  for (int i = 0; i < 10000; ++i) {
    const double x = rng.uniform(-3, 3), y = rng.uniform(-3, 3), z = x * x + y * y;
    const double fu = eval_phi(z, a) * z;
    worst = std::min(worst, fu + 0.5 * std::sqrt(z));
  }
  CHECK(worst >= -1e-12);
}

TEST_CASE("eval_potential") {
  const Grid g = Grid::make(2, 8);
  const NonlinearityParams p = quintic();
  CHECK(eval_potential(VectorField(g), p) == 0.0);
  NonlinearityParams two;
  two.alpha = 2.0;
  VectorField u(g);
  u.at(0, 5) = 1.0;
  CHECK(eval_potential(u, two) == doctest::Approx(g.h * g.h).epsilon(1e-14));
  // d/ds F(s u) at s = 1 equals f(u).u.
  NonlinearityParams q = quintic();
  q.gamma = 0.7;
  q.l = 1.5;
  Xoshiro256 rng(2);
  for (int i = 0; i < 50; ++i) {
    const double x = rng.uniform(-2, 2), y = rng.uniform(-2, 2), z = x * x + y * y;
    const double hs = 1e-5;
    const double fd = (potential_density(z * (1 + hs) * (1 + hs), q) - potential_density(z * (1 - hs) * (1 - hs), q)) /
                      (2 * hs);
    CHECK(fd == doctest::Approx(eval_phi(z, q) * z).epsilon(1e-6));
  }
}

TEST_CASE("apply_fprime: finite differences, symmetry, monotone case") {
  const Grid g = Grid::make(2, 8);
  NonlinearityParams p = quintic();
  p.gamma = 0.5;
  const VectorField u = random_vector(g, 3), v = random_vector(g, 4), w = random_vector(g, 5);
  CHECK(max_abs(apply_fprime(u, VectorField(g), p).values) == 0.0);

  const double h = 1e-5;
  VectorField fd = eval_f(u + h * v, p);
  fd -= eval_f(u - h * v, p);
  fd *= 1.0 / (2 * h);
  const VectorField jv = apply_fprime(u, v, p);
  CHECK(norm_l2(fd - jv) <= 1e-6 * norm_l2(jv));

  const double a = inner(apply_fprime(u, v, p), w), b = inner(v, apply_fprime(u, w, p));
  CHECK(std::abs(a - b) <= 1e-12 * std::abs(a) + 1e-14);
  CHECK(inner(apply_fprime(u, v, p), v) >= 0.0);
  CHECK_THROWS_AS(apply_fprime(u, VectorField(Grid::make(2, 10)), p), std::invalid_argument);
}

TEST_CASE("monotone_shift") {
  NonlinearityParams mono;
  mono.alpha = 1.0;
  mono.beta = 1.0;
  mono.l = 1.0;
  CHECK(monotone_shift(mono, 10.0) <= 1e-12);
  NonlinearityParams sq;
  sq.gamma = 2.0;
  CHECK(monotone_shift(sq, 10.0) <= 1e-12);

  // Anti-drag: certificate by brute force over random |v| <= u_max.
  NonlinearityParams anti;
  anti.alpha = -2.0;
  anti.beta = 1.0;
  anti.l = 1.0;
  const double umax = 3.0;
  const double shift = monotone_shift(anti, umax);
  CHECK(shift >= 2.0 * 0.99);
  CHECK(shift <= 2.0 * 1.02);
  Xoshiro256 rng(6);
  double worst = 1e300;
  for (int i = 0; i < 100000; ++i) {
    const double r = umax * rng.uniform();
    const auto [e1, e2] = fprime_eigenvalues(r * r, anti);
    worst = std::min(worst, std::min(e1, e2) + shift);
  }
  CHECK(worst >= -1e-9);

  // Pointwise monotonicity of f + L id on random pairs.
  const Grid g = Grid::make(2, 4);
  double mworst = 1e300;
  for (int i = 0; i < 100000 / static_cast<int>(g.size()); ++i) {
    VectorField a(g), b(g);
    for (auto& x : a.values) x = rng.uniform(-umax, umax) / std::sqrt(2.0);
    for (auto& x : b.values) x = rng.uniform(-umax, umax) / std::sqrt(2.0);
    VectorField diff = a - b;
    VectorField df = eval_f(a, anti);
    df -= eval_f(b, anti);
    df.axpy(shift, diff);
    for (std::size_t k = 0; k < g.size(); ++k)
      mworst = std::min(mworst, df.at(0, k) * diff.at(0, k) + df.at(1, k) * diff.at(1, k));
  }
  CHECK(mworst >= -1e-9);
}

TEST_CASE("medium matrix") {
  CHECK_THROWS_AS(MediumMatrix::make(2, {1.0, 2.0, 2.0, 1.0}), std::invalid_argument);  // indefinite
  CHECK_THROWS_AS(MediumMatrix::make(2, {1.0, 0.1, 0.0, 1.0}), std::invalid_argument);  // not symmetric
  CHECK_THROWS_AS(MediumMatrix::make(2, {1.0, 0.0, 0.0}), std::invalid_argument);
  const MediumMatrix d = MediumMatrix::make(2, {2.0, 0.5, 0.5, 1.0});
  CHECK(d.eigmin() > 0.0);
  CHECK(d.eigmin() == doctest::Approx(1.5 - std::sqrt(0.5)).epsilon(1e-14));
  const MediumMatrix inv = d.inverse();
  CHECK(inv(0, 0) * d(0, 0) + inv(0, 1) * d(1, 0) == doctest::Approx(1.0).epsilon(1e-14));
  const Grid g = Grid::make(2, 8);
  const VectorField u = random_vector(g, 9);
  CHECK(norm_l2(inv.apply(d.apply(u)) - u) <= 1e-14 * norm_l2(u) * 4);
}

TEST_CASE("forcing interpolation") {
  const Grid g = Grid::make(2, 8);
  Forcing f = Forcing::zero(g);
  CHECK_FALSE(f.time_dependent());
  const VectorField a = constant_field(g, 1.0, 0.0), b = constant_field(g, 3.0, 2.0);
  f.time_series = {{0.0, a}, {1.0, b}};
  CHECK(f.time_dependent());
  CHECK(f.at(0.25).at(0, 3) == doctest::Approx(1.5));
  CHECK(f.at(0.25).at(1, 3) == doctest::Approx(0.5));
  CHECK(f.at(-1.0).at(0, 0) == 1.0);
  CHECK(f.at(7.0).at(0, 0) == 3.0);
  const Forcing c = Forcing::constant(b);
  CHECK(c.at(12.0).at(1, 2) == 2.0);
}

TEST_CASE("Bogovski right inverse of the divergence") {
  for (int n : {16, 32}) {
    const Grid g = Grid::make(2, n);
    const DirichletSolver solver(g);
    double max_ratio = 0.0, min_ratio = 1e300;
    for (int trial = 0; trial < 20; ++trial) {
      const ScalarField p = project_mean_zero(random_scalar(g, 100 + trial));
      const BogovskiResult res = bogovski(p, solver);
      CHECK(norm_l2(div(res.w) - p) <= 1e-8 * norm_l2(p));
      CHECK(res.w.all_finite());
      const double ratio = std::sqrt(dirichlet_seminorm_sq(res.w)) / norm_l2(p);
      max_ratio = std::max(max_ratio, ratio);
      min_ratio = std::min(min_ratio, ratio);
    }
    // One continuity constant covers all samples.
    CHECK(max_ratio < 10.0 * min_ratio);
  }
  const Grid g = Grid::make(2, 8);
  CHECK(max_abs(bogovski(ScalarField(g)).w.values) == 0.0);
  ScalarField c = random_scalar(g, 1);
  for (auto& v : c.values) v += 1.0;
  const BogovskiResult proj = bogovski(c);
  CHECK(proj.projected);
  CHECK(norm_l2(div(proj.w) - project_mean_zero(c)) <= 1e-8 * norm_l2(c));
}

TEST_CASE("energy report and the eps certificate") {
  const Grid g = Grid::make(2, 16);
  const MediumMatrix d = MediumMatrix::diagonal({1.0, 2.0});
  const NonlinearityParams p = quintic();
  const EnergyReport zero = energy_report(VectorField(g), ScalarField(g), VectorField(g), d, p, 0.3);
  CHECK(zero.e_plain == 0.0);
  CHECK(zero.e_eps == 0.0);
  CHECK(zero.dissipation == 0.0);

  const VectorField u = random_vector(g, 20);
  const ScalarField pr = project_mean_zero(random_scalar(g, 21));
  const VectorField gf = random_vector(g, 22);
  const EnergyReport r0 = energy_report(u, pr, gf, d, p, 0.0);
  CHECK(r0.e_eps == r0.e_plain);
  CHECK(r0.e_plain == doctest::Approx(weighted_inner(d, u, u) + inner(pr, pr)).epsilon(1e-14));
  CHECK(r0.dissipation == doctest::Approx(dirichlet_form(u, d)).epsilon(1e-14));
  CHECK(r0.g_work == doctest::Approx(inner(gf, d.apply(u))).epsilon(1e-12));
  CHECK(r0.f_work == doctest::Approx(inner(eval_f(u, p), d.apply(u))).epsilon(1e-12));
  CHECK_THROWS_AS(energy_report(u, pr, gf, d, p, -1.0), std::invalid_argument);

  const double eps_star = certify_eps(g, d, 50, 1);
  CHECK(eps_star > 0.0);
  const double eps = 0.5 * eps_star;
  // 50 fresh states: smooth, white, and the worst-case direction u ~ -D^{-1} B p.
  for (int k = 0; k < 50; ++k) {
    const ScalarField q = project_mean_zero(k % 2 ? random_scalar(g, 900 + k) : smooth_random(g, 900 + k, 4));
    VectorField v;
    if (k % 3 == 0) {
      v = random_vector(g, 1900 + k);
    } else {
      v = d.inverse().apply(bogovski(q).w);
      v *= -(k % 3 == 1 ? 0.5 : 2.0) * eps;
    }
    const EnergyReport r = energy_report(v, q, VectorField(g), d, p, eps);
    CHECK(r.e_eps >= 0.5 * r.e_plain * (1 - 1e-12));
    CHECK(r.e_eps <= 1.5 * r.e_plain * (1 + 1e-12));
  }
}

TEST_CASE("convective form") {
  const Grid g = Grid::make(2, 16);
  const VectorField zero(g);
  CHECK(max_abs(convective(zero, random_vector(g, 1)).values) == 0.0);
  for (int trial = 0; trial < 100; ++trial) {
    const VectorField u = random_vector(g, 300 + trial), v = random_vector(g, 700 + trial);
    CHECK(std::abs(inner(convective(u, v), v)) <= 1e-12 * norm_l2(u) * norm_l2(v) * norm_l2(v));
  }
  // Divergence-free u (curl of sin^2 sin^2) against constant v: B(u, v) = O(h^2) away from the boundary.
  for (int n : {16, 32}) {
    const Grid gg = Grid::make(2, n);
    VectorField u(gg);
    for (std::size_t i = 0; i < gg.size(); ++i) {
      const auto idx = gg.unravel(i);
      const double x = M_PI * gg.coord(idx[0]), y = M_PI * gg.coord(idx[1]);
      const double sx = std::sin(x), sy = std::sin(y);
      u.at(0, i) = 2 * M_PI * sx * sx * sy * std::cos(y);
      u.at(1, i) = -2 * M_PI * sy * sy * sx * std::cos(x);
    }
    const VectorField b = convective(u, constant_field(gg, 1.0, 1.0));
    double err = 0.0;
    for (std::size_t i = 0; i < gg.size(); ++i) {
      const auto idx = gg.unravel(i);
      if (idx[0] < 2 || idx[1] < 2 || idx[0] > n - 3 || idx[1] > n - 3) continue;
      err = std::max({err, std::abs(b.at(0, i)), std::abs(b.at(1, i))});
    }
    CHECK(err <= gg.h * gg.h);
  }
}
