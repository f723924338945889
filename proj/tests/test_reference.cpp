#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <stdexcept>

#include "bfflow/dynamics.hpp"
#include "bfflow/reference.hpp"
#include "bfflow/rng.hpp"
#include "test_util.hpp"

using namespace bfflow;
using namespace bfflow::testing;
using cd = std::complex<double>;

TEST_CASE("dense propagator: identity, semigroup law, dissipativity") {
  const Grid g = Grid::make(2, 6);
  const DensePropagator prop = build_propagator(g, MediumMatrix::diagonal({1.0, 2.0}));
  const auto m = prop.generator().rows();
  CHECK(m == static_cast<Eigen::Index>(3 * g.size() - 1));
  CHECK((prop.exp(0.0) - Eigen::MatrixXd::Identity(m, m)).cwiseAbs().maxCoeff() <= 1e-13);
  for (Eigen::Index i = 0; i < prop.eigenvalues().size(); ++i) CHECK(prop.eigenvalues()(i).real() <= 1e-10);

  Xoshiro256 rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd x(m);
    for (Eigen::Index i = 0; i < m; ++i) x(i) = rng.normal();
    const Eigen::VectorXd two = prop.apply(0.2, prop.apply(0.3, x));
    CHECK((two - prop.apply(0.5, x)).norm() <= 1e-10 * x.norm());
  }

  const VectorField u = random_vector(g, 2);
  const ScalarField p = project_mean_zero(random_scalar(g, 3));
  const auto [u2, p2] = prop.unpack(prop.pack(u, p));
  CHECK(norm_l2(u2 - u) <= 1e-14 * norm_l2(u));
  CHECK(norm_l2(p2 - p) <= 1e-13 * norm_l2(p));

  CHECK_THROWS_AS(build_propagator(Grid::make(2, 10), MediumMatrix::identity(2)), std::invalid_argument);
  CHECK_THROWS_AS(build_propagator(Grid::make(3, 8), MediumMatrix::identity(3)), std::invalid_argument);
}

TEST_CASE("dense propagator matches the full-matrix exponential of the generator") {
  // Independent check of the eigendecomposition path: Taylor series with scaling and squaring.
  const Grid g = Grid::make(2, 4);
  const DensePropagator prop = build_propagator(g, MediumMatrix::make(2, {2.0, 0.5, 0.5, 1.0}));
  const double t = 0.05;
  const Eigen::MatrixXd a = prop.generator() * (t / 1024.0);
  Eigen::MatrixXd e = Eigen::MatrixXd::Identity(a.rows(), a.cols()), term = e;
  for (int k = 1; k < 20; ++k) {
    term = term * a / k;
    e += term;
  }
  for (int k = 0; k < 10; ++k) e = e * e;
  CHECK((prop.exp(t) - e).norm() <= 1e-10 * e.norm());
}

TEST_CASE("periodic mode solution: closed form constant, zero data, energy decay") {
  ModeSolution init;
  init.k = {1, 0, 0};
  init.phi = 1.0;
  init.p = 0.0;
  // exp([[-1,-1],[1,0]]) (1,0)^T, evaluated independently at 20 digits.
  const ModeSolution s = periodic_mode_solution(init, 1.0, 2, 0);
  CHECK(std::abs(s.phi - cd(0.12619295827700868773)) <= 1e-14);
  CHECK(std::abs(s.p - cd(0.53350719511469302248)) <= 1e-14);

  ModeSolution zero;
  zero.k = {2, 1, 0};
  const ModeSolution z = periodic_mode_solution(zero, 0.7, 2, 16);
  CHECK(std::abs(z.phi) + std::abs(z.p) + std::abs(z.sol[0]) + std::abs(z.sol[1]) == 0.0);

  ModeSolution mean;
  mean.p = 2.0;
  CHECK(periodic_mode_solution(mean, 1.0, 2, 16).p == cd(0.0));

  Xoshiro256 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    ModeSolution m;
    m.k = {1 + trial % 3, trial % 2, 0};
    m.phi = cd(rng.normal(), rng.normal());
    m.p = cd(rng.normal(), rng.normal());
    const double b = [&] {
      const auto sym = periodic_gradient_symbol(m.k, 2, 16);
      return sym[0] * sym[0] + sym[1] * sym[1];
    }();
    double prev = 1e300;
    for (int j = 0; j <= 20; ++j) {
      const ModeSolution x = periodic_mode_solution(m, 0.1 * j, 2, 16);
      const double energy = b * std::norm(x.phi) + std::norm(x.p);
      CHECK(energy <= prev * (1 + 1e-14));
      prev = energy;
    }
  }
  CHECK(periodic_laplacian_symbol({1, 2, 0}, 2, 0) == 5.0);
  CHECK(periodic_laplacian_symbol({1, 0, 0}, 2, 16) == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("periodic stepper matches the closed form for the 5 lowest modes") {
  const PeriodicGrid pg{2, 16};
  const std::array<std::array<int, 3>, 5> modes{{{1, 0, 0}, {0, 1, 0}, {1, 1, 0}, {1, -1, 0}, {2, 0, 0}}};
  Xoshiro256 rng(5);
  for (const auto& k : modes) {
    ModeSolution m;
    m.k = k;
    m.phi = cd(rng.normal(), rng.normal());
    m.p = cd(rng.normal(), rng.normal());
    const auto s = periodic_gradient_symbol(k, 2, pg.n);
    const cd a(rng.normal(), rng.normal());
    m.sol = {-s[1] * a, s[0] * a, 0.0};
    const PeriodicFields init = periodic_fields(m, pg);
    const PeriodicFields stepped = periodic_rk4(init, pg, 1e-3, 0.5);
    const PeriodicFields exact = periodic_fields(periodic_mode_solution(m, 0.5, 2, pg.n), pg);
    double err = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < exact.u.size(); ++i) {
      err = std::max(err, std::abs(stepped.u[i] - exact.u[i]));
      scale = std::max(scale, std::abs(init.u[i]));
    }
    for (std::size_t i = 0; i < exact.p.size(); ++i) {
      err = std::max(err, std::abs(stepped.p[i] - exact.p[i]));
      scale = std::max(scale, std::abs(init.p[i]));
    }
    CHECK(err <= 1e-8 * scale);
  }
}

TEST_CASE("residual checker") {
  const Grid g = Grid::make(2, 16);
  const MediumMatrix d = MediumMatrix::identity(2);
  NonlinearityParams q;
  q.alpha = 1.0;
  q.beta = 1.0;
  q.l = 2.0;
  for (ResidualSystem sys : {ResidualSystem::full, ResidualSystem::truncated, ResidualSystem::linear})
    CHECK(residual_check(VectorField(g), ScalarField(g), VectorField(g), d, q, sys) == 0.0);

  SolverConfig cfg;
  const ScalarField p = project_mean_zero(smooth_random(g, 6, 4));
  const VectorField force = smooth_random_vector(g, 7, 4);
  const NewtonResult nr = solve_elliptic_u(p, force, q, cfg);
  CHECK(residual_check(nr.u, p, force, d, q, ResidualSystem::truncated) <= cfg.newton_tol);
  const NewtonResult lr = solve_elliptic_u(p, force, NonlinearityParams{}, cfg);
  CHECK(residual_check(lr.u, p, force, d, q, ResidualSystem::linear) <= 1e-9);

  const VectorField u = random_vector(g, 8);
  const ScalarField pr = project_mean_zero(random_scalar(g, 9));
  for (ResidualSystem sys : {ResidualSystem::full, ResidualSystem::truncated, ResidualSystem::linear})
    CHECK(residual_check(u, pr, force, d, q, sys) > 1e-3);
}
