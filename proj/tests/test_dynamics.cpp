#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bfflow/analysis.hpp"
#include "bfflow/dynamics.hpp"
#include "bfflow/errors.hpp"
#include "bfflow/reference.hpp"
#include "bfflow/rng.hpp"
#include "test_util.hpp"

using namespace bfflow;
using namespace bfflow::testing;

namespace {

NonlinearityParams quintic() {
  NonlinearityParams p;
  p.alpha = 1.0;
  p.beta = 1.0;
  p.l = 2.0;
  return p;
}

Model linear_model(const MediumMatrix& d) { return Model{d, NonlinearityParams{}, false}; }

SimState smooth_state(const Grid& g, std::uint64_t seed, double amp = 1.0) {
  SimState s = SimState::zero(g);
  s.u = smooth_random_vector(g, seed, 3);
  s.u *= amp / norm_l2(s.u);
  s.p = project_mean_zero(smooth_random(g, seed + 1, 3));
  s.p *= amp / norm_l2(s.p);
  return s;
}

double e_plain(const SimState& s, const MediumMatrix& d) { return weighted_inner(d, s.u, s.u) + inner(s.p, s.p); }

double energy_rate(const SimState& s, const VectorField& g, const Model& m) {
  const VectorField du = m.medium.apply(s.u);
  return dirichlet_form(s.u, m.medium) + inner(eval_f(s.u, m.nonlinearity), du) - inner(g, du);
}

}  // namespace

TEST_CASE("solver config validation") {
  const Grid g = Grid::make(2, 16);
  const MediumMatrix d = MediumMatrix::diagonal({1.0, 2.0});
  SolverConfig cfg;
  cfg.dt = SolverConfig::max_rk4_dt(g, d, 0.9);
  CHECK_NOTHROW(cfg.validate(g, d));
  cfg.dt *= 1.5;
  CHECK_THROWS_AS(cfg.validate(g, d), std::invalid_argument);
  cfg.scheme = Scheme::semi_implicit;
  CHECK_NOTHROW(cfg.validate(g, d));
  cfg.dt = -1.0;
  CHECK_THROWS_AS(cfg.validate(g, d), std::invalid_argument);
}

TEST_CASE("rhs_full") {
  const Grid g = Grid::make(2, 16);
  const MediumMatrix d = MediumMatrix::make(2, {2.0, 0.5, 0.5, 1.0});
  const Model m{d, quintic(), true};
  const Rates z = rhs_full(SimState::zero(g), VectorField(g), m);
  CHECK(max_abs(z.du.values) == 0.0);
  CHECK(max_abs(z.dp.values) == 0.0);

  SimState s = SimState::zero(g);
  s.p = project_mean_zero(sine_mode(g, 1, 1));
  const VectorField force = random_vector(g, 1);
  const Rates r = rhs_full(s, force, m);
  VectorField expect = force;
  expect -= grad(s.p);
  CHECK(norm_l2(r.du - expect) == 0.0);

  for (int trial = 0; trial < 20; ++trial) {
    SimState x = SimState::zero(g);
    x.u = random_vector(g, 10 + trial);
    x.p = project_mean_zero(random_scalar(g, 40 + trial));
    CHECK(std::abs(mean(rhs_full(x, force, m).dp)) <= 1e-13);
  }
}

TEST_CASE("step: zero state and blow-up") {
  const Grid g = Grid::make(2, 8);
  const MediumMatrix d = MediumMatrix::identity(2);
  SolverConfig cfg;
  cfg.dt = 1e-3;
  for (Scheme sc : {Scheme::rk4, Scheme::semi_implicit}) {
    cfg.scheme = sc;
    const SimState s = step(SimState::zero(g), cfg, Forcing::zero(g), Model{d, quintic(), false});
    CHECK(max_abs(s.u.values) == 0.0);
    CHECK(max_abs(s.p.values) == 0.0);
    CHECK(s.t == doctest::Approx(1e-3));
  }
  // Far beyond the CFL limit rk4 overflows and the blow-up names the step.
  cfg.scheme = Scheme::rk4;
  cfg.dt = 0.5;
  try {
    integrate(smooth_state(g, 3, 10.0), cfg, Forcing::zero(g), Model{d, quintic(), false}, 100.0, 1);
    FAIL("expected a blow-up");
  } catch (const BlowUpError& e) {
    CHECK(e.step() > 0);
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("rk4 local error against the dense propagator is O(dt^5)") {
  const Grid g = Grid::make(2, 8);
  const MediumMatrix d = MediumMatrix::diagonal({1.0, 2.0});
  const DensePropagator prop = build_propagator(g, d);
  const SimState s0 = smooth_state(g, 5);
  const Eigen::VectorXd x0 = prop.pack(s0.u, s0.p);
  SolverConfig cfg;
  double errs[2];
  int k = 0;
  for (double dt : {4e-4, 2e-4}) {
    cfg.dt = dt;
    const SimState s1 = step(s0, cfg, Forcing::zero(g), linear_model(d));
    errs[k++] = (prop.pack(s1.u, s1.p) - prop.apply(dt, x0)).norm() / x0.norm();
  }
  CHECK(std::log2(errs[0] / errs[1]) >= 4.5);
}

TEST_CASE("energy identity over one rk4 step converges at third order") {
  const Grid g = Grid::make(2, 16);
  const MediumMatrix d = MediumMatrix::diagonal({1.0, 2.0});
  const Model m{d, quintic(), false};
  const VectorField force = smooth_random_vector(g, 7, 3);
  const Forcing forcing = Forcing::constant(force);
  const SimState s0 = smooth_state(g, 8);
  SolverConfig cfg;
  double res[3];
  int k = 0;
  for (double dt : {4e-4, 2e-4, 1e-4}) {
    cfg.dt = dt;
    const SimState s1 = step(s0, cfg, forcing, m);
    res[k++] = std::abs(0.5 * (e_plain(s1, d) - e_plain(s0, d)) +
                        0.5 * dt * (energy_rate(s0, force, m) + energy_rate(s1, force, m)));
  }
  CHECK(res[0] / res[1] >= 6.0);
  CHECK(res[1] / res[2] >= 6.0);
}

TEST_CASE("integrate observes the initial state, every stride and t_end") {
  const Grid g = Grid::make(2, 8);
  SolverConfig cfg;
  cfg.dt = 1e-3;
  std::vector<double> times;
  const SimState end = integrate(smooth_state(g, 9), cfg, Forcing::zero(g), Model{MediumMatrix::identity(2), quintic(), false},
                                 0.0035, 2, [&](const SimState& s) { times.push_back(s.t); });
  REQUIRE(times.size() == 3);
  CHECK(times[0] == 0.0);
  CHECK(times[1] == doctest::Approx(0.002));
  CHECK(times[2] == 0.0035);
  CHECK(end.t == 0.0035);
  const auto traj = run_full(smooth_state(g, 9), cfg, Forcing::zero(g),
                             Model{MediumMatrix::identity(2), quintic(), false}, 0.01, 5);
  CHECK(traj.size() == 3);
}

TEST_CASE("pressure mean is conserved by both schemes") {
  const Grid g = Grid::make(2, 16);
  const MediumMatrix d = MediumMatrix::make(2, {2.0, 0.5, 0.5, 1.0});
  const Model m{d, quintic(), true};
  const Forcing forcing = Forcing::constant(smooth_random_vector(g, 2, 4));
  for (Scheme sc : {Scheme::rk4, Scheme::semi_implicit}) {
    SolverConfig cfg;
    cfg.scheme = sc;
    cfg.dt = sc == Scheme::rk4 ? SolverConfig::max_rk4_dt(g, d, 0.9) : 5e-3;
    double drift = 0.0;
    integrate(smooth_state(g, 11), cfg, forcing, m, 0.5, 1,
              [&](const SimState& s) { drift = std::max(drift, std::abs(mean(s.p))); });
    CHECK(drift <= 1e-12 * 0.5);
  }
}

TEST_CASE("semi-implicit scheme converges to the rk4 solution at first order") {
  const Grid g = Grid::make(2, 16);
  const MediumMatrix d = MediumMatrix::diagonal({1.0, 2.0});
  const Model m{d, quintic(), false};
  const Forcing forcing = Forcing::constant(smooth_random_vector(g, 12, 3));
  const SimState s0 = smooth_state(g, 13);
  SolverConfig ref;
  ref.dt = 2e-4;
  const SimState exact = integrate(s0, ref, forcing, m, 0.2, 1000000);
  SolverConfig cfg;
  cfg.scheme = Scheme::semi_implicit;
  double errs[2];
  int k = 0;
  for (double dt : {4e-3, 2e-3}) {
    cfg.dt = dt;
    const SimState s = integrate(s0, cfg, forcing, m, 0.2, 1000000);
    errs[k++] = std::sqrt(e_plain(SimState{s.u - exact.u, s.p - exact.p, 0.0}, d));
  }
  CHECK(errs[1] < errs[0]);
  CHECK(errs[0] / errs[1] == doctest::Approx(2.0).epsilon(0.3));
}

TEST_CASE("Newton solver for the truncated elliptic problem") {
  const Grid g = Grid::make(2, 16);
  SolverConfig cfg;
  const NonlinearityParams q = quintic();

  const NewtonResult zero = solve_elliptic_u(ScalarField(g), VectorField(g), q, cfg);
  CHECK(zero.iterations <= 1);
  CHECK(max_abs(zero.u.values) == 0.0);

  const ScalarField p = project_mean_zero(smooth_random(g, 14, 4));
  const VectorField force = smooth_random_vector(g, 15, 4);
  const NewtonResult lin = solve_elliptic_u(p, force, NonlinearityParams{}, cfg);
  VectorField rhs = force;
  rhs -= grad(p);
  const VectorField direct = DirichletSolver(g).solve(rhs);
  CHECK(norm_l2(lin.u - direct) <= 1e-10 * norm_l2(direct));

  for (double amp : {1.0, 10.0}) {
    VectorField ga = force;
    ga *= amp / norm_l2(force);
    const NewtonResult r = solve_elliptic_u(p, ga, q, cfg);
    CHECK(r.iterations <= 20);
    CHECK(elliptic_residual(r.u, p, ga, q) <= cfg.newton_tol);
    // Quadratic tail: the last contraction beats the square law up to a constant.
    const auto& h = r.history;
    if (h.size() >= 3 && h[h.size() - 2] > 1e-13) CHECK(h.back() <= 10.0 * h[h.size() - 2] * h[h.size() - 2] / h[0] + 1e-12);
  }

  // Weighted problem with a(x) >= 0.
  ScalarField w(g);
  for (auto& v : w.values) v = 2.0;
  const NewtonResult rw = solve_elliptic_u(p, force, q, cfg, &w);
  CHECK(elliptic_residual(rw.u, p, force, q, &w) <= cfg.newton_tol);
  for (auto& v : w.values) v = -1.0;
  CHECK_THROWS_AS(solve_elliptic_u(p, force, q, cfg, &w), std::invalid_argument);

  SolverConfig tight = cfg;
  tight.newton_max = 1;
  tight.newton_tol = 1e-300;
  CHECK_THROWS_AS(solve_elliptic_u(p, force, q, tight), ConvergenceError);
}

TEST_CASE("truncated system") {
  const Grid g = Grid::make(2, 8);
  const MediumMatrix d = MediumMatrix::diagonal({1.0, 2.0});
  SolverConfig cfg;
  cfg.dt = 0.01;
  const auto zero = run_truncated(ScalarField(g), Forcing::zero(g), cfg, d, quintic(), 0.05, 1);
  CHECK(max_abs(zero.back().p.values) == 0.0);

  // Linear: p(t) = exp(-t A) p0 with the assembled operator.
  const ScalarField p0 = project_mean_zero(random_scalar(g, 16));
  const auto traj = run_truncated(p0, Forcing::zero(g), cfg, d, NonlinearityParams{}, 0.5, 1);
  const AssembledOperator op = assemble_operator(g, d);
  const ScalarField expect = op.lift(op.propagate(op.reduce(p0), 0.5));
  CHECK(traj.back().t == doctest::Approx(0.5));
  CHECK(norm_l2(traj.back().p - expect) <= 1e-6 * norm_l2(p0));
  for (std::size_t k = 1; k < traj.size(); ++k) CHECK(norm_l2(traj[k].p) < norm_l2(traj[k - 1].p));
  double drift = 0.0;
  for (const auto& s : traj) drift = std::max(drift, std::abs(mean(s.p)));
  CHECK(drift <= 1e-12);
}

TEST_CASE("Gauss-Legendre quadrature and the averaged Jacobian") {
  for (int pts : {1, 2, 3, 5}) {
    const auto [x, w] = gauss_legendre01(pts);
    for (int deg = 0; deg < 2 * pts; ++deg) {
      double s = 0.0;
      for (int i = 0; i < pts; ++i) s += w[i] * std::pow(x[i], deg);
      CHECK(s == doctest::Approx(1.0 / (deg + 1)).epsilon(1e-14));
    }
  }
  CHECK_THROWS_AS(gauss_legendre01(0), std::invalid_argument);

  const Grid g = Grid::make(2, 8);
  const VectorField u1 = random_vector(g, 17), u2 = random_vector(g, 18);
  // f(tau u1 + (1-tau) u2) is a degree-5 polynomial in tau for l = 2: 3 points are exact.
  VectorField df = eval_f(u1, quintic());
  df -= eval_f(u2, quintic());
  const VectorField avg = fprime_average(u1, u2, u1 - u2, quintic(), 3);
  CHECK(norm_l2(avg - df) <= 1e-12 * norm_l2(df));
  // Non-polynomial phi: 3-point rule against a 33-point reference.
  NonlinearityParams rough = quintic();
  rough.l = 1.5;
  rough.gamma = 0.5;
  const VectorField v = random_vector(g, 19);
  const VectorField a3 = fprime_average(u1, u2, v, rough, 3), a33 = fprime_average(u1, u2, v, rough, 33);
  CHECK(norm_l2(a3 - a33) <= 0.05 * norm_l2(a33));
}

TEST_CASE("truncated-system splittings recombine") {
  const Grid g = Grid::make(2, 16);
  const MediumMatrix d = MediumMatrix::identity(2);
  const NonlinearityParams q = quintic();
  const Forcing forcing = Forcing::constant(smooth_random_vector(g, 20, 4));
  SolverConfig cfg;
  cfg.dt = 0.05;

  const SplitTrajectory zero = run_split(ScalarField(g), Forcing::zero(g), cfg, d, q, 1.0, 0.5, 2);
  for (const auto& [qq, vv] : zero.qv) CHECK(norm_l2(qq) == 0.0);
  for (const auto& [rr, ww] : zero.rw) CHECK(norm_l2(rr) == 0.0);

  const ScalarField p0 = project_mean_zero(smooth_random(g, 21, 4));
  const SplitTrajectory split = run_split(p0, forcing, cfg, d, q, 1.0, 5.0, 10);
  CHECK(split.times.back() == doctest::Approx(5.0));
  CHECK(split.recombination_error() <= 1e-6);
  CHECK(norm_l2(split.qv.back().first) < norm_l2(split.qv.front().first));

  const SplitTrajectory boot = run_bootstrap_split(p0, forcing, cfg, d, q, 5.0, 10);
  CHECK(boot.recombination_error() <= 1e-6);
  CHECK(norm_l2(boot.qv.back().first) < norm_l2(boot.qv.front().first));
  CHECK_THROWS_AS(run_split(p0, forcing, cfg, d, q, -1.0, 1.0, 1), std::invalid_argument);
}

TEST_CASE("exponential-attractor split recombines") {
  const Grid g = Grid::make(2, 16);
  const MediumMatrix d = MediumMatrix::diagonal({1.0, 2.0});
  const Model m{d, quintic(), false};
  const Forcing forcing = Forcing::constant(smooth_random_vector(g, 22, 4));
  SolverConfig cfg;
  cfg.dt = SolverConfig::max_rk4_dt(g, d, 0.9);
  const SimState s1 = smooth_state(g, 23);

  const ExpSplitTrajectory same = run_exp_split(s1, s1, cfg, forcing, m, 0.1, 10);
  for (const auto& [u, p] : same.hat) CHECK(norm_l2(u) + norm_l2(p) == 0.0);
  for (const auto& [u, p] : same.tilde) CHECK(norm_l2(u) + norm_l2(p) == 0.0);

  SimState s2 = s1;
  s2.p.axpy(1e-2, project_mean_zero(smooth_random(g, 24, 4)));
  const ExpSplitTrajectory es = run_exp_split(s1, s2, cfg, forcing, m, 0.5, 10);
  CHECK(es.recombination_error() <= 1e-8);
  SolverConfig semi = cfg;
  semi.scheme = Scheme::semi_implicit;
  CHECK_THROWS_AS(run_exp_split(s1, s2, semi, forcing, m, 0.5, 10), std::invalid_argument);
}
