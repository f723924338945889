#include "bfflow/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "bfflow/errors.hpp"
#include "bfflow/linalg.hpp"

namespace bfflow {

namespace {

// Number of steps of size <= dt covering [t0, t_end]; the last one may be short.
std::size_t step_count(double t0, double t_end, double dt) {
  if (t_end <= t0) return 0;
  const double q = (t_end - t0) / dt;
  return static_cast<std::size_t>(std::ceil(q - 1e-9));
}

ScalarField pressure_rate(const VectorField& u, const MediumMatrix& d) {
  ScalarField r = project_mean_zero(div(d.apply(u)));
  r *= -1.0;
  return r;
}

void check_finite(const VectorField& u, const ScalarField& p, const char* what) {
  if (!u.all_finite() || !p.all_finite()) throw BlowUpError(std::string(what) + ": non-finite state", 0);
}

ScalarField constant_field(const Grid& g, double value) {
  ScalarField s(g);
  std::fill(s.values.begin(), s.values.end(), value);
  return s;
}

// A list of velocity and pressure blocks advanced together by one rk4.
struct Bundle {
  std::vector<VectorField> u;
  std::vector<ScalarField> p;

  void axpy(double a, const Bundle& x) {
    for (std::size_t i = 0; i < u.size(); ++i) u[i].axpy(a, x.u[i]);
    for (std::size_t i = 0; i < p.size(); ++i) p[i].axpy(a, x.p[i]);
  }
  bool finite() const {
    for (const auto& f : u)
      if (!f.all_finite()) return false;
    for (const auto& f : p)
      if (!f.all_finite()) return false;
    return true;
  }
};

template <class RateFn>
Bundle rk4_bundle(const Bundle& y, double t, double dt, const RateFn& rate) {
  const Bundle k1 = rate(y, t);
  Bundle y2 = y;
  y2.axpy(0.5 * dt, k1);
  const Bundle k2 = rate(y2, t + 0.5 * dt);
  Bundle y3 = y;
  y3.axpy(0.5 * dt, k2);
  const Bundle k3 = rate(y3, t + 0.5 * dt);
  Bundle y4 = y;
  y4.axpy(dt, k3);
  const Bundle k4 = rate(y4, t + dt);
  Bundle out = y;
  out.axpy(dt / 6.0, k1);
  out.axpy(dt / 3.0, k2);
  out.axpy(dt / 3.0, k3);
  out.axpy(dt / 6.0, k4);
  for (auto& p : out.p) p = project_mean_zero(p);
  return out;
}

// Drives a bundle from t0 to t_end, recording after every stride-th step and
// at the end (the initial bundle is recorded first).
template <class RateFn, class RecordFn>
void drive_bundle(Bundle y, double t0, double t_end, double dt, std::size_t stride, const RateFn& rate,
                  const RecordFn& record, const char* what) {
  if (!(dt > 0.0)) throw std::invalid_argument(std::string(what) + ": dt must be positive");
  stride = std::max<std::size_t>(stride, 1);
  const std::size_t steps = step_count(t0, t_end, dt);
  double t = t0;
  record(y, t);
  for (std::size_t k = 1; k <= steps; ++k) {
    const double h = std::min(dt, t_end - t);
    y = rk4_bundle(y, t, h, rate);
    t = (k == steps) ? t_end : t + h;
    if (!y.finite()) throw BlowUpError(std::string(what) + ": non-finite state at step " + std::to_string(k), k);
    if (k % stride == 0 || k == steps) record(y, t);
  }
}

}  // namespace

// ---------------------------------------------------------------------------

double SolverConfig::max_rk4_dt(const Grid& g, const MediumMatrix& d, double safety) {
  const double diffusive = g.h * g.h / (2.0 * g.dim);
  const double acoustic = g.h / std::sqrt(d.eigmax());
  return safety * std::min(diffusive, acoustic);
}

void SolverConfig::validate(const Grid& g, const MediumMatrix& d) const {
  if (!(dt > 0.0)) throw std::invalid_argument("solver dt must be positive");
  if (!(cfl_safety > 0.0 && cfl_safety <= 1.0)) throw std::invalid_argument("cfl_safety must lie in (0,1]");
  if (newton_max < 1) throw std::invalid_argument("newton_max must be >= 1");
  if (!(newton_tol > 0.0) || !(cg_tol > 0.0)) throw std::invalid_argument("solver tolerances must be positive");
  if (scheme == Scheme::rk4) {
    const double limit = max_rk4_dt(g, d, cfl_safety);
    if (dt > limit * (1.0 + 1e-12))
      throw std::invalid_argument("rk4 CFL violated: dt = " + std::to_string(dt) +
                                  " > cfl_safety*min(h^2/(2d), h/sqrt(eigmax D)) = " + std::to_string(limit));
  }
}

Rates rhs_full(const SimState& s, const VectorField& g, const Model& model) {
  require_same_grid(s.u.grid, s.p.grid);
  require_same_grid(s.u.grid, g.grid);
  Rates r;
  r.du = laplacian(s.u);
  r.du -= grad(s.p);
  if (!model.nonlinearity.is_zero()) r.du -= eval_f(s.u, model.nonlinearity);
  if (model.convective) r.du -= convective(s.u, s.u);
  r.du += g;
  r.dp = pressure_rate(s.u, model.medium);
  return r;
}

namespace {

SimState step_rk4(const SimState& s, double dt, const Forcing& forcing, const Model& model) {
  const VectorField g0 = forcing.at(s.t);
  const VectorField gh = forcing.time_dependent() ? forcing.at(s.t + 0.5 * dt) : g0;
  const VectorField g1 = forcing.time_dependent() ? forcing.at(s.t + dt) : g0;

  auto advance = [&](const Rates& k, double a) {
    SimState y{s.u, s.p, s.t};
    y.u.axpy(a, k.du);
    y.p.axpy(a, k.dp);
    return y;
  };
  const Rates k1 = rhs_full(s, g0, model);
  const Rates k2 = rhs_full(advance(k1, 0.5 * dt), gh, model);
  const Rates k3 = rhs_full(advance(k2, 0.5 * dt), gh, model);
  const Rates k4 = rhs_full(advance(k3, dt), g1, model);

  SimState out{s.u, s.p, s.t + dt};
  out.u.axpy(dt / 6.0, k1.du);
  out.u.axpy(dt / 3.0, k2.du);
  out.u.axpy(dt / 3.0, k3.du);
  out.u.axpy(dt / 6.0, k4.du);
  out.p.axpy(dt / 6.0, k1.dp);
  out.p.axpy(dt / 3.0, k2.dp);
  out.p.axpy(dt / 3.0, k3.dp);
  out.p.axpy(dt / 6.0, k4.dp);
  out.p = project_mean_zero(out.p);
  return out;
}

// Implicit Euler on the linear part:
//   u+ = u + dt (lap u+ - grad p+ - f(u) - B(u,u) + g),  p+ = p - dt P div(D u+).
// Eliminating p+ gives (I + dt A + dt^2 G P G^T D) u+ = u - dt G p + dt (g - f - B),
// solved in the symmetric form D(...) by CG preconditioned with (I + dt A)^{-1} D^{-1}.
SimState step_semi_implicit(const SimState& s, double dt, const SolverConfig& cfg, const Forcing& forcing,
                            const Model& model) {
  const Grid& g = s.u.grid;
  const MediumMatrix& d = model.medium;
  const VectorField force = forcing.at(s.t + dt);

  VectorField rhs = s.u;
  rhs.axpy(-dt, grad(s.p));
  VectorField explicit_part = force;
  if (!model.nonlinearity.is_zero()) explicit_part -= eval_f(s.u, model.nonlinearity);
  if (model.convective) explicit_part -= convective(s.u, s.u);
  rhs.axpy(dt, explicit_part);
  if (!rhs.all_finite()) throw BlowUpError("semi-implicit step: non-finite explicit terms", 0);
  const VectorField b = d.apply(rhs);

  LinearOperator op = [&](std::span<const double> in, std::span<double> out) {
    const VectorField x(g, std::vector<double>(in.begin(), in.end()));
    VectorField y = x;
    y.axpy(-dt, laplacian(x));
    const ScalarField q = project_mean_zero(div(d.apply(x)));  // = -P G^T D x
    y.axpy(-dt * dt, grad(q));
    const VectorField dy = d.apply(y);
    std::copy(dy.values.begin(), dy.values.end(), out.begin());
  };
  // The sine basis diagonalizes the 5-point Laplacian, so (I + dt A)^{-1} is
  // applied exactly by one forward/inverse transform per component.
  const SineBasis basis(g);
  const MediumMatrix dinv = d.inverse();
  LinearOperator precond = [&](std::span<const double> in, std::span<double> out) {
    const VectorField x(g, std::vector<double>(in.begin(), in.end()));
    VectorField y = dinv.apply(x);
    y *= 1.0 / dt;
    const std::size_t n = g.size();
    for (int c = 0; c < g.dim; ++c) {
      const auto z = basis.solve_shifted(y.component(c), 1.0 / dt);
      std::copy(z.begin(), z.end(), out.begin() + static_cast<std::ptrdiff_t>(c * n));
    }
  };
  std::vector<double> x = s.u.values;
  CgOptions opts{cfg.cg_tol, 0.0, 2000, "semi-implicit step cg"};
  conjugate_gradient(op, b.values, x, opts, precond);

  SimState out{VectorField(g, std::move(x)), s.p, s.t + dt};
  out.p.axpy(dt, pressure_rate(out.u, d));
  out.p = project_mean_zero(out.p);
  return out;
}

SimState step_with(const SimState& s, double dt, const SolverConfig& cfg, const Forcing& forcing,
                   const Model& model) {
  SimState out = cfg.scheme == Scheme::rk4 ? step_rk4(s, dt, forcing, model)
                                           : step_semi_implicit(s, dt, cfg, forcing, model);
  check_finite(out.u, out.p, "step");
  return out;
}

}  // namespace

SimState step(const SimState& s, const SolverConfig& cfg, const Forcing& forcing, const Model& model) {
  return step_with(s, cfg.dt, cfg, forcing, model);
}

SimState integrate(SimState s, const SolverConfig& cfg, const Forcing& forcing, const Model& model, double t_end,
                   std::size_t stride, const StateObserver& observe) {
  if (!(cfg.dt > 0.0)) throw std::invalid_argument("integrate: dt must be positive");
  stride = std::max<std::size_t>(stride, 1);
  const std::size_t steps = step_count(s.t, t_end, cfg.dt);
  if (observe) observe(s);
  for (std::size_t k = 1; k <= steps; ++k) {
    const double h = std::min(cfg.dt, t_end - s.t);
    try {
      s = step_with(s, h, cfg, forcing, model);
    } catch (const BlowUpError&) {
      throw BlowUpError("full system blew up at step " + std::to_string(k) + " (t = " + std::to_string(s.t) + ")",
                        k);
    }
    if (k == steps) s.t = t_end;
    if (observe && (k % stride == 0 || k == steps)) observe(s);
  }
  return s;
}

std::vector<SimState> run_full(const SimState& s0, const SolverConfig& cfg, const Forcing& forcing,
                               const Model& model, double t_end, std::size_t stride) {
  std::vector<SimState> out;
  integrate(s0, cfg, forcing, model, t_end, stride, [&](const SimState& s) { out.push_back(s); });
  return out;
}

// ---------------------------------------------------------------------------
// Elliptic solves

namespace {

VectorField elliptic_residual_field(const VectorField& u, const VectorField& gp, const VectorField& g,
                                    const NonlinearityParams& params, const ScalarField* weight) {
  VectorField r = laplacian(u);
  r *= -1.0;
  r += gp;
  if (!params.is_zero()) r += eval_f(u, params);
  if (weight) {
    const std::size_t n = u.grid.size();
    for (int c = 0; c < u.grid.dim; ++c)
      for (std::size_t k = 0; k < n; ++k) r.at(c, k) += (*weight)[k] * u.at(c, k);
  }
  r -= g;
  return r;
}

}  // namespace

double elliptic_residual(const VectorField& u, const ScalarField& p, const VectorField& g,
                         const NonlinearityParams& params, const ScalarField* weight) {
  return norm_l2(elliptic_residual_field(u, grad(p), g, params, weight));
}

NewtonResult solve_elliptic_u(const ScalarField& p, const VectorField& g, const NonlinearityParams& params,
                              const SolverConfig& cfg, const ScalarField* weight, const VectorField* guess) {
  require_same_grid(p.grid, g.grid);
  const Grid& grid = p.grid;
  if (weight) {
    require_same_grid(weight->grid, grid);
    for (double a : weight->values)
      if (a < 0.0) throw std::invalid_argument("solve_elliptic_u: weight a(x) must be >= 0");
  }
  const DirichletSolver solver(grid);
  const VectorField gp = grad(p);

  NewtonResult res;
  res.u = guess ? *guess : VectorField(grid);
  VectorField r = elliptic_residual_field(res.u, gp, g, params, weight);
  double rnorm = norm_l2(r);
  res.history.push_back(rnorm);

  const std::size_t n = grid.size();
  while (rnorm > cfg.newton_tol) {
    if (res.iterations >= cfg.newton_max)
      throw ConvergenceError("Newton did not reach tolerance " + std::to_string(cfg.newton_tol) + " in " +
                                 std::to_string(cfg.newton_max) + " iterations (residual " +
                                 std::to_string(rnorm) + ")",
                             res.history);
    ++res.iterations;

    // Jacobian J v = A v + f'(u) v + a v; preconditioner (A + s)^{-1} with s
    // the mean diagonal of the zeroth-order part.
    double shift = 0.0;
    if (!params.is_zero()) {
      for (std::size_t k = 0; k < n; ++k) {
        double z = 0.0;
        for (int c = 0; c < grid.dim; ++c) z += res.u.at(c, k) * res.u.at(c, k);
        shift += eval_phi(z, params);
      }
    }
    if (weight)
      for (double a : weight->values) shift += a;
    shift = std::max(0.0, shift / static_cast<double>(n));

    const VectorField& u = res.u;
    LinearOperator jac = [&](std::span<const double> in, std::span<double> out) {
      const VectorField v(grid, std::vector<double>(in.begin(), in.end()));
      VectorField y = laplacian(v);
      y *= -1.0;
      if (!params.is_zero()) y += apply_fprime(u, v, params);
      if (weight)
        for (int c = 0; c < grid.dim; ++c)
          for (std::size_t k = 0; k < n; ++k) y.at(c, k) += (*weight)[k] * v.at(c, k);
      std::copy(y.values.begin(), y.values.end(), out.begin());
    };
    LinearOperator precond = [&](std::span<const double> in, std::span<double> out) {
      const VectorField v(grid, std::vector<double>(in.begin(), in.end()));
      const VectorField z = solver.solve(v, shift);
      std::copy(z.values.begin(), z.values.end(), out.begin());
    };
    std::vector<double> delta(r.values.size(), 0.0);
    // Absolute floor keeps CG from chasing roundoff once the residual is tiny.
    CgOptions opts{cfg.cg_tol, 0.1 * cfg.newton_tol, 4000, "newton jacobian cg"};
    conjugate_gradient(jac, r.values, delta, opts, precond);

    // Damped update u - s delta, halving s until the residual decreases.
    double s = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < 40; ++halving) {
      VectorField trial = res.u;
      for (std::size_t i = 0; i < trial.values.size(); ++i) trial.values[i] -= s * delta[i];
      VectorField rt = elliptic_residual_field(trial, gp, g, params, weight);
      const double tn = norm_l2(rt);
      if (tn < rnorm) {
        res.u = std::move(trial);
        r = std::move(rt);
        rnorm = tn;
        accepted = true;
        break;
      }
      s *= 0.5;
    }
    res.history.push_back(rnorm);
    if (!accepted)
      throw ConvergenceError("Newton line search failed to decrease the residual (" + std::to_string(rnorm) + ")",
                             res.history);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Truncated system

namespace {

// dp/dt of the truncated system, returning the elliptic solution as well.
ScalarField truncated_rate(const ScalarField& p, const VectorField& g, const SolverConfig& cfg,
                           const MediumMatrix& d, const NonlinearityParams& params, VectorField& u_io) {
  u_io = solve_elliptic_u(p, g, params, cfg, nullptr, &u_io).u;
  return pressure_rate(u_io, d);
}

}  // namespace

TruncatedState step_truncated(const TruncatedState& s, const Forcing& forcing, const SolverConfig& cfg,
                              const MediumMatrix& d, const NonlinearityParams& params) {
  const double dt = cfg.dt;
  VectorField u = s.u.values.empty() ? VectorField(s.p.grid) : s.u;
  const ScalarField k1 = truncated_rate(s.p, forcing.at(s.t), cfg, d, params, u);
  const ScalarField k2 = truncated_rate(s.p + (0.5 * dt) * k1, forcing.at(s.t + 0.5 * dt), cfg, d, params, u);
  const ScalarField k3 = truncated_rate(s.p + (0.5 * dt) * k2, forcing.at(s.t + 0.5 * dt), cfg, d, params, u);
  const ScalarField k4 = truncated_rate(s.p + dt * k3, forcing.at(s.t + dt), cfg, d, params, u);
  TruncatedState out{s.p, VectorField(), s.t + dt};
  out.p.axpy(dt / 6.0, k1);
  out.p.axpy(dt / 3.0, k2);
  out.p.axpy(dt / 3.0, k3);
  out.p.axpy(dt / 6.0, k4);
  out.p = project_mean_zero(out.p);
  out.u = solve_elliptic_u(out.p, forcing.at(out.t), params, cfg, nullptr, &u).u;
  if (!out.p.all_finite()) throw BlowUpError("truncated step: non-finite pressure", 0);
  return out;
}

std::vector<TruncatedState> run_truncated(const ScalarField& p0, const Forcing& forcing, const SolverConfig& cfg,
                                          const MediumMatrix& d, const NonlinearityParams& params, double t_end,
                                          std::size_t stride) {
  std::vector<TruncatedState> out;
  TruncatedState s{project_mean_zero(p0), VectorField(), 0.0};
  s.u = solve_elliptic_u(s.p, forcing.at(0.0), params, cfg).u;
  out.push_back(s);
  stride = std::max<std::size_t>(stride, 1);
  const std::size_t steps = step_count(0.0, t_end, cfg.dt);
  SolverConfig c = cfg;
  for (std::size_t k = 1; k <= steps; ++k) {
    c.dt = std::min(cfg.dt, t_end - s.t);
    try {
      s = step_truncated(s, forcing, c, d, params);
    } catch (const BlowUpError&) {
      throw BlowUpError("truncated system blew up at step " + std::to_string(k), k);
    }
    if (k == steps) s.t = t_end;
    if (k % stride == 0 || k == steps) out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splittings

double SplitTrajectory::recombination_error() const {
  double err = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double pn = norm_l2(p_ref[i]);
    const double un = norm_l2(u_ref[i]);
    const double ep = norm_l2(qv[i].first + rw[i].first - p_ref[i]);
    const double eu = norm_l2(qv[i].second + rw[i].second - u_ref[i]);
    err = std::max(err, pn > 0.0 ? ep / pn : ep);
    err = std::max(err, un > 0.0 ? eu / un : eu);
  }
  return err;
}

SplitTrajectory run_split(const ScalarField& p0, const Forcing& forcing, const SolverConfig& cfg,
                          const MediumMatrix& d, const NonlinearityParams& params, double shift_l, double t_end,
                          std::size_t stride) {
  if (shift_l < 0.0) throw std::invalid_argument("run_split: L must be >= 0");
  const Grid& g = p0.grid;
  const DirichletSolver solver(g);
  const ScalarField weight = constant_field(g, shift_l);
  const VectorField zero(g);
  // Warm starts for the two Newton solves; results do not depend on them
  // beyond the Newton tolerance.
  VectorField u_guess(g), v_guess(g);

  struct Solved {
    VectorField u, v, w;
  };
  auto solve_all = [&](const Bundle& y, double t) {
    const ScalarField& p = y.p[0];
    const ScalarField& q = y.p[1];
    const ScalarField& r = y.p[2];
    const VectorField gt = forcing.at(t);
    Solved s;
    s.u = solve_elliptic_u(p, gt, params, cfg, nullptr, &u_guess).u;
    s.v = solve_elliptic_u(q, zero, params, cfg, &weight, &v_guess).u;
    u_guess = s.u;
    v_guess = s.v;
    // -lap w = L v + g - f(u) + f(v) - grad r
    VectorField b = gt;
    b.axpy(shift_l, s.v);
    if (!params.is_zero()) {
      b -= eval_f(s.u, params);
      b += eval_f(s.v, params);
    }
    b -= grad(r);
    s.w = solver.solve(b, 0.0, std::min(1e-14, cfg.cg_tol));
    return s;
  };
  auto rate = [&](const Bundle& y, double t) {
    const Solved s = solve_all(y, t);
    Bundle k;
    k.p = {pressure_rate(s.u, d), pressure_rate(s.v, d), pressure_rate(s.w, d)};
    return k;
  };

  SplitTrajectory traj;
  auto record = [&](const Bundle& y, double t) {
    const Solved s = solve_all(y, t);
    traj.times.push_back(t);
    traj.p_ref.push_back(y.p[0]);
    traj.u_ref.push_back(s.u);
    traj.qv.emplace_back(y.p[1], s.v);
    traj.rw.emplace_back(y.p[2], s.w);
  };
  const ScalarField pbar = project_mean_zero(p0);
  Bundle y;
  y.p = {pbar, pbar, ScalarField(g)};
  drive_bundle(y, 0.0, t_end, cfg.dt, stride, rate, record, "split");
  return traj;
}

SplitTrajectory run_bootstrap_split(const ScalarField& p0, const Forcing& forcing, const SolverConfig& cfg,
                                    const MediumMatrix& d, const NonlinearityParams& params, double t_end,
                                    std::size_t stride) {
  const Grid& g = p0.grid;
  const DirichletSolver solver(g);
  VectorField u_guess(g);
  const double tol = std::min(1e-14, cfg.cg_tol);

  struct Solved {
    VectorField u, u1, u2;
  };
  auto solve_all = [&](const Bundle& y, double t) {
    const VectorField gt = forcing.at(t);
    Solved s;
    s.u = solve_elliptic_u(y.p[0], gt, params, cfg, nullptr, &u_guess).u;
    u_guess = s.u;
    VectorField b1 = grad(y.p[1]);
    b1 *= -1.0;
    s.u1 = solver.solve(b1, 0.0, tol);
    VectorField b2 = gt;
    if (!params.is_zero()) b2 -= eval_f(s.u, params);
    b2 -= grad(y.p[2]);
    s.u2 = solver.solve(b2, 0.0, tol);
    return s;
  };
  auto rate = [&](const Bundle& y, double t) {
    const Solved s = solve_all(y, t);
    Bundle k;
    k.p = {pressure_rate(s.u, d), pressure_rate(s.u1, d), pressure_rate(s.u2, d)};
    return k;
  };
  SplitTrajectory traj;
  auto record = [&](const Bundle& y, double t) {
    const Solved s = solve_all(y, t);
    traj.times.push_back(t);
    traj.p_ref.push_back(y.p[0]);
    traj.u_ref.push_back(s.u);
    traj.qv.emplace_back(y.p[1], s.u1);
    traj.rw.emplace_back(y.p[2], s.u2);
  };
  const ScalarField pbar = project_mean_zero(p0);
  Bundle y;
  y.p = {pbar, pbar, ScalarField(g)};
  drive_bundle(y, 0.0, t_end, cfg.dt, stride, rate, record, "bootstrap split");
  return traj;
}

// ---------------------------------------------------------------------------
// Exponential-attractor split

std::pair<std::vector<double>, std::vector<double>> gauss_legendre01(int points) {
  if (points < 1) throw std::invalid_argument("gauss_legendre01: need at least one point");
  std::vector<double> x(points), w(points);
  // Newton on the Legendre polynomial P_n from the classical cosine guess,
  // then map [-1,1] -> [0,1] (weights halve).
  for (int i = 0; i < points; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (points + 0.5));
    double dp = 1.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = 1.0, p2 = 0.0;
      for (int j = 1; j <= points; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j;
      }
      dp = points * (z * p1 - p2) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    x[points - 1 - i] = 0.5 * (1.0 + z);
    w[points - 1 - i] = 1.0 / ((1.0 - z * z) * dp * dp);
  }
  return {x, w};
}

VectorField fprime_average(const VectorField& u1, const VectorField& u2, const VectorField& v,
                           const NonlinearityParams& params, int points) {
  require_same_grid(u1.grid, u2.grid);
  const auto [nodes, weights] = gauss_legendre01(points);
  VectorField out(v.grid);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    VectorField ut = u2;
    ut *= (1.0 - nodes[i]);
    ut.axpy(nodes[i], u1);
    out.axpy(weights[i], apply_fprime(ut, v, params));
  }
  return out;
}

double ExpSplitTrajectory::recombination_error() const {
  double err = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const auto& [du, dp] = difference[i];
    const double scale = std::sqrt(norm_l2(du) * norm_l2(du) + norm_l2(dp) * norm_l2(dp));
    const double eu = norm_l2(hat[i].first + tilde[i].first - du);
    const double ep = norm_l2(hat[i].second + tilde[i].second - dp);
    const double e = std::sqrt(eu * eu + ep * ep);
    err = std::max(err, scale > 0.0 ? e / scale : e);
  }
  return err;
}

ExpSplitTrajectory run_exp_split(const SimState& s1, const SimState& s2, const SolverConfig& cfg,
                                 const Forcing& forcing, const Model& model, double t_end, std::size_t stride) {
  require_same_grid(s1.u.grid, s2.u.grid);
  if (s1.t != s2.t) throw std::invalid_argument("run_exp_split: states must share the initial time");
  if (cfg.scheme != Scheme::rk4) throw std::invalid_argument("run_exp_split: only the rk4 scheme is supported");
  const Grid& g = s1.u.grid;
  const Model linear{model.medium, NonlinearityParams{}, false};
  const Forcing no_force = Forcing::zero(g);

  // Blocks: u = {u1, u2, u_hat, u_tilde}, p = {p1, p2, p_hat, p_tilde}.
  auto rate = [&](const Bundle& y, double t) {
    const VectorField gt = forcing.at(t);
    Bundle k;
    const Rates r1 = rhs_full(SimState{y.u[0], y.p[0], t}, gt, model);
    const Rates r2 = rhs_full(SimState{y.u[1], y.p[1], t}, gt, model);
    const Rates rh = rhs_full(SimState{y.u[2], y.p[2], t}, no_force.base, linear);
    Rates rt = rhs_full(SimState{y.u[3], y.p[3], t}, no_force.base, linear);
    const VectorField ubar = y.u[0] - y.u[1];
    if (!model.nonlinearity.is_zero()) rt.du -= fprime_average(y.u[0], y.u[1], ubar, model.nonlinearity, 3);
    if (model.convective) {
      rt.du -= convective(y.u[0], y.u[0]);
      rt.du += convective(y.u[1], y.u[1]);
    }
    k.u = {r1.du, r2.du, rh.du, rt.du};
    k.p = {r1.dp, r2.dp, rh.dp, rt.dp};
    return k;
  };
  ExpSplitTrajectory traj;
  auto record = [&](const Bundle& y, double t) {
    traj.times.push_back(t);
    traj.difference.emplace_back(y.u[0] - y.u[1], y.p[0] - y.p[1]);
    traj.hat.emplace_back(y.u[2], y.p[2]);
    traj.tilde.emplace_back(y.u[3], y.p[3]);
  };
  Bundle y;
  y.u = {s1.u, s2.u, s1.u - s2.u, VectorField(g)};
  y.p = {project_mean_zero(s1.p), project_mean_zero(s2.p), project_mean_zero(s1.p - s2.p), ScalarField(g)};
  drive_bundle(y, s1.t, s1.t + t_end, cfg.dt, stride, rate, record, "exp split");
  return traj;
}

}  // namespace bfflow
