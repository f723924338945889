#pragma once

// Time integration of the full system, the truncated (quasi-static momentum)
// system and the splittings of the asymptotic-regularity and
// exponential-attractor arguments; Newton solver for the truncated elliptic
// subproblem.

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "bfflow/grid.hpp"
#include "bfflow/physics.hpp"

namespace bfflow {

struct SimState {
  VectorField u;
  ScalarField p;
  double t = 0.0;

  static SimState zero(const Grid& g) { return SimState{VectorField(g), ScalarField(g), 0.0}; }
  const Grid& grid() const { return u.grid; }
};

enum class Scheme { rk4, semi_implicit };

struct SolverConfig {
  double dt = 1e-3;
  Scheme scheme = Scheme::rk4;
  double newton_tol = 1e-10;
  int newton_max = 50;
  double cg_tol = 1e-12;
  double cfl_safety = 0.9;

  /// cfl_safety * min(h^2/(2d), h/sqrt(eigmax D)).
  static double max_rk4_dt(const Grid& g, const MediumMatrix& d, double safety);
  /// Throws std::invalid_argument when the rk4 CFL bound is violated.
  void validate(const Grid& g, const MediumMatrix& d) const;
};

/// Everything that defines the right-hand side apart from the forcing.
struct Model {
  MediumMatrix medium;
  NonlinearityParams nonlinearity;
  bool convective = false;
};

struct Rates {
  VectorField du;
  ScalarField dp;
};

/// (du/dt, dp/dt) = (lap u - grad p - f(u) - [B(u,u)] + g, -P div(D u)).
Rates rhs_full(const SimState& s, const VectorField& g, const Model& model);

/// One step of rk4 or the semi-implicit scheme (implicit Euler on the linear
/// part, f and B explicit). Throws BlowUpError on non-finite output.
SimState step(const SimState& s, const SolverConfig& cfg, const Forcing& forcing, const Model& model);

using StateObserver = std::function<void(const SimState&)>;

/// Advances `s0` to t_end with fixed steps (the last one shortened to land on
/// t_end) and calls `observe` on the initial state and after every
/// `stride`-th step and at t_end. Blow-up errors carry the step count.
SimState integrate(SimState s0, const SolverConfig& cfg, const Forcing& forcing, const Model& model,
                   double t_end, std::size_t stride, const StateObserver& observe = {});

/// Stored snapshots of a full-system run.
std::vector<SimState> run_full(const SimState& s0, const SolverConfig& cfg, const Forcing& forcing,
                               const Model& model, double t_end, std::size_t stride);

// ---------------------------------------------------------------------------
// Truncated system: -lap u + grad p + f(u) = g(t), dp/dt = -P div(D u)

struct NewtonResult {
  VectorField u;
  int iterations = 0;
  std::vector<double> history;  // residual norms, initial guess first
};

/// Solves -lap u + grad p + f(u) + a(x) u = g by damped Newton with the exact
/// Jacobian. `weight` (a(x) >= 0) and `guess` may be null.
NewtonResult solve_elliptic_u(const ScalarField& p, const VectorField& g, const NonlinearityParams& params,
                              const SolverConfig& cfg, const ScalarField* weight = nullptr,
                              const VectorField* guess = nullptr);

/// Residual norm of -lap u + grad p + f(u) + a u - g.
double elliptic_residual(const VectorField& u, const ScalarField& p, const VectorField& g,
                         const NonlinearityParams& params, const ScalarField* weight = nullptr);

struct TruncatedState {
  ScalarField p;
  VectorField u;  // elliptic solution for p at time t
  double t = 0.0;
};

/// One rk4 step of the truncated system, u re-solved at every stage.
TruncatedState step_truncated(const TruncatedState& s, const Forcing& forcing, const SolverConfig& cfg,
                              const MediumMatrix& d, const NonlinearityParams& params);

std::vector<TruncatedState> run_truncated(const ScalarField& p0, const Forcing& forcing, const SolverConfig& cfg,
                                          const MediumMatrix& d, const NonlinearityParams& params, double t_end,
                                          std::size_t stride);

// ---------------------------------------------------------------------------
// Splittings

/// p = q + r, u = v + w with
///   dq/dt = -P div(D v),  -lap v + grad q + f(v) + L v = 0,          q(0) = p(0)
///   dr/dt = -P div(D w),  -lap w + grad r + f(u) - f(v) = L v + g(t), r(0) = 0
/// (or, for the bootstrap split, q=p1, v=u1 solving the linear problems
///   -lap u1 + grad p1 = 0 and -lap u2 + grad p2 = g(t) - f(u)).
struct SplitTrajectory {
  std::vector<double> times;
  std::vector<ScalarField> p_ref;
  std::vector<VectorField> u_ref;
  std::vector<std::pair<ScalarField, VectorField>> qv;
  std::vector<std::pair<ScalarField, VectorField>> rw;

  /// max over snapshots of ||q+r-p||/||p|| and ||v+w-u||/||u||.
  double recombination_error() const;
};

SplitTrajectory run_split(const ScalarField& p0, const Forcing& forcing, const SolverConfig& cfg,
                          const MediumMatrix& d, const NonlinearityParams& params, double shift_l, double t_end,
                          std::size_t stride);

SplitTrajectory run_bootstrap_split(const ScalarField& p0, const Forcing& forcing, const SolverConfig& cfg,
                                    const MediumMatrix& d, const NonlinearityParams& params, double t_end,
                                    std::size_t stride);

/// Difference of two full solutions split into the homogeneous linear part
/// (hat) and the part forced by -l(t) ubar (tilde), l(t) = int_0^1 f'(tau u1 + (1-tau) u2).
struct ExpSplitTrajectory {
  std::vector<double> times;
  std::vector<std::pair<VectorField, ScalarField>> hat;
  std::vector<std::pair<VectorField, ScalarField>> tilde;
  std::vector<std::pair<VectorField, ScalarField>> difference;  // (u1-u2, p1-p2)

  /// max over snapshots of ||hat+tilde-difference|| / ||difference||.
  double recombination_error() const;
};

ExpSplitTrajectory run_exp_split(const SimState& s1, const SimState& s2, const SolverConfig& cfg,
                                 const Forcing& forcing, const Model& model, double t_end, std::size_t stride);

/// int_0^1 f'(tau u1 + (1-tau) u2) v dtau by `points`-point Gauss-Legendre.
VectorField fprime_average(const VectorField& u1, const VectorField& u2, const VectorField& v,
                           const NonlinearityParams& params, int points = 3);

/// Nodes and weights of Gauss-Legendre quadrature on [0,1].
std::pair<std::vector<double>, std::vector<double>> gauss_legendre01(int points);

}  // namespace bfflow
