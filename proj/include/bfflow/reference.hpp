#pragma once

// Independent oracles. Nothing here calls the production stencils or
// steppers: the dense propagator is assembled from Kronecker products of 1D
// difference matrices, the periodic stencils exist only here, and the
// residual checker evaluates the equations node by node.

#include <Eigen/Dense>
#include <array>
#include <complex>

#include "bfflow/grid.hpp"
#include "bfflow/physics.hpp"

namespace bfflow {

/// exp(t M) for the linear Dirichlet generator
///   M = [[lap, -G Q], [Q^T G^T D, 0]]
/// on x = (u, c), p = Q c with Q an orthonormal basis of mean-zero fields.
class DensePropagator {
 public:
  const Eigen::MatrixXd& generator() const { return matrix_; }
  const Eigen::VectorXcd& eigenvalues() const { return eigenvalues_; }
  double eigen_condition() const { return condition_; }
  /// True when the eigenbasis was too ill-conditioned and exponentials use
  /// scaling and squaring instead.
  bool uses_fallback() const { return fallback_; }

  Eigen::MatrixXd exp(double t) const;
  Eigen::VectorXd apply(double t, const Eigen::VectorXd& x) const;

  Eigen::VectorXd pack(const VectorField& u, const ScalarField& p) const;
  std::pair<VectorField, ScalarField> unpack(const Eigen::VectorXd& x) const;

  const Grid& grid() const { return grid_; }

 private:
  friend DensePropagator build_propagator(const Grid& g, const MediumMatrix& d);

  Grid grid_;
  Eigen::MatrixXd matrix_;
  Eigen::MatrixXd q_;  // n^d x (n^d - 1)
  Eigen::VectorXcd eigenvalues_;
  Eigen::MatrixXcd vectors_;
  Eigen::MatrixXcd vectors_inv_;
  double condition_ = 0.0;
  bool fallback_ = false;
};

/// Throws std::invalid_argument beyond 8^2 (2D) or 6^3 (3D) interior nodes.
DensePropagator build_propagator(const Grid& g, const MediumMatrix& d);

// ---------------------------------------------------------------------------
// Periodic D = I oracle on [0, 2 pi)^d with n nodes per axis (h = 2 pi / n).

struct PeriodicGrid {
  int dim = 2;
  int n = 16;
  double h() const;
  std::size_t size() const;
};

/// Per-mode state: u_hat = i s phi + sol (s = discrete gradient symbol), p_hat.
struct ModeSolution {
  std::array<int, 3> k{0, 0, 0};
  std::complex<double> phi;                    // potential amplitude
  std::complex<double> p;                      // pressure amplitude
  std::array<std::complex<double>, 3> sol{};   // solenoidal amplitude (s . sol = 0)
};

/// Laplacian symbol a = sum (4/h^2) sin^2(k h/2) and gradient symbol
/// s_c = sin(k_c h)/h on the periodic grid; n = 0 selects the continuum (a = |k|^2, s = k).
double periodic_laplacian_symbol(const std::array<int, 3>& k, int dim, int n);
std::array<double, 3> periodic_gradient_symbol(const std::array<int, 3>& k, int dim, int n);

/// Closed-form solution of phi' = -a phi - p, p' = b phi (b = |s|^2) and
/// sol' = -a sol at time t. k = 0 is the mean mode and is returned unchanged
/// with p forced to zero.
ModeSolution periodic_mode_solution(const ModeSolution& init, double t, int dim, int n);

/// Real fields Re[(u_hat, p_hat) e^{i k.x}] of a mode on the periodic grid;
/// u has dim components stored like VectorField.
struct PeriodicFields {
  std::vector<double> u;
  std::vector<double> p;
};
PeriodicFields periodic_fields(const ModeSolution& m, const PeriodicGrid& g);

/// Test-only periodic D = I linear stepper: rk4 on u' = lap u - grad p,
/// p' = -div u with periodic central/5-point stencils, from 0 to t_end.
PeriodicFields periodic_rk4(const PeriodicFields& init, const PeriodicGrid& g, double dt, double t_end);

// ---------------------------------------------------------------------------

enum class ResidualSystem { full, truncated, linear };

/// Node-by-node residual norm of the selected system at (u, p):
///  full:      steady-state defect of (lap u - grad p - f(u) + g, P div(D u))
///  truncated: -lap u + grad p + f(u) - g
///  linear:    -lap u + grad p - g
double residual_check(const VectorField& u, const ScalarField& p, const VectorField& g, const MediumMatrix& d,
                      const NonlinearityParams& params, ResidualSystem system);

}  // namespace bfflow
