#pragma once

// Discrete calculus on the uniform interior grid of the unit square or cube.
//
// Nodes are x_i = (i+1) h, i = 0..n-1, h = 1/(n+1), flattened with the first
// axis fastest. Velocity fields are zero outside the interior nodes (Dirichlet
// by zero extension); pressures carry no boundary condition.

#include <array>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "bfflow/linalg.hpp"

struct fftw_plan_s;

namespace bfflow {

struct Grid {
  int dim = 2;
  int n = 8;
  double h = 1.0 / 9.0;

  /// Validates dim in {2,3}, n >= 4 and n even.
  static Grid make(int dim, int n);

  std::size_t size() const {
    const auto m = static_cast<std::size_t>(n);
    return dim == 2 ? m * m : m * m * m;
  }
  std::size_t stride(int axis) const;
  double coord(int index) const { return (index + 1) * h; }
  std::array<int, 3> unravel(std::size_t flat) const;

  bool operator==(const Grid&) const = default;
};

void require_same_grid(const Grid& a, const Grid& b);

struct ScalarField {
  Grid grid;
  std::vector<double> values;

  ScalarField() = default;
  explicit ScalarField(const Grid& g) : grid(g), values(g.size(), 0.0) {}
  ScalarField(const Grid& g, std::vector<double> v);

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  std::size_t size() const { return values.size(); }

  ScalarField& operator+=(const ScalarField& o);
  ScalarField& operator-=(const ScalarField& o);
  ScalarField& operator*=(double s);
  /// this += a * x
  void axpy(double a, const ScalarField& x);
  bool all_finite() const;
};

ScalarField operator+(ScalarField a, const ScalarField& b);
ScalarField operator-(ScalarField a, const ScalarField& b);
ScalarField operator*(double s, ScalarField a);

/// d components stored contiguously: component c occupies [c N, (c+1) N).
struct VectorField {
  Grid grid;
  std::vector<double> values;

  VectorField() = default;
  explicit VectorField(const Grid& g) : grid(g), values(g.size() * g.dim, 0.0) {}
  VectorField(const Grid& g, std::vector<double> v);

  std::span<double> component(int c);
  std::span<const double> component(int c) const;
  double& at(int c, std::size_t node) { return values[c * grid.size() + node]; }
  double at(int c, std::size_t node) const { return values[c * grid.size() + node]; }

  VectorField& operator+=(const VectorField& o);
  VectorField& operator-=(const VectorField& o);
  VectorField& operator*=(double s);
  void axpy(double a, const VectorField& x);
  bool all_finite() const;
};

VectorField operator+(VectorField a, const VectorField& b);
VectorField operator-(VectorField a, const VectorField& b);
VectorField operator*(double s, VectorField a);

/// Central second-order differences, p extended by zero outside the grid.
VectorField grad(const ScalarField& p);
/// Negative adjoint of grad: <grad p, U> = -<p, div U>.
ScalarField div(const VectorField& u);
/// Componentwise 5-point (7-point in 3D) Dirichlet Laplacian.
VectorField laplacian(const VectorField& u);
ScalarField laplacian(const ScalarField& f);

/// Forward differences on the (n+1) n^(d-1) edges per axis, zero extension.
/// laplacian(f) == -edge_gradient_adjoint(edge_gradient(f)).
std::vector<std::vector<double>> edge_gradient(const ScalarField& f);
ScalarField edge_gradient_adjoint(const Grid& g, const std::vector<std::vector<double>>& e);

/// Discrete L2 pairing h^d sum f g.
double inner(const ScalarField& a, const ScalarField& b);
double inner(const VectorField& a, const VectorField& b);
double norm_l2(const ScalarField& f);
double norm_l2(const VectorField& u);
double mean(const ScalarField& f);

/// <grad u, grad u> from forward differences; equals <-laplacian u, u>.
double dirichlet_seminorm_sq(const VectorField& u);

ScalarField project_mean_zero(const ScalarField& p);

/// Eigenvalue of -laplacian for the 1D sine mode k (1-based) on n nodes.
double sine_eigenvalue_1d(int k, double h);

/// Orthonormal discrete sine basis (DST-I) of the Dirichlet Laplacian.
class SineBasis {
 public:
  explicit SineBasis(const Grid& g);

  const Grid& grid() const { return grid_; }
  /// Coefficients c with ||f||^2 = sum c^2 (weighted L2).
  std::vector<double> forward(std::span<const double> f) const;
  std::vector<double> inverse(std::span<const double> c) const;
  /// Eigenvalue of -laplacian for every flattened mode, same layout as forward().
  const std::vector<double>& eigenvalues() const { return eig_; }

  /// Solves (-laplacian + shift) x = b for one scalar component.
  std::vector<double> solve_shifted(std::span<const double> b, double shift) const;

 private:
  void transform(std::vector<double>& data) const;

  Grid grid_;
  std::shared_ptr<fftw_plan_s> plan_;  // in-place d-dimensional RODFT00 (FFTW)
  std::vector<double> eig_;
  double scale_;                       // h^(d/2)
  double unit_;                        // normalization of the FFTW transform
};

/// sqrt(sum_j lambda_j^delta c_j^2). delta must lie in [0,1].
double sobolev_norm(const ScalarField& f, double delta);
double sobolev_norm(const ScalarField& f, double delta, const SineBasis& basis);
/// Vector fields: componentwise, order s in [0,2] (s=1 is the H1 seminorm).
double sobolev_norm(const VectorField& u, double s, const SineBasis& basis);


/// Solves (-laplacian + shift) x = b by conjugate gradients on the stencil,
/// preconditioned with the exact sine-basis inverse.
class DirichletSolver {
 public:
  explicit DirichletSolver(const Grid& g) : basis_(g) {}

  const SineBasis& basis() const { return basis_; }
  ScalarField solve(const ScalarField& b, double shift = 0.0, double rel_tol = 1e-14) const;
  VectorField solve(const VectorField& b, double shift = 0.0, double rel_tol = 1e-14) const;

 private:
  void solve_component(std::span<const double> b, std::span<double> x, double shift, double rel_tol) const;
  SineBasis basis_;
};

}  // namespace bfflow
