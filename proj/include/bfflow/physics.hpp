#pragma once

// Constitutive content of the model: the drag nonlinearity f(u) = phi(|u|^2) u,
// its potential, the medium matrix D, forcing, the energy functionals and the
// discrete Bogovski right-inverse of the divergence.

#include <array>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "bfflow/grid.hpp"

namespace bfflow {

/// phi(z) = alpha + beta z^l + gamma sqrt(z).
///
/// alpha may be negative (an anti-drag linear term); that is the only way a
/// member of this family fails to be monotone and needs a shift L > 0.
struct NonlinearityParams {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
  double l = 1.0;
  double shift = 0.0;  // cached monotone shift for the amplitudes in play

  /// Throws std::invalid_argument unless l in (0,2], beta >= 0, gamma >= 0.
  void validate() const;
  /// beta > 0 for l > 1/2, beta + gamma > 0 for l = 1/2.
  bool dissipative() const;
  bool is_zero() const { return alpha == 0.0 && beta == 0.0 && gamma == 0.0; }
};

/// Constant symmetric positive definite d x d matrix.
class MediumMatrix {
 public:
  MediumMatrix() = default;
  /// Row-major entries; throws unless symmetric to 1e-14 and positive definite.
  static MediumMatrix make(int dim, const std::vector<double>& entries);
  static MediumMatrix identity(int dim);
  static MediumMatrix diagonal(const std::vector<double>& diag);

  int dim() const { return dim_; }
  double operator()(int i, int j) const { return a_[i * 3 + j]; }
  double eigmin() const { return eigmin_; }
  double eigmax() const { return eigmax_; }

  /// Pointwise D u.
  VectorField apply(const VectorField& u) const;
  MediumMatrix inverse() const;

 private:
  int dim_ = 0;
  std::array<double, 9> a_{};
  double eigmin_ = 0.0;
  double eigmax_ = 0.0;
};

/// Time-independent g, or g(t) by linear interpolation of a time series
/// (clamped outside its range).
struct Forcing {
  VectorField base;
  std::vector<std::pair<double, VectorField>> time_series;

  static Forcing constant(VectorField g) { return Forcing{std::move(g), {}}; }
  static Forcing zero(const Grid& grid) { return Forcing{VectorField(grid), {}}; }
  VectorField at(double t) const;
  bool time_dependent() const { return !time_series.empty(); }
};

struct EnergyReport {
  double e_plain = 0.0;      // ||u||_D^2 + ||p||^2
  double e_eps = 0.0;        // e_plain + 2 eps <u, B p>
  double eps = 0.0;
  double dissipation = 0.0;  // ||grad u||_D^2
  double f_work = 0.0;       // (f(u), D u)
  double g_work = 0.0;       // (g, D u)
};

double eval_phi(double z, const NonlinearityParams& params);
/// phi'(z) for z > 0 (the gamma term is singular at 0).
double eval_phi_prime(double z, const NonlinearityParams& params);
/// Eigenvalues of the Jacobian f'(v) at |v|^2 = z: phi(z) (transverse) and
/// phi(z) + 2 z phi'(z) (along v).
std::pair<double, double> fprime_eigenvalues(double z, const NonlinearityParams& params);

VectorField eval_f(const VectorField& u, const NonlinearityParams& params);
/// h^d sum F(u), F(u) = 1/2 int_0^{|u|^2} phi.
double eval_potential(const VectorField& u, const NonlinearityParams& params);
double potential_density(double z, const NonlinearityParams& params);
/// f'(u) v = phi(|u|^2) v + 2 phi'(|u|^2) (u.v) u.
VectorField apply_fprime(const VectorField& u, const VectorField& v, const NonlinearityParams& params);

/// Smallest L >= 0 (upper end of a 1% bracket) with eig_min f'(v) + L >= 0
/// for all |v| <= u_max.
double monotone_shift(const NonlinearityParams& params, double u_max);

/// ||grad u||_D^2 = sum_kl D_kl <grad u_k, grad u_l> from edge differences.
double dirichlet_form(const VectorField& u, const MediumMatrix& d);
/// ||u||_D^2 = <D u, u>.
double weighted_inner(const MediumMatrix& d, const VectorField& u, const VectorField& v);

struct BogovskiOptions {
  double outer_tol = 1e-11;
  int max_iter = 5000;
};

struct BogovskiResult {
  VectorField w;
  bool projected = false;   // input had a nonzero mean that was removed
  int iterations = 0;
  double residual = 0.0;    // ||div w - p|| / ||p|| after projection
};

/// Minimum-H1-seminorm w with div w = p (p mean-projected first):
/// w = -A^{-1} grad lambda, (grad^T A^{-1} grad) lambda = p, A = -laplacian.
BogovskiResult bogovski(const ScalarField& p, const BogovskiOptions& opts = {});
BogovskiResult bogovski(const ScalarField& p, const DirichletSolver& solver, const BogovskiOptions& opts = {});

EnergyReport energy_report(const VectorField& u, const ScalarField& p, const VectorField& g,
                           const MediumMatrix& d, const NonlinearityParams& params, double eps);

/// Largest eps with 1/2 e_plain <= e_eps <= 3/2 e_plain over `samples`
/// random pressures drawn from `seed` (white noise and smooth fields
/// alternately), each paired with its worst-case velocity u ~ D^{-1} B p.
double certify_eps(const Grid& g, const MediumMatrix& d, int samples, std::uint64_t seed);

/// B(u,v) = 1/2 [(u.grad) v + div(u (x) v)], the skew-symmetric form of
/// (u.grad) v + 1/2 div(u) v.
VectorField convective(const VectorField& u, const VectorField& v);

}  // namespace bfflow
