#include "bfflow/grid.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>

namespace bfflow {

Grid Grid::make(int dim, int n) {
  if (dim != 2 && dim != 3) throw std::invalid_argument("grid dim must be 2 or 3");
  if (n < 4) throw std::invalid_argument("grid needs n >= 4 interior nodes per axis");
  if (n % 2 != 0)
    throw std::invalid_argument("grid needs an even n (odd n leaves a checkerboard null mode in grad)");
  return Grid{dim, n, 1.0 / (n + 1)};
}

std::size_t Grid::stride(int axis) const {
  std::size_t s = 1;
  for (int i = 0; i < axis; ++i) s *= static_cast<std::size_t>(n);
  return s;
}

std::array<int, 3> Grid::unravel(std::size_t flat) const {
  std::array<int, 3> idx{0, 0, 0};
  for (int a = 0; a < dim; ++a) {
    idx[a] = static_cast<int>(flat % n);
    flat /= n;
  }
  return idx;
}

void require_same_grid(const Grid& a, const Grid& b) {
  if (!(a == b)) throw std::invalid_argument("grid mismatch between field operands");
}

// ---------------------------------------------------------------------------
// Field arithmetic

ScalarField::ScalarField(const Grid& g, std::vector<double> v) : grid(g), values(std::move(v)) {
  if (values.size() != g.size()) throw std::invalid_argument("scalar field length != n^d");
}

ScalarField& ScalarField::operator+=(const ScalarField& o) {
  require_same_grid(grid, o.grid);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += o.values[i];
  return *this;
}
ScalarField& ScalarField::operator-=(const ScalarField& o) {
  require_same_grid(grid, o.grid);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] -= o.values[i];
  return *this;
}
ScalarField& ScalarField::operator*=(double s) {
  for (double& v : values) v *= s;
  return *this;
}
void ScalarField::axpy(double a, const ScalarField& x) {
  require_same_grid(grid, x.grid);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += a * x.values[i];
}
bool ScalarField::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

ScalarField operator+(ScalarField a, const ScalarField& b) { return a += b; }
ScalarField operator-(ScalarField a, const ScalarField& b) { return a -= b; }
ScalarField operator*(double s, ScalarField a) { return a *= s; }

VectorField::VectorField(const Grid& g, std::vector<double> v) : grid(g), values(std::move(v)) {
  if (values.size() != g.size() * g.dim) throw std::invalid_argument("vector field length != d n^d");
}

std::span<double> VectorField::component(int c) {
  return {values.data() + c * grid.size(), grid.size()};
}
std::span<const double> VectorField::component(int c) const {
  return {values.data() + c * grid.size(), grid.size()};
}

VectorField& VectorField::operator+=(const VectorField& o) {
  require_same_grid(grid, o.grid);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += o.values[i];
  return *this;
}
VectorField& VectorField::operator-=(const VectorField& o) {
  require_same_grid(grid, o.grid);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] -= o.values[i];
  return *this;
}
VectorField& VectorField::operator*=(double s) {
  for (double& v : values) v *= s;
  return *this;
}
void VectorField::axpy(double a, const VectorField& x) {
  require_same_grid(grid, x.grid);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += a * x.values[i];
}
bool VectorField::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

VectorField operator+(VectorField a, const VectorField& b) { return a += b; }
VectorField operator-(VectorField a, const VectorField& b) { return a -= b; }
VectorField operator*(double s, VectorField a) { return a *= s; }

// ---------------------------------------------------------------------------
// Stencils

namespace {

// Visits the flattened index space as (outer, k, inner) with k the position
// along `axis`, so every inner loop is contiguous and branch-free.
template <class Body>
void for_each_line(const Grid& g, int axis, Body body) {
  const std::size_t s = g.stride(axis);
  const std::size_t block = s * static_cast<std::size_t>(g.n);
  for (std::size_t base = 0; base < g.size(); base += block) body(base, s);
}

// out[i] += scale * (f[i+e] - f[i-e]) along axis, zero extension.
void add_central_difference(const Grid& g, int axis, std::span<const double> f,
                            std::span<double> out, double scale) {
  const int n = g.n;
  for_each_line(g, axis, [&](std::size_t base, std::size_t s) {
    for (int k = 0; k < n; ++k) {
      double* o = out.data() + base + k * s;
      const double* fp = (k + 1 < n) ? f.data() + base + (k + 1) * s : nullptr;
      const double* fm = (k > 0) ? f.data() + base + (k - 1) * s : nullptr;
      if (fp && fm)
        for (std::size_t i = 0; i < s; ++i) o[i] += scale * (fp[i] - fm[i]);
      else if (fp)
        for (std::size_t i = 0; i < s; ++i) o[i] += scale * fp[i];
      else
        for (std::size_t i = 0; i < s; ++i) o[i] -= scale * fm[i];
    }
  });
}

void add_laplacian(const Grid& g, std::span<const double> f, std::span<double> out) {
  const double inv_h2 = 1.0 / (g.h * g.h);
  const std::size_t total = g.size();
  const int n = g.n;
  for (std::size_t i = 0; i < total; ++i) out[i] -= 2.0 * g.dim * inv_h2 * f[i];
  for (int axis = 0; axis < g.dim; ++axis) {
    for_each_line(g, axis, [&](std::size_t base, std::size_t s) {
      for (int k = 0; k < n; ++k) {
        double* o = out.data() + base + k * s;
        if (k + 1 < n) {
          const double* fp = f.data() + base + (k + 1) * s;
          for (std::size_t i = 0; i < s; ++i) o[i] += inv_h2 * fp[i];
        }
        if (k > 0) {
          const double* fm = f.data() + base + (k - 1) * s;
          for (std::size_t i = 0; i < s; ++i) o[i] += inv_h2 * fm[i];
        }
      }
    });
  }
}

}  // namespace

VectorField grad(const ScalarField& p) {
  const Grid& g = p.grid;
  VectorField out(g);
  const double scale = 0.5 / g.h;
  for (int c = 0; c < g.dim; ++c) add_central_difference(g, c, p.values, out.component(c), scale);
  return out;
}

ScalarField div(const VectorField& u) {
  const Grid& g = u.grid;
  ScalarField out(g);
  const double scale = 0.5 / g.h;
  for (int c = 0; c < g.dim; ++c) add_central_difference(g, c, u.component(c), out.values, scale);
  return out;
}

VectorField laplacian(const VectorField& u) {
  VectorField out(u.grid);
  for (int c = 0; c < u.grid.dim; ++c) add_laplacian(u.grid, u.component(c), out.component(c));
  return out;
}

ScalarField laplacian(const ScalarField& f) {
  ScalarField out(f.grid);
  add_laplacian(f.grid, f.values, out.values);
  return out;
}

std::vector<std::vector<double>> edge_gradient(const ScalarField& f) {
  const Grid& g = f.grid;
  const std::size_t lines = g.size() / g.n;
  std::vector<std::vector<double>> out(g.dim);
  for (int axis = 0; axis < g.dim; ++axis) {
    const std::size_t s = g.stride(axis);
    auto& e = out[axis];
    e.assign(lines * (g.n + 1), 0.0);
    // Enumerate lines by their base node (k = 0 along axis).
    std::size_t line = 0;
    for (std::size_t base = 0; base < g.size(); ++base) {
      if ((base / s) % g.n != 0) continue;
      double prev = 0.0;
      for (int k = 0; k <= g.n; ++k) {
        const double cur = (k < g.n) ? f.values[base + k * s] : 0.0;
        e[line * (g.n + 1) + k] = (cur - prev) / g.h;
        prev = cur;
      }
      ++line;
    }
  }
  return out;
}

ScalarField edge_gradient_adjoint(const Grid& g, const std::vector<std::vector<double>>& e) {
  ScalarField out(g);
  for (int axis = 0; axis < g.dim; ++axis) {
    const std::size_t s = g.stride(axis);
    std::size_t line = 0;
    for (std::size_t base = 0; base < g.size(); ++base) {
      if ((base / s) % g.n != 0) continue;
      const double* ed = e[axis].data() + line * (g.n + 1);
      for (int k = 0; k < g.n; ++k) out.values[base + k * s] += (ed[k] - ed[k + 1]) / g.h;
      ++line;
    }
  }
  return out;
}

double inner(const ScalarField& a, const ScalarField& b) {
  require_same_grid(a.grid, b.grid);
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += a.values[i] * b.values[i];
  return s * std::pow(a.grid.h, a.grid.dim);
}

double inner(const VectorField& a, const VectorField& b) {
  require_same_grid(a.grid, b.grid);
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += a.values[i] * b.values[i];
  return s * std::pow(a.grid.h, a.grid.dim);
}

double norm_l2(const ScalarField& f) { return std::sqrt(inner(f, f)); }
double norm_l2(const VectorField& u) { return std::sqrt(inner(u, u)); }

double mean(const ScalarField& f) {
  double s = 0.0;
  for (double v : f.values) s += v;
  return s / static_cast<double>(f.values.size());
}

double dirichlet_seminorm_sq(const VectorField& u) {
  const Grid& g = u.grid;
  double s = 0.0;
  for (int c = 0; c < g.dim; ++c) {
    ScalarField comp(g, std::vector<double>(u.component(c).begin(), u.component(c).end()));
    for (const auto& e : edge_gradient(comp))
      for (double v : e) s += v * v;
  }
  return s * std::pow(g.h, g.dim);
}

ScalarField project_mean_zero(const ScalarField& p) {
  ScalarField out = p;
  const double m = mean(p);
  for (double& v : out.values) v -= m;
  return out;
}

double sine_eigenvalue_1d(int k, double h) {
  const double s = std::sin(k * std::numbers::pi * h / 2.0);
  return 4.0 / (h * h) * s * s;
}

// ---------------------------------------------------------------------------
// Sine basis

namespace {

// FFTW's planner is not thread-safe; execution with an existing plan is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

SineBasis::SineBasis(const Grid& g) : grid_(g), eig_(g.size()) {
  const int n = g.n;
  std::vector<double> mu(n);
  for (int k = 0; k < n; ++k) mu[k] = sine_eigenvalue_1d(k + 1, g.h);
  for (std::size_t j = 0; j < g.size(); ++j) {
    const auto idx = g.unravel(j);
    double lam = 0.0;
    for (int a = 0; a < g.dim; ++a) lam += mu[idx[a]];
    eig_[j] = lam;
  }
  scale_ = std::pow(g.h, 0.5 * g.dim);
  // RODFT00 is the unnormalized DST-I (factor 2 per axis relative to
  // 2 sum sin); the orthonormal transform needs 1/sqrt(2(n+1)) per axis.
  unit_ = std::pow(2.0 * (n + 1), -0.5 * g.dim);

  std::vector<double> scratch(g.size());
  const std::array<int, 3> dims{n, n, n};
  const std::array<fftw_r2r_kind, 3> kinds{FFTW_RODFT00, FFTW_RODFT00, FFTW_RODFT00};
  std::lock_guard<std::mutex> lock(fftw_planner_mutex());
  fftw_plan plan = fftw_plan_r2r(g.dim, dims.data(), scratch.data(), scratch.data(), kinds.data(),
                                 FFTW_ESTIMATE | FFTW_UNALIGNED);
  if (plan == nullptr) throw std::runtime_error("FFTW could not plan the sine transform");
  plan_ = std::shared_ptr<fftw_plan_s>(plan, [](fftw_plan p) {
    std::lock_guard<std::mutex> guard(fftw_planner_mutex());
    fftw_destroy_plan(p);
  });
}

void SineBasis::transform(std::vector<double>& data) const {
  // The orthonormal DST-I is symmetric and its own inverse.
  fftw_execute_r2r(plan_.get(), data.data(), data.data());
  for (double& v : data) v *= unit_;
}

std::vector<double> SineBasis::forward(std::span<const double> f) const {
  std::vector<double> c(f.begin(), f.end());
  transform(c);
  for (double& v : c) v *= scale_;
  return c;
}

std::vector<double> SineBasis::inverse(std::span<const double> c) const {
  std::vector<double> f(c.begin(), c.end());
  transform(f);
  for (double& v : f) v /= scale_;
  return f;
}

std::vector<double> SineBasis::solve_shifted(std::span<const double> b, double shift) const {
  std::vector<double> x(b.begin(), b.end());
  transform(x);
  for (std::size_t j = 0; j < x.size(); ++j) x[j] /= (eig_[j] + shift);
  transform(x);
  return x;
}

double sobolev_norm(const ScalarField& f, double delta, const SineBasis& basis) {
  if (!(delta >= 0.0 && delta <= 1.0)) throw std::invalid_argument("sobolev_norm: delta must lie in [0,1]");
  require_same_grid(f.grid, basis.grid());
  const auto c = basis.forward(f.values);
  const auto& lam = basis.eigenvalues();
  double s = 0.0;
  for (std::size_t j = 0; j < c.size(); ++j) s += std::pow(lam[j], delta) * c[j] * c[j];
  return std::sqrt(s);
}

double sobolev_norm(const ScalarField& f, double delta) {
  return sobolev_norm(f, delta, SineBasis(f.grid));
}

double sobolev_norm(const VectorField& u, double s, const SineBasis& basis) {
  if (!(s >= 0.0 && s <= 2.0)) throw std::invalid_argument("sobolev_norm: order must lie in [0,2]");
  require_same_grid(u.grid, basis.grid());
  const auto& lam = basis.eigenvalues();
  double acc = 0.0;
  for (int c = 0; c < u.grid.dim; ++c) {
    const auto coef = basis.forward(u.component(c));
    for (std::size_t j = 0; j < coef.size(); ++j) acc += std::pow(lam[j], s) * coef[j] * coef[j];
  }
  return std::sqrt(acc);
}

}  // namespace bfflow

namespace bfflow {

void DirichletSolver::solve_component(std::span<const double> b, std::span<double> x, double shift,
                                      double rel_tol) const {
  const Grid& g = basis_.grid();
  LinearOperator op = [&](std::span<const double> in, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    add_laplacian(g, in, out);
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = shift * in[i] - out[i];
  };
  LinearOperator pre = [&](std::span<const double> in, std::span<double> out) {
    const auto y = basis_.solve_shifted(in, shift);
    std::copy(y.begin(), y.end(), out.begin());
  };
  std::fill(x.begin(), x.end(), 0.0);
  // Machine precision bounds what the exact preconditioner can reach.
  CgOptions opts{std::max(rel_tol, 1e-15), 1e-300, 50, "dirichlet solve"};
  conjugate_gradient(op, b, x, opts, pre);
}

ScalarField DirichletSolver::solve(const ScalarField& b, double shift, double rel_tol) const {
  require_same_grid(b.grid, basis_.grid());
  ScalarField x(b.grid);
  solve_component(b.values, x.values, shift, rel_tol);
  return x;
}

VectorField DirichletSolver::solve(const VectorField& b, double shift, double rel_tol) const {
  require_same_grid(b.grid, basis_.grid());
  VectorField x(b.grid);
  for (int c = 0; c < b.grid.dim; ++c) solve_component(b.component(c), x.component(c), shift, rel_tol);
  return x;
}

}  // namespace bfflow
