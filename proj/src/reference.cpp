#include "bfflow/reference.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace bfflow {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;

// 1D interior matrices with zero extension.
MatrixXd second_difference_1d(int n, double h) {
  MatrixXd t = MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    t(i, i) = -2.0 / (h * h);
    if (i > 0) t(i, i - 1) = 1.0 / (h * h);
    if (i + 1 < n) t(i, i + 1) = 1.0 / (h * h);
  }
  return t;
}

MatrixXd central_difference_1d(int n, double h) {
  MatrixXd c = MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    if (i > 0) c(i, i - 1) = -0.5 / h;
    if (i + 1 < n) c(i, i + 1) = 0.5 / h;
  }
  return c;
}

// Embeds a 1D operator acting along `axis` into the flattened d-dimensional
// index space (first axis fastest): I (x) ... (x) op (x) ... (x) I.
MatrixXd along_axis(const MatrixXd& op1d, int axis, int dim, int n) {
  MatrixXd out = MatrixXd::Identity(1, 1);
  for (int a = dim - 1; a >= 0; --a) {
    const MatrixXd factor = (a == axis) ? op1d : MatrixXd::Identity(n, n);
    out = Eigen::kroneckerProduct(out, factor).eval();
  }
  return out;
}

}  // namespace

DensePropagator build_propagator(const Grid& g, const MediumMatrix& d) {
  if ((g.dim == 2 && g.n > 8) || (g.dim == 3 && g.n > 6))
    throw std::invalid_argument("build_propagator: dense oracle limited to 8^2 or 6^3 interior nodes");
  if (d.dim() != g.dim) throw std::invalid_argument("build_propagator: medium/grid dimension mismatch");
  const int dim = g.dim;
  const Index nn = static_cast<Index>(g.size());
  const Index nu = dim * nn;
  const Index nc = nn - 1;

  const MatrixXd t1 = second_difference_1d(g.n, g.h);
  const MatrixXd c1 = central_difference_1d(g.n, g.h);
  MatrixXd lap = MatrixXd::Zero(nn, nn);
  std::vector<MatrixXd> gr(dim);
  for (int a = 0; a < dim; ++a) {
    lap += along_axis(t1, a, dim, g.n);
    gr[a] = along_axis(c1, a, dim, g.n);
  }
  // Stacked gradient (nu x nn) and the block medium matrix (nu x nu).
  MatrixXd grad_full(nu, nn);
  for (int a = 0; a < dim; ++a) grad_full.middleRows(a * nn, nn) = gr[a];
  MatrixXd dmat = MatrixXd::Zero(nu, nu);
  for (int a = 0; a < dim; ++a)
    for (int b = 0; b < dim; ++b)
      dmat.block(a * nn, b * nn, nn, nn) = d(a, b) * MatrixXd::Identity(nn, nn);

  Eigen::HouseholderQR<MatrixXd> qr(Eigen::VectorXd::Ones(nn));
  const MatrixXd qfull = qr.householderQ();

  DensePropagator prop;
  prop.grid_ = g;
  prop.q_ = qfull.rightCols(nc);
  MatrixXd m = MatrixXd::Zero(nu + nc, nu + nc);
  for (int a = 0; a < dim; ++a) m.block(a * nn, a * nn, nn, nn) = lap;
  m.block(0, nu, nu, nc) = -grad_full * prop.q_;
  m.block(nu, 0, nc, nu) = prop.q_.transpose() * grad_full.transpose() * dmat;
  prop.matrix_ = m;

  Eigen::EigenSolver<MatrixXd> es(m);
  if (es.info() == Eigen::Success) {
    prop.eigenvalues_ = es.eigenvalues();
    prop.vectors_ = es.eigenvectors();
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(prop.vectors_);
    const auto& sv = svd.singularValues();
    prop.condition_ = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();
  } else {
    prop.condition_ = std::numeric_limits<double>::infinity();
  }
  prop.fallback_ = !(prop.condition_ <= 1e8);
  if (!prop.fallback_) prop.vectors_inv_ = prop.vectors_.inverse();
  return prop;
}

Eigen::MatrixXd DensePropagator::exp(double t) const {
  if (fallback_) return (t * matrix_).exp();
  const Eigen::VectorXcd e = (t * eigenvalues_.array()).exp().matrix();
  const Eigen::MatrixXcd r = vectors_ * e.asDiagonal() * vectors_inv_;
  return r.real();
}

Eigen::VectorXd DensePropagator::apply(double t, const Eigen::VectorXd& x) const {
  if (fallback_) return (t * matrix_).exp() * x;
  const Eigen::VectorXcd modal = vectors_inv_ * x.cast<std::complex<double>>();
  const Eigen::VectorXcd e = (t * eigenvalues_.array()).exp().matrix();
  return (vectors_ * e.cwiseProduct(modal)).real();
}

Eigen::VectorXd DensePropagator::pack(const VectorField& u, const ScalarField& p) const {
  require_same_grid(u.grid, grid_);
  require_same_grid(p.grid, grid_);
  const Index nu = static_cast<Index>(u.values.size());
  Eigen::VectorXd x(nu + q_.cols());
  for (Index i = 0; i < nu; ++i) x(i) = u.values[static_cast<std::size_t>(i)];
  const Eigen::Map<const Eigen::VectorXd> pv(p.values.data(), static_cast<Index>(p.values.size()));
  x.tail(q_.cols()) = q_.transpose() * pv;
  return x;
}

std::pair<VectorField, ScalarField> DensePropagator::unpack(const Eigen::VectorXd& x) const {
  VectorField u(grid_);
  const Index nu = static_cast<Index>(u.values.size());
  for (Index i = 0; i < nu; ++i) u.values[static_cast<std::size_t>(i)] = x(i);
  const Eigen::VectorXd pv = q_ * x.tail(q_.cols());
  return {u, ScalarField(grid_, std::vector<double>(pv.data(), pv.data() + pv.size()))};
}

// ---------------------------------------------------------------------------
// Periodic oracle

double PeriodicGrid::h() const { return 2.0 * std::numbers::pi / n; }

std::size_t PeriodicGrid::size() const {
  std::size_t s = 1;
  for (int a = 0; a < dim; ++a) s *= static_cast<std::size_t>(n);
  return s;
}

double periodic_laplacian_symbol(const std::array<int, 3>& k, int dim, int n) {
  double a = 0.0;
  for (int c = 0; c < dim; ++c) {
    if (n == 0) {
      a += static_cast<double>(k[c]) * k[c];
    } else {
      const double h = 2.0 * std::numbers::pi / n;
      const double s = std::sin(k[c] * h / 2.0);
      a += 4.0 / (h * h) * s * s;
    }
  }
  return a;
}

std::array<double, 3> periodic_gradient_symbol(const std::array<int, 3>& k, int dim, int n) {
  std::array<double, 3> s{0.0, 0.0, 0.0};
  for (int c = 0; c < dim; ++c) {
    if (n == 0) {
      s[c] = k[c];
    } else {
      const double h = 2.0 * std::numbers::pi / n;
      s[c] = std::sin(k[c] * h) / h;
    }
  }
  return s;
}

ModeSolution periodic_mode_solution(const ModeSolution& init, double t, int dim, int n) {
  using cd = std::complex<double>;
  ModeSolution out = init;
  const bool mean_mode = init.k[0] == 0 && init.k[1] == 0 && init.k[2] == 0;
  if (mean_mode) {
    out.p = 0.0;
    return out;
  }
  const double a = periodic_laplacian_symbol(init.k, dim, n);
  const auto s = periodic_gradient_symbol(init.k, dim, n);
  double b = 0.0;
  for (int c = 0; c < dim; ++c) b += s[c] * s[c];

  // exp(t M), M = [[-a, -1], [b, 0]] = -a/2 I + N with N^2 = omega^2 I.
  const cd omega = std::sqrt(cd(a * a / 4.0 - b, 0.0));
  const cd ch = std::cosh(omega * t);
  const cd sh_over = std::abs(omega) < 1e-12 ? cd(t, 0.0) : std::sinh(omega * t) / omega;
  const double decay = std::exp(-a * t / 2.0);
  const cd n11 = a / 2.0 - a, n12 = -1.0, n21 = b, n22 = a / 2.0;  // N = M + a/2 I
  out.phi = decay * ((ch + sh_over * n11) * init.phi + sh_over * n12 * init.p);
  out.p = decay * (sh_over * n21 * init.phi + (ch + sh_over * n22) * init.p);
  for (int c = 0; c < dim; ++c) out.sol[c] = std::exp(-a * t) * init.sol[c];
  return out;
}

PeriodicFields periodic_fields(const ModeSolution& m, const PeriodicGrid& g) {
  using cd = std::complex<double>;
  const auto s = periodic_gradient_symbol(m.k, g.dim, g.n);
  PeriodicFields f;
  const std::size_t nn = g.size();
  f.u.assign(nn * g.dim, 0.0);
  f.p.assign(nn, 0.0);
  const double h = g.h();
  for (std::size_t j = 0; j < nn; ++j) {
    std::size_t rest = j;
    double phase = 0.0;
    for (int a = 0; a < g.dim; ++a) {
      phase += m.k[a] * h * static_cast<double>(rest % g.n);
      rest /= g.n;
    }
    const cd e = std::exp(cd(0.0, phase));
    f.p[j] = (m.p * e).real();
    for (int c = 0; c < g.dim; ++c) f.u[c * nn + j] = ((cd(0.0, s[c]) * m.phi + m.sol[c]) * e).real();
  }
  return f;
}

namespace {

// Periodic rhs: (lap u - grad p, -div u).
PeriodicFields periodic_rhs(const PeriodicFields& y, const PeriodicGrid& g) {
  const std::size_t nn = g.size();
  const double h = g.h();
  PeriodicFields r;
  r.u.assign(nn * g.dim, 0.0);
  r.p.assign(nn, 0.0);
  auto neighbour = [&](std::size_t j, int axis, int shift) {
    std::size_t stride = 1;
    for (int a = 0; a < axis; ++a) stride *= g.n;
    const int pos = static_cast<int>((j / stride) % g.n);
    const int np = ((pos + shift) % g.n + g.n) % g.n;
    return j + (static_cast<std::ptrdiff_t>(np) - pos) * static_cast<std::ptrdiff_t>(stride);
  };
  for (std::size_t j = 0; j < nn; ++j) {
    for (int axis = 0; axis < g.dim; ++axis) {
      const std::size_t jp = neighbour(j, axis, 1), jm = neighbour(j, axis, -1);
      for (int c = 0; c < g.dim; ++c) {
        const double* u = y.u.data() + c * nn;
        r.u[c * nn + j] += (u[jp] - 2.0 * u[j] + u[jm]) / (h * h);
      }
      r.u[axis * nn + j] -= (y.p[jp] - y.p[jm]) / (2.0 * h);
      const double* ua = y.u.data() + axis * nn;
      r.p[j] -= (ua[jp] - ua[jm]) / (2.0 * h);
    }
  }
  return r;
}

void periodic_axpy(PeriodicFields& y, double a, const PeriodicFields& x) {
  for (std::size_t i = 0; i < y.u.size(); ++i) y.u[i] += a * x.u[i];
  for (std::size_t i = 0; i < y.p.size(); ++i) y.p[i] += a * x.p[i];
}

}  // namespace

PeriodicFields periodic_rk4(const PeriodicFields& init, const PeriodicGrid& g, double dt, double t_end) {
  PeriodicFields y = init;
  const auto steps = static_cast<std::size_t>(std::ceil(t_end / dt - 1e-9));
  double t = 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    const double h = std::min(dt, t_end - t);
    const PeriodicFields k1 = periodic_rhs(y, g);
    PeriodicFields y2 = y;
    periodic_axpy(y2, 0.5 * h, k1);
    const PeriodicFields k2 = periodic_rhs(y2, g);
    PeriodicFields y3 = y;
    periodic_axpy(y3, 0.5 * h, k2);
    const PeriodicFields k3 = periodic_rhs(y3, g);
    PeriodicFields y4 = y;
    periodic_axpy(y4, h, k3);
    const PeriodicFields k4 = periodic_rhs(y4, g);
    periodic_axpy(y, h / 6.0, k1);
    periodic_axpy(y, h / 3.0, k2);
    periodic_axpy(y, h / 3.0, k3);
    periodic_axpy(y, h / 6.0, k4);
    t += h;
  }
  return y;
}

// ---------------------------------------------------------------------------
// Residual checker

double residual_check(const VectorField& u, const ScalarField& p, const VectorField& g, const MediumMatrix& d,
                      const NonlinearityParams& params, ResidualSystem system) {
  require_same_grid(u.grid, p.grid);
  require_same_grid(u.grid, g.grid);
  const Grid& gr = u.grid;
  const std::size_t nn = gr.size();
  const double h = gr.h;
  const int n = gr.n;

  // Node values with zero extension.
  auto uval = [&](int c, std::array<int, 3> idx) {
    for (int a = 0; a < gr.dim; ++a)
      if (idx[a] < 0 || idx[a] >= n) return 0.0;
    std::size_t j = 0, stride = 1;
    for (int a = 0; a < gr.dim; ++a) {
      j += static_cast<std::size_t>(idx[a]) * stride;
      stride *= n;
    }
    return c < 0 ? p.values[j] : u.values[c * nn + j];
  };

  double sum = 0.0;
  std::vector<double> flux(nn, 0.0);  // div(D u) at each node
  for (std::size_t j = 0; j < nn; ++j) {
    const auto idx = gr.unravel(j);
    double z = 0.0;
    for (int c = 0; c < gr.dim; ++c) z += u.values[c * nn + j] * u.values[c * nn + j];
    const double phi = (system == ResidualSystem::linear) ? 0.0 : eval_phi(z, params);
    for (int c = 0; c < gr.dim; ++c) {
      double lap = 0.0;
      for (int a = 0; a < gr.dim; ++a) {
        auto ip = idx, im = idx;
        ip[a] += 1;
        im[a] -= 1;
        lap += (uval(c, ip) - 2.0 * uval(c, idx) + uval(c, im)) / (h * h);
      }
      auto ip = idx, im = idx;
      ip[c] += 1;
      im[c] -= 1;
      const double dp = (uval(-1, ip) - uval(-1, im)) / (2.0 * h);
      const double uc = u.values[c * nn + j];
      const double gc = g.values[c * nn + j];
      double r = 0.0;
      if (system == ResidualSystem::full)
        r = lap - dp - phi * uc + gc;
      else
        r = -lap + dp + phi * uc - gc;
      sum += r * r;
    }
    if (system == ResidualSystem::full) {
      for (int a = 0; a < gr.dim; ++a) {
        auto ip = idx, im = idx;
        ip[a] += 1;
        im[a] -= 1;
        for (int b = 0; b < gr.dim; ++b) flux[j] += d(a, b) * (uval(b, ip) - uval(b, im)) / (2.0 * h);
      }
    }
  }
  if (system == ResidualSystem::full) {
    double m = 0.0;
    for (double f : flux) m += f;
    m /= static_cast<double>(nn);
    for (double f : flux) sum += (f - m) * (f - m);
  }
  return std::sqrt(sum * std::pow(h, gr.dim));
}

}  // namespace bfflow
