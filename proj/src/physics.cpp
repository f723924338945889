#include "bfflow/physics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "bfflow/errors.hpp"
#include "bfflow/rng.hpp"

namespace bfflow {

void NonlinearityParams::validate() const {
  if (!(l > 0.0 && l <= 2.0)) throw std::invalid_argument("nonlinearity exponent l must lie in (0,2]");
  if (beta < 0.0) throw std::invalid_argument("nonlinearity beta must be >= 0");
  if (gamma < 0.0) throw std::invalid_argument("nonlinearity gamma must be >= 0");
  if (shift < 0.0) throw std::invalid_argument("monotone shift must be >= 0");
  if (!std::isfinite(alpha)) throw std::invalid_argument("nonlinearity alpha must be finite");
}

bool NonlinearityParams::dissipative() const {
  if (l > 0.5) return beta > 0.0;
  if (l == 0.5) return beta + gamma > 0.0;
  return false;
}

// ---------------------------------------------------------------------------

MediumMatrix MediumMatrix::make(int dim, const std::vector<double>& entries) {
  if (dim != 2 && dim != 3) throw std::invalid_argument("medium matrix dimension must be 2 or 3");
  if (entries.size() != static_cast<std::size_t>(dim * dim))
    throw std::invalid_argument("medium matrix needs d*d entries");
  MediumMatrix m;
  m.dim_ = dim;
  Eigen::MatrixXd a(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) {
      a(i, j) = entries[i * dim + j];
      m.a_[i * 3 + j] = a(i, j);
      if (!std::isfinite(a(i, j))) throw std::invalid_argument("medium matrix entries must be finite");
    }
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-14 * std::max(1.0, a.cwiseAbs().maxCoeff()))
    throw std::invalid_argument("medium matrix D must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  m.eigmin_ = es.eigenvalues()(0);
  m.eigmax_ = es.eigenvalues()(dim - 1);
  if (!(m.eigmin_ > 0.0)) throw std::invalid_argument("medium matrix D must be positive definite");
  return m;
}

MediumMatrix MediumMatrix::identity(int dim) {
  std::vector<double> e(dim * dim, 0.0);
  for (int i = 0; i < dim; ++i) e[i * dim + i] = 1.0;
  return make(dim, e);
}

MediumMatrix MediumMatrix::diagonal(const std::vector<double>& diag) {
  const int dim = static_cast<int>(diag.size());
  std::vector<double> e(dim * dim, 0.0);
  for (int i = 0; i < dim; ++i) e[i * dim + i] = diag[i];
  return make(dim, e);
}

VectorField MediumMatrix::apply(const VectorField& u) const {
  if (u.grid.dim != dim_) throw std::invalid_argument("medium matrix / field dimension mismatch");
  VectorField out(u.grid);
  const std::size_t n = u.grid.size();
  for (int i = 0; i < dim_; ++i) {
    auto oi = out.component(i);
    for (int j = 0; j < dim_; ++j) {
      const double dij = a_[i * 3 + j];
      if (dij == 0.0) continue;
      auto uj = u.component(j);
      for (std::size_t k = 0; k < n; ++k) oi[k] += dij * uj[k];
    }
  }
  return out;
}

MediumMatrix MediumMatrix::inverse() const {
  Eigen::MatrixXd a(dim_, dim_);
  for (int i = 0; i < dim_; ++i)
    for (int j = 0; j < dim_; ++j) a(i, j) = a_[i * 3 + j];
  const Eigen::MatrixXd inv = a.inverse();
  std::vector<double> e(dim_ * dim_);
  for (int i = 0; i < dim_; ++i)
    for (int j = 0; j < dim_; ++j) e[i * dim_ + j] = 0.5 * (inv(i, j) + inv(j, i));
  return make(dim_, e);
}

VectorField Forcing::at(double t) const {
  if (time_series.empty()) return base;
  if (t <= time_series.front().first) return time_series.front().second;
  if (t >= time_series.back().first) return time_series.back().second;
  auto it = std::upper_bound(time_series.begin(), time_series.end(), t,
                             [](double v, const auto& e) { return v < e.first; });
  const auto& [t1, g1] = *it;
  const auto& [t0, g0] = *(it - 1);
  const double w = (t - t0) / (t1 - t0);
  VectorField out = g0;
  out *= (1.0 - w);
  out.axpy(w, g1);
  return out;
}

// ---------------------------------------------------------------------------
// Nonlinearity

namespace {

inline double power_l(double z, double l) {
  if (l == 1.0) return z;
  if (l == 2.0) return z * z;
  return std::pow(z, l);
}

}  // namespace

double eval_phi(double z, const NonlinearityParams& p) {
  if (z < 0.0) throw std::invalid_argument("eval_phi: z must be >= 0");
  double v = p.alpha;
  if (p.beta != 0.0) v += p.beta * power_l(z, p.l);
  if (p.gamma != 0.0) v += p.gamma * std::sqrt(z);
  return v;
}

double eval_phi_prime(double z, const NonlinearityParams& p) {
  double v = 0.0;
  if (p.beta != 0.0) v += p.beta * p.l * (p.l == 1.0 ? 1.0 : std::pow(z, p.l - 1.0));
  if (p.gamma != 0.0) v += 0.5 * p.gamma / std::sqrt(z);
  return v;
}

std::pair<double, double> fprime_eigenvalues(double z, const NonlinearityParams& p) {
  const double phi = eval_phi(z, p);
  // 2 z phi'(z) written without the singular factor.
  double two_z_dphi = 0.0;
  if (p.beta != 0.0) two_z_dphi += 2.0 * p.beta * p.l * power_l(z, p.l);
  if (p.gamma != 0.0) two_z_dphi += p.gamma * std::sqrt(z);
  return {phi, phi + two_z_dphi};
}

VectorField eval_f(const VectorField& u, const NonlinearityParams& p) {
  const Grid& g = u.grid;
  const std::size_t n = g.size();
  VectorField out(g);
  for (std::size_t k = 0; k < n; ++k) {
    double z = 0.0;
    for (int c = 0; c < g.dim; ++c) z += u.at(c, k) * u.at(c, k);
    const double phi = eval_phi(z, p);
    for (int c = 0; c < g.dim; ++c) out.at(c, k) = phi * u.at(c, k);
  }
  return out;
}

double potential_density(double z, const NonlinearityParams& p) {
  double v = p.alpha * z;
  if (p.beta != 0.0) v += p.beta * power_l(z, p.l) * z / (p.l + 1.0);
  if (p.gamma != 0.0) v += (2.0 / 3.0) * p.gamma * z * std::sqrt(z);
  return 0.5 * v;
}

double eval_potential(const VectorField& u, const NonlinearityParams& p) {
  const Grid& g = u.grid;
  double s = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    double z = 0.0;
    for (int c = 0; c < g.dim; ++c) z += u.at(c, k) * u.at(c, k);
    s += potential_density(z, p);
  }
  return s * std::pow(g.h, g.dim);
}

VectorField apply_fprime(const VectorField& u, const VectorField& v, const NonlinearityParams& p) {
  require_same_grid(u.grid, v.grid);
  const Grid& g = u.grid;
  VectorField out(g);
  for (std::size_t k = 0; k < g.size(); ++k) {
    double z = 0.0, uv = 0.0;
    for (int c = 0; c < g.dim; ++c) {
      z += u.at(c, k) * u.at(c, k);
      uv += u.at(c, k) * v.at(c, k);
    }
    const double phi = eval_phi(z, p);
    const double radial = z > 0.0 ? 2.0 * eval_phi_prime(z, p) * uv : 0.0;
    for (int c = 0; c < g.dim; ++c) out.at(c, k) = phi * v.at(c, k) + radial * u.at(c, k);
  }
  return out;
}

double monotone_shift(const NonlinearityParams& params, double u_max) {
  if (!(u_max > 0.0)) throw std::invalid_argument("monotone_shift: u_max must be positive");
  auto eig_min = [&](double r) {
    const auto [a, b] = fprime_eigenvalues(r * r, params);
    return std::min(a, b);
  };
  // 10^3-point log grid on (0, u_max] plus the origin.
  constexpr int kSamples = 1000;
  const double r_lo = u_max * 1e-8;
  std::vector<double> radii{0.0};
  for (int i = 0; i < kSamples; ++i)
    radii.push_back(r_lo * std::pow(u_max / r_lo, static_cast<double>(i) / (kSamples - 1)));

  std::size_t worst = 0;
  double worst_val = eig_min(0.0);
  for (std::size_t i = 1; i < radii.size(); ++i) {
    const double v = eig_min(radii[i]);
    if (v < worst_val) {
      worst_val = v;
      worst = i;
    }
  }
  // Golden-section refinement between the neighbours of the worst sample.
  double a = radii[worst == 0 ? 0 : worst - 1];
  double b = radii[std::min(worst + 1, radii.size() - 1)];
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - phi * (b - a), d = a + phi * (b - a);
  for (int it = 0; it < 100 && b - a > 1e-15 * u_max; ++it) {
    if (eig_min(c) < eig_min(d))
      b = d;
    else
      a = c;
    c = b - phi * (b - a);
    d = a + phi * (b - a);
  }
  worst_val = std::min({worst_val, eig_min(a), eig_min(b)});
  if (worst_val >= 0.0) return 0.0;
  return -worst_val * 1.01;
}

double weighted_inner(const MediumMatrix& d, const VectorField& u, const VectorField& v) {
  require_same_grid(u.grid, v.grid);
  return inner(d.apply(u), v);
}

double dirichlet_form(const VectorField& u, const MediumMatrix& d) {
  const Grid& g = u.grid;
  std::vector<std::vector<std::vector<double>>> edges(g.dim);
  for (int c = 0; c < g.dim; ++c) {
    ScalarField comp(g, std::vector<double>(u.component(c).begin(), u.component(c).end()));
    edges[c] = edge_gradient(comp);
  }
  double s = 0.0;
  for (int k = 0; k < g.dim; ++k)
    for (int l = 0; l < g.dim; ++l) {
      const double dkl = d(k, l);
      if (dkl == 0.0) continue;
      double acc = 0.0;
      for (int axis = 0; axis < g.dim; ++axis) {
        const auto& ek = edges[k][axis];
        const auto& el = edges[l][axis];
        for (std::size_t i = 0; i < ek.size(); ++i) acc += ek[i] * el[i];
      }
      s += dkl * acc;
    }
  return s * std::pow(g.h, g.dim);
}

// ---------------------------------------------------------------------------
// Bogovski right-inverse

BogovskiResult bogovski(const ScalarField& p, const BogovskiOptions& opts) {
  return bogovski(p, DirichletSolver(p.grid), opts);
}

BogovskiResult bogovski(const ScalarField& p, const DirichletSolver& solver, const BogovskiOptions& opts) {
  const Grid& g = p.grid;
  BogovskiResult res;
  const ScalarField pbar = project_mean_zero(p);
  const double m = mean(p);
  res.projected = std::abs(m) > 1e-14 * (1.0 + norm_l2(p));
  res.w = VectorField(g);
  const double pnorm = norm_l2(pbar);
  if (pnorm == 0.0) return res;

  // (grad^T A^{-1} grad) lambda = -div(A^{-1} grad lambda)
  LinearOperator op = [&](std::span<const double> in, std::span<double> out) {
    ScalarField lam(g, std::vector<double>(in.begin(), in.end()));
    const ScalarField r = div(solver.solve(grad(lam)));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = -r.values[i];
  };
  std::vector<double> lambda(g.size(), 0.0);
  CgOptions cg{opts.outer_tol, 0.0, opts.max_iter, "bogovski outer cg"};
  res.iterations = conjugate_gradient(op, pbar.values, lambda, cg).iterations;

  res.w = solver.solve(grad(ScalarField(g, lambda)));
  res.w *= -1.0;
  res.residual = norm_l2(div(res.w) - pbar) / pnorm;
  return res;
}

EnergyReport energy_report(const VectorField& u, const ScalarField& p, const VectorField& g,
                           const MediumMatrix& d, const NonlinearityParams& params, double eps) {
  if (eps < 0.0) throw std::invalid_argument("energy_report: eps must be >= 0");
  require_same_grid(u.grid, p.grid);
  require_same_grid(u.grid, g.grid);
  EnergyReport r;
  const VectorField du = d.apply(u);
  r.eps = eps;
  r.e_plain = inner(du, u) + inner(p, p);
  r.e_eps = r.e_plain;
  if (eps > 0.0) r.e_eps += 2.0 * eps * inner(u, bogovski(p).w);
  r.dissipation = dirichlet_form(u, d);
  r.f_work = inner(eval_f(u, params), du);
  r.g_work = inner(g, du);
  return r;
}

double certify_eps(const Grid& g, const MediumMatrix& d, int samples, std::uint64_t seed) {
  // For a fixed p (w = B p) the sandwich |2 eps <u, w>| <= (||u||_D^2 + ||p||^2)/2
  // is tightest at u = c D^{-1} w with c = sqrt(P/W), P = ||p||^2,
  // W = <D^{-1} w, w>, where it reads eps <= sqrt(P/W)/2. Sampling p (white
  // noise and smooth fields alternately) with that worst-case u is far
  // sharper than sampling u at random, which is nearly orthogonal to w.
  Xoshiro256 rng(seed);
  const DirichletSolver solver(g);
  const MediumMatrix dinv = d.inverse();
  double eps_star = std::numeric_limits<double>::infinity();
  for (int s = 0; s < samples; ++s) {
    const ScalarField p = project_mean_zero(
        s % 2 == 0 ? white_noise(g, rng) : smooth_random(g, rng.next(), 1 + (s / 2) % 4));
    const VectorField w = bogovski(p, solver).w;
    const double pp = inner(p, p);
    const double ww = inner(dinv.apply(w), w);
    if (ww > 0.0) eps_star = std::min(eps_star, 0.5 * std::sqrt(pp / ww));
  }
  return eps_star;
}

VectorField convective(const VectorField& u, const VectorField& v) {
  require_same_grid(u.grid, v.grid);
  const Grid& g = u.grid;
  const std::size_t n = g.size();
  const double inv2h = 0.5 / g.h;
  VectorField out(g);
  for (int axis = 0; axis < g.dim; ++axis) {
    const std::size_t s = g.stride(axis);
    auto ua = u.component(axis);
    for (int k = 0; k < g.dim; ++k) {
      auto vk = v.component(k);
      auto ok = out.component(k);
      for (std::size_t i = 0; i < n; ++i) {
        const int pos = static_cast<int>((i / s) % g.n);
        const bool has_plus = pos + 1 < g.n;
        const bool has_minus = pos > 0;
        const double v_plus = has_plus ? vk[i + s] : 0.0;
        const double v_minus = has_minus ? vk[i - s] : 0.0;
        const double uv_plus = has_plus ? ua[i + s] * vk[i + s] : 0.0;
        const double uv_minus = has_minus ? ua[i - s] * vk[i - s] : 0.0;
        ok[i] += 0.5 * inv2h * (ua[i] * (v_plus - v_minus) + (uv_plus - uv_minus));
      }
    }
  }
  return out;
}

}  // namespace bfflow
