#include "bfflow/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>

#include "bfflow/errors.hpp"
#include "bfflow/rng.hpp"

namespace bfflow {

// ---------------------------------------------------------------------------
// Assembled operator

double AssembledOperator::symmetry_defect() const {
  const double n = matrix.norm();
  return n > 0.0 ? (matrix - matrix.transpose()).norm() / n : 0.0;
}

Eigen::VectorXd AssembledOperator::reduce(const ScalarField& p) const {
  require_same_grid(p.grid, grid);
  const Eigen::Map<const Eigen::VectorXd> v(p.values.data(), static_cast<Eigen::Index>(p.values.size()));
  return basis.transpose() * v;
}

ScalarField AssembledOperator::lift(const Eigen::VectorXd& c) const {
  const Eigen::VectorXd v = basis * c;
  return ScalarField(grid, std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd AssembledOperator::propagate(const Eigen::VectorXd& c, double t) const {
  const Eigen::VectorXd modal = eigenvectors.transpose() * c;
  const Eigen::VectorXd decayed = modal.cwiseProduct((-t * spectrum.array()).exp().matrix());
  return eigenvectors * decayed;
}

AssembledOperator assemble_operator(const Grid& g, const MediumMatrix& d) {
  const std::size_t n_nodes = g.size();
  if (n_nodes > 4096) throw std::invalid_argument("assemble_operator: n^d = " + std::to_string(n_nodes) +
                                                  " exceeds the dense size guard 4096");
  if (d.dim() != g.dim) throw std::invalid_argument("assemble_operator: medium/grid dimension mismatch");
  const auto nn = static_cast<Eigen::Index>(n_nodes);
  const DirichletSolver solver(g);

  // Full n^d x n^d matrix of p -> -div(D A^{-1} grad p), column by column.
  Eigen::MatrixXd full(nn, nn);
  for (Eigen::Index i = 0; i < nn; ++i) {
    ScalarField e(g);
    e[static_cast<std::size_t>(i)] = 1.0;
    const VectorField w = solver.solve(grad(e), 0.0, 1e-14);
    const ScalarField col = div(d.apply(w));
    for (Eigen::Index k = 0; k < nn; ++k) full(k, i) = -col[static_cast<std::size_t>(k)];
  }

  // Orthonormal basis of the mean-zero fields: the Householder reflector that
  // maps the constant vector to e_1, minus its first column.
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(nn);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(ones);
  const Eigen::MatrixXd q = qr.householderQ();

  AssembledOperator op;
  op.grid = g;
  op.basis = q.rightCols(nn - 1);
  op.matrix = op.basis.transpose() * full * op.basis;
  const Eigen::MatrixXd sym = 0.5 * (op.matrix + op.matrix.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) throw Error("assemble_operator: symmetric eigensolver failed");
  op.spectrum = es.eigenvalues();
  op.eigenvectors = es.eigenvectors();
  return op;
}

// ---------------------------------------------------------------------------
// Fits

DecayFit fit_decay(const Series& series, double t_start, double t_end) {
  std::vector<double> ts, ys;
  for (const auto& [t, v] : series) {
    if (t < t_start || t > t_end) continue;
    if (!(v > 0.0) || !std::isfinite(v))
      throw std::invalid_argument("fit_decay: nonpositive or non-finite value at t = " + std::to_string(t));
    ts.push_back(t);
    ys.push_back(std::log(v));
  }
  if (ts.size() < 5) throw std::invalid_argument("fit_decay: need at least 5 points in the window");
  const double m = static_cast<double>(ts.size());
  double tbar = 0.0, ybar = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    tbar += ts[i];
    ybar += ys[i];
  }
  tbar /= m;
  ybar /= m;
  double stt = 0.0, sty = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    stt += (ts[i] - tbar) * (ts[i] - tbar);
    sty += (ts[i] - tbar) * (ys[i] - ybar);
    syy += (ys[i] - ybar) * (ys[i] - ybar);
  }
  if (stt == 0.0) throw std::invalid_argument("fit_decay: window contains a single time");
  DecayFit fit;
  fit.rate = sty / stt;
  fit.c = std::exp(ybar - fit.rate * tbar);
  double ss_res = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double r = ys[i] - (ybar + fit.rate * (ts[i] - tbar));
    ss_res += r * r;
  }
  // A constant series is fitted exactly.
  fit.r_squared = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  fit.t_start = ts.front();
  fit.t_end = ts.back();
  return fit;
}

EnvelopeFit fit_envelope(const Series& series, double t_start, double t_end) {
  std::vector<std::pair<double, double>> all;
  for (const auto& [t, v] : series) {
    if (t < t_start || t > t_end) continue;
    if (!(v > 0.0) || !std::isfinite(v))
      throw std::invalid_argument("fit_envelope: nonpositive or non-finite value at t = " + std::to_string(t));
    all.emplace_back(t, std::log(v));
  }
  if (all.size() < 5) throw std::invalid_argument("fit_envelope: need at least 5 points in the window");
  std::vector<std::pair<double, double>> fit_pts;
  for (std::size_t i = 0; i < all.size(); i += 2) fit_pts.push_back(all[i]);
  std::sort(fit_pts.begin(), fit_pts.end());

  // Upper convex hull (monotone chain).
  std::vector<std::pair<double, double>> hull;
  for (const auto& pt : fit_pts) {
    while (hull.size() >= 2) {
      const auto& a = hull[hull.size() - 2];
      const auto& b = hull.back();
      const double cross = (b.first - a.first) * (pt.second - a.second) - (b.second - a.second) * (pt.first - a.first);
      if (cross >= 0.0)
        hull.pop_back();
      else
        break;
    }
    hull.push_back(pt);
  }
  double tmean = 0.0;
  for (const auto& pt : fit_pts) tmean += pt.first;
  tmean /= static_cast<double>(fit_pts.size());

  double slope = 0.0, intercept = hull.front().second;
  for (std::size_t i = 0; i + 1 < hull.size(); ++i) {
    if (tmean >= hull[i].first && tmean <= hull[i + 1].first) {
      slope = (hull[i + 1].second - hull[i].second) / (hull[i + 1].first - hull[i].first);
      intercept = hull[i].second - slope * hull[i].first;
      break;
    }
  }
  EnvelopeFit env;
  env.rate = slope;
  env.c = std::exp(intercept);
  for (const auto& [t, lv] : all) env.max_excess = std::max(env.max_excess, std::exp(lv - intercept - slope * t));
  return env;
}

DecayFit semigroup_decay_from(const AssembledOperator& op, const ScalarField& p0, double delta, double t_max,
                              int samples) {
  if (!(delta >= 0.0 && delta <= 1.0)) throw std::invalid_argument("semigroup_decay: delta must lie in [0,1]");
  if (samples < 5) throw std::invalid_argument("semigroup_decay: need at least 5 samples");
  const SineBasis basis(op.grid);
  const Eigen::VectorXd c0 = op.reduce(project_mean_zero(p0));
  Series s;
  for (int k = 0; k < samples; ++k) {
    const double t = t_max * k / (samples - 1);
    s.emplace_back(t, sobolev_norm(op.lift(op.propagate(c0, t)), delta, basis));
  }
  return fit_decay(s, 0.0, t_max);
}

DecayFit semigroup_decay(const AssembledOperator& op, double delta, double t_max, int samples, int trials,
                         std::uint64_t seed) {
  Xoshiro256 rng(seed);
  DecayFit worst;
  worst.rate = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < trials; ++i) {
    const ScalarField p0 = white_noise(op.grid, rng);
    const DecayFit f = semigroup_decay_from(op, p0, delta, t_max, samples);
    if (f.rate > worst.rate) worst = f;
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Norms

namespace {

// Sine coefficients of (u components..., mean-projected p) with the matching eigenvalues.
struct Coefficients {
  std::vector<std::vector<double>> u;
  std::vector<double> p;
};

Coefficients coefficients(const VectorField& u, const ScalarField& p, const SineBasis& basis) {
  require_same_grid(u.grid, basis.grid());
  require_same_grid(p.grid, basis.grid());
  Coefficients c;
  for (int k = 0; k < u.grid.dim; ++k) c.u.push_back(basis.forward(u.component(k)));
  c.p = basis.forward(project_mean_zero(p).values);
  return c;
}

}  // namespace

double e_norm(const VectorField& u, const ScalarField& p, const SineBasis& basis) {
  const Coefficients c = coefficients(u, p, basis);
  const auto& lam = basis.eigenvalues();
  double s = 0.0;
  for (const auto& uc : c.u)
    for (std::size_t j = 0; j < uc.size(); ++j) s += lam[j] * uc[j] * uc[j];
  for (double v : c.p) s += v * v;
  return std::sqrt(s);
}

double e1_norm(const VectorField& u, const ScalarField& p, const SineBasis& basis) {
  const Coefficients c = coefficients(u, p, basis);
  const auto& lam = basis.eigenvalues();
  double s = 0.0;
  for (const auto& uc : c.u)
    for (std::size_t j = 0; j < uc.size(); ++j) s += lam[j] * lam[j] * uc[j] * uc[j];
  for (std::size_t j = 0; j < c.p.size(); ++j) s += lam[j] * c.p[j] * c.p[j];
  return std::sqrt(s);
}

double dist_to_e1_ball(const VectorField& u, const ScalarField& p, double radius, const SineBasis& basis) {
  if (!(radius >= 0.0)) throw std::invalid_argument("dist_to_e1_ball: radius must be >= 0");
  const Coefficients c = coefficients(u, p, basis);
  const auto& lam = basis.eigenvalues();
  // Every block has E-weight w_E and E^1-weight w_E * lambda, so the nearest
  // point of the ball is y_j = x_j / (1 + mu lambda_j) with mu >= 0 fixed by
  // ||y||_{E^1} = radius.
  struct Entry {
    double w, lam, x;
  };
  std::vector<Entry> entries;
  for (const auto& uc : c.u)
    for (std::size_t j = 0; j < uc.size(); ++j) entries.push_back({lam[j], lam[j], uc[j]});
  for (std::size_t j = 0; j < c.p.size(); ++j) entries.push_back({1.0, lam[j], c.p[j]});

  auto e1_sq = [&](double mu) {
    double s = 0.0;
    for (const auto& e : entries) {
      const double y = e.x / (1.0 + mu * e.lam);
      s += e.w * e.lam * y * y;
    }
    return s;
  };
  const double r2 = radius * radius;
  if (e1_sq(0.0) <= r2) return 0.0;
  double lo = 0.0, hi = 1.0;
  while (e1_sq(hi) > r2) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e300) break;
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (e1_sq(mid) > r2)
      lo = mid;
    else
      hi = mid;
  }
  double d2 = 0.0;
  for (const auto& e : entries) {
    const double diff = e.x - e.x / (1.0 + hi * e.lam);
    d2 += e.w * diff * diff;
  }
  return std::sqrt(d2);
}

// ---------------------------------------------------------------------------
// Energy audit

EnergyAuditor::EnergyAuditor(const Forcing& forcing, const Model& model, const AuditOptions& opts)
    : forcing_(forcing), model_(model), opts_(opts) {}

EnergyAuditor::Sample EnergyAuditor::sample(const SimState& s, const Rates& r, const VectorField& g) const {
  const MediumMatrix& d = model_.medium;
  const NonlinearityParams& params = model_.nonlinearity;
  const VectorField du = d.apply(s.u);
  const VectorField dut = d.apply(r.du);
  VectorField minus_lap = laplacian(s.u);
  minus_lap *= -1.0;

  Sample a;
  a.t = s.t;
  a.energy = inner(du, s.u) + inner(s.p, s.p);
  const double diss = dirichlet_form(s.u, d);
  double fwork = 0.0, bwork = 0.0, d_f = 0.0, d_b = 0.0;
  // d/dt ||grad u||_D^2 = 2 <-lap u, D u_t>
  const double d_diss = 2.0 * inner(minus_lap, dut);
  if (!params.is_zero()) {
    const VectorField f = eval_f(s.u, params);
    fwork = inner(f, du);
    d_f = inner(apply_fprime(s.u, r.du, params), du) + inner(f, dut);
  }
  if (model_.convective) {
    const VectorField b = convective(s.u, s.u);
    bwork = inner(b, du);
    d_b = inner(convective(r.du, s.u) + convective(s.u, r.du), du) + inner(b, dut);
  }
  const double gwork = inner(g, du);
  double d_g = inner(g, dut);
  if (forcing_.time_dependent()) {
    const double h = 1e-6;
    VectorField gdot = forcing_.at(s.t + h) - forcing_.at(s.t - h);
    gdot *= 1.0 / (2.0 * h);
    d_g += inner(gdot, du);
  }
  a.q = diss + fwork + bwork - gwork;
  a.dq = d_diss + d_f + d_b - d_g;
  return a;
}

void EnergyAuditor::push(const SimState& s) {
  const VectorField g = forcing_.at(s.t);
  const Rates r = rhs_full(s, g, model_);
  const Sample b = sample(s, r, g);
  if (last_) {
    const Sample& a = *last_;
    const double dt = b.t - a.t;
    const double integral = 0.5 * dt * (a.q + b.q) + dt * dt / 12.0 * (a.dq - b.dq);
    // E(t1) - E(t0) from the field increments: <D du, u1 + u0> + <dp, p1 + p0>
    // keeps the rounding error proportional to the increment, not to E.
    const SimState& prev = *last_state_;
    const double de = weighted_inner(model_.medium, s.u - prev.u, s.u + prev.u) + inner(s.p - prev.p, s.p + prev.p);
    const double res = 0.5 * de + integral;
    result_.times.push_back(b.t);
    result_.residuals.push_back(res);
    result_.l1 += std::abs(res);
  }
  last_ = b;
  last_state_ = s;

  const std::size_t stride = std::max<std::size_t>(opts_.gp_stride, 1);
  if (opts_.eps > 0.0 && count_ % stride == 0) {
    if (!solver_) solver_.emplace(s.u.grid);
    const VectorField bp = bogovski(s.p, *solver_).w;
    const VectorField bpt = bogovski(r.dp, *solver_).w;
    const double e_eps = b.energy + 2.0 * opts_.eps * inner(s.u, bp);
    // dE/dt = -2 q exactly in the semi-discrete system.
    const double de_eps = -2.0 * b.q + 2.0 * opts_.eps * (inner(r.du, bp) + inner(s.u, bpt));
    const double lhs = de_eps + opts_.eps * e_eps;
    const double gnorm = norm_l2(g);
    const double rhs = opts_.gp_constant * (std::pow(opts_.eps, 6) * e_eps * e_eps * e_eps + gnorm * gnorm + 1.0);
    result_.gp_times.push_back(s.t);
    result_.gp_lhs.push_back(lhs);
    result_.gp_rhs.push_back(rhs);
    if (lhs > rhs) {
      ++result_.gp_violations;
      result_.gp_worst = std::max(result_.gp_worst, lhs - rhs);
    }
  }
  ++count_;
}

AuditResult energy_audit(const std::vector<SimState>& traj, const Forcing& forcing, const Model& model,
                         const AuditOptions& opts) {
  EnergyAuditor auditor(forcing, model, opts);
  for (const auto& s : traj) auditor.push(s);
  return auditor.result();
}

// ---------------------------------------------------------------------------
// Smoothing

SmoothingReport smoothing_report(const std::vector<SimState>& traj, const Forcing& forcing, const Model& model,
                                 double t_max) {
  SmoothingReport rep;
  if (!traj.empty())
    rep.grid_tag = std::to_string(traj.front().grid().n) + "^" + std::to_string(traj.front().grid().dim);
  for (const char* key : {kWeightGradU, kWeightDtU, kWeightDtP, kWeightDtU83}) rep.weighted_sups[key] = 0.0;
  for (const auto& s : traj) {
    if (!(s.t > 0.0) || s.t > t_max * (1.0 + 1e-12)) continue;
    const Rates r = rhs_full(s, forcing.at(s.t), model);
    const double ut2 = inner(r.du, r.du);
    const double pt2 = inner(r.dp, r.dp);
    const double gu2 = dirichlet_seminorm_sq(s.u);
    const std::map<std::string, double> vals{{kWeightGradU, s.t * gu2},
                                             {kWeightDtU, s.t * s.t * ut2},
                                             {kWeightDtP, s.t * pt2},
                                             {kWeightDtU83, std::pow(s.t, 8.0 / 3.0) * ut2}};
    rep.times.push_back(s.t);
    for (const auto& [k, v] : vals) {
      rep.series[k].push_back(v);
      rep.weighted_sups[k] = std::max(rep.weighted_sups[k], v);
    }
  }
  return rep;
}

std::vector<SimState> geometric_trajectory(const SimState& s0, const SolverConfig& cfg, const Forcing& forcing,
                                           const Model& model, double t_max, int per_decade) {
  if (per_decade < 1) throw std::invalid_argument("geometric_trajectory: per_decade must be >= 1");
  // Targets t_max 10^{-j/per_decade} down to the first step, ascending.
  std::vector<double> targets;
  for (int j = 0;; ++j) {
    const double t = t_max * std::pow(10.0, -static_cast<double>(j) / per_decade);
    if (t < cfg.dt) break;
    targets.push_back(s0.t + t);
  }
  std::reverse(targets.begin(), targets.end());
  std::vector<SimState> out;
  std::size_t next = 0;
  integrate(s0, cfg, forcing, model, s0.t + t_max, 1, [&](const SimState& s) {
    if (out.empty() || (next < targets.size() && s.t >= targets[next] - 1e-12)) {
      out.push_back(s);
      while (next < targets.size() && targets[next] <= s.t + 1e-12) ++next;
    }
  });
  if (out.back().t < s0.t + t_max - 1e-12) out.push_back(out.back());
  return out;
}

// ---------------------------------------------------------------------------
// Ensembles

std::vector<std::pair<double, std::size_t>> box_counts(const std::vector<std::pair<double, double>>& points,
                                                       int scales) {
  std::vector<std::pair<double, std::size_t>> out;
  if (points.empty() || scales < 1) return out;
  double xmin = points[0].first, xmax = xmin, ymin = points[0].second, ymax = ymin;
  for (const auto& [x, y] : points) {
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  const double sx = xmax > xmin ? xmax - xmin : 1.0;
  const double sy = ymax > ymin ? ymax - ymin : 1.0;
  for (int k = scales - 1; k >= 0; --k) {
    const long cells = 1L << k;
    const double size = 1.0 / static_cast<double>(cells);
    std::set<std::pair<long, long>> boxes;
    for (const auto& [x, y] : points) {
      const long ix = std::min(cells - 1, static_cast<long>(std::floor((x - xmin) / sx * cells)));
      const long iy = std::min(cells - 1, static_cast<long>(std::floor((y - ymin) / sy * cells)));
      boxes.insert({ix, iy});
    }
    out.emplace_back(size, boxes.size());
  }
  std::sort(out.begin(), out.end());  // ascending box size: counts nonincreasing
  return out;
}

AttractorReport ensemble_study(const std::vector<SimState>& initial, const SolverConfig& cfg, const Forcing& forcing,
                               const Model& model, double t_max, const EnsembleOptions& opts) {
  if (initial.empty()) throw std::invalid_argument("ensemble_study: empty ensemble");
  if (opts.reference >= initial.size()) throw std::invalid_argument("ensemble_study: reference index out of range");
  const Grid g = initial.front().grid();
  for (const auto& s : initial) require_same_grid(s.grid(), g);
  const std::size_t m = initial.size();

  std::vector<std::vector<SimState>> runs(m);
  std::vector<std::exception_ptr> errors(m);
  auto run_member = [&](std::size_t i) {
    try {
      runs[i] = run_full(initial[i], cfg, forcing, model, t_max, opts.record_stride);
    } catch (const BlowUpError& e) {
      errors[i] = std::make_exception_ptr(
          BlowUpError("ensemble member " + std::to_string(i) + ": " + e.what(), e.step()));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const int threads = std::max(1, std::min<int>(opts.threads, static_cast<int>(m)));
  if (threads == 1) {
    for (std::size_t i = 0; i < m; ++i) run_member(i);
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard<std::mutex> lock(mu);
            if (next >= m) return;
            i = next++;
          }
          run_member(i);
        }
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  const SineBasis basis(g);
  AttractorReport rep;
  rep.ensemble_size = m;
  const std::size_t records = runs.front().size();

  const auto& ref = runs[opts.reference];
  for (const auto& s : ref)
    if (s.t >= initial.front().t + 0.75 * t_max - 1e-12) rep.r_ball = std::max(rep.r_ball, e1_norm(s.u, s.p, basis));
  rep.r_ball *= 2.0;

  rep.e_norm_series.resize(m);
  std::vector<std::pair<double, double>> cloud;
  for (std::size_t k = 0; k < records; ++k) {
    const double t = runs.front()[k].t;
    double dist = 0.0, diam = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const SimState& s = runs[i][k];
      dist = std::max(dist, dist_to_e1_ball(s.u, s.p, rep.r_ball, basis));
      rep.e_norm_series[i].emplace_back(t, e_norm(s.u, s.p, basis));
      for (std::size_t j = i + 1; j < m; ++j)
        diam = std::max(diam, e_norm(s.u - runs[j][k].u, s.p - runs[j][k].p, basis));
      if (t >= initial.front().t + 0.5 * t_max - 1e-12)
        cloud.emplace_back(sobolev_norm(s.u, 1.0, basis), norm_l2(s.p));
    }
    rep.dist_to_ball_series.emplace_back(t, dist);
    rep.diam_series.emplace_back(t, diam);
  }
  rep.box_counts = box_counts(cloud, opts.box_scales);
  return rep;
}

}  // namespace bfflow
