#include "bfflow/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "bfflow/analysis.hpp"
#include "bfflow/errors.hpp"
#include "bfflow/reference.hpp"
#include "bfflow/rng.hpp"

namespace bfflow {

namespace {

namespace fs = std::filesystem;

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Shared plumbing of one subcommand run.
struct Context {
  ScenarioConfig cfg;
  std::string out_dir;
  RunOptions opts;
  ScenarioResult& result;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  Summary& summary() { return result.summary; }

  void log(const std::string& msg) const {
    if (opts.log == nullptr) return;
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    char buf[32];
    std::snprintf(buf, sizeof buf, "[%7.2fs] ", sec);
    *opts.log << buf << msg << std::endl;
  }

  /// Writes name.csv (and name.svg with --svg) into out_dir.
  void emit(const std::string& name, const Table& table, const PlotOptions& plot) {
    if (out_dir.empty()) return;
    const std::string csv = (fs::path(out_dir) / (name + ".csv")).string();
    write_csv(csv, table);
    result.files.push_back(csv);
    if (!opts.svg) return;
    const std::string svg = (fs::path(out_dir) / (name + ".svg")).string();
    try {
      write_svg(svg, table, plot);
      result.files.push_back(svg);
    } catch (const std::exception& e) {
      // SVG emission never affects the exit code.
      log(std::string("warning: ") + e.what());
    }
  }
};

Table make_table(std::vector<Column> columns) {
  Table t;
  t.columns = std::move(columns);
  return t;
}

PlotOptions plot(const std::string& title, bool log_y, std::vector<int> ys = {}, int x = 0) {
  PlotOptions p;
  p.title = title;
  p.log_y = log_y;
  p.x_column = x;
  p.y_columns = std::move(ys);
  return p;
}

std::string grid_tag(const Grid& g) { return std::to_string(g.n) + "^" + std::to_string(g.dim); }

const char* scheme_name(Scheme s) { return s == Scheme::rk4 ? "rk4" : "semi_implicit"; }

void describe_run(Context& ctx, const Grid& g, const SolverConfig& sc) {
  auto& s = ctx.summary();
  s.set("grid", grid_tag(g));
  s.set("scheme", scheme_name(sc.scheme));
  s.set("dt", sc.dt);
  s.set("seed", std::to_string(ctx.cfg.run.seed));
  s.set("initial_seed", std::to_string(ctx.cfg.initial.seed));
}

/// fit_decay that reports an unusable window as a failed fit instead of throwing.
std::optional<DecayFit> try_fit(const Series& series, double t0, double t1, Summary& s, const std::string& key) {
  try {
    return fit_decay(series, t0, t1);
  } catch (const std::invalid_argument& e) {
    s.set(key + "_error", e.what());
    return std::nullopt;
  }
}

std::optional<EnvelopeFit> try_envelope(const Series& series, double t0, double t1, Summary& s,
                                        const std::string& key) {
  try {
    return fit_envelope(series, t0, t1);
  } catch (const std::invalid_argument& e) {
    s.set(key + "_error", e.what());
    return std::nullopt;
  }
}

/// Prefix of a series up to (excluding) its first value <= floor.
Series positive_prefix(const Series& series, double floor) {
  Series out;
  for (const auto& pt : series) {
    if (!(pt.second > floor)) break;
    out.push_back(pt);
  }
  return out;
}

std::size_t stride_for(double every, double dt) {
  return static_cast<std::size_t>(std::max(1.0, std::round(every / dt)));
}

// ---------------------------------------------------------------------------
// simulate: E_eps of several initial amplitudes and the common absorbing ball

void run_simulate(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const Grid g = cfg.grid();
  const Model model = cfg.model();
  const Forcing forcing = make_forcing(cfg, g);
  const SolverConfig sc = cfg.solver_for(g);
  sc.validate(g, model.medium);
  if (!(cfg.simulate.t_enter < cfg.run.t_max))
    throw ConfigError("simulate.t_enter violates t_enter < run.t_max", 0);
  const double eps = resolve_eps(cfg, g);
  const SineBasis basis(g);
  auto& sum = ctx.summary();
  describe_run(ctx, g, sc);
  sum.set("eps", eps);

  Table table = make_table({{"t", "time"},
                            {"e_plain", "energy"},
                            {"e_eps", "energy"},
                            {"h1_u", "H1 norm"},
                            {"l2_p", "L2 norm"},
                            {"residual", "L2 norm"},
                            {"member", "index"}});
  const auto& amps = cfg.simulate.amplitudes;
  std::vector<Series> e_eps(amps.size());
  double mean_drift = 0.0;  // max |mean p| over all snapshots (p(0) is mean-zero)
  for (std::size_t i = 0; i < amps.size(); ++i) {
    ctx.log("simulate member " + std::to_string(i) + " amplitude " + format_value(amps[i]));
    const SimState s0 = make_initial(cfg, g, amps[i], cfg.initial.seed);
    integrate(s0, sc, forcing, model, cfg.run.t_max, cfg.run.snapshot_stride, [&](const SimState& s) {
      const VectorField gt = forcing.at(s.t);
      const EnergyReport er = energy_report(s.u, s.p, gt, model.medium, model.nonlinearity, eps);
      const double res = residual_check(s.u, s.p, gt, model.medium, model.nonlinearity, ResidualSystem::full);
      table.add({s.t, er.e_plain, er.e_eps, sobolev_norm(s.u, 1.0, basis), norm_l2(s.p), res,
                 static_cast<double>(i)});
      e_eps[i].emplace_back(s.t, er.e_eps);
      mean_drift = std::max(mean_drift, std::abs(mean(s.p)));
    });
  }
  ctx.emit("energies", table, plot("E_eps by member", false, {2}));

  // Ball: factor x late-time sup of the smallest member (all members share the attractor).
  const std::size_t smallest = std::min_element(amps.begin(), amps.end()) - amps.begin();
  const std::size_t largest = std::max_element(amps.begin(), amps.end()) - amps.begin();
  double late = 0.0;
  for (const auto& [t, v] : e_eps[smallest])
    if (t >= 0.75 * cfg.run.t_max - 1e-12) late = std::max(late, v);
  const double bound = cfg.simulate.ball_factor * late;
  sum.set("ball_bound", bound);

  bool inside = true;
  for (std::size_t i = 0; i < amps.size(); ++i) {
    double sup = 0.0;
    for (const auto& [t, v] : e_eps[i])
      if (t >= cfg.simulate.t_enter - 1e-12) sup = std::max(sup, v);
    sum.set("member" + std::to_string(i) + ".sup_after_t_enter", sup);
    inside = inside && sup <= bound;
  }
  sum.criterion("common_ball", inside);
  sum.set("mean_p_drift", mean_drift);
  sum.criterion("mean_conserved", mean_drift <= cfg.thresholds.mean_drift * std::max(cfg.run.t_max, 1.0));

  // Approach phase of the largest member: from t=0 to its entry into the ball.
  const Series& big = e_eps[largest];
  double entry = 0.0;
  for (const auto& [t, v] : big)
    if (v > bound) entry = t;
  sum.set("approach_end", entry);
  if (big.empty() || big.front().second <= bound) {
    sum.set("approach_phase", "empty");
    sum.criterion("approach_rate", true);
    return;
  }
  double t1 = entry;
  std::size_t count = 0;
  for (const auto& pt : big) count += pt.first <= entry ? 1 : 0;
  if (count < 5) t1 = big[std::min<std::size_t>(4, big.size() - 1)].first;
  const auto fit = try_fit(big, 0.0, t1, sum, "approach");
  if (fit) {
    sum.set("approach_rate", fit->rate);
    sum.set("approach_r2", fit->r_squared);
  }
  sum.criterion("approach_rate", fit && fit->rate < 0.0 && fit->r_squared >= cfg.thresholds.dissipativity_r2);
}

// ---------------------------------------------------------------------------
// spectrum: the assembled operator and its semigroup decay in H^delta

void run_spectrum(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const Grid g = cfg.grid();
  const MediumMatrix d = cfg.medium_matrix();
  auto& sum = ctx.summary();
  sum.set("grid", grid_tag(g));
  ctx.log("assembling operator on " + grid_tag(g));
  const AssembledOperator op = assemble_operator(g, d);

  Table spec = make_table({{"index", "1"}, {"eigenvalue", "1/time"}});
  for (Eigen::Index i = 0; i < op.spectrum.size(); ++i) spec.add({static_cast<double>(i), op.spectrum(i)});
  ctx.emit("spectrum", spec, plot("spectrum of the pressure operator", true));

  const double defect = op.symmetry_defect();
  const double t_max = cfg.spectrum.t_max > 0.0 ? cfg.spectrum.t_max : 2.0 / std::max(op.eigmin(), 1e-12);
  sum.set("symmetry_defect", defect);
  sum.set("eigmin", op.eigmin());
  sum.set("eigmax", op.spectrum(op.spectrum.size() - 1));
  sum.set("t_max", t_max);

  Table decay = make_table({{"delta", "Sobolev order"}, {"fitted_rate", "1/time"}, {"r_squared", "1"}});
  bool negative = true;
  for (double delta : cfg.spectrum.deltas) {
    ctx.log("semigroup decay delta " + format_value(delta));
    const DecayFit fit = semigroup_decay(op, delta, t_max, cfg.spectrum.samples, cfg.spectrum.trials, cfg.run.seed);
    decay.add({delta, fit.rate, fit.r_squared});
    negative = negative && fit.rate < 0.0;
  }
  ctx.emit("decay", decay, plot("fitted semigroup rate", false, {1}));
  sum.criterion("symmetry", defect <= cfg.thresholds.symmetry);
  sum.criterion("eigmin_positive", op.eigmin() > 0.0);
  sum.criterion("decay_rates_negative", negative);
}

// ---------------------------------------------------------------------------
// lipschitz: growth of the E-distance between two nearby solutions

void run_lipschitz(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const Grid g = cfg.grid();
  const Model model = cfg.model();
  const Forcing forcing = make_forcing(cfg, g);
  const SolverConfig sc = cfg.solver_for(g);
  sc.validate(g, model.medium);
  const SineBasis basis(g);
  auto& sum = ctx.summary();
  describe_run(ctx, g, sc);

  const SimState s1 = make_initial(cfg, g, cfg.initial.amplitude, cfg.initial.seed);
  const SimState pert = make_perturbation(cfg, g, cfg.lipschitz.distance, cfg.run.seed + 1);
  SimState s2{s1.u + pert.u, s1.p + pert.p, s1.t};
  ctx.log("running the two trajectories");
  const auto a = run_full(s1, sc, forcing, model, cfg.lipschitz.t_max, cfg.run.snapshot_stride);
  const auto b = run_full(s2, sc, forcing, model, cfg.lipschitz.t_max, cfg.run.snapshot_stride);

  const double d0 = e_norm(pert.u, pert.p, basis);
  Series ratio;
  for (std::size_t k = 0; k < a.size(); ++k)
    ratio.emplace_back(a[k].t, e_norm(a[k].u - b[k].u, a[k].p - b[k].p, basis) / d0);
  sum.set("initial_distance", d0);

  const auto env = try_envelope(ratio, 0.0, cfg.lipschitz.t_max, sum, "envelope");
  Table table = make_table({{"t", "time"}, {"ratio", "1"}, {"envelope", "1"}});
  for (const auto& [t, r] : ratio) table.add({t, r, env ? env->c * std::exp(env->rate * t) : kInf});
  ctx.emit("pairs", table, plot("distance ratio and envelope", true));
  if (env) {
    sum.set("envelope_c", env->c);
    sum.set("envelope_rate", env->rate);
    sum.set("envelope_max_excess", env->max_excess);
  }
  sum.criterion("envelope", env && std::isfinite(env->rate) && std::isfinite(env->c) &&
                                env->max_excess <= cfg.thresholds.envelope_excess);
}

// ---------------------------------------------------------------------------
// split: truncated-system splitting p = q + r, u = v + w

void run_split_scenario(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const Grid g = cfg.grid();
  const MediumMatrix d = cfg.medium_matrix();
  const Forcing forcing = make_forcing(cfg, g);
  SolverConfig sc = cfg.solver;
  sc.dt = cfg.split.dt;
  const SineBasis basis(g);
  auto& sum = ctx.summary();
  describe_run(ctx, g, sc);
  sum.set("scheme", "rk4 (truncated)");
  sum.set("L", cfg.split.shift_l);
  sum.set("bootstrap", cfg.split.bootstrap ? "true" : "false");

  const ScalarField p0 = make_initial(cfg, g, cfg.initial.amplitude, cfg.initial.seed).p;
  ctx.log("running the split");
  const SplitTrajectory tr =
      cfg.split.bootstrap
          ? run_bootstrap_split(p0, forcing, sc, d, cfg.nonlinearity, cfg.split.t_max, cfg.run.snapshot_stride)
          : run_split(p0, forcing, sc, d, cfg.nonlinearity, cfg.split.shift_l, cfg.split.t_max,
                      cfg.run.snapshot_stride);

  const double delta = cfg.split.delta;
  Table table = make_table({{"t", "time"},
                            {"norm_q", "L2 norm"},
                            {"norm_v", "H1 norm"},
                            {"norm_r_hdelta", "H^delta norm"},
                            {"norm_w_h1delta", "H^(1+delta) norm"}});
  Series q;
  double r_check = -1.0, r_sup = 0.0;
  for (std::size_t k = 0; k < tr.times.size(); ++k) {
    const double t = tr.times[k];
    const double nq = norm_l2(tr.qv[k].first);
    const double nr = sobolev_norm(tr.rw[k].first, delta, basis);
    table.add({t, nq, sobolev_norm(tr.qv[k].second, 1.0, basis), nr,
               sobolev_norm(tr.rw[k].second, 1.0 + delta, basis)});
    q.emplace_back(t, nq);
    if (t >= cfg.split.t_check - 1e-9) {
      if (r_check < 0.0) r_check = nr;
      r_sup = std::max(r_sup, nr);
    }
  }
  ctx.emit("split", table, plot("split components", true));

  const double recomb = tr.recombination_error();
  sum.set("recombination_error", recomb);
  const Series q_pos = positive_prefix(q, q.empty() ? 0.0 : 1e-10 * q.front().second);
  const auto fit = try_fit(q_pos, 0.0, cfg.split.t_max, sum, "qv_fit");
  if (fit) {
    sum.set("qv_rate", fit->rate);
    sum.set("qv_r2", fit->r_squared);
  }
  sum.set("r_at_t_check", r_check);
  sum.set("r_sup_after_t_check", r_sup);
  sum.criterion("qv_decay", fit && fit->rate < 0.0);
  sum.criterion("r_bounded", r_check >= 0.0 && r_sup <= cfg.thresholds.split_growth * r_check);
  sum.criterion("recombination", recomb <= cfg.thresholds.recombination);
}

// ---------------------------------------------------------------------------
// expsplit: difference of two solutions = decaying hat part + smoother tilde part

void run_expsplit(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const Grid g = cfg.grid();
  const Model model = cfg.model();
  const Forcing forcing = make_forcing(cfg, g);
  const SolverConfig sc = cfg.solver_for(g);
  if (sc.scheme != Scheme::rk4) throw ConfigError("solver.scheme violates expsplit requires rk4", 0);
  sc.validate(g, model.medium);
  const SineBasis basis(g);
  auto& sum = ctx.summary();
  describe_run(ctx, g, sc);

  const SimState s1 = make_initial(cfg, g, cfg.initial.amplitude, cfg.initial.seed);
  const SimState pert = make_perturbation(cfg, g, cfg.expsplit.distance, cfg.run.seed + 2);
  const SimState s2{s1.u + pert.u, s1.p + pert.p, s1.t};
  ctx.log("running the exponential-attractor split");
  const ExpSplitTrajectory tr = run_exp_split(s1, s2, sc, forcing, model, cfg.expsplit.t_max, cfg.run.snapshot_stride);
  const double d0 = e_norm(pert.u, pert.p, basis);
  sum.set("initial_distance", d0);

  Table table = make_table({{"t", "time"},
                            {"hat_norm", "E norm"},
                            {"tilde_h1", "H1 norm"},
                            {"tilde_e", "E norm"},
                            {"difference_e", "E norm"}});
  Series hat, tilde;
  bool finite = true;
  for (std::size_t k = 0; k < tr.times.size(); ++k) {
    const double t = tr.times[k];
    const double nh = e_norm(tr.hat[k].first, tr.hat[k].second, basis);
    const double nt = sobolev_norm(tr.tilde[k].second, 1.0, basis);
    table.add({t, nh, nt, e_norm(tr.tilde[k].first, tr.tilde[k].second, basis),
               e_norm(tr.difference[k].first, tr.difference[k].second, basis)});
    hat.emplace_back(t, nh);
    finite = finite && std::isfinite(nt);
    if (t > 0.0 && nt > 0.0) tilde.emplace_back(t, nt / d0);
  }
  ctx.emit("expsplit", table, plot("hat and tilde parts", true));

  const auto fit = try_fit(hat, cfg.expsplit.fit_start, cfg.expsplit.t_max, sum, "hat_fit");
  if (fit) {
    sum.set("hat_rate", fit->rate);
    sum.set("hat_r2", fit->r_squared);
  }
  sum.criterion("hat_decay", fit && fit->rate < 0.0 && fit->r_squared >= cfg.thresholds.hat_r2);

  const auto env = try_envelope(tilde, 0.0, cfg.expsplit.t_max, sum, "tilde_envelope");
  if (env) {
    sum.set("tilde_envelope_c", env->c);
    sum.set("tilde_envelope_rate", env->rate);
    sum.set("tilde_envelope_max_excess", env->max_excess);
  }
  sum.criterion("tilde_bounded", finite && env && std::isfinite(env->rate) && std::isfinite(env->c) &&
                                     env->max_excess <= cfg.thresholds.envelope_excess);
  const double recomb = tr.recombination_error();
  sum.set("recombination_error", recomb);
  sum.criterion("recombination", recomb <= cfg.thresholds.recombination);
}

// ---------------------------------------------------------------------------
// smoothing: weighted-in-time sups from rough pressure data on several grids

void run_smoothing(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const Model model = cfg.model();
  auto& sum = ctx.summary();
  sum.set("convective", cfg.convective ? "true" : "false");
  sum.set("band_n", std::to_string(cfg.initial.band_n));

  static const std::vector<std::pair<const char*, const char*>> names = {{kWeightGradU, "w_grad_u"},
                                                                         {kWeightDtU, "w_dt_u"},
                                                                         {kWeightDtP, "w_dt_p"},
                                                                         {kWeightDtU83, "w_dt_u_8_3"}};
  std::vector<Column> cols{{"n", "nodes per axis"}, {"t", "time"}};
  for (const auto& [key, name] : names) cols.push_back({name, std::string(key)});
  Table table = make_table(cols);

  std::vector<std::map<std::string, double>> sups;
  bool finite = true;
  for (int n : cfg.smoothing.grids) {
    const Grid g = Grid::make(cfg.dim, n);
    const Forcing forcing = make_forcing(cfg, g);
    const SolverConfig sc = cfg.solver_for(g);
    sc.validate(g, model.medium);
    ctx.log("smoothing run on " + grid_tag(g));
    const SimState s0 = make_initial(cfg, g, cfg.initial.amplitude, cfg.initial.seed);
    const auto traj = geometric_trajectory(s0, sc, forcing, model, cfg.smoothing.t_max, cfg.smoothing.per_decade);
    const SmoothingReport rep = smoothing_report(traj, forcing, model, cfg.smoothing.t_max);
    for (std::size_t k = 0; k < rep.times.size(); ++k) {
      std::vector<double> row{static_cast<double>(n), rep.times[k]};
      for (const auto& [key, name] : names) row.push_back(rep.series.at(key)[k]);
      table.add(row);
    }
    for (const auto& [key, name] : names) {
      const double v = rep.weighted_sups.at(key);
      sum.set("sup." + std::string(name) + "." + grid_tag(g), v);
      finite = finite && std::isfinite(v);
    }
    sups.push_back(rep.weighted_sups);
  }
  ctx.emit("smoothing", table, plot("weighted quantities", true, {3}, 1));

  double lo = kInf, hi = 0.0;
  for (const auto& s : sups) {
    lo = std::min(lo, s.at(kWeightDtU));
    hi = std::max(hi, s.at(kWeightDtU));
  }
  const double spread = lo > 0.0 ? hi / lo : (hi == 0.0 ? 1.0 : kInf);
  sum.set("grid_spread.w_dt_u", spread);
  sum.criterion("weighted_sups_finite", finite);
  sum.criterion("grid_agreement", spread <= cfg.thresholds.smoothing_factor);
  if (cfg.convective) {
    bool f83 = true;
    for (const auto& s : sups) f83 = f83 && std::isfinite(s.at(kWeightDtU83));
    sum.criterion("convective_t83_finite", f83);
  }
}

// ---------------------------------------------------------------------------
// attractor: ensemble diameter, distance to the E1 ball and box counts

void run_attractor(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto& ac = cfg.attractor;
  const Grid g = cfg.grid();
  const Model model = cfg.model();
  const Forcing forcing = make_forcing(cfg, g);
  const SolverConfig sc = cfg.solver_for(g);
  sc.validate(g, model.medium);
  auto& sum = ctx.summary();
  describe_run(ctx, g, sc);

  std::vector<SimState> initial;
  for (int i = 0; i < ac.members; ++i) {
    const double a = ac.amp_min * std::pow(ac.amp_max / ac.amp_min, static_cast<double>(i) / (ac.members - 1));
    initial.push_back(make_initial(cfg, g, a, cfg.initial.seed + static_cast<std::uint64_t>(i)));
  }
  EnsembleOptions eo;
  eo.record_stride = stride_for(ac.record_every, sc.dt);
  eo.reference = 0;
  eo.threads = ctx.opts.threads.value_or(cfg.run.threads);
  sum.set("members", std::to_string(ac.members));
  sum.set("threads", std::to_string(eo.threads));
  ctx.log("evolving " + std::to_string(ac.members) + " members to t = " + format_value(ac.t_max));
  const AttractorReport rep = ensemble_study(initial, sc, forcing, model, ac.t_max, eo);
  sum.set("r_ball", rep.r_ball);

  Table table = make_table({{"t", "time"}, {"diameter", "E norm"}, {"dist_to_ball", "E norm"}});
  for (std::size_t k = 0; k < rep.diam_series.size(); ++k)
    table.add({rep.diam_series[k].first, rep.diam_series[k].second, rep.dist_to_ball_series[k].second});
  ctx.emit("attractor", table, plot("ensemble diameter and distance to the E1 ball", true));

  Table boxes = make_table({{"box_size", "normalized"}, {"count", "boxes"}});
  for (const auto& [size, count] : rep.box_counts) boxes.add({size, static_cast<double>(count)});
  ctx.emit("boxcount", boxes, plot("box counts", true));
  if (rep.box_counts.size() >= 2) {
    // Least-squares slope of log count against log(1/size).
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double m = static_cast<double>(rep.box_counts.size());
    for (const auto& [size, count] : rep.box_counts) {
      const double x = -std::log(size), y = std::log(static_cast<double>(std::max<std::size_t>(count, 1)));
      sx += x, sy += y, sxx += x * x, sxy += x * y;
    }
    sum.set("box_dimension", (m * sxy - sx * sy) / (m * sxx - sx * sx));
  }

  Table norms = make_table({{"t", "time"}});
  for (int i = 0; i < ac.members; ++i) norms.columns.push_back({"e_norm_m" + std::to_string(i), "E norm"});
  for (std::size_t k = 0; k < rep.e_norm_series.front().size(); ++k) {
    std::vector<double> row{rep.e_norm_series.front()[k].first};
    for (const auto& s : rep.e_norm_series) row.push_back(s[k].second);
    norms.add(row);
  }
  ctx.emit("ensemble_norms", norms, plot("member E norms", true));

  const Series& dist = rep.dist_to_ball_series;
  double d_ref = -1.0, t_ref = ac.t_ref;
  for (const auto& [t, v] : dist)
    if (t >= ac.t_ref - 1e-9) {
      d_ref = v;
      t_ref = t;
      break;
    }
  const double d_end = dist.back().second;
  sum.set("dist_at_t_ref", d_ref);
  sum.set("dist_at_t_max", d_end);
  const double ratio = d_ref > 0.0 ? d_end / d_ref : (d_end == 0.0 ? 0.0 : kInf);
  sum.set("dist_ratio", ratio);
  sum.criterion("attraction", d_ref >= 0.0 && ratio <= cfg.thresholds.attraction);

  Series window;
  for (const auto& pt : dist)
    if (pt.first >= t_ref - 1e-9) window.push_back(pt);
  const Series pos = positive_prefix(window, 0.0);
  const auto fit = try_fit(pos, t_ref, ac.t_max, sum, "dist_fit");
  if (fit) {
    sum.set("dist_rate", fit->rate);
    sum.set("dist_r2", fit->r_squared);
    sum.set("dist_fit_end", pos.back().first);
  }
  sum.criterion("dist_rate", fit && fit->rate < 0.0 && fit->r_squared >= cfg.thresholds.attraction_r2);
}

// ---------------------------------------------------------------------------
// audit: discrete energy identity under dt refinement

void run_audit(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const Grid g = cfg.grid();
  const Model model = cfg.model();
  const Forcing forcing = make_forcing(cfg, g);
  const SolverConfig base = cfg.solver_for(g);
  const double eps = resolve_eps(cfg, g);
  auto& sum = ctx.summary();
  describe_run(ctx, g, base);
  sum.set("eps", eps);

  const SimState s0 = make_initial(cfg, g, cfg.initial.amplitude, cfg.initial.seed);
  Table table = make_table({{"level", "1"},
                            {"dt", "time"},
                            {"residual_l1", "energy"},
                            {"ratio", "1"},
                            {"gp_violations", "count"},
                            {"gp_worst", "energy/time"}});
  Table per_step = make_table({{"t", "time"}, {"residual", "energy"}});
  double prev = -1.0;
  bool ordered = true;
  for (int level = 0; level < cfg.audit.levels; ++level) {
    SolverConfig sc = base;
    sc.dt = base.dt / std::pow(2.0, level);
    sc.validate(g, model.medium);
    const auto steps = static_cast<std::size_t>(std::ceil(cfg.audit.t_max / sc.dt));
    AuditOptions ao;
    ao.eps = eps;
    ao.gp_constant = cfg.audit.gp_constant;
    ao.gp_stride = std::max<std::size_t>(1, steps / static_cast<std::size_t>(cfg.audit.gp_samples));
    ctx.log("audit level " + std::to_string(level) + " dt " + format_value(sc.dt));
    EnergyAuditor auditor(forcing, model, ao);
    integrate(s0, sc, forcing, model, cfg.audit.t_max, 1, [&](const SimState& s) { auditor.push(s); });
    const AuditResult& r = auditor.result();
    double ratio = std::numeric_limits<double>::quiet_NaN();
    if (prev >= 0.0) {
      ratio = r.l1 > 0.0 ? prev / r.l1 : (prev == 0.0 ? kInf : kInf);
      ordered = ordered && ratio >= cfg.thresholds.audit_ratio;
      sum.set("ratio_" + std::to_string(level - 1) + "_" + std::to_string(level), ratio);
    }
    table.add({static_cast<double>(level), sc.dt, r.l1, ratio, static_cast<double>(r.gp_violations), r.gp_worst});
    sum.set("residual_l1_level" + std::to_string(level), r.l1);
    sum.set("gp_violations_level" + std::to_string(level), std::to_string(r.gp_violations));
    if (level == 0)
      for (std::size_t k = 0; k < r.times.size(); ++k) per_step.add({r.times[k], std::abs(r.residuals[k])});
    prev = r.l1;
  }
  ctx.emit("audit", table, plot("audit residual L1 norm", true, {2}, 1));
  ctx.emit("audit_residuals", per_step, plot("per-step residual (coarsest dt)", true));
  sum.criterion("audit_order", ordered);
}

// ---------------------------------------------------------------------------
// oracle: rk4 against the dense propagator, and the periodic mode oracle

double periodic_error(const PeriodicGrid& pg, const ModeSolution& init, double dt, double t_final) {
  const PeriodicFields f0 = periodic_fields(init, pg);
  const PeriodicFields num = periodic_rk4(f0, pg, dt, t_final);
  const PeriodicFields exact = periodic_fields(periodic_mode_solution(init, t_final, pg.dim, pg.n), pg);
  double err = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < num.u.size(); ++i) {
    err = std::max(err, std::abs(num.u[i] - exact.u[i]));
    scale = std::max(scale, std::abs(f0.u[i]));
  }
  for (std::size_t i = 0; i < num.p.size(); ++i) {
    err = std::max(err, std::abs(num.p[i] - exact.p[i]));
    scale = std::max(scale, std::abs(f0.p[i]));
  }
  return scale > 0.0 ? err / scale : err;
}

/// The `count` lowest wave vectors up to sign (k ~ -k give the same real field).
std::vector<std::array<int, 3>> lowest_modes(int dim, int count) {
  std::vector<std::array<int, 3>> ks;
  const int r = 3;
  for (int a = -r; a <= r; ++a)
    for (int b = -r; b <= r; ++b)
      for (int c = (dim == 3 ? -r : 0); c <= (dim == 3 ? r : 0); ++c) {
        const std::array<int, 3> k{a, b, c};
        // canonical representative: first nonzero component positive
        int first = a != 0 ? a : (b != 0 ? b : c);
        if (first <= 0) continue;
        ks.push_back(k);
      }
  std::stable_sort(ks.begin(), ks.end(), [](const auto& x, const auto& y) {
    const int nx = x[0] * x[0] + x[1] * x[1] + x[2] * x[2], ny = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
    if (nx != ny) return nx < ny;
    return x > y;
  });
  ks.resize(std::min<std::size_t>(ks.size(), static_cast<std::size_t>(count)));
  return ks;
}

void run_oracle(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto& oc = cfg.oracle;
  const Grid g = Grid::make(cfg.dim, oc.n);
  const MediumMatrix d = cfg.medium_matrix();
  const Model linear{d, NonlinearityParams{}, false};
  const Forcing zero = Forcing::zero(g);
  auto& sum = ctx.summary();
  sum.set("grid", grid_tag(g));
  sum.set("system", "linear (f = 0, g = 0)");
  sum.set("seed", std::to_string(cfg.run.seed));

  ctx.log("building the dense propagator on " + grid_tag(g));
  const DensePropagator prop = build_propagator(g, d);
  sum.set("eigen_condition", prop.eigen_condition());
  sum.set("expm_fallback", prop.uses_fallback() ? "true" : "false");

  Xoshiro256 rng(cfg.run.seed);
  const VectorField u0 = white_noise_vector(g, rng);
  const SimState s0{u0, project_mean_zero(white_noise(g, rng)), 0.0};
  const Eigen::VectorXd x0 = prop.pack(s0.u, s0.p);

  std::vector<double> dts = oc.dts;
  std::sort(dts.begin(), dts.end(), std::greater<>());
  Table table = make_table({{"dt", "time"}, {"error", "relative"}, {"order", "1"}});
  double prev_err = -1.0, prev_dt = 0.0;
  bool orders_ok = true;
  double finest = kInf;
  for (double dt : dts) {
    SolverConfig sc = cfg.solver;
    sc.scheme = Scheme::rk4;
    sc.dt = dt;
    sc.validate(g, d);
    ctx.log("oracle dt " + format_value(dt));
    double err = 0.0;
    integrate(s0, sc, zero, linear, oc.t_final, 1, [&](const SimState& s) {
      const double k = s.t / oc.sample_every;
      const bool sample = s.t > 0.0 && (std::abs(k - std::round(k)) < 1e-6 || s.t >= oc.t_final - 1e-12);
      if (!sample) return;
      const Eigen::VectorXd xe = prop.apply(s.t, x0);
      err = std::max(err, (prop.pack(s.u, s.p) - xe).norm() / x0.norm());
    });
    double order = std::numeric_limits<double>::quiet_NaN();
    if (prev_err >= 0.0) {
      order = std::log(prev_err / err) / std::log(prev_dt / dt);
      orders_ok = orders_ok && order >= cfg.thresholds.oracle_order_min && order <= cfg.thresholds.oracle_order_max;
    }
    table.add({dt, err, order});
    sum.set("error_dt_" + format_value(dt), err);
    prev_err = err;
    prev_dt = dt;
    finest = err;
  }
  ctx.emit("oracle", table, plot("rk4 error against the dense propagator", true, {1}));
  sum.set("error_finest", finest);
  sum.criterion("oracle_error", finest <= cfg.thresholds.oracle_error);
  sum.criterion("oracle_order", orders_ok);

  if (!oc.periodic) return;
  ctx.log("periodic mode oracle");
  const PeriodicGrid pg{cfg.dim, 16};
  Table ptable = make_table({{"k1", "1"}, {"k2", "1"}, {"k3", "1"}, {"error", "relative"}});
  double worst = 0.0;
  Xoshiro256 prng(cfg.run.seed + 3);
  for (const auto& k : lowest_modes(cfg.dim, 5)) {
    ModeSolution m;
    m.k = k;
    m.phi = {prng.normal(), prng.normal()};
    m.p = {prng.normal(), prng.normal()};
    // A solenoidal amplitude orthogonal to the gradient symbol.
    const auto s = periodic_gradient_symbol(k, cfg.dim, pg.n);
    m.sol = {std::complex<double>(-s[1], 0.0), std::complex<double>(s[0], 0.0), 0.0};
    const double err = periodic_error(pg, m, 1e-3, 0.5);
    ptable.add({double(k[0]), double(k[1]), double(k[2]), err});
    worst = std::max(worst, err);
  }
  ctx.emit("periodic", ptable, plot("periodic mode error", true, {3}));
  sum.set("periodic_error", worst);
  sum.criterion("periodic_oracle", worst <= cfg.thresholds.periodic_error);
}

const std::map<std::string, std::function<void(Context&)>>& dispatch() {
  static const std::map<std::string, std::function<void(Context&)>> table = {
      {"simulate", run_simulate},     {"spectrum", run_spectrum},   {"lipschitz", run_lipschitz},
      {"split", run_split_scenario},  {"expsplit", run_expsplit},   {"smoothing", run_smoothing},
      {"attractor", run_attractor},   {"audit", run_audit},         {"oracle", run_oracle}};
  return table;
}

}  // namespace

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = {"simulate", "spectrum", "lipschitz", "split", "expsplit",
                                                 "smoothing", "attractor", "audit", "oracle"};
  return names;
}

Forcing make_forcing(const ScenarioConfig& config, const Grid& g) {
  const auto& fc = config.forcing;
  switch (fc.kind) {
    case ForcingKind::zero:
      return Forcing::zero(g);
    case ForcingKind::fixed_random: {
      VectorField v = smooth_random_vector(g, fc.seed, fc.kmax);
      const double nrm = norm_l2(v);
      if (nrm > 0.0) v *= fc.amplitude / nrm;
      return Forcing::constant(std::move(v));
    }
    case ForcingKind::file: {
      fs::path path(fc.path);
      if (path.is_relative() && !config.base_dir.empty()) path = fs::path(config.base_dir) / path;
      std::ifstream in(path);
      if (!in) throw ConfigError("forcing.path violates readable file ('" + path.string() + "')", 0);
      std::vector<double> values;
      for (std::string line; std::getline(in, line);) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ls(line);
        std::string tok;
        while (ls >> tok) {
          std::size_t used = 0;
          double x = 0.0;
          try {
            x = std::stod(tok, &used);
          } catch (const std::exception&) {
            used = 0;
          }
          if (used != tok.size() || !std::isfinite(x))
            throw ConfigError("forcing file '" + path.string() + "': not a finite number: '" + tok + "'", 0);
          values.push_back(x);
        }
      }
      const std::size_t want = g.size() * static_cast<std::size_t>(g.dim);
      if (values.size() != want)
        throw ConfigError("forcing file violates d*n^d = " + std::to_string(want) + " values (found " +
                              std::to_string(values.size()) + ")",
                          0);
      return Forcing::constant(VectorField(g, std::move(values)));
    }
  }
  return Forcing::zero(g);
}

SimState make_initial(const ScenarioConfig& config, const Grid& g, double amplitude, std::uint64_t seed) {
  const auto& ic = config.initial;
  SimState s = SimState::zero(g);
  switch (ic.kind) {
    case InitialKind::zero:
      break;
    case InitialKind::smooth_random: {
      // E-norm split equally: ||grad u|| = ||p|| = amplitude / sqrt(2).
      const SineBasis basis(g);
      s.u = smooth_random_vector(g, seed, ic.kmax);
      s.p = project_mean_zero(smooth_random(g, seed ^ 0x9e3779b97f4a7c15ULL, ic.kmax));
      const double nu = sobolev_norm(s.u, 1.0, basis), np = norm_l2(s.p);
      if (nu > 0.0) s.u *= amplitude / (std::sqrt(2.0) * nu);
      if (np > 0.0) s.p *= amplitude / (std::sqrt(2.0) * np);
      break;
    }
    case InitialKind::noise_pressure: {
      s.p = project_mean_zero(band_limited_noise(g, Grid::make(g.dim, ic.band_n), seed));
      s.p *= amplitude;
      break;
    }
  }
  return s;
}

SimState make_perturbation(const ScenarioConfig& config, const Grid& g, double distance, std::uint64_t seed) {
  SimState s = SimState::zero(g);
  s.u = smooth_random_vector(g, seed, config.initial.kmax);
  s.p = project_mean_zero(smooth_random(g, seed ^ 0x9e3779b97f4a7c15ULL, config.initial.kmax));
  const double e = e_norm(s.u, s.p, SineBasis(g));
  s.u *= distance / e;
  s.p *= distance / e;
  return s;
}

double resolve_eps(const ScenarioConfig& config, const Grid& g) {
  if (config.run.eps > 0.0) return config.run.eps;
  return 0.5 * certify_eps(g, config.medium_matrix(), 50, config.run.seed);
}

ScenarioResult run_scenario(const ScenarioConfig& config, const std::string& subcommand, const std::string& out_dir,
                            const RunOptions& options) {
  ScenarioResult result;
  Context ctx{config, out_dir, options, result};
  if (options.seed) {
    ctx.cfg.run.seed = *options.seed;
    ctx.cfg.initial.seed = *options.seed;
  }
  if (options.threads) ctx.cfg.run.threads = *options.threads;
  result.summary.set("subcommand", subcommand);

  auto fail = [&](int code, const std::string& kind, const std::string& msg) {
    result.exit_code = code;
    result.error = msg;
    result.summary.set("error", kind + ": " + msg);
    result.summary.mark_error();
  };
  try {
    const auto it = dispatch().find(subcommand);
    if (it == dispatch().end()) throw ConfigError("unknown subcommand '" + subcommand + "'", 0);
    if (!out_dir.empty()) fs::create_directories(out_dir);
    it->second(ctx);
    result.exit_code = result.summary.all_pass() ? kExitPass : kExitCriterionFail;
  } catch (const ConfigError& e) {
    fail(kExitConfigError, "config", e.what());
  } catch (const std::invalid_argument& e) {
    fail(kExitConfigError, "config", e.what());
  } catch (const BlowUpError& e) {
    fail(kExitRuntimeError, "blow-up", e.what());
  } catch (const ConvergenceError& e) {
    fail(kExitRuntimeError, "non-convergence", e.what());
  } catch (const std::exception& e) {
    fail(kExitRuntimeError, "runtime", e.what());
  }

  const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - ctx.start).count();
  result.summary.set("runtime_s", sec);
  result.summary.set("exit_code", std::to_string(result.exit_code));
  if (!out_dir.empty()) {
    try {
      const std::string path = (fs::path(out_dir) / "summary.txt").string();
      result.summary.write(path);
      result.files.push_back(path);
    } catch (const std::exception& e) {
      if (result.exit_code == kExitPass || result.exit_code == kExitCriterionFail) {
        result.exit_code = kExitRuntimeError;
        result.error = e.what();
        result.summary.mark_error();
      }
    }
  }
  return result;
}

}  // namespace bfflow
