#include "bfflow/config.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "bfflow/errors.hpp"

namespace bfflow {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Comma- and/or whitespace-separated tokens.
std::vector<std::string> tokens(const std::string& value) {
  std::string s = value;
  for (char& c : s)
    if (c == ',') c = ' ';
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string t; in >> t;) out.push_back(t);
  return out;
}

double to_double(const std::string& v, int line) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got '" + v + "'", line);
  }
  if (used != v.size() || !std::isfinite(x)) throw ConfigError("expected a finite number, got '" + v + "'", line);
  return x;
}

long long to_integer(const std::string& v, int line) {
  std::size_t used = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("expected an integer, got '" + v + "'", line);
  }
  if (used != v.size()) throw ConfigError("expected an integer, got '" + v + "'", line);
  return x;
}

std::uint64_t to_u64(const std::string& v, int line) {
  if (v.empty() || v[0] == '-') throw ConfigError("expected a nonnegative integer, got '" + v + "'", line);
  std::size_t used = 0;
  std::uint64_t x = 0;
  try {
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("expected a nonnegative integer, got '" + v + "'", line);
  }
  if (used != v.size()) throw ConfigError("expected a nonnegative integer, got '" + v + "'", line);
  return x;
}

bool to_bool(const std::string& v, int line) {
  if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
  if (v == "false" || v == "no" || v == "off" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + v + "'", line);
}

int to_int(const std::string& v, int line) {
  const long long x = to_integer(v, line);
  if (x < -1000000000LL || x > 1000000000LL) throw ConfigError("integer out of range: " + v, line);
  return static_cast<int>(x);
}

std::vector<double> to_doubles(const std::string& v, int line) {
  std::vector<double> out;
  for (const auto& t : tokens(v)) out.push_back(to_double(t, line));
  if (out.empty()) throw ConfigError("expected a list of numbers", line);
  return out;
}

std::vector<int> to_ints(const std::string& v, int line) {
  std::vector<int> out;
  for (const auto& t : tokens(v)) out.push_back(to_int(t, line));
  if (out.empty()) throw ConfigError("expected a list of integers", line);
  return out;
}

using Setter = std::function<void(ScenarioConfig&, const std::string&, int)>;
using SectionTable = std::map<std::string, Setter>;

#define BF_DOUBLE(field) [](ScenarioConfig& c, const std::string& v, int ln) { c.field = to_double(v, ln); }
#define BF_INT(field) [](ScenarioConfig& c, const std::string& v, int ln) { c.field = to_int(v, ln); }
#define BF_U64(field) [](ScenarioConfig& c, const std::string& v, int ln) { c.field = to_u64(v, ln); }
#define BF_BOOL(field) [](ScenarioConfig& c, const std::string& v, int ln) { c.field = to_bool(v, ln); }

const std::map<std::string, SectionTable>& schema() {
  static const std::map<std::string, SectionTable> table = {
      {"grid", {{"dim", BF_INT(dim)}, {"n", BF_INT(n)}}},
      {"medium",
       {{"entries", [](ScenarioConfig& c, const std::string& v, int ln) { c.medium = to_doubles(v, ln); }},
        {"diag",
         [](ScenarioConfig& c, const std::string& v, int ln) {
           const auto d = to_doubles(v, ln);
           c.medium.assign(d.size() * d.size(), 0.0);
           for (std::size_t i = 0; i < d.size(); ++i) c.medium[i * d.size() + i] = d[i];
         }}}},
      {"nonlinearity",
       {{"alpha", BF_DOUBLE(nonlinearity.alpha)},
        {"beta", BF_DOUBLE(nonlinearity.beta)},
        {"gamma", BF_DOUBLE(nonlinearity.gamma)},
        {"l", BF_DOUBLE(nonlinearity.l)},
        {"convective", BF_BOOL(convective)}}},
      {"forcing",
       {{"kind",
         [](ScenarioConfig& c, const std::string& v, int ln) {
           if (v == "zero") c.forcing.kind = ForcingKind::zero;
           else if (v == "fixed_random") c.forcing.kind = ForcingKind::fixed_random;
           else if (v == "file") c.forcing.kind = ForcingKind::file;
           else throw ConfigError("forcing kind must be zero, fixed_random or file, got '" + v + "'", ln);
         }},
        {"seed", BF_U64(forcing.seed)},
        {"amplitude", BF_DOUBLE(forcing.amplitude)},
        {"kmax", BF_INT(forcing.kmax)},
        {"path", [](ScenarioConfig& c, const std::string& v, int) { c.forcing.path = v; }}}},
      {"initial",
       {{"kind",
         [](ScenarioConfig& c, const std::string& v, int ln) {
           if (v == "zero") c.initial.kind = InitialKind::zero;
           else if (v == "smooth_random") c.initial.kind = InitialKind::smooth_random;
           else if (v == "noise_pressure") c.initial.kind = InitialKind::noise_pressure;
           else throw ConfigError("initial kind must be zero, smooth_random or noise_pressure, got '" + v + "'", ln);
         }},
        {"seed", BF_U64(initial.seed)},
        {"amplitude", BF_DOUBLE(initial.amplitude)},
        {"kmax", BF_INT(initial.kmax)},
        {"band_n", BF_INT(initial.band_n)}}},
      {"solver",
       {{"dt",
         [](ScenarioConfig& c, const std::string& v, int ln) {
           if (v == "auto") {
             c.dt_auto = true;
           } else {
             c.dt_auto = false;
             c.solver.dt = to_double(v, ln);
           }
         }},
        {"scheme",
         [](ScenarioConfig& c, const std::string& v, int ln) {
           if (v == "rk4") c.solver.scheme = Scheme::rk4;
           else if (v == "semi_implicit") c.solver.scheme = Scheme::semi_implicit;
           else throw ConfigError("scheme must be rk4 or semi_implicit, got '" + v + "'", ln);
         }},
        {"newton_tol", BF_DOUBLE(solver.newton_tol)},
        {"newton_max", BF_INT(solver.newton_max)},
        {"cg_tol", BF_DOUBLE(solver.cg_tol)},
        {"cfl_safety", BF_DOUBLE(solver.cfl_safety)}}},
      {"run",
       {{"t_max", BF_DOUBLE(run.t_max)},
        {"snapshot_stride",
         [](ScenarioConfig& c, const std::string& v, int ln) {
           c.run.snapshot_stride = static_cast<std::size_t>(to_u64(v, ln));
         }},
        {"eps", BF_DOUBLE(run.eps)},
        {"seed", BF_U64(run.seed)},
        {"threads", BF_INT(run.threads)}}},
      {"simulate",
       {{"amplitudes", [](ScenarioConfig& c, const std::string& v, int ln) { c.simulate.amplitudes = to_doubles(v, ln); }},
        {"t_enter", BF_DOUBLE(simulate.t_enter)},
        {"ball_factor", BF_DOUBLE(simulate.ball_factor)}}},
      {"spectrum",
       {{"deltas", [](ScenarioConfig& c, const std::string& v, int ln) { c.spectrum.deltas = to_doubles(v, ln); }},
        {"t_max", BF_DOUBLE(spectrum.t_max)},
        {"samples", BF_INT(spectrum.samples)},
        {"trials", BF_INT(spectrum.trials)}}},
      {"lipschitz", {{"distance", BF_DOUBLE(lipschitz.distance)}, {"t_max", BF_DOUBLE(lipschitz.t_max)}}},
      {"split",
       {{"L", BF_DOUBLE(split.shift_l)},
        {"delta", BF_DOUBLE(split.delta)},
        {"dt", BF_DOUBLE(split.dt)},
        {"t_check", BF_DOUBLE(split.t_check)},
        {"t_max", BF_DOUBLE(split.t_max)},
        {"bootstrap", BF_BOOL(split.bootstrap)}}},
      {"expsplit",
       {{"distance", BF_DOUBLE(expsplit.distance)},
        {"t_max", BF_DOUBLE(expsplit.t_max)},
        {"fit_start", BF_DOUBLE(expsplit.fit_start)}}},
      {"smoothing",
       {{"grids", [](ScenarioConfig& c, const std::string& v, int ln) { c.smoothing.grids = to_ints(v, ln); }},
        {"t_max", BF_DOUBLE(smoothing.t_max)},
        {"per_decade", BF_INT(smoothing.per_decade)}}},
      {"attractor",
       {{"members", BF_INT(attractor.members)},
        {"amp_min", BF_DOUBLE(attractor.amp_min)},
        {"amp_max", BF_DOUBLE(attractor.amp_max)},
        {"t_max", BF_DOUBLE(attractor.t_max)},
        {"t_ref", BF_DOUBLE(attractor.t_ref)},
        {"record_every", BF_DOUBLE(attractor.record_every)}}},
      {"audit",
       {{"levels", BF_INT(audit.levels)},
        {"t_max", BF_DOUBLE(audit.t_max)},
        {"gp_constant", BF_DOUBLE(audit.gp_constant)},
        {"gp_samples", BF_INT(audit.gp_samples)}}},
      {"oracle",
       {{"n", BF_INT(oracle.n)},
        {"dts", [](ScenarioConfig& c, const std::string& v, int ln) { c.oracle.dts = to_doubles(v, ln); }},
        {"t_final", BF_DOUBLE(oracle.t_final)},
        {"sample_every", BF_DOUBLE(oracle.sample_every)},
        {"periodic", BF_BOOL(oracle.periodic)}}},
      {"thresholds",
       {{"oracle_error", BF_DOUBLE(thresholds.oracle_error)},
        {"oracle_order_min", BF_DOUBLE(thresholds.oracle_order_min)},
        {"oracle_order_max", BF_DOUBLE(thresholds.oracle_order_max)},
        {"periodic_error", BF_DOUBLE(thresholds.periodic_error)},
        {"symmetry", BF_DOUBLE(thresholds.symmetry)},
        {"audit_ratio", BF_DOUBLE(thresholds.audit_ratio)},
        {"dissipativity_r2", BF_DOUBLE(thresholds.dissipativity_r2)},
        {"envelope_excess", BF_DOUBLE(thresholds.envelope_excess)},
        {"hat_r2", BF_DOUBLE(thresholds.hat_r2)},
        {"split_growth", BF_DOUBLE(thresholds.split_growth)},
        {"recombination", BF_DOUBLE(thresholds.recombination)},
        {"smoothing_factor", BF_DOUBLE(thresholds.smoothing_factor)},
        {"attraction", BF_DOUBLE(thresholds.attraction)},
        {"attraction_r2", BF_DOUBLE(thresholds.attraction_r2)},
        {"mean_drift", BF_DOUBLE(thresholds.mean_drift)}}},
  };
  return table;
}

#undef BF_DOUBLE
#undef BF_INT
#undef BF_U64
#undef BF_BOOL

/// Lines on which "section.key" was set, so semantic errors can point at them.
using LineMap = std::map<std::string, int>;

struct Checker {
  const LineMap& lines;
  int line_of(const std::string& key) const {
    const auto it = lines.find(key);
    return it == lines.end() ? 0 : it->second;
  }
  void require(bool ok, const std::string& key, const std::string& invariant) const {
    if (!ok) throw ConfigError(key + " violates " + invariant, line_of(key));
  }
};

void validate(ScenarioConfig& c, const LineMap& lines) {
  const Checker ck{lines};
  ck.require(c.dim == 2 || c.dim == 3, "grid.dim", "dim in {2,3}");
  ck.require(c.n >= 4 && c.n % 2 == 0, "grid.n", "n even and n >= 4");

  const std::string medium_key = lines.count("medium.entries") ? "medium.entries" : "medium.diag";
  if (!c.medium.empty()) {
    ck.require(c.medium.size() == static_cast<std::size_t>(c.dim * c.dim), medium_key,
               "medium has dim*dim entries (dim = " + std::to_string(c.dim) + ")");
    try {
      (void)MediumMatrix::make(c.dim, c.medium);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(medium_key + " violates D symmetric positive definite (" + e.what() + ")",
                        ck.line_of(medium_key));
    }
  }

  const auto& nl = c.nonlinearity;
  ck.require(nl.l > 0.0 && nl.l <= 2.0, "nonlinearity.l", "l in (0,2]");
  ck.require(nl.beta >= 0.0, "nonlinearity.beta", "beta >= 0");
  ck.require(nl.gamma >= 0.0, "nonlinearity.gamma", "gamma >= 0");
  ck.require(!(nl.l == 0.5 && nl.beta + nl.gamma <= 0.0 && nl.alpha < 0.0), "nonlinearity.gamma",
             "beta + gamma > 0 when l = 1/2 and alpha < 0");

  ck.require(c.forcing.amplitude >= 0.0, "forcing.amplitude", "amplitude >= 0");
  ck.require(c.forcing.kmax >= 1, "forcing.kmax", "kmax >= 1");
  ck.require(c.forcing.kind != ForcingKind::file || !c.forcing.path.empty(), "forcing.path",
             "path set when kind = file");

  ck.require(c.initial.amplitude >= 0.0, "initial.amplitude", "amplitude >= 0");
  ck.require(c.initial.kmax >= 1, "initial.kmax", "kmax >= 1");
  ck.require(c.initial.band_n >= 4 && c.initial.band_n % 2 == 0, "initial.band_n", "band_n even and >= 4");
  ck.require(c.initial.kind != InitialKind::noise_pressure || c.initial.band_n <= c.n, "initial.band_n",
             "band_n <= grid.n");

  ck.require(c.solver.dt > 0.0, "solver.dt", "dt > 0");
  ck.require(c.solver.cfl_safety > 0.0 && c.solver.cfl_safety <= 1.0, "solver.cfl_safety", "cfl_safety in (0,1]");
  ck.require(c.solver.newton_tol > 0.0, "solver.newton_tol", "newton_tol > 0");
  ck.require(c.solver.newton_max >= 1, "solver.newton_max", "newton_max >= 1");
  ck.require(c.solver.cg_tol > 0.0, "solver.cg_tol", "cg_tol > 0");
  if (!c.dt_auto && c.solver.scheme == Scheme::rk4) {
    const double limit = SolverConfig::max_rk4_dt(c.grid(), c.medium_matrix(), c.solver.cfl_safety);
    ck.require(c.solver.dt <= limit, "solver.dt",
               "rk4 CFL dt <= cfl_safety*min(h^2/(2d), h/sqrt(eigmax D)) = " + std::to_string(limit));
  }

  ck.require(c.run.t_max > 0.0, "run.t_max", "t_max > 0");
  ck.require(c.run.snapshot_stride >= 1, "run.snapshot_stride", "snapshot_stride >= 1");
  ck.require(c.run.eps >= 0.0, "run.eps", "eps >= 0");
  ck.require(c.run.threads >= 1, "run.threads", "threads >= 1");

  ck.require(!c.simulate.amplitudes.empty(), "simulate.amplitudes", "at least one amplitude");
  for (double a : c.simulate.amplitudes) ck.require(a >= 0.0, "simulate.amplitudes", "amplitudes >= 0");
  ck.require(c.simulate.t_enter >= 0.0, "simulate.t_enter", "t_enter >= 0");
  ck.require(c.simulate.ball_factor >= 1.0, "simulate.ball_factor", "ball_factor >= 1");

  for (double d : c.spectrum.deltas) ck.require(d >= 0.0 && d <= 1.0, "spectrum.deltas", "delta in [0,1]");
  ck.require(c.spectrum.t_max >= 0.0, "spectrum.t_max", "t_max >= 0");
  ck.require(c.spectrum.samples >= 5, "spectrum.samples", "samples >= 5");
  ck.require(c.spectrum.trials >= 1, "spectrum.trials", "trials >= 1");

  ck.require(c.lipschitz.distance > 0.0, "lipschitz.distance", "distance > 0");
  ck.require(c.lipschitz.t_max > 0.0, "lipschitz.t_max", "t_max > 0");

  ck.require(c.split.shift_l >= 0.0, "split.L", "L >= 0");
  ck.require(c.split.delta >= 0.0 && c.split.delta <= 1.0, "split.delta", "delta in [0,1]");
  ck.require(c.split.dt > 0.0, "split.dt", "dt > 0");
  ck.require(c.split.t_check > 0.0 && c.split.t_check < c.split.t_max, "split.t_check", "0 < t_check < t_max");

  ck.require(c.expsplit.distance > 0.0, "expsplit.distance", "distance > 0");
  ck.require(c.expsplit.t_max > 0.0, "expsplit.t_max", "t_max > 0");
  ck.require(c.expsplit.fit_start >= 0.0 && c.expsplit.fit_start < c.expsplit.t_max, "expsplit.fit_start",
             "0 <= fit_start < t_max");

  ck.require(!c.smoothing.grids.empty(), "smoothing.grids", "at least one grid");
  for (int n : c.smoothing.grids)
    ck.require(n >= c.initial.band_n && n % 2 == 0, "smoothing.grids", "grids even and >= initial.band_n");
  ck.require(c.smoothing.t_max > 0.0, "smoothing.t_max", "t_max > 0");
  ck.require(c.smoothing.per_decade >= 1, "smoothing.per_decade", "per_decade >= 1");

  ck.require(c.attractor.members >= 2, "attractor.members", "members >= 2");
  ck.require(c.attractor.amp_min > 0.0, "attractor.amp_min", "amp_min > 0");
  ck.require(c.attractor.amp_max >= c.attractor.amp_min, "attractor.amp_max", "amp_max >= amp_min");
  ck.require(c.attractor.t_ref > 0.0 && c.attractor.t_ref < c.attractor.t_max, "attractor.t_ref",
             "0 < t_ref < t_max");
  ck.require(c.attractor.record_every > 0.0, "attractor.record_every", "record_every > 0");

  ck.require(c.audit.levels >= 2, "audit.levels", "levels >= 2");
  ck.require(c.audit.t_max > 0.0, "audit.t_max", "t_max > 0");
  ck.require(c.audit.gp_constant > 0.0, "audit.gp_constant", "gp_constant > 0");
  ck.require(c.audit.gp_samples >= 1, "audit.gp_samples", "gp_samples >= 1");

  ck.require(c.oracle.n >= 4 && c.oracle.n <= 8 && c.oracle.n % 2 == 0, "oracle.n", "n even in [4,8]");
  ck.require(c.oracle.dts.size() >= 2, "oracle.dts", "at least two dt levels");
  for (double dt : c.oracle.dts) ck.require(dt > 0.0, "oracle.dts", "dt > 0");
  ck.require(c.oracle.t_final > 0.0, "oracle.t_final", "t_final > 0");
  ck.require(c.oracle.sample_every > 0.0, "oracle.sample_every", "sample_every > 0");
  for (double dt : c.oracle.dts) {
    const double k = c.oracle.sample_every / dt;
    ck.require(std::abs(k - std::round(k)) < 1e-6 * k, "oracle.sample_every", "sample_every a multiple of every dt");
  }
}

}  // namespace

MediumMatrix ScenarioConfig::medium_matrix() const {
  return medium.empty() ? MediumMatrix::identity(dim) : MediumMatrix::make(dim, medium);
}

SolverConfig ScenarioConfig::solver_for(const Grid& g) const {
  SolverConfig s = solver;
  if (dt_auto) s.dt = SolverConfig::max_rk4_dt(g, medium_matrix(), solver.cfl_safety);
  return s;
}

ScenarioConfig parse_config(const std::string& text) {
  ScenarioConfig c;
  LineMap lines;
  const auto& table = schema();
  const SectionTable* section = nullptr;
  std::string section_name;

  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("unterminated section header", line_no);
      section_name = trim(line.substr(1, line.size() - 2));
      const auto it = table.find(section_name);
      if (it == table.end()) throw ConfigError("unknown section [" + section_name + "]", line_no);
      section = &it->second;
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value'", line_no);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("missing key before '='", line_no);
    if (section == nullptr) throw ConfigError("key '" + key + "' outside of any [section]", line_no);
    const auto kt = section->find(key);
    if (kt == section->end()) throw ConfigError("unknown key '" + key + "' in [" + section_name + "]", line_no);
    if (value.empty()) throw ConfigError("missing value for '" + key + "'", line_no);
    const std::string full = section_name + "." + key;
    if (lines.count(full)) throw ConfigError("duplicate key '" + key + "' in [" + section_name + "]", line_no);
    kt->second(c, value, line_no);
    lines[full] = line_no;
  }

  validate(c, lines);
  return c;
}

ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'", 0);
  std::ostringstream buf;
  buf << in.rdbuf();
  ScenarioConfig c = parse_config(buf.str());
  c.base_dir = std::filesystem::absolute(path).parent_path().string();
  return c;
}

}  // namespace bfflow
