#pragma once

// Scenario configuration: an INI-style text format ([section] headers,
// `key = value` pairs, '#' comments, case-sensitive keys). Unknown sections
// or keys are errors; every physical invariant is re-checked after parsing.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bfflow/dynamics.hpp"
#include "bfflow/grid.hpp"
#include "bfflow/physics.hpp"

namespace bfflow {

enum class ForcingKind { zero, fixed_random, file };
enum class InitialKind { zero, smooth_random, noise_pressure };

struct ForcingConfig {
  ForcingKind kind = ForcingKind::zero;
  std::uint64_t seed = 1;
  double amplitude = 1.0;  // L2 norm of g
  int kmax = 4;            // sine modes per axis of the smooth random field
  std::string path;        // kind = file
};

struct InitialConfig {
  InitialKind kind = InitialKind::smooth_random;
  std::uint64_t seed = 2;
  double amplitude = 1.0;  // E-norm (smooth_random) or noise scale (noise_pressure)
  int kmax = 4;
  int band_n = 8;          // noise_pressure: white noise on the sine modes of a band_n^d grid
};

struct RunConfig {
  double t_max = 1.0;
  std::size_t snapshot_stride = 10;
  double eps = 0.0;        // 0: eps = eps*/2 with eps* certified by sampling
  std::uint64_t seed = 1;  // sampling seed (eps certificate, random test data)
  int threads = 1;
};

struct SimulateConfig {
  std::vector<double> amplitudes{1.0};  // initial E-norms of the members
  double t_enter = 20.0;                // common ball must hold from here to t_max
  double ball_factor = 2.0;             // bound = factor * final-quarter sup of the smallest member
};

struct SpectrumConfig {
  std::vector<double> deltas{0.0, 0.25, 0.5, 0.75, 1.0};
  double t_max = 0.0;  // 0: 2 / eigmin
  int samples = 40;
  int trials = 10;
};

struct LipschitzConfig {
  double distance = 1e-3;  // E-distance of the two initial states
  double t_max = 2.0;
};

struct SplitConfig {
  double shift_l = 1.0;
  double delta = 0.25;
  double dt = 0.05;
  double t_check = 10.0;
  double t_max = 50.0;
  bool bootstrap = false;
};

struct ExpSplitConfig {
  double distance = 1e-2;
  double t_max = 2.0;
  double fit_start = 0.0;
};

struct SmoothingConfig {
  std::vector<int> grids{16, 32};
  double t_max = 1.0;
  int per_decade = 20;
};

struct AttractorConfig {
  int members = 16;
  double amp_min = 0.1;
  double amp_max = 10.0;
  double t_max = 50.0;
  double t_ref = 1.0;
  double record_every = 0.25;
};

struct AuditConfig {
  int levels = 3;
  double t_max = 1.0;
  double gp_constant = 1.0;
  int gp_samples = 20;
};

struct OracleConfig {
  int n = 8;
  std::vector<double> dts{8e-4, 4e-4, 2e-4, 1e-4};
  double t_final = 0.5;
  double sample_every = 8e-4;
  bool periodic = true;  // also run the periodic mode oracle
};

/// PASS/FAIL gates; defaults mirror the acceptance criteria.
struct Thresholds {
  double oracle_error = 1e-6;
  double oracle_order_min = 3.7;
  double oracle_order_max = 4.3;
  double periodic_error = 1e-8;
  double symmetry = 1e-12;
  double audit_ratio = 8.0;
  double dissipativity_r2 = 0.9;
  double envelope_excess = 1.05;
  double hat_r2 = 0.9;
  double split_growth = 10.0;
  double recombination = 1e-6;
  double smoothing_factor = 2.0;
  double attraction = 1e-3;
  double attraction_r2 = 0.8;
  double mean_drift = 1e-12;  // |mean p| per unit time
};

struct ScenarioConfig {
  int dim = 2;
  int n = 16;
  std::vector<double> medium;  // row-major d x d; empty = identity
  NonlinearityParams nonlinearity;
  bool convective = false;
  ForcingConfig forcing;
  InitialConfig initial;
  SolverConfig solver;
  bool dt_auto = true;  // dt = cfl_safety * rk4 limit
  RunConfig run;
  SimulateConfig simulate;
  SpectrumConfig spectrum;
  LipschitzConfig lipschitz;
  SplitConfig split;
  ExpSplitConfig expsplit;
  SmoothingConfig smoothing;
  AttractorConfig attractor;
  AuditConfig audit;
  OracleConfig oracle;
  Thresholds thresholds;
  std::string base_dir;  // directory of the config file (relative forcing paths)

  Grid grid() const { return Grid::make(dim, n); }
  MediumMatrix medium_matrix() const;
  Model model() const { return Model{medium_matrix(), nonlinearity, convective}; }
  /// Solver settings for grid g: dt resolved when dt = auto.
  SolverConfig solver_for(const Grid& g) const;
};

/// Parses and validates. Throws ConfigError with the offending line number
/// for syntax errors and unknown keys, and naming the violated invariant for
/// semantic errors.
ScenarioConfig parse_config(const std::string& text);
/// Reads a file and parses it; relative forcing file paths resolve against its directory.
ScenarioConfig load_config(const std::string& path);

}  // namespace bfflow
