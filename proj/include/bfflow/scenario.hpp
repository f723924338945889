#pragma once

// Scenario runner behind the CLI: one function per subcommand, each writing
// its CSV tables (and optional SVG plots) plus a `key = value` summary with
// PASS/FAIL per criterion, and mapping every outcome to an exit code.

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "bfflow/config.hpp"
#include "bfflow/dynamics.hpp"
#include "bfflow/output.hpp"

namespace bfflow {

enum ExitCode : int { kExitPass = 0, kExitCriterionFail = 1, kExitRuntimeError = 2, kExitConfigError = 3 };

struct RunOptions {
  bool svg = false;
  std::optional<int> threads;        // overrides run.threads
  std::optional<std::uint64_t> seed; // overrides run.seed and initial.seed
  std::ostream* log = nullptr;       // progress messages
};

struct ScenarioResult {
  int exit_code = kExitPass;
  Summary summary;
  std::vector<std::string> files;  // written paths
  std::string error;               // message for exit codes 2 and 3
};

const std::vector<std::string>& subcommands();

/// Runs `subcommand` on a validated config. Files go to `out_dir` (created
/// when missing); an empty `out_dir` writes nothing. Never throws: config
/// problems map to exit 3, solver failures to 2, failed criteria to 1.
ScenarioResult run_scenario(const ScenarioConfig& config, const std::string& subcommand, const std::string& out_dir,
                            const RunOptions& options = {});

/// The configured forcing on grid g (fixed_random: smooth sine modes scaled to
/// the L2 amplitude; file: whitespace/comma separated values of all d n^d
/// entries, component-major, '#' comments).
Forcing make_forcing(const ScenarioConfig& config, const Grid& g);

/// The configured initial state on grid g with the given amplitude and seed.
SimState make_initial(const ScenarioConfig& config, const Grid& g, double amplitude, std::uint64_t seed);

/// A smooth random state of E-norm `distance` (used to perturb initial data).
SimState make_perturbation(const ScenarioConfig& config, const Grid& g, double distance, std::uint64_t seed);

/// run.eps, or half the sampled certificate eps* when run.eps = 0.
double resolve_eps(const ScenarioConfig& config, const Grid& g);

}  // namespace bfflow
