// bfflow <subcommand> --config <path> [--out <dir>] [--svg] [--threads N] [--seed N]
//
// Exit codes: 0 all criteria pass, 1 a criterion failed, 2 runtime error
// (blow-up, non-convergence, I/O), 3 configuration or usage error.

#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <string>

#include "bfflow/config.hpp"
#include "bfflow/errors.hpp"
#include "bfflow/scenario.hpp"

int main(int argc, char** argv) {
  CLI::App app{"bfflow: numerical lab for the slightly compressible Brinkman-Forchheimer system"};
  app.require_subcommand(1, 1);

  std::string config_path, out_dir = ".";
  bool svg = false, quiet = false;
  int threads = 0;
  std::uint64_t seed = 0;

  for (const auto& name : bfflow::subcommands()) {
    CLI::App* sub = app.add_subcommand(name, "run the " + name + " scenario");
    sub->add_option("--config", config_path, "scenario configuration file")->required();
    sub->add_option("--out", out_dir, "output directory (created if missing)");
    sub->add_flag("--svg", svg, "also write an SVG line plot per CSV");
    sub->add_option("--threads", threads, "worker threads for ensembles (overrides run.threads)")
        ->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "overrides run.seed and initial.seed");
    sub->add_flag("--quiet", quiet, "suppress progress messages");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return bfflow::kExitConfigError;
  }

  const std::string subcommand = app.get_subcommands().front()->get_name();
  const CLI::App* sub = app.get_subcommands().front();

  bfflow::ScenarioConfig config;
  try {
    config = bfflow::load_config(config_path);
  } catch (const bfflow::ConfigError& e) {
    std::cerr << "config error: " << config_path << ": " << e.what() << "\n";
    return bfflow::kExitConfigError;
  }

  bfflow::RunOptions options;
  options.svg = svg;
  if (sub->count("--threads") > 0) options.threads = threads;
  if (sub->count("--seed") > 0) options.seed = seed;
  if (!quiet) options.log = &std::cerr;

  const bfflow::ScenarioResult result = bfflow::run_scenario(config, subcommand, out_dir, options);
  std::cout << result.summary.str();
  if (!result.error.empty()) std::cerr << "error: " << result.error << "\n";
  return result.exit_code;
}
