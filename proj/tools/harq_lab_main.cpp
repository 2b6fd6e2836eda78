// harq-lab command line: runs analysis/simulation sweeps from a config file
// and writes the CSV / curve artifacts, solves AMC thresholds, or prints the
// default configuration.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "harqlab/config.hpp"
#include "harqlab/experiment.hpp"

namespace {

harqlab::ExperimentSpec load_spec(const std::string& config_path) {
  if (config_path.empty()) return harqlab::ExperimentSpec{};
  return harqlab::parse_config(config_path);
}

void apply_overrides(harqlab::ExperimentSpec& spec, const std::string& output_dir, const std::string& engines,
                     long long packets, long long seed, double gate) {
  if (!output_dir.empty()) spec.output_dir = output_dir;
  if (!engines.empty()) {
    if (engines == "analysis") {
      spec.engines = harqlab::Engines::analysis;
    } else if (engines == "simulation") {
      spec.engines = harqlab::Engines::simulation;
    } else if (engines == "both") {
      spec.engines = harqlab::Engines::both;
    } else {
      throw harqlab::ConfigError("config error: --engines expects analysis, simulation or both");
    }
  }
  if (packets > 0) spec.scenario.n_packets = packets;
  if (seed >= 0) spec.scenario.seed = static_cast<std::uint64_t>(seed);
  if (gate > 0.0) spec.gate = gate;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"harq-lab: cross-checked analysis and simulation of adaptive-rate HARQ over correlated fading"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_dir;
  std::string engines;
  long long packets = -1;
  long long seed = -1;
  double gate = -1.0;

  CLI::App* run = app.add_subcommand("run", "run the configured experiment and write all artifacts");
  run->add_option("config", config_path, "configuration file (omit for the built-in defaults)");
  run->add_option("--output-dir", output_dir, "override the output directory");
  run->add_option("--engines", engines, "analysis, simulation or both");
  run->add_option("--packets", packets, "override packets per simulated cell");
  run->add_option("--seed", seed, "override the experiment seed");
  run->add_option("--gate", gate, "override the |z| gate for cross-engine agreement");

  CLI::App* thresholds = app.add_subcommand("thresholds", "solve the AMC thresholds over the SNR grid");
  thresholds->add_option("config", config_path, "configuration file (omit for the built-in defaults)");
  thresholds->add_option("--output-dir", output_dir, "override the output directory");

  CLI::App* defaults = app.add_subcommand("defaults", "print the default configuration file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (defaults->parsed()) {
      std::cout << harqlab::default_config_text();
      return harqlab::kExitOk;
    }
    harqlab::ExperimentSpec spec = load_spec(config_path);
    apply_overrides(spec, output_dir, engines, packets, seed, gate);
    if (thresholds->parsed()) {
      const std::string path = harqlab::emit_thresholds(spec);
      std::cout << "wrote " << path << "\n";
      return harqlab::kExitOk;
    }
    const harqlab::ExperimentOutcome outcome = harqlab::run_experiment(spec);
    for (const std::string& artifact : outcome.artifacts) {
      std::cout << "wrote " << spec.output_dir << "/" << artifact << "\n";
    }
    if (outcome.compared_cells > 0) {
      std::cout << "cross-engine: " << outcome.compared_cells << " cells, max |z| = " << outcome.max_abs_z
                << ", violations = " << outcome.gate_violations << "\n";
    }
    if (outcome.cells_failed > 0) {
      std::cout << "cells failed: " << outcome.cells_failed << " (see manifest.txt)\n";
    }
    return outcome.exit_code;
  } catch (const harqlab::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return harqlab::kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return harqlab::kExitNumericalFailure;
  }
}
