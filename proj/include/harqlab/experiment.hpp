#pragma once
// Experiment orchestration: runs the analysis and simulation engines over
// the configured (SNR, correlation, topology) grid, cross-checks them with
// z-scores, and writes the CSV / curve / manifest artifacts. Reruns of the
// same configuration produce byte-identical CSV and .dat files; only the
// manifest carries a timestamp.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "harqlab/analysis.hpp"
#include "harqlab/config.hpp"
#include "harqlab/simulator.hpp"

namespace harqlab {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int {
  kExitOk = 0,
  kExitConfigError = 1,
  kExitNumericalFailure = 2,
  kExitGateFailure = 3,
};

namespace detail {

inline std::string fmt(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", value);
  return buf;
}

template <typename Fn>
void parallel_for(std::size_t count, const Fn& fn) {
  const unsigned workers =
      std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(), static_cast<unsigned>(count)));
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
}

}  // namespace detail

/// Builds the three link models for one grid point. The partition and the
/// pair law follow the source-destination link; relay links carry their own
/// mean SNR and reuse the partition for mode semantics.
struct CellLinks {
  LinkModel sd;
  LinkModel sr;
  LinkModel rd;
};

inline CellLinks build_cell_links(const ScenarioConfig& scenario, double snr_db, const CorrelationSetting& corr) {
  ModeTable table = scenario.modes;
  table.per_target = scenario.per_target;
  const double mean_snr = db_to_linear(snr_db);
  const StatePartition partition = solve_thresholds(table, mean_snr);
  const std::vector<double> intervals = per_state_intervals(table, scenario.rtt_s, scenario.base_packet_s);
  std::optional<double> rho_override;
  double doppler_hz = 0.0;
  switch (corr.kind) {
    case CorrelationSetting::Kind::fully_correlated:
      rho_override = 1.0;
      break;
    case CorrelationSetting::Kind::independent:
      rho_override = 0.0;
      break;
    case CorrelationSetting::Kind::doppler:
      doppler_hz = corr.doppler_hz;
      break;
  }
  const MarkovChannel channel =
      build_markov_channel(FadingParams{mean_snr, doppler_hz}, partition, intervals, rho_override);
  CellLinks links;
  links.sd = LinkModel{channel, table, mean_snr, LinkLabel::SD};
  links.sr = LinkModel{channel, table, scenario.relay_gain * mean_snr, LinkLabel::SR};
  links.rd = LinkModel{channel, table, scenario.relay_gain * mean_snr, LinkLabel::RD};
  return links;
}

struct AnalysisCell {
  double snr_db = 0.0;
  CorrelationSetting correlation;
  bool ok = false;
  std::string error;
  AnalysisResult noncoop;
  AnalysisResult coop;
  CoopDiagnostics diagnostics;
};

/// Analytic results over the full grid, cells computed independently.
inline std::vector<AnalysisCell> run_analysis_grid(const ExperimentSpec& spec) {
  if (spec.scenario.n_retx_max != 1) {
    throw ConfigError("config error: the analysis engine supports n_retx_max = 1 only");
  }
  std::vector<AnalysisCell> cells;
  for (double snr : spec.snr_grid_db) {
    for (const CorrelationSetting& corr : spec.doppler_grid) {
      AnalysisCell cell;
      cell.snr_db = snr;
      cell.correlation = corr;
      cells.push_back(cell);
    }
  }
  detail::parallel_for(cells.size(), [&](std::size_t i) {
    try {
      const CellLinks links = build_cell_links(spec.scenario, cells[i].snr_db, cells[i].correlation);
      cells[i].noncoop = analyze_noncoop(links.sd);
      cells[i].coop = analyze_coop(links.sd, links.sr, links.rd,
                                   spec.emit_diagnostics ? &cells[i].diagnostics : nullptr);
      cells[i].ok = true;
    } catch (const std::exception& e) {
      cells[i].error = e.what();
    }
  });
  return cells;
}

namespace detail {

inline std::string csv_join(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ',';
    line += fields[i];
  }
  line += '\n';
  return line;
}

inline const AnalysisResult& cell_result(const AnalysisCell& cell, Topology topology) {
  return topology == Topology::noncoop ? cell.noncoop : cell.coop;
}

// Analysis-implied standard errors at the simulated sample size, used as the
// floor of the comparison SE so zero-count simulation cells stay comparable.
struct ImpliedSe {
  double plr = 0.0;
  double throughput = 0.0;
};

inline ImpliedSe analysis_implied_se(const AnalysisResult& analysis, long long decided, int n_retx_max) {
  ImpliedSe se;
  if (decided <= 0) return se;
  const double n = static_cast<double>(decided);
  const double p = analysis.plr;
  se.plr = std::sqrt(std::max(0.0, p * (1.0 - p)) / n);
  const double lost_tx = static_cast<double>(n_retx_max + 1);
  const double t_bar = analysis.p_nt[0] + 2.0 * analysis.p_nt[1] + lost_tx * p;
  const double t_sq = analysis.p_nt[0] + 4.0 * analysis.p_nt[1] + lost_tx * lost_tx * p;
  const double d_bar = 1.0 - p;
  const double dt = analysis.p_nt[0] + 2.0 * analysis.p_nt[1];
  const double eta = d_bar / t_bar;
  const double var_d = d_bar - d_bar * d_bar;
  const double var_t = t_sq - t_bar * t_bar;
  const double cov_dt = dt - d_bar * t_bar;
  const double var_eta = (var_d - 2.0 * eta * cov_dt + eta * eta * var_t) / (n * t_bar * t_bar);
  se.throughput = std::sqrt(std::max(0.0, var_eta));
  return se;
}

}  // namespace detail

struct ExperimentOutcome {
  int exit_code = kExitOk;
  int cells_failed = 0;
  int gate_violations = 0;
  int compared_cells = 0;
  double max_abs_z = 0.0;
  std::vector<std::string> artifacts;
};

/// Runs the configured experiment and writes every artifact into
/// spec.output_dir. Partial results are preserved on per-cell failures and
/// marked FAILED in the manifest.
inline ExperimentOutcome run_experiment(const ExperimentSpec& spec) {
  namespace fs = std::filesystem;
  if (spec.snr_grid_db.empty() || spec.doppler_grid.empty()) {
    throw ConfigError("config error: grids must be nonempty");
  }
  const bool want_analysis = spec.engines != Engines::simulation;
  const bool want_simulation = spec.engines != Engines::analysis;
  if (want_analysis && spec.scenario.n_retx_max != 1) {
    throw ConfigError("config error: the analysis engine supports n_retx_max = 1 only");
  }
  fs::create_directories(spec.output_dir);
  auto path_of = [&](const std::string& name) { return (fs::path(spec.output_dir) / name).string(); };

  ExperimentOutcome outcome;
  const int n_modes = spec.scenario.modes.size();

  std::vector<AnalysisCell> analysis_cells;
  if (want_analysis) analysis_cells = run_analysis_grid(spec);

  std::vector<GridCellResult> sim_cells;
  if (want_simulation) {
    sim_cells = run_grid(spec.scenario, spec.snr_grid_db, spec.doppler_grid, spec.replicates);
  }

  // analysis.csv: one row per (topology, snr, doppler) with every
  // intermediate probability. Relay columns stay empty on noncoop rows.
  if (want_analysis) {
    std::ofstream out(path_of("analysis.csv"), std::ios::binary);
    std::vector<std::string> header = {"topology", "snr_db", "doppler", "plr", "throughput", "p_nt1", "p_nt2"};
    for (int m = 1; m <= n_modes; ++m) header.push_back("p_fail_first_" + std::to_string(m));
    for (int n = 1; n <= n_modes; ++n) {
      for (int k = 0; k <= n_modes; ++k) {
        header.push_back("p_fail_second_" + std::to_string(n) + "_" + std::to_string(k));
      }
    }
    for (int m = 1; m <= n_modes; ++m) header.push_back("p_relay_fail_" + std::to_string(m));
    header.push_back("plr_srd");
    out << detail::csv_join(header);
    for (Topology topology : {Topology::noncoop, Topology::coop}) {
      for (const AnalysisCell& cell : analysis_cells) {
        if (!cell.ok) continue;
        const AnalysisResult& r = detail::cell_result(cell, topology);
        std::vector<std::string> row = {topology_label(topology), detail::fmt(cell.snr_db),
                                        cell.correlation.label(), detail::fmt(r.plr), detail::fmt(r.throughput),
                                        detail::fmt(r.p_nt[0]), detail::fmt(r.p_nt[1])};
        for (int m = 0; m < n_modes; ++m) row.push_back(detail::fmt(r.p_fail_first[static_cast<std::size_t>(m)]));
        for (int n = 0; n < n_modes; ++n) {
          for (int k = 0; k <= n_modes; ++k) {
            row.push_back(detail::fmt(r.p_fail_second[static_cast<std::size_t>(n)][static_cast<std::size_t>(k)]));
          }
        }
        for (int m = 0; m < n_modes; ++m) {
          row.push_back(r.cooperative ? detail::fmt(r.p_relay_fail[static_cast<std::size_t>(m)]) : "");
        }
        row.push_back(r.cooperative ? detail::fmt(r.plr_srd) : "");
        out << detail::csv_join(row);
      }
    }
    outcome.artifacts.push_back("analysis.csv");
  }

  if (want_simulation) {
    std::ofstream out(path_of("simulation.csv"), std::ios::binary);
    std::vector<std::string> header = {"topology", "snr_db", "doppler",       "replicate",
                                       "seed",     "offered", "outage_skips", "delivered",
                                       "lost",     "transmissions"};
    for (int t = 1; t <= spec.scenario.n_retx_max + 1; ++t) header.push_back("nt_" + std::to_string(t));
    header.push_back("relay_decode_success");
    header.push_back("relay_retx_fail");
    for (int m = 1; m <= n_modes; ++m) header.push_back("mode_use_" + std::to_string(m));
    header.insert(header.end(), {"plr", "plr_se", "throughput", "throughput_se"});
    out << detail::csv_join(header);
    for (const GridCellResult& cell : sim_cells) {
      if (!cell.ok()) continue;
      const SimStats& s = cell.stats;
      std::vector<std::string> row = {topology_label(cell.topology),
                                      detail::fmt(cell.snr_db),
                                      cell.correlation.label(),
                                      std::to_string(cell.replicate),
                                      std::to_string(cell.seed),
                                      std::to_string(s.offered),
                                      std::to_string(s.outage_skips),
                                      std::to_string(s.delivered),
                                      std::to_string(s.lost),
                                      std::to_string(s.transmissions)};
      for (long long c : s.nt_histogram) row.push_back(std::to_string(c));
      row.push_back(std::to_string(s.relay_decode_success));
      row.push_back(std::to_string(s.relay_retx_fail));
      for (long long c : s.mode_usage) row.push_back(std::to_string(c));
      row.push_back(detail::fmt(s.plr_estimate));
      row.push_back(detail::fmt(s.plr_se));
      row.push_back(detail::fmt(s.throughput_estimate));
      row.push_back(detail::fmt(s.throughput_se));
      out << detail::csv_join(row);
    }
    outcome.artifacts.push_back("simulation.csv");
  }

  if (want_analysis && want_simulation) {
    std::ofstream out(path_of("compare.csv"), std::ios::binary);
    out << detail::csv_join({"topology", "snr_db", "doppler", "replicate", "plr_analysis", "plr_sim", "plr_se",
                             "z_plr", "throughput_analysis", "throughput_sim", "throughput_se", "z_throughput",
                             "agree"});
    for (const GridCellResult& cell : sim_cells) {
      if (!cell.ok()) continue;
      const AnalysisCell* matching = nullptr;
      for (const AnalysisCell& a : analysis_cells) {
        if (a.ok && a.snr_db == cell.snr_db && a.correlation == cell.correlation) {
          matching = &a;
          break;
        }
      }
      if (!matching) continue;
      const AnalysisResult& a = detail::cell_result(*matching, cell.topology);
      const SimStats& s = cell.stats;
      const long long decided = s.delivered + s.lost;
      const detail::ImpliedSe implied = detail::analysis_implied_se(a, decided, spec.scenario.n_retx_max);
      const double se_plr = std::max(s.plr_se, implied.plr);
      const double se_thr = std::max(s.throughput_se, implied.throughput);
      const double d_plr = s.plr_estimate - a.plr;
      const double d_thr = s.throughput_estimate - a.throughput;
      const double z_plr = (d_plr == 0.0) ? 0.0 : (se_plr > 0.0 ? d_plr / se_plr : kInfinity);
      const double z_thr = (d_thr == 0.0) ? 0.0 : (se_thr > 0.0 ? d_thr / se_thr : kInfinity);
      const bool agree = std::abs(z_plr) <= spec.gate && std::abs(z_thr) <= spec.gate;
      ++outcome.compared_cells;
      outcome.max_abs_z = std::max({outcome.max_abs_z, std::abs(z_plr), std::abs(z_thr)});
      if (!agree) ++outcome.gate_violations;
      out << detail::csv_join({topology_label(cell.topology), detail::fmt(cell.snr_db), cell.correlation.label(),
                               std::to_string(cell.replicate), detail::fmt(a.plr), detail::fmt(s.plr_estimate),
                               detail::fmt(se_plr), detail::fmt(z_plr), detail::fmt(a.throughput),
                               detail::fmt(s.throughput_estimate), detail::fmt(se_thr), detail::fmt(z_thr),
                               agree ? "1" : "0"});
    }
    outcome.artifacts.push_back("compare.csv");
  }

  // Curve files are projections of the CSV values, never recomputations:
  // one block per (topology, correlation) series, analysis values when that
  // engine ran, simulation estimates otherwise.
  {
    std::ofstream plr_out(path_of("fig3_plr.dat"), std::ios::binary);
    std::ofstream thr_out(path_of("fig4_throughput.dat"), std::ios::binary);
    bool first = true;
    for (Topology topology : {Topology::noncoop, Topology::coop}) {
      for (const CorrelationSetting& corr : spec.doppler_grid) {
        if (!first) {
          plr_out << "\n";
          thr_out << "\n";
        }
        first = false;
        const std::string head = "# topology=" + topology_label(topology) + " doppler=" + corr.label() + "\n";
        plr_out << head;
        thr_out << head;
        for (double snr : spec.snr_grid_db) {
          std::string plr_value, thr_value;
          if (want_analysis) {
            for (const AnalysisCell& cell : analysis_cells) {
              if (cell.ok && cell.snr_db == snr && cell.correlation == corr) {
                const AnalysisResult& r = detail::cell_result(cell, topology);
                plr_value = detail::fmt(r.plr);
                thr_value = detail::fmt(r.throughput);
                break;
              }
            }
          } else {
            for (const GridCellResult& cell : sim_cells) {
              if (cell.ok() && cell.snr_db == snr && cell.correlation == corr && cell.topology == topology &&
                  cell.replicate == 0) {
                plr_value = detail::fmt(cell.stats.plr_estimate);
                thr_value = detail::fmt(cell.stats.throughput_estimate);
                break;
              }
            }
          }
          if (plr_value.empty()) continue;
          plr_out << detail::fmt(snr) << " " << plr_value << "\n";
          thr_out << detail::fmt(snr) << " " << thr_value << "\n";
        }
      }
    }
    outcome.artifacts.push_back("fig3_plr.dat");
    outcome.artifacts.push_back("fig4_throughput.dat");
  }

  if (want_analysis && spec.emit_diagnostics) {
    std::ofstream out(path_of("diagnostics.csv"), std::ios::binary);
    out << detail::csv_join({"snr_db", "doppler", "plr_coop_paired", "plr_coop_factored", "plr_coop_literal",
                             "plr_srd_weighted", "plr_srd_literal_sum", "plr_srd_conditional"});
    for (const AnalysisCell& cell : analysis_cells) {
      if (!cell.ok) continue;
      const CoopDiagnostics& d = cell.diagnostics;
      out << detail::csv_join({detail::fmt(cell.snr_db), cell.correlation.label(), detail::fmt(d.plr_paired),
                               detail::fmt(d.plr_factored), detail::fmt(d.plr_literal),
                               detail::fmt(d.plr_srd_weighted), detail::fmt(d.plr_srd_literal_sum),
                               detail::fmt(d.plr_srd_conditional)});
    }
    outcome.artifacts.push_back("diagnostics.csv");
  }

  // Manifest: resolved configuration, versions, per-cell seeds and failures.
  {
    std::ofstream out(path_of("manifest.txt"), std::ios::binary);
    const std::time_t now = std::time(nullptr);
    char stamp[64];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    out << "harq-lab " << kVersion << "\n";
    out << "timestamp: " << stamp << "\n";
    out << "engines: " << engines_label(spec.engines) << "\n";
    out << "gate: " << detail::fmt(spec.gate) << "\n";
    out << "\n[resolved scenario]\n";
    out << "topology = " << topology_label(spec.scenario.topology) << "\n";
    out << "mean_snr_sd_db = " << detail::fmt(spec.scenario.mean_snr_sd_db) << "\n";
    out << "relay_gain = " << detail::fmt(spec.scenario.relay_gain) << "\n";
    out << "doppler = " << spec.scenario.correlation.label() << "\n";
    out << "rtt_ms = " << detail::fmt(spec.scenario.rtt_s * 1e3) << "\n";
    out << "base_packet_ms = " << detail::fmt(spec.scenario.base_packet_s * 1e3) << "\n";
    out << "per_target = " << detail::fmt(spec.scenario.per_target) << "\n";
    out << "n_retx_max = " << spec.scenario.n_retx_max << "\n";
    out << "n_packets = " << spec.scenario.n_packets << "\n";
    out << "seed = " << spec.scenario.seed << "\n";
    out << "correlated_new_packet = " << (spec.scenario.correlated_new_packet ? "true" : "false") << "\n";
    out << "replicates = " << spec.replicates << "\n";
    out << "emit_diagnostics = " << (spec.emit_diagnostics ? "true" : "false") << "\n";
    out << "\n[resolved modes]  # modulation code-rate rate a g gamma_p_db\n";
    for (const AmcMode& mode : spec.scenario.modes.modes) {
      out << "mode." << mode.index << " = " << mode.modulation << " " << mode.code_rate << " "
          << detail::fmt(mode.rate_bps) << " " << detail::fmt(mode.a) << " " << detail::fmt(mode.g) << " "
          << detail::fmt(linear_to_db(mode.gamma_p)) << "\n";
    }
    out << "\n[grids]\n";
    out << "snr_db =";
    for (double snr : spec.snr_grid_db) out << " " << detail::fmt(snr);
    out << "\ndoppler =";
    for (const CorrelationSetting& corr : spec.doppler_grid) out << " " << corr.label();
    out << "\n\n[cells]\n";
    if (want_analysis) {
      for (const AnalysisCell& cell : analysis_cells) {
        out << "analysis snr_db=" << detail::fmt(cell.snr_db) << " doppler=" << cell.correlation.label() << " "
            << (cell.ok ? "OK" : "FAILED " + cell.error) << "\n";
        if (!cell.ok) ++outcome.cells_failed;
      }
    }
    if (want_simulation) {
      for (const GridCellResult& cell : sim_cells) {
        out << "simulation topology=" << topology_label(cell.topology) << " snr_db=" << detail::fmt(cell.snr_db)
            << " doppler=" << cell.correlation.label() << " replicate=" << cell.replicate << " seed=" << cell.seed
            << " " << (cell.ok() ? "OK" : "FAILED " + cell.error) << "\n";
        if (!cell.ok()) ++outcome.cells_failed;
      }
    }
    outcome.artifacts.push_back("manifest.txt");
  }

  if (outcome.cells_failed > 0) {
    outcome.exit_code = kExitNumericalFailure;
  } else if (outcome.gate_violations > 0) {
    outcome.exit_code = kExitGateFailure;
  }
  return outcome;
}

/// Solves and re-checks the AMC thresholds across the SNR grid and writes
/// thresholds.csv (thresholds in dB plus the re-evaluated per-interval PER).
inline std::string emit_thresholds(const ExperimentSpec& spec) {
  namespace fs = std::filesystem;
  fs::create_directories(spec.output_dir);
  const std::string path = (fs::path(spec.output_dir) / "thresholds.csv").string();
  ModeTable table = spec.scenario.modes;
  table.per_target = spec.scenario.per_target;
  std::ofstream out(path, std::ios::binary);
  std::vector<std::string> header = {"snr_db"};
  for (int m = 1; m <= table.size(); ++m) header.push_back("gamma_" + std::to_string(m) + "_db");
  for (int m = 1; m <= table.size(); ++m) header.push_back("avg_per_" + std::to_string(m));
  out << detail::csv_join(header);
  for (double snr : spec.snr_grid_db) {
    const double mean_snr = db_to_linear(snr);
    const StatePartition partition = solve_thresholds(table, mean_snr);
    std::vector<std::string> row = {detail::fmt(snr)};
    for (int m = 1; m <= table.size(); ++m) row.push_back(detail::fmt(linear_to_db(partition.lower(m))));
    for (int m = 1; m <= table.size(); ++m) {
      row.push_back(detail::fmt(avg_per_first_tx(table.mode(m), partition.lower(m), partition.upper(m), mean_snr)));
    }
    out << detail::csv_join(row);
  }
  return path;
}

}  // namespace harqlab
