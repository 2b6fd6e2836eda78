#pragma once
// Packet-by-packet Monte Carlo of the protocol: AMC mode selection from the
// instantaneous source-destination SNR, truncated Chase-combining HARQ with
// SNR accumulation, and optional decode-and-forward relaying.
//
// Randomness is organized as splittable streams: every packet owns one
// stream for source-side draws and a separate lazily-created stream for
// relay-side draws, both derived from (seed, packet index). Source-side
// consumption is therefore identical between topologies until a relay
// actually retransmits, and a degenerate relay reproduces the
// non-cooperative run bit for bit.

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "harqlab/amc.hpp"
#include "harqlab/channel.hpp"
#include "harqlab/numerics.hpp"
#include "harqlab/rng.hpp"

namespace harqlab {

enum class Topology { noncoop, coop };

inline std::string topology_label(Topology t) { return t == Topology::noncoop ? "noncoop" : "coop"; }

/// Channel correlation between successive transmissions. Zero Doppler maps
/// to the fully correlated extreme; "independent" forces a fresh draw per
/// transmission. Both extremes are explicit settings rather than fake
/// Doppler values.
struct CorrelationSetting {
  enum class Kind { doppler, fully_correlated, independent };

  Kind kind = Kind::doppler;
  double doppler_hz = 0.0;

  static CorrelationSetting doppler(double hz) {
    if (!(hz >= 0.0) || !std::isfinite(hz)) throw DomainError("CorrelationSetting: doppler must be finite and >= 0");
    if (hz == 0.0) return fully_correlated();
    return CorrelationSetting{Kind::doppler, hz};
  }
  static CorrelationSetting fully_correlated() { return CorrelationSetting{Kind::fully_correlated, 0.0}; }
  static CorrelationSetting independent() { return CorrelationSetting{Kind::independent, 0.0}; }

  bool operator==(const CorrelationSetting&) const = default;

  std::string label() const {
    switch (kind) {
      case Kind::fully_correlated:
        return "0";
      case Kind::independent:
        return "independent";
      case Kind::doppler:
      default: {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.12g", doppler_hz);
        return buf;
      }
    }
  }
};

struct ScenarioConfig {
  Topology topology = Topology::coop;
  double mean_snr_sd_db = 10.0;
  double relay_gain = 4.0;  // SR and RD mean SNR as a multiple of SD's
  CorrelationSetting correlation = CorrelationSetting::doppler(10.0);
  double rtt_s = 2e-3;
  double base_packet_s = 1e-3;  // slowest mode's packet duration
  double per_target = 1e-4;
  int n_retx_max = 1;
  long long n_packets = 100000;
  std::uint64_t seed = 1;
  bool correlated_new_packet = false;  // keep the fading path alive across packets
  ModeTable modes = default_mode_table();

  bool operator==(const ScenarioConfig&) const = default;

  void validate() const {
    if (!(n_packets >= 1)) throw DomainError("ScenarioConfig: n_packets must be >= 1");
    if (!(rtt_s > 0.0) || !(base_packet_s > 0.0)) throw DomainError("ScenarioConfig: durations must be positive");
    if (!(per_target > 0.0) || !(per_target < 1.0)) throw DomainError("ScenarioConfig: per_target must lie in (0,1)");
    if (n_retx_max < 1) throw DomainError("ScenarioConfig: n_retx_max must be >= 1");
    if (!(relay_gain >= 0.0)) throw DomainError("ScenarioConfig: relay_gain must be >= 0");
    if (!std::isfinite(mean_snr_sd_db)) throw DomainError("ScenarioConfig: mean_snr_sd_db must be finite");
    modes.validate();
  }
};

struct SimStats {
  long long offered = 0;
  long long delivered = 0;
  long long lost = 0;
  long long outage_skips = 0;
  long long transmissions = 0;
  std::vector<long long> nt_histogram;  // [t-1] = delivered after exactly t transmissions
  long long relay_decode_success = 0;   // relay decoded when consulted (phase one failed at D)
  long long relay_retx_fail = 0;        // relay retransmission still failed at D
  std::vector<long long> mode_usage;    // [m-1]

  double plr_estimate = 0.0;
  double plr_se = 0.0;
  double throughput_estimate = 0.0;
  double throughput_se = 0.0;

  bool operator==(const SimStats&) const = default;
};

/// One trace entry per transmitted packet, for the replay-style property
/// tests. Retransmission fields cover the first retransmission only.
struct PacketTrace {
  long long packet = 0;
  int state = 0;
  double gamma1 = 0.0;
  double u1 = 0.0;
  bool first_fail = false;
  bool relay_consulted = false;
  bool relay_decoded = false;
  double gamma2 = 0.0;  // the added SNR of the first retransmission
  double u2 = 0.0;
  bool second_fail = false;
  bool delivered = false;
};

using TraceSink = std::function<void(const PacketTrace&)>;

namespace detail {

inline constexpr std::uint64_t kTagSource = 0x51;
inline constexpr std::uint64_t kTagRelay = 0x52;
inline constexpr std::uint64_t kTagPath = 0x50;

struct SimSetup {
  ModeTable table;
  StatePartition partition;
  double mean_snr = 1.0;
  double mean_snr_relay = 1.0;
  CorrelationSetting::Kind kind = CorrelationSetting::Kind::doppler;
  std::vector<double> rho_g;  // per state, the complex-gain step correlation

  static SimSetup from_config(const ScenarioConfig& config) {
    config.validate();
    SimSetup s;
    s.table = config.modes;
    s.table.per_target = config.per_target;
    s.mean_snr = db_to_linear(config.mean_snr_sd_db);
    s.mean_snr_relay = config.relay_gain * s.mean_snr;
    s.partition = solve_thresholds(s.table, s.mean_snr);
    s.kind = config.correlation.kind;
    const std::vector<double> intervals = per_state_intervals(s.table, config.rtt_s, config.base_packet_s);
    s.rho_g.reserve(intervals.size());
    for (double tau : intervals) {
      double rho_g = 1.0;
      if (s.kind == CorrelationSetting::Kind::independent) {
        rho_g = 0.0;
      } else if (s.kind == CorrelationSetting::Kind::doppler) {
        rho_g = bessel_j0(2.0 * kPi * config.correlation.doppler_hz * tau);
      }
      s.rho_g.push_back(rho_g);
    }
    return s;
  }
};

struct ComplexGain {
  double re = 1.0;
  double im = 0.0;

  double snr(double mean) const { return mean * (re * re + im * im); }

  void step(double rho_g, RandomStream& rng) {
    if (rho_g >= 1.0) return;
    const double mix = std::sqrt(std::max(0.0, 1.0 - rho_g * rho_g));
    auto [wx, wy] = rng.normal_pair();
    re = rho_g * re + mix * wx * 0.7071067811865476;
    im = rho_g * im + mix * wy * 0.7071067811865476;
  }
};

inline void finalize_stats(SimStats& stats, int n_retx_max) {
  const long long decided = stats.delivered + stats.lost;
  if (decided > 0) {
    const double n = static_cast<double>(decided);
    const double plr = static_cast<double>(stats.lost) / n;
    stats.plr_estimate = plr;
    stats.plr_se = std::sqrt(plr * (1.0 - plr) / n);
    // Delta-method standard error for delivered / transmissions, with the
    // per-packet moment sums recovered from the outcome counters.
    double sum_t = 0.0, sum_t2 = 0.0, sum_dt = 0.0;
    for (std::size_t t = 0; t < stats.nt_histogram.size(); ++t) {
      const double tx = static_cast<double>(t + 1);
      const double c = static_cast<double>(stats.nt_histogram[t]);
      sum_t += c * tx;
      sum_t2 += c * tx * tx;
      sum_dt += c * tx;
    }
    const double lost_tx = static_cast<double>(n_retx_max + 1);
    sum_t += static_cast<double>(stats.lost) * lost_tx;
    sum_t2 += static_cast<double>(stats.lost) * lost_tx * lost_tx;
    const double t_bar = sum_t / n;
    const double d_bar = static_cast<double>(stats.delivered) / n;
    const double eta = d_bar / t_bar;
    stats.throughput_estimate = eta;
    const double var_d = d_bar - d_bar * d_bar;
    const double var_t = sum_t2 / n - t_bar * t_bar;
    const double cov_dt = sum_dt / n - d_bar * t_bar;
    const double var_eta = (var_d - 2.0 * eta * cov_dt + eta * eta * var_t) / (n * t_bar * t_bar);
    stats.throughput_se = std::sqrt(std::max(0.0, var_eta));
  }
}

inline SimStats run_simulation(const ScenarioConfig& config, Topology topology, const TraceSink* sink) {
  const SimSetup setup = SimSetup::from_config(config);
  SimStats stats;
  stats.nt_histogram.assign(static_cast<std::size_t>(config.n_retx_max) + 1, 0);
  stats.mode_usage.assign(static_cast<std::size_t>(setup.table.size()), 0);
  stats.offered = config.n_packets;

  const bool coop = topology == Topology::coop;
  const bool persistent_path = config.correlated_new_packet;
  // In persistent mode the channel is observed at slot starts and stepped at
  // slot ends; every transmission or outage wait is one slot.
  RandomStream path_rng(mix_seed(config.seed, kTagPath));
  ComplexGain path_gain;
  if (persistent_path) {
    auto [x, y] = path_rng.normal_pair();
    path_gain.re = x * 0.7071067811865476;
    path_gain.im = y * 0.7071067811865476;
  }

  for (long long pkt = 0; pkt < config.n_packets; ++pkt) {
    const std::uint64_t pkt_seed = mix_seed(config.seed, static_cast<std::uint64_t>(pkt));
    RandomStream source(mix_seed(pkt_seed, kTagSource));

    ComplexGain gain;
    double gamma1;
    if (persistent_path) {
      gain = path_gain;
      gamma1 = gain.snr(setup.mean_snr);
    } else {
      const double unit_power = source.exponential();
      gamma1 = setup.mean_snr * unit_power;
      gain.re = std::sqrt(unit_power);  // phase-free start; circular symmetry
      gain.im = 0.0;
    }

    const int state = setup.partition.index_of(gamma1);
    if (state == 0) {
      ++stats.outage_skips;
      if (persistent_path) path_gain.step(setup.rho_g[0], path_rng);
      continue;
    }
    const AmcMode& mode = setup.table.mode(state);
    ++stats.mode_usage[static_cast<std::size_t>(state) - 1];
    const double rho_g = setup.rho_g[static_cast<std::size_t>(state)];

    PacketTrace trace;
    trace.packet = pkt;
    trace.state = state;
    trace.gamma1 = gamma1;

    ++stats.transmissions;
    const double u1 = source.uniform();
    trace.u1 = u1;
    const bool first_fail = u1 < per_instantaneous(mode, gamma1);
    trace.first_fail = first_fail;
    if (persistent_path) path_gain.step(rho_g, path_rng);

    if (!first_fail) {
      ++stats.delivered;
      ++stats.nt_histogram[0];
      trace.delivered = true;
      if (sink && *sink) (*sink)(trace);
      continue;
    }

    // Phase two. A decoding relay takes over the retransmissions with fresh
    // relay-destination draws; otherwise the source retransmits on the
    // correlated path.
    bool relay_handles = false;
    RandomStream relay(mix_seed(pkt_seed, kTagRelay));
    if (coop) {
      trace.relay_consulted = true;
      const double gamma_sr = setup.mean_snr_relay * relay.exponential();
      const double u_r = relay.uniform();
      relay_handles = !(u_r < per_instantaneous(mode, gamma_sr));
      trace.relay_decoded = relay_handles;
      if (relay_handles) ++stats.relay_decode_success;
    }

    double gamma_acc = gamma1;
    bool decoded = false;
    int used = 1;
    for (int attempt = 1; attempt <= config.n_retx_max && !decoded; ++attempt) {
      ++stats.transmissions;
      ++used;
      double added;
      double u2;
      if (relay_handles) {
        added = setup.mean_snr_relay * relay.exponential();
        u2 = relay.uniform();
      } else if (persistent_path) {
        added = path_gain.snr(setup.mean_snr);
        u2 = source.uniform();
      } else if (setup.kind == CorrelationSetting::Kind::fully_correlated) {
        added = gamma1;
        u2 = source.uniform();
      } else if (setup.kind == CorrelationSetting::Kind::independent) {
        added = setup.mean_snr * source.exponential();
        u2 = source.uniform();
      } else {
        gain.step(rho_g, source);
        added = gain.snr(setup.mean_snr);
        u2 = source.uniform();
      }
      if (persistent_path) path_gain.step(rho_g, path_rng);  // the slot ends either way
      gamma_acc += added;
      const bool fail = u2 < per_instantaneous(mode, gamma_acc);
      if (attempt == 1) {
        trace.gamma2 = added;
        trace.u2 = u2;
        trace.second_fail = fail;
      }
      decoded = !fail;
    }

    if (decoded) {
      ++stats.delivered;
      ++stats.nt_histogram[static_cast<std::size_t>(used) - 1];
      trace.delivered = true;
    } else {
      ++stats.lost;
      if (relay_handles) ++stats.relay_retx_fail;
    }
    if (sink && *sink) (*sink)(trace);
  }

  finalize_stats(stats, config.n_retx_max);
  return stats;
}

}  // namespace detail

/// Non-cooperative run: source retransmits once on the correlated channel.
inline SimStats run_noncoop(const ScenarioConfig& config, const TraceSink* sink = nullptr) {
  return detail::run_simulation(config, Topology::noncoop, sink);
}

/// Cooperative run: the relay retransmits when it decoded phase one,
/// otherwise the network degenerates to the non-cooperative behaviour.
inline SimStats run_coop(const ScenarioConfig& config, const TraceSink* sink = nullptr) {
  return detail::run_simulation(config, Topology::coop, sink);
}

inline SimStats run_scenario(const ScenarioConfig& config, const TraceSink* sink = nullptr) {
  return detail::run_simulation(config, config.topology, sink);
}

/// Per-cell seed for grid runs: mixed from the coordinate values, never from
/// grid positions, so permuting the grids cannot change any cell.
inline std::uint64_t derive_cell_seed(std::uint64_t seed, double snr_db, const CorrelationSetting& corr,
                                      Topology topology, int replicate) {
  std::uint64_t h = mix_seed(seed, 0xCE11);
  h = mix_seed(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(std::llround(snr_db * 1e6))));
  h = mix_seed(h, static_cast<std::uint64_t>(corr.kind));
  h = mix_seed(h, corr.kind == CorrelationSetting::Kind::doppler
                      ? static_cast<std::uint64_t>(std::llround(corr.doppler_hz * 1e6))
                      : 0);
  h = mix_seed(h, topology == Topology::coop ? 2 : 1);
  h = mix_seed(h, static_cast<std::uint64_t>(replicate));
  return h;
}

struct GridCellResult {
  double snr_db = 0.0;
  CorrelationSetting correlation;
  Topology topology = Topology::noncoop;
  int replicate = 0;
  std::uint64_t seed = 0;
  SimStats stats;
  std::string error;  // empty on success; failures are aggregated, not dropped

  bool ok() const { return error.empty(); }
};

/// Runs every (SNR, correlation, topology, replicate) combination on a small
/// worker pool. Cells are independent; results are keyed by coordinates and
/// insensitive to grid ordering.
inline std::vector<GridCellResult> run_grid(const ScenarioConfig& base, const std::vector<double>& snr_points_db,
                                            const std::vector<CorrelationSetting>& correlation_points,
                                            int replicates = 1) {
  if (snr_points_db.empty() || correlation_points.empty() || replicates < 1) {
    throw DomainError("run_grid: grids must be nonempty and replicates >= 1");
  }
  std::vector<GridCellResult> cells;
  for (double snr : snr_points_db) {
    for (const CorrelationSetting& corr : correlation_points) {
      for (Topology topology : {Topology::noncoop, Topology::coop}) {
        for (int rep = 0; rep < replicates; ++rep) {
          GridCellResult cell;
          cell.snr_db = snr;
          cell.correlation = corr;
          cell.topology = topology;
          cell.replicate = rep;
          cell.seed = derive_cell_seed(base.seed, snr, corr, topology, rep);
          cells.push_back(cell);
        }
      }
    }
  }
  const unsigned workers = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(),
                                                           static_cast<unsigned>(cells.size())));
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      try {
        ScenarioConfig config = base;
        config.mean_snr_sd_db = cells[i].snr_db;
        config.correlation = cells[i].correlation;
        config.topology = cells[i].topology;
        config.seed = cells[i].seed;
        cells[i].stats = detail::run_simulation(config, cells[i].topology, nullptr);
      } catch (const std::exception& e) {
        cells[i].error = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return cells;
}

}  // namespace harqlab
