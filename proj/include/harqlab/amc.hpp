#pragma once
// Transmission mode table, the two-branch exponential PER model and the
// switching-threshold solver. Thresholds are solved top-down: the highest
// mode's interval [Gamma_M, inf) is self-contained, every lower mode then
// uses the previously solved threshold as its upper edge.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "harqlab/channel.hpp"
#include "harqlab/numerics.hpp"

namespace harqlab {

class InfeasibleTargetError : public std::runtime_error {
 public:
  InfeasibleTargetError(const std::string& what, int mode_index)
      : std::runtime_error(what), mode_index_(mode_index) {}

  int mode_index() const { return mode_index_; }

 private:
  int mode_index_;
};

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double linear) { return 10.0 * std::log10(linear); }

struct AmcMode {
  int index = 0;             // 1-based, matches the channel state using it
  std::string modulation;
  std::string code_rate;
  double rate_bps = 0.0;     // bits per symbol
  double a = 0.0;            // PER fit amplitude
  double g = 0.0;            // PER fit decay per linear SNR unit
  double gamma_p = 0.0;      // linear SNR below which PER = 1

  bool operator==(const AmcMode&) const = default;

  void validate() const {
    if (!(a > 0.0) || !(g > 0.0) || !(gamma_p > 0.0) || !(rate_bps > 0.0)) {
      throw DomainError("AmcMode " + std::to_string(index) + ": a, g, gamma_p and rate must be positive");
    }
    const double continuity = a * std::exp(-g * gamma_p);
    if (continuity < 0.95 || continuity > 1.05) {
      throw DomainError("AmcMode " + std::to_string(index) + ": PER branches do not meet near 1 (a e^{-g gamma_p} = " +
                        std::to_string(continuity) + ")");
    }
  }
};

struct ModeTable {
  std::vector<AmcMode> modes;  // ordered by index, rates strictly increasing
  double per_target = 1e-4;

  bool operator==(const ModeTable&) const = default;

  int size() const { return static_cast<int>(modes.size()); }
  const AmcMode& mode(int index) const { return modes.at(static_cast<std::size_t>(index) - 1); }

  void validate() const {
    if (modes.empty()) throw DomainError("ModeTable: need at least one mode");
    if (!(per_target > 0.0) || !(per_target < 1.0)) throw DomainError("ModeTable: per_target must lie in (0,1)");
    for (int m = 0; m < size(); ++m) {
      if (modes[static_cast<std::size_t>(m)].index != m + 1) throw DomainError("ModeTable: mode indices must be 1..N in order");
      modes[static_cast<std::size_t>(m)].validate();
      if (m > 0 && !(modes[static_cast<std::size_t>(m)].rate_bps > modes[static_cast<std::size_t>(m) - 1].rate_bps)) {
        throw DomainError("ModeTable: rates must strictly increase with mode index");
      }
    }
  }
};

/// The built-in six-mode table (BPSK 1/2 through 64-QAM 3/4) with its PER
/// fit constants; gamma_p is configured in dB and stored linear.
inline ModeTable default_mode_table(double per_target = 1e-4) {
  ModeTable table;
  table.per_target = per_target;
  const char* modulation[6] = {"BPSK", "QPSK", "QPSK", "16-QAM", "16-QAM", "64-QAM"};
  const char* code_rate[6] = {"1/2", "1/2", "3/4", "9/16", "3/4", "3/4"};
  const double rate[6] = {0.50, 1.00, 1.50, 2.25, 3.00, 4.50};
  const double a[6] = {274.7229, 90.2514, 67.6181, 50.1222, 53.3987, 35.3508};
  const double g[6] = {7.9932, 3.4998, 1.6883, 0.6644, 0.3756, 0.0900};
  const double gamma_p_db[6] = {-1.5331, 1.0942, 3.9722, 7.7021, 10.2488, 15.9784};
  for (int m = 0; m < 6; ++m) {
    table.modes.push_back(AmcMode{m + 1, modulation[m], code_rate[m], rate[m], a[m], g[m], db_to_linear(gamma_p_db[m])});
  }
  table.validate();
  return table;
}

/// Instantaneous packet error rate: 1 below the knee, a e^{-g gamma} above,
/// clamped into [0,1].
inline double per_instantaneous(const AmcMode& mode, double gamma) {
  if (gamma < mode.gamma_p) return 1.0;
  return std::min(1.0, mode.a * std::exp(-mode.g * gamma));
}

/// Average first-transmission PER of `mode` over the SNR interval [lo, hi)
/// under the Rayleigh (exponential) law with the given mean, conditioned on
/// the interval. Closed form; the quadrature route is exercised in tests.
inline double avg_per_first_tx(const AmcMode& mode, double lo, double hi, double mean_snr) {
  if (!(mean_snr > 0.0)) throw DomainError("avg_per_first_tx: mean_snr must be positive");
  if (!(lo >= mode.gamma_p)) throw DomainError("avg_per_first_tx: interval must start at or above gamma_p");
  if (!(hi > lo)) throw DomainError("avg_per_first_tx: need hi > lo");
  const double beta = 1.0 / mean_snr;
  const double upper_mass = std::isfinite(hi) ? std::exp(-beta * hi) : 0.0;
  const double mass = std::exp(-beta * lo) - upper_mass;
  if (!(mass > 0.0)) throw DomainError("avg_per_first_tx: interval carries no probability mass");
  const double rate = mode.g + beta;
  const double upper_term = std::isfinite(hi) ? std::exp(-rate * hi) : 0.0;
  const double value = mode.a * (std::exp(-rate * lo) - upper_term) / ((1.0 + mode.g * mean_snr) * mass);
  return std::min(1.0, value);
}

/// Solves the switching thresholds so every mode's interval-average first
/// transmission PER meets the target, with equality where the constraint
/// binds. A root below gamma_p clamps to gamma_p only when that still meets
/// the target.
inline StatePartition solve_thresholds(const ModeTable& table, double mean_snr) {
  table.validate();
  if (!(mean_snr > 0.0)) throw DomainError("solve_thresholds: mean_snr must be positive");
  const double target = table.per_target;
  const int count = table.size();
  std::vector<double> gammas(static_cast<std::size_t>(count), 0.0);
  double hi = kInfinity;
  for (int m = count; m >= 1; --m) {
    const AmcMode& mode = table.mode(m);
    auto objective = [&](double lo) { return avg_per_first_tx(mode, lo, hi, mean_snr) - target; };
    double threshold;
    if (objective(mode.gamma_p) <= 0.0) {
      threshold = mode.gamma_p;  // target already met on the widest interval
    } else {
      // The average decreases in lo toward the point value at hi, so expand
      // the bracket upward until the sign flips.
      double upper = mode.gamma_p + 1.0;
      bool bracketed = false;
      for (int step = 0; step < 64; ++step) {
        if (upper >= hi) upper = std::isfinite(hi) ? hi - 1e-9 * std::max(1.0, hi) : 1e6;
        if (upper <= mode.gamma_p) break;
        if (objective(upper) <= 0.0) {
          bracketed = true;
          break;
        }
        if (upper >= 1e6 || (std::isfinite(hi) && upper >= hi - 1e-9 * std::max(1.0, hi))) break;
        upper = mode.gamma_p + (upper - mode.gamma_p) * 2.0;
      }
      if (!bracketed) {
        throw InfeasibleTargetError("solve_thresholds: mode " + std::to_string(m) +
                                        " cannot meet the PER target on any interval below its upper edge",
                                    m);
      }
      const double tol = 1e-10 * std::max(1.0, upper);
      threshold = find_root_bracketed(objective, mode.gamma_p, upper, tol);
    }
    gammas[static_cast<std::size_t>(m) - 1] = threshold;
    hi = threshold;
  }
  StatePartition partition;
  partition.thresholds.reserve(static_cast<std::size_t>(count) + 2);
  partition.thresholds.push_back(0.0);
  for (double gamma : gammas) partition.thresholds.push_back(gamma);
  partition.thresholds.push_back(kInfinity);
  partition.validate();
  return partition;
}

/// Channel state (and therefore AMC mode) for an instantaneous SNR.
/// 0 means outage: no transmission is attempted.
inline int select_mode(double gamma, const StatePartition& partition) {
  if (!(gamma >= 0.0)) throw DomainError("select_mode: gamma must be >= 0");
  return partition.index_of(gamma);
}

/// Transmission intervals per state: packet time scales inversely with the
/// mode rate (the slowest mode lasts base_packet_s), plus the fixed RTT.
/// The outage state waits one slowest-mode interval before re-sensing.
inline std::vector<double> per_state_intervals(const ModeTable& table, double rtt_s, double base_packet_s) {
  if (!(rtt_s > 0.0) || !(base_packet_s > 0.0)) throw DomainError("per_state_intervals: durations must be positive");
  std::vector<double> intervals;
  intervals.reserve(static_cast<std::size_t>(table.size()) + 1);
  intervals.push_back(base_packet_s + rtt_s);
  const double slowest_rate = table.mode(1).rate_bps;
  for (int m = 1; m <= table.size(); ++m) {
    intervals.push_back(base_packet_s * slowest_rate / table.mode(m).rate_bps + rtt_s);
  }
  return intervals;
}

}  // namespace harqlab
