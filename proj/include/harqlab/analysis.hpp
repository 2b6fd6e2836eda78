#pragma once
// Quadrature-backed packet loss rate and throughput for the non-cooperative
// and single-relay cooperative networks with one allowed retransmission.
//
// Event model per transmitted packet (outage states never transmit and are
// renormalized away):
//   first transmission in state n fails with p1(n), the interval-average PER;
//   a source retransmission combines the correlated SNR pair, failing with
//   p2(n,k) averaged over the next-state law; a relay retransmission combines
//   a fresh exponential draw on the relay-destination link instead. The relay
//   only retransmits when it decoded phase one, which happens independently
//   on the source-relay link with its own mean SNR.

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "harqlab/amc.hpp"
#include "harqlab/channel.hpp"
#include "harqlab/numerics.hpp"

namespace harqlab {

enum class LinkLabel { SD, SR, RD };

struct LinkModel {
  MarkovChannel channel;  // partition and pair law follow the SD link
  ModeTable table;
  double mean_snr = 1.0;  // this link's own mean (SR/RD default to 4x SD)
  LinkLabel label = LinkLabel::SD;
};

struct AnalysisResult {
  double plr = 0.0;
  double throughput = 0.0;
  std::vector<double> p_fail_first;               // [n-1], states 1..N_S
  std::vector<std::vector<double>> p_fail_second; // [n-1][k], k = 0..N_S
  std::array<double, 2> p_nt{0.0, 0.0};           // exactly one / exactly two transmissions
  std::vector<double> p_relay_fail;               // [n-1]; empty for non-cooperative
  double plr_srd = 0.0;                           // 0 for non-cooperative
  bool cooperative = false;

  double completeness_defect() const { return std::abs(p_nt[0] + p_nt[1] + plr - 1.0); }
};

/// Reported alongside the cooperative result when diagnostics are requested:
/// the literal formula variants next to the protocol-consistent one.
struct CoopDiagnostics {
  double plr_paired = 0.0;            // reported form, relay failure paired per state
  double plr_factored = 0.0;          // relay failure averaged outside the sums
  double plr_literal = 0.0;           // second term weighted by P{no first-transmission failure}
  double plr_srd_weighted = 0.0;      // state-probability weighted relay-path failure
  double plr_srd_literal_sum = 0.0;   // plain sum of the per-state conditionals
  double plr_srd_conditional = 0.0;   // relay-path failure given the first transmission failed
};

namespace detail {

inline QuadratureSpec per_weighted_spec() {
  QuadratureSpec spec;
  spec.abs_tol = 1e-280;  // effectively relative-only; the loss terms span many decades
  spec.rel_tol = 1e-9;
  spec.max_subdivisions = 20000;
  return spec;
}

inline const AmcMode& state_mode(const LinkModel& link, int n) {
  if (n < 1 || n > link.table.size() || n >= link.channel.n_states() + 1) {
    throw DomainError("analysis: state " + std::to_string(n) + " has no transmission mode");
  }
  return link.table.mode(n);
}

// Conditional mass E[PER_n(sum) ; next state k | current state n] in envelope
// coordinates, i.e. P_{n,k} * p2(n,k) without the intermediate division.
inline double per_weighted_pair_mass(const LinkModel& link, int n, int k, const QuadratureSpec& spec) {
  const MarkovChannel& ch = link.channel;
  const double mean = ch.mean_snr;
  const double rho = ch.rho[static_cast<std::size_t>(n)];
  const AmcMode& mode = state_mode(link, n);
  const double pi_n = ch.pi[static_cast<std::size_t>(n)];
  if (!(pi_n > 0.0)) return 0.0;
  const double r2_lo_sq = ch.partition.lower(k) / mean;
  const double value = harqlab::detail::weighted_pair_box_mass(
      ch.partition, mean, rho, n, k, 1.0 / (1.0 + mode.g * mean),
      [&](double r1, double r2) { return per_instantaneous(mode, mean * (r1 * r1 + r2 * r2)); },
      [&](double r1) { return per_instantaneous(mode, mean * (r1 * r1 + r2_lo_sq)); }, spec);
  return value / pi_n;
}

// Fully correlated retransmission: the pair collapses to (gamma, gamma).
inline double per_combined_same_state(const LinkModel& link, int n, const QuadratureSpec& spec) {
  const MarkovChannel& ch = link.channel;
  const AmcMode& mode = state_mode(link, n);
  const double beta = 1.0 / ch.mean_snr;
  const double pi_n = ch.pi[static_cast<std::size_t>(n)];
  if (!(pi_n > 0.0)) return 0.0;
  const PiecewisePlan plan = make_axis_plan(ch.partition.lower(n), ch.partition.upper(n),
                                            1.0 / (beta + 2.0 * mode.g), false, {});
  int budget = spec.max_subdivisions;
  const double value = integrate_piecewise(
      [&](double gamma) { return per_instantaneous(mode, 2.0 * gamma) * beta * std::exp(-beta * gamma); }, plan,
      spec.abs_tol, spec.rel_tol, budget);
  return value / pi_n;
}

struct LinkTerms {
  std::vector<double> pi_tilde;        // [n-1], outage-renormalized state law
  std::vector<double> p1;              // [n-1]
  std::vector<std::vector<double>> m;  // [n-1][k] = P_{n,k} p2(n,k)
  std::vector<double> p2bar;           // [n-1] = sum_k m
  int n_modes = 0;
};

inline LinkTerms compute_link_terms(const LinkModel& link, const QuadratureSpec& spec = per_weighted_spec()) {
  const MarkovChannel& ch = link.channel;
  const int states = ch.n_states();
  const int n_modes = states - 1;
  if (n_modes < 1) throw DomainError("analysis: partition has no transmitting state");
  if (link.table.size() < n_modes) throw DomainError("analysis: mode table smaller than the partition");

  LinkTerms terms;
  terms.n_modes = n_modes;
  terms.pi_tilde.assign(static_cast<std::size_t>(n_modes), 0.0);
  terms.p1.assign(static_cast<std::size_t>(n_modes), 0.0);
  terms.p2bar.assign(static_cast<std::size_t>(n_modes), 0.0);
  terms.m.assign(static_cast<std::size_t>(n_modes), std::vector<double>(static_cast<std::size_t>(states), 0.0));

  double non_outage = 0.0;
  for (int n = 1; n <= n_modes; ++n) non_outage += ch.pi[static_cast<std::size_t>(n)];
  if (!(non_outage > 0.0)) throw DomainError("analysis: all stationary mass sits in the outage state");

  for (int n = 1; n <= n_modes; ++n) {
    const double pi_n = ch.pi[static_cast<std::size_t>(n)];
    auto& row = terms.m[static_cast<std::size_t>(n) - 1];
    terms.pi_tilde[static_cast<std::size_t>(n) - 1] = pi_n / non_outage;
    if (!(pi_n > 0.0)) continue;  // state never observed, contributes nothing
    terms.p1[static_cast<std::size_t>(n) - 1] =
        avg_per_first_tx(state_mode(link, n), ch.partition.lower(n), ch.partition.upper(n), ch.mean_snr);
    if (ch.rho[static_cast<std::size_t>(n)] >= 1.0) {
      row[static_cast<std::size_t>(n)] = per_combined_same_state(link, n, spec);
    } else {
      for (int k = 0; k < states; ++k) {
        row[static_cast<std::size_t>(k)] = per_weighted_pair_mass(link, n, k, spec);
      }
    }
    double bar = 0.0;
    for (double v : row) bar += v;
    terms.p2bar[static_cast<std::size_t>(n) - 1] = bar;
  }
  return terms;
}

}  // namespace detail

/// Average decoding-failure probability of the first transmission in state n.
inline double p_fail_first(const LinkModel& link, int n) {
  const MarkovChannel& ch = link.channel;
  if (n < 1 || n >= ch.n_states()) throw DomainError("p_fail_first: need a transmitting state");
  return avg_per_first_tx(detail::state_mode(link, n), ch.partition.lower(n), ch.partition.upper(n), ch.mean_snr);
}

/// Failure probability of the combined (first + source retransmission)
/// decision given states n then k. The mode stays n; k = 0 is the
/// retransmission landing in the outage interval, which still combines.
/// Entries whose transition probability underflows report 0 and set the
/// truncation flag.
inline double p_fail_second_combined(const LinkModel& link, int n, int k, bool* truncated = nullptr,
                                     const QuadratureSpec& spec = detail::per_weighted_spec()) {
  const MarkovChannel& ch = link.channel;
  if (truncated) *truncated = false;
  if (n < 1 || n >= ch.n_states() || k < 0 || k >= ch.n_states()) {
    throw DomainError("p_fail_second_combined: state out of range");
  }
  if (ch.rho[static_cast<std::size_t>(n)] >= 1.0) {
    if (n != k) {
      if (truncated) *truncated = true;
      return 0.0;
    }
    return detail::per_combined_same_state(link, n, spec);
  }
  const double p_nk = ch.transition[static_cast<std::size_t>(n)][static_cast<std::size_t>(k)];
  if (p_nk < 1e-300) {
    if (truncated) *truncated = true;
    return 0.0;
  }
  const double mass = detail::per_weighted_pair_mass(link, n, k, spec);
  return std::min(1.0, mass / p_nk);
}

/// Non-cooperative packet loss rate: both transmissions fail, averaged over
/// the first-transmission state law restricted to transmitting states.
inline double plr_noncoop(const LinkModel& link) {
  const detail::LinkTerms terms = detail::compute_link_terms(link);
  double plr = 0.0;
  for (int i = 0; i < terms.n_modes; ++i) {
    plr += terms.pi_tilde[static_cast<std::size_t>(i)] * terms.p1[static_cast<std::size_t>(i)] *
           terms.p2bar[static_cast<std::size_t>(i)];
  }
  return plr;
}

/// Probability a packet is delivered after exactly n_t transmissions.
inline double p_nt_noncoop(const LinkModel& link, int n_t) {
  if (n_t != 1 && n_t != 2) throw DomainError("p_nt_noncoop: n_t must be 1 or 2");
  const detail::LinkTerms terms = detail::compute_link_terms(link);
  double total = 0.0;
  for (int i = 0; i < terms.n_modes; ++i) {
    const double w = terms.pi_tilde[static_cast<std::size_t>(i)];
    const double p1 = terms.p1[static_cast<std::size_t>(i)];
    total += (n_t == 1) ? w * (1.0 - p1) : w * p1 * (1.0 - terms.p2bar[static_cast<std::size_t>(i)]);
  }
  return total;
}

/// Throughput from the outcome split, packets per transmission.
inline double throughput_from_outcomes(double plr, const std::array<double, 2>& p_nt, int n_retx_max = 1) {
  double denominator = (n_retx_max + 1) * plr;
  for (int n_t = 1; n_t <= n_retx_max + 1 && n_t <= 2; ++n_t) {
    denominator += n_t * p_nt[static_cast<std::size_t>(n_t) - 1];
  }
  if (!(denominator > 0.0)) throw DomainError("throughput: no transmissions happen, throughput undefined");
  return (1.0 - plr) / denominator;
}

inline double throughput_noncoop(const LinkModel& link) {
  const double plr = plr_noncoop(link);
  return throughput_from_outcomes(plr, {p_nt_noncoop(link, 1), p_nt_noncoop(link, 2)});
}

/// Probability the relay fails to decode phase one of a mode-n packet. The
/// source-relay SNR is a fresh exponential draw, unconstrained by the SD
/// state, so the PER = 1 branch below gamma_p carries real mass here.
inline double p_relay_fail(const LinkModel& sr_link, int sd_state,
                           const QuadratureSpec& spec = detail::per_weighted_spec()) {
  const AmcMode& mode = detail::state_mode(sr_link, sd_state);
  const double beta = 1.0 / sr_link.mean_snr;
  auto weighted = [&](double gamma) { return per_instantaneous(mode, gamma) * beta * std::exp(-beta * gamma); };
  // The PER = 1 plateau ends with a kink at gamma_p; the schedule pins it.
  const detail::PiecewisePlan plan =
      detail::make_axis_plan(0.0, kInfinity, 1.0 / (beta + mode.g), false, {mode.gamma_p});
  int budget = spec.max_subdivisions;
  return detail::integrate_piecewise(weighted, plan, spec.abs_tol, spec.rel_tol, budget);
}

namespace detail {

// Nested expectation over the SD state-n interval (outer) and a fresh
// exponential on the relay-destination link (inner). Both axes decay
// exponentially; schedules start at the respective rates.
template <typename G>
double relay_weighted_expectation(const LinkModel& sd_link, const LinkModel& rd_link, int n, const G& weight,
                                  const QuadratureSpec& spec) {
  const MarkovChannel& ch = sd_link.channel;
  const AmcMode& mode = state_mode(sd_link, n);
  const double pi_n = ch.pi[static_cast<std::size_t>(n)];
  if (!(pi_n > 0.0)) return 0.0;
  const double beta_sd = 1.0 / sd_link.mean_snr;
  const double beta_rd = 1.0 / rd_link.mean_snr;
  const PiecewisePlan outer =
      make_axis_plan(ch.partition.lower(n), ch.partition.upper(n), 1.0 / (beta_sd + mode.g), false, {});
  const PiecewisePlan inner = make_axis_plan(0.0, kInfinity, 1.0 / (beta_rd + mode.g), false, {});
  int budget = spec.max_subdivisions;
  const double value = integrate_piecewise(
      [&](double g1) {
        const double outer_weight = beta_sd * std::exp(-beta_sd * g1);
        const double inner_abs = std::max(1e-300, outer_weight * 1e-13);
        return outer_weight * integrate_piecewise(
                                  [&](double g2) { return weight(g1, g2) * beta_rd * std::exp(-beta_rd * g2); },
                                  inner, inner_abs, spec.rel_tol * 0.1, budget);
      },
      outer, spec.abs_tol, spec.rel_tol, budget);
  return value / pi_n;
}

// E[PER_n(gamma1 + gamma2)] with gamma1 conditioned on SD state n and gamma2
// a fresh exponential on the relay-destination link.
inline double relay_combined_fail(const LinkModel& sd_link, const LinkModel& rd_link, int n,
                                  const QuadratureSpec& spec) {
  const AmcMode& mode = state_mode(sd_link, n);
  return relay_weighted_expectation(
      sd_link, rd_link, n, [&](double g1, double g2) { return per_instantaneous(mode, g1 + g2); }, spec);
}

// Same expectation but weighted by the first-transmission failure, used by
// the diagnostics to show the conditional relay-path quantity.
inline double relay_combined_fail_given_first(const LinkModel& sd_link, const LinkModel& rd_link, int n,
                                              const QuadratureSpec& spec) {
  const AmcMode& mode = state_mode(sd_link, n);
  return relay_weighted_expectation(
      sd_link, rd_link, n,
      [&](double g1, double g2) { return per_instantaneous(mode, g1) * per_instantaneous(mode, g1 + g2); }, spec);
}

}  // namespace detail

/// State-probability weighted failure of the combined source + relay pair
/// (the relay-path second transmission, unconditioned on phase one's NACK).
inline double plr_srd(const LinkModel& sd_link, const LinkModel& rd_link,
                      const QuadratureSpec& spec = detail::per_weighted_spec()) {
  const detail::LinkTerms terms = detail::compute_link_terms(sd_link, spec);
  double total = 0.0;
  for (int n = 1; n <= terms.n_modes; ++n) {
    total += terms.pi_tilde[static_cast<std::size_t>(n) - 1] * detail::relay_combined_fail(sd_link, rd_link, n, spec);
  }
  return total;
}

/// Cooperative packet loss rate, relay decode paired with the state-n terms:
/// a lost packet failed phase one, then failed either the source
/// retransmission (relay did not decode) or the relay retransmission.
inline double plr_coop(const LinkModel& sd, const LinkModel& sr, const LinkModel& rd) {
  const QuadratureSpec spec = detail::per_weighted_spec();
  const detail::LinkTerms terms = detail::compute_link_terms(sd, spec);
  double plr = 0.0;
  for (int n = 1; n <= terms.n_modes; ++n) {
    const std::size_t i = static_cast<std::size_t>(n) - 1;
    if (!(terms.pi_tilde[i] > 0.0)) continue;
    const double rf = p_relay_fail(sr, n, spec);
    const double srd = detail::relay_combined_fail(sd, rd, n, spec);
    plr += terms.pi_tilde[i] * terms.p1[i] * (rf * terms.p2bar[i] + (1.0 - rf) * srd);
  }
  return plr;
}

inline double throughput_coop(const LinkModel& sd, const LinkModel& sr, const LinkModel& rd) {
  const QuadratureSpec spec = detail::per_weighted_spec();
  const detail::LinkTerms terms = detail::compute_link_terms(sd, spec);
  double plr = 0.0, p_one = 0.0, p_two = 0.0;
  for (int n = 1; n <= terms.n_modes; ++n) {
    const std::size_t i = static_cast<std::size_t>(n) - 1;
    const double w = terms.pi_tilde[i];
    p_one += w * (1.0 - terms.p1[i]);
    if (!(w > 0.0)) continue;
    const double rf = p_relay_fail(sr, n, spec);
    const double srd = detail::relay_combined_fail(sd, rd, n, spec);
    plr += w * terms.p1[i] * (rf * terms.p2bar[i] + (1.0 - rf) * srd);
    p_two += w * terms.p1[i] * (rf * (1.0 - terms.p2bar[i]) + (1.0 - rf) * (1.0 - srd));
  }
  return throughput_from_outcomes(plr, {p_one, p_two});
}

/// Full non-cooperative evaluation with every intermediate probability.
inline AnalysisResult analyze_noncoop(const LinkModel& link) {
  const QuadratureSpec spec = detail::per_weighted_spec();
  const detail::LinkTerms terms = detail::compute_link_terms(link, spec);
  AnalysisResult result;
  result.cooperative = false;
  result.p_fail_first = terms.p1;
  result.p_fail_second.assign(static_cast<std::size_t>(terms.n_modes),
                              std::vector<double>(static_cast<std::size_t>(terms.n_modes) + 1, 0.0));
  for (int n = 1; n <= terms.n_modes; ++n) {
    const std::size_t i = static_cast<std::size_t>(n) - 1;
    const double w = terms.pi_tilde[i];
    result.plr += w * terms.p1[i] * terms.p2bar[i];
    result.p_nt[0] += w * (1.0 - terms.p1[i]);
    result.p_nt[1] += w * terms.p1[i] * (1.0 - terms.p2bar[i]);
    for (int k = 0; k <= terms.n_modes; ++k) {
      const double p_nk = link.channel.transition[static_cast<std::size_t>(n)][static_cast<std::size_t>(k)];
      result.p_fail_second[i][static_cast<std::size_t>(k)] =
          (p_nk < 1e-300) ? 0.0 : std::min(1.0, terms.m[i][static_cast<std::size_t>(k)] / p_nk);
    }
  }
  result.throughput = throughput_from_outcomes(result.plr, result.p_nt);
  return result;
}

/// Full cooperative evaluation; pass a CoopDiagnostics to also get the
/// literal formula variants for the diagnostics report.
inline AnalysisResult analyze_coop(const LinkModel& sd, const LinkModel& sr, const LinkModel& rd,
                                   CoopDiagnostics* diagnostics = nullptr) {
  const QuadratureSpec spec = detail::per_weighted_spec();
  const detail::LinkTerms terms = detail::compute_link_terms(sd, spec);
  AnalysisResult result;
  result.cooperative = true;
  result.p_fail_first = terms.p1;
  result.p_fail_second.assign(static_cast<std::size_t>(terms.n_modes),
                              std::vector<double>(static_cast<std::size_t>(terms.n_modes) + 1, 0.0));
  result.p_relay_fail.assign(static_cast<std::size_t>(terms.n_modes), 0.0);

  double plr_nc = 0.0, srd_weighted = 0.0, srd_literal_sum = 0.0, rf_avg = 0.0;
  double srd_p1 = 0.0, srd_joint = 0.0, p1_avg = 0.0;
  for (int n = 1; n <= terms.n_modes; ++n) {
    const std::size_t i = static_cast<std::size_t>(n) - 1;
    const double w = terms.pi_tilde[i];
    const double rf = p_relay_fail(sr, n, spec);
    result.p_relay_fail[i] = rf;
    result.p_nt[0] += w * (1.0 - terms.p1[i]);
    for (int k = 0; k <= terms.n_modes; ++k) {
      const double p_nk = sd.channel.transition[static_cast<std::size_t>(n)][static_cast<std::size_t>(k)];
      result.p_fail_second[i][static_cast<std::size_t>(k)] =
          (p_nk < 1e-300) ? 0.0 : std::min(1.0, terms.m[i][static_cast<std::size_t>(k)] / p_nk);
    }
    if (!(w > 0.0)) continue;
    const double srd = detail::relay_combined_fail(sd, rd, n, spec);
    result.plr += w * terms.p1[i] * (rf * terms.p2bar[i] + (1.0 - rf) * srd);
    result.p_nt[1] += w * terms.p1[i] * (rf * (1.0 - terms.p2bar[i]) + (1.0 - rf) * (1.0 - srd));
    plr_nc += w * terms.p1[i] * terms.p2bar[i];
    srd_weighted += w * srd;
    srd_literal_sum += srd;
    srd_p1 += w * terms.p1[i] * srd;
    rf_avg += w * rf;
    p1_avg += w * terms.p1[i];
    if (diagnostics) srd_joint += w * detail::relay_combined_fail_given_first(sd, rd, n, spec);
  }
  result.plr_srd = srd_weighted;
  result.throughput = throughput_from_outcomes(result.plr, result.p_nt);
  if (diagnostics) {
    diagnostics->plr_paired = result.plr;
    diagnostics->plr_factored = plr_nc * rf_avg + srd_p1 * (1.0 - rf_avg);
    diagnostics->plr_literal = plr_nc * rf_avg + srd_weighted * (1.0 - p1_avg);
    diagnostics->plr_srd_weighted = srd_weighted;
    diagnostics->plr_srd_literal_sum = srd_literal_sum;
    diagnostics->plr_srd_conditional = (p1_avg > 0.0) ? srd_joint / p1_avg : 0.0;
  }
  return result;
}

}  // namespace harqlab
