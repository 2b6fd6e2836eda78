#pragma once
// Finite-state Markov model of a time-correlated Rayleigh channel plus the
// correlated SNR sample-path generator used by the simulator.
//
// States partition the SNR axis into [Gamma_n, Gamma_n+1) intervals; the
// transition matrix conditions on the per-state transmission interval through
// the envelope correlation rho_n = J0^2(2 pi f_D tau_n). All probabilities
// are evaluated on envelope coordinates r = sqrt(gamma / mean_snr), where the
// stationary law is Rayleigh with unit mean square.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "harqlab/numerics.hpp"
#include "harqlab/rng.hpp"

namespace harqlab {

struct FadingParams {
  double mean_snr = 1.0;   // linear power ratio
  double doppler_hz = 0.0;

  void validate() const {
    if (!(mean_snr > 0.0) || !std::isfinite(mean_snr)) throw DomainError("FadingParams: mean_snr must be positive");
    if (!(doppler_hz >= 0.0) || !std::isfinite(doppler_hz)) throw DomainError("FadingParams: doppler_hz must be >= 0");
  }
};

struct StatePartition {
  // thresholds[0] = 0, thresholds[n_states] = +inf, strictly increasing.
  // State n covers [thresholds[n], thresholds[n+1]); state 0 is outage.
  std::vector<double> thresholds;

  int n_states() const { return static_cast<int>(thresholds.size()) - 1; }
  double lower(int n) const { return thresholds[static_cast<std::size_t>(n)]; }
  double upper(int n) const { return thresholds[static_cast<std::size_t>(n) + 1]; }

  int index_of(double gamma) const {
    int n = 0;
    while (n + 1 < n_states() && gamma >= thresholds[static_cast<std::size_t>(n) + 1]) ++n;
    return n;
  }

  void validate() const {
    if (thresholds.size() < 2) throw DomainError("StatePartition: need at least one state");
    if (thresholds.front() != 0.0) throw DomainError("StatePartition: first threshold must be 0");
    if (thresholds.back() != kInfinity) throw DomainError("StatePartition: last threshold must be +inf");
    for (std::size_t i = 1; i < thresholds.size(); ++i) {
      if (!(thresholds[i] > thresholds[i - 1])) throw DomainError("StatePartition: thresholds must strictly increase");
    }
  }
};

struct MarkovChannel {
  StatePartition partition;
  std::vector<double> interval_s;              // tau_f per state
  std::vector<double> rho;                     // envelope correlation per state
  std::vector<std::vector<double>> transition; // row n: next-state law under tau_f^n
  std::vector<double> pi;                      // stationary interval masses
  double mean_snr = 1.0;
  double doppler_hz = 0.0;
  double max_row_residual = 0.0;               // worst |row sum - 1| before renormalization
  bool fully_correlated = false;

  int n_states() const { return partition.n_states(); }
};

/// rho = J0^2(2 pi f_D tau); equals 1 at zero Doppler.
inline double envelope_correlation(double doppler_hz, double interval_s) {
  if (!std::isfinite(doppler_hz) || !std::isfinite(interval_s) || doppler_hz < 0.0 || interval_s <= 0.0) {
    throw DomainError("envelope_correlation: need doppler_hz >= 0 and interval_s > 0");
  }
  const double j = bessel_j0(2.0 * kPi * doppler_hz * interval_s);
  return j * j;
}

/// Bivariate Rayleigh density of two unit-mean-square envelopes with power
/// correlation rho in [0, 1). Uses the exp-scaled Bessel form so the
/// exponential damping and the I0 growth never overflow separately.
inline double bivariate_rayleigh_pdf(double r1, double r2, double rho) {
  if (!std::isfinite(r1) || !std::isfinite(r2) || r1 < 0.0 || r2 < 0.0) {
    throw DomainError("bivariate_rayleigh_pdf: envelopes must be finite and >= 0");
  }
  if (!(rho >= 0.0) || rho >= 1.0) {
    throw DomainError("bivariate_rayleigh_pdf: rho must lie in [0,1); rho = 1 is the fully correlated special case");
  }
  const double one_minus = 1.0 - rho;
  const double sqrho = std::sqrt(rho);
  const double z = 2.0 * r1 * r2 * sqrho / one_minus;
  const double exponent = -(r1 * r1 + r2 * r2 - 2.0 * sqrho * r1 * r2) / one_minus;
  return 4.0 * r1 * r2 / one_minus * std::exp(exponent) * bessel_i0_scaled(z);
}

/// Stationary probability of state n: exponential SNR law of Rayleigh fading.
inline double state_probability(int n, const StatePartition& partition, double mean_snr) {
  if (n < 0 || n >= partition.n_states()) throw DomainError("state_probability: state index out of range");
  if (!(mean_snr > 0.0)) throw DomainError("state_probability: mean_snr must be positive");
  const double lo = partition.lower(n);
  const double hi = partition.upper(n);
  const double upper_term = std::isfinite(hi) ? std::exp(-hi / mean_snr) : 0.0;
  return std::exp(-lo / mean_snr) - upper_term;
}

namespace detail {

inline QuadratureSpec transition_spec() {
  QuadratureSpec spec;
  spec.abs_tol = 1e-300;  // per-entry absolute floors are derived from pi_n
  spec.rel_tol = 1e-9;
  spec.max_subdivisions = 40000;
  return spec;
}

// Weighted joint mass of (state n, state k) under the rho-correlated pair
// kernel, in envelope coordinates: integral of weight(r1, r2) * pdf over the
// two state boxes. The conditional density of r2 given r1 is a bump of width
// ~sqrt((1-rho)/2) centered near sqrt(rho) r1, and the r1 marginal decays on
// the scale decay_scale_r2 in r1^2; the schedules pin both features so the
// adaptive rule cannot step over them. weight_bound(r1) must dominate
// weight(r1, r2) over the inner box.
template <typename W, typename B>
double weighted_pair_box_mass(const StatePartition& partition, double mean_snr, double rho, int n, int k,
                              double decay_scale_r2, const W& weight, const B& weight_bound,
                              const QuadratureSpec& spec) {
  auto zeta = [&](double gamma) { return std::isfinite(gamma) ? std::sqrt(gamma / mean_snr) : kInfinity; };
  const double r1_lo = zeta(partition.lower(n));
  const double r1_hi = zeta(partition.upper(n));
  const double r2_lo = zeta(partition.lower(k));
  const double r2_hi = zeta(partition.upper(k));
  const double sqrho = std::sqrt(rho);
  const double sigma = std::sqrt(0.5 * (1.0 - rho));

  std::vector<double> outer_mandatory;
  if (sqrho > 0.0) {
    if (r2_lo > 0.0) outer_mandatory.push_back(r2_lo / sqrho);
    if (std::isfinite(r2_hi)) outer_mandatory.push_back(r2_hi / sqrho);
  }
  const PiecewisePlan outer = make_axis_plan(r1_lo, r1_hi, decay_scale_r2, true, outer_mandatory);

  int budget = spec.max_subdivisions;
  auto inner_value = [&](double r1) {
    const double mu = sqrho * r1;
    const PiecewisePlan inner = make_axis_plan(
        r2_lo, r2_hi, decay_scale_r2, true, {mu - 8.0 * sigma, mu - 2.0 * sigma, mu + 2.0 * sigma, mu + 8.0 * sigma});
    const double bound = 2.0 * r1 * std::exp(-r1 * r1) * weight_bound(r1);
    const double inner_abs = std::max(1e-300, bound * 1e-13);
    return integrate_piecewise([&](double r2) { return weight(r1, r2) * bivariate_rayleigh_pdf(r1, r2, rho); },
                               inner, inner_abs, spec.rel_tol * 0.1, budget);
  };
  return integrate_piecewise(inner_value, outer, spec.abs_tol, spec.rel_tol, budget);
}

inline double pair_box_mass(const StatePartition& partition, double mean_snr, double rho, int n, int k,
                            const QuadratureSpec& spec, double abs_floor) {
  QuadratureSpec entry = spec;
  entry.abs_tol = std::max(1e-300, abs_floor);
  return weighted_pair_box_mass(
      partition, mean_snr, rho, n, k, 1.0, [](double, double) { return 1.0; }, [](double) { return 1.0; }, entry);
}

}  // namespace detail

/// P_{n,k}: probability the next transmission finds the channel in state k
/// given the current transmission saw state n (with state n's interval).
inline double transition_probability(int n, int k, const MarkovChannel& channel,
                                     const QuadratureSpec& spec = detail::transition_spec()) {
  const int states = channel.n_states();
  if (n < 0 || n >= states || k < 0 || k >= states) throw DomainError("transition_probability: state out of range");
  const double pi_n = channel.pi[static_cast<std::size_t>(n)];
  if (!(pi_n > 0.0)) throw DomainError("transition_probability: state " + std::to_string(n) + " has zero mass");
  const double rho = channel.rho[static_cast<std::size_t>(n)];
  if (rho >= 1.0) return n == k ? 1.0 : 0.0;
  if (rho == 0.0) return state_probability(k, channel.partition, channel.mean_snr);
  return detail::pair_box_mass(channel.partition, channel.mean_snr, rho, n, k, spec, pi_n * 1e-12) / pi_n;
}

/// Assembles the full chain: per-state correlation, stationary law and the
/// transition matrix. Rows whose raw quadrature sum strays from 1 by more
/// than 1e-6 raise a ConvergenceError; smaller residuals are renormalized.
inline MarkovChannel build_markov_channel(const FadingParams& params, const StatePartition& partition,
                                          const std::vector<double>& per_state_interval_s,
                                          std::optional<double> rho_override = std::nullopt,
                                          const QuadratureSpec& spec = detail::transition_spec()) {
  params.validate();
  partition.validate();
  const int states = partition.n_states();
  if (static_cast<int>(per_state_interval_s.size()) != states) {
    throw DomainError("build_markov_channel: need one interval per state");
  }
  for (double tau : per_state_interval_s) {
    if (!(tau > 0.0)) throw DomainError("build_markov_channel: intervals must be positive");
  }
  if (rho_override && (!(*rho_override >= 0.0) || !(*rho_override <= 1.0))) {
    throw DomainError("build_markov_channel: rho override must lie in [0,1]");
  }

  MarkovChannel channel;
  channel.partition = partition;
  channel.interval_s = per_state_interval_s;
  channel.mean_snr = params.mean_snr;
  channel.doppler_hz = params.doppler_hz;
  channel.rho.resize(static_cast<std::size_t>(states));
  channel.pi.resize(static_cast<std::size_t>(states));
  for (int n = 0; n < states; ++n) {
    double rho = rho_override ? *rho_override
                              : envelope_correlation(params.doppler_hz, per_state_interval_s[static_cast<std::size_t>(n)]);
    if (rho > 1.0 - 1e-12) rho = 1.0;  // degenerate path, the pair pdf is singular there
    channel.rho[static_cast<std::size_t>(n)] = rho;
    channel.pi[static_cast<std::size_t>(n)] = state_probability(n, partition, params.mean_snr);
  }
  channel.fully_correlated = true;
  for (double rho : channel.rho) {
    if (rho < 1.0) channel.fully_correlated = false;
  }

  channel.transition.assign(static_cast<std::size_t>(states), std::vector<double>(static_cast<std::size_t>(states), 0.0));
  for (int n = 0; n < states; ++n) {
    auto& row = channel.transition[static_cast<std::size_t>(n)];
    const double rho = channel.rho[static_cast<std::size_t>(n)];
    if (rho >= 1.0) {
      row[static_cast<std::size_t>(n)] = 1.0;
      continue;
    }
    if (rho == 0.0) {
      for (int k = 0; k < states; ++k) row[static_cast<std::size_t>(k)] = channel.pi[static_cast<std::size_t>(k)];
      continue;
    }
    const double pi_n = channel.pi[static_cast<std::size_t>(n)];
    if (!(pi_n > 0.0)) {
      // Unreachable state; keep the chain stochastic with a self loop.
      row[static_cast<std::size_t>(n)] = 1.0;
      continue;
    }
    double sum = 0.0;
    for (int k = 0; k < states; ++k) {
      double mass;
      try {
        mass = detail::pair_box_mass(partition, params.mean_snr, rho, n, k, spec, pi_n * 1e-12);
      } catch (const ConvergenceError& err) {
        throw ConvergenceError("build_markov_channel: quadrature failed at entry (" + std::to_string(n) + "," +
                                   std::to_string(k) + "): " + err.what(),
                               err.best_estimate(), err.error_bound());
      }
      row[static_cast<std::size_t>(k)] = mass / pi_n;
      sum += row[static_cast<std::size_t>(k)];
    }
    const double residual = std::abs(sum - 1.0);
    channel.max_row_residual = std::max(channel.max_row_residual, residual);
    if (residual > 1e-6) {
      throw ConvergenceError("build_markov_channel: row " + std::to_string(n) + " sums to " + std::to_string(sum),
                             sum, residual);
    }
    for (double& p : row) p /= sum;
  }
  return channel;
}

/// Correlated SNR sample path at the given instants. The complex channel
/// gain steps as g' = rho_g g + sqrt(1 - rho_g^2) w with rho_g = J0(2 pi f_D dt),
/// so consecutive SNR samples carry the J0^2 power correlation.
inline std::vector<double> sample_snr_path(const FadingParams& params, const std::vector<double>& times_s,
                                           std::uint64_t seed) {
  params.validate();
  for (std::size_t i = 1; i < times_s.size(); ++i) {
    if (!(times_s[i] > times_s[i - 1])) throw DomainError("sample_snr_path: times must strictly increase");
  }
  std::vector<double> snr;
  snr.reserve(times_s.size());
  if (times_s.empty()) return snr;
  RandomStream rng(mix_seed(seed, 0xC0A1ED5A));
  auto [x, y] = rng.normal_pair();
  double gr = x * 0.7071067811865476;  // unit mean square complex gain
  double gi = y * 0.7071067811865476;
  snr.push_back(params.mean_snr * (gr * gr + gi * gi));
  for (std::size_t i = 1; i < times_s.size(); ++i) {
    const double dt = times_s[i] - times_s[i - 1];
    const double rho_g = bessel_j0(2.0 * kPi * params.doppler_hz * dt);
    const double mix = std::sqrt(std::max(0.0, 1.0 - rho_g * rho_g));
    auto [wx, wy] = rng.normal_pair();
    gr = rho_g * gr + mix * wx * 0.7071067811865476;
    gi = rho_g * gi + mix * wy * 0.7071067811865476;
    snr.push_back(params.mean_snr * (gr * gr + gi * gi));
  }
  return snr;
}

}  // namespace harqlab
