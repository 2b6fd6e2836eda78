#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "harqlab/amc.hpp"
#include "harqlab/channel.hpp"
#include "harqlab/rng.hpp"

using namespace harqlab;

namespace {

constexpr double kJ0FirstZero = 2.404825557695773;

StatePartition solved_partition(double snr_db) {
  return solve_thresholds(default_mode_table(), db_to_linear(snr_db));
}

MarkovChannel default_channel(double snr_db, double doppler_hz, std::optional<double> rho_override = std::nullopt) {
  const ModeTable table = default_mode_table();
  const double mean = db_to_linear(snr_db);
  return build_markov_channel(FadingParams{mean, doppler_hz}, solve_thresholds(table, mean),
                              per_state_intervals(table, 2e-3, 1e-3), rho_override);
}

}  // namespace

TEST_CASE("envelope_correlation follows J0 squared", "[channel]") {
  CHECK(envelope_correlation(0.0, 3e-3) == 1.0);
  const double j = bessel_j0(2.0 * kPi * 50.0 * 3e-3);
  CHECK_THAT(envelope_correlation(50.0, 3e-3), Catch::Matchers::WithinRel(j * j, 1e-13));
  CHECK_THAT(envelope_correlation(50.0, 3e-3), Catch::Matchers::WithinAbs(0.6240403313443653, 1e-9));
  const double f_zero = kJ0FirstZero / (2.0 * kPi * 3e-3);
  CHECK(envelope_correlation(f_zero, 3e-3) < 1e-12);
  CHECK_THROWS_AS(envelope_correlation(-1.0, 1e-3), DomainError);
  CHECK_THROWS_AS(envelope_correlation(10.0, 0.0), DomainError);
}

TEST_CASE("bivariate_rayleigh_pdf factorizes at rho 0", "[channel]") {
  for (double r1 : {0.2, 0.9, 1.7}) {
    for (double r2 : {0.1, 1.0, 2.3}) {
      const double expect = (2.0 * r1 * std::exp(-r1 * r1)) * (2.0 * r2 * std::exp(-r2 * r2));
      CHECK_THAT(bivariate_rayleigh_pdf(r1, r2, 0.0), Catch::Matchers::WithinRel(expect, 1e-14));
    }
  }
  CHECK_THROWS_AS(bivariate_rayleigh_pdf(1.0, 1.0, 1.0), DomainError);
  CHECK_THROWS_AS(bivariate_rayleigh_pdf(1.0, 1.0, -0.1), DomainError);
  CHECK_THROWS_AS(bivariate_rayleigh_pdf(-1.0, 1.0, 0.5), DomainError);
  // The exp-scaled Bessel form stays finite deep into the correlated regime.
  CHECK(std::isfinite(bivariate_rayleigh_pdf(30.0, 30.0, 0.9999)));
  CHECK(std::isfinite(bivariate_rayleigh_pdf(30.0, 1.0, 0.9999)));
}

TEST_CASE("bivariate_rayleigh_pdf normalizes to one", "[channel]") {
  QuadratureSpec spec;
  spec.abs_tol = 1e-10;
  spec.rel_tol = 1e-9;
  spec.max_subdivisions = 20000;
  for (double rho : {0.0, 0.5, 0.9}) {
    const double mass = integrate_2d([rho](double r1, double r2) { return bivariate_rayleigh_pdf(r1, r2, rho); },
                                     0.0, kInfinity, 0.0, kInfinity, spec);
    CHECK_THAT(mass, Catch::Matchers::WithinAbs(1.0, 1e-7));
  }
}

TEST_CASE("bivariate_rayleigh_pdf marginal is Rayleigh for any rho", "[channel]") {
  QuadratureSpec spec;
  spec.abs_tol = 1e-13;
  spec.rel_tol = 1e-10;
  spec.max_subdivisions = 20000;
  for (double r1 : {0.3, 1.0, 2.0}) {
    const double marginal =
        integrate_1d([r1](double r2) { return bivariate_rayleigh_pdf(r1, r2, 0.5); }, 0.0, kInfinity, spec);
    CHECK_THAT(marginal, Catch::Matchers::WithinRel(2.0 * r1 * std::exp(-r1 * r1), 1e-8));
  }
}

TEST_CASE("state_probability is the exponential interval mass", "[channel]") {
  StatePartition one;
  one.thresholds = {0.0, kInfinity};
  CHECK(state_probability(0, one, 2.0) == 1.0);

  const double mean = 3.7;
  StatePartition two;
  two.thresholds = {0.0, mean * std::log(2.0), kInfinity};
  CHECK_THAT(state_probability(1, two, mean), Catch::Matchers::WithinRel(0.5, 1e-12));

  const StatePartition part = solved_partition(10.0);
  double total = 0.0;
  for (int n = 0; n < part.n_states(); ++n) total += state_probability(n, part, db_to_linear(10.0));
  CHECK_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-9));
  CHECK_THROWS_AS(state_probability(99, part, 1.0), DomainError);
}

TEST_CASE("transition rows reduce to pi when rho vanishes", "[channel]") {
  const MarkovChannel exact = default_channel(10.0, 0.0, 0.0);
  for (int n = 0; n < exact.n_states(); ++n) {
    for (int k = 0; k < exact.n_states(); ++k) {
      CHECK_THAT(exact.transition[n][k], Catch::Matchers::WithinRel(exact.pi[k], 1e-12));
    }
  }
  // Near-zero rho exercises the quadrature path toward the same limit.
  const MarkovChannel near = default_channel(10.0, 0.0, 1e-9);
  for (int n = 0; n < near.n_states(); ++n) {
    for (int k = 0; k < near.n_states(); ++k) {
      CHECK_THAT(near.transition[n][k], Catch::Matchers::WithinAbs(near.pi[k], 1e-4));
    }
  }
}

TEST_CASE("fully correlated channel never changes state", "[channel]") {
  const MarkovChannel ch = default_channel(10.0, 0.0);
  CHECK(ch.fully_correlated);
  for (int n = 0; n < ch.n_states(); ++n) {
    for (int k = 0; k < ch.n_states(); ++k) {
      CHECK(ch.transition[n][k] == (n == k ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("rows are stochastic across Doppler settings", "[channel]") {
  for (double fd : {10.0, 30.0, 50.0}) {
    const MarkovChannel ch = default_channel(10.0, fd);
    CHECK(ch.max_row_residual <= 1e-6);
    for (int n = 0; n < ch.n_states(); ++n) {
      double sum = 0.0;
      for (double p : ch.transition[n]) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0 + 1e-12);
        sum += p;
      }
      CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-12));
      CHECK(ch.rho[n] >= 0.0);
      CHECK(ch.rho[n] <= 1.0);
    }
  }
}

TEST_CASE("independence limit at a Bessel zero", "[channel]") {
  // Equal intervals put every state at the same lag, tuned to the first J0
  // zero so rho collapses to ~1e-30 while the quadrature path still runs.
  const ModeTable table = default_mode_table();
  const double mean = db_to_linear(10.0);
  const StatePartition part = solve_thresholds(table, mean);
  const std::vector<double> equal(static_cast<std::size_t>(part.n_states()), 3e-3);
  const double f_zero = kJ0FirstZero / (2.0 * kPi * 3e-3);
  const MarkovChannel ch = build_markov_channel(FadingParams{mean, f_zero}, part, equal);
  for (int n = 0; n < ch.n_states(); ++n) {
    CHECK(ch.rho[n] <= 1e-6);
    for (int k = 0; k < ch.n_states(); ++k) {
      CHECK_THAT(ch.transition[n][k], Catch::Matchers::WithinAbs(ch.pi[k], 1e-3));
    }
  }
}

TEST_CASE("strong correlation dominates the diagonal", "[channel]") {
  const MarkovChannel ch = default_channel(10.0, 10.0, 0.99);
  for (int n = 0; n < ch.n_states(); ++n) {
    if (!(ch.pi[n] > 1e-6)) continue;
    for (int k = 0; k < ch.n_states(); ++k) {
      if (k != n) CHECK(ch.transition[n][n] > ch.transition[n][k]);
    }
  }
}

TEST_CASE("transition matrix matches Monte Carlo pair sampling", "[channel]") {
  const double rho = 0.99;
  const MarkovChannel ch = default_channel(10.0, 10.0, rho);
  const double mean = ch.mean_snr;
  const double rho_g = std::sqrt(rho);
  const double mix = std::sqrt(1.0 - rho);
  RandomStream rng(7771);
  const long long draws = 10000000;
  std::vector<std::vector<long long>> counts(static_cast<std::size_t>(ch.n_states()),
                                             std::vector<long long>(static_cast<std::size_t>(ch.n_states()), 0));
  std::vector<long long> row_totals(static_cast<std::size_t>(ch.n_states()), 0);
  const double inv_sqrt2 = 0.7071067811865476;
  for (long long i = 0; i < draws; ++i) {
    auto [x1, y1] = rng.normal_pair();
    auto [wx, wy] = rng.normal_pair();
    const double g1r = x1 * inv_sqrt2, g1i = y1 * inv_sqrt2;
    const double g2r = rho_g * g1r + mix * wx * inv_sqrt2;
    const double g2i = rho_g * g1i + mix * wy * inv_sqrt2;
    const int n = ch.partition.index_of(mean * (g1r * g1r + g1i * g1i));
    const int k = ch.partition.index_of(mean * (g2r * g2r + g2i * g2i));
    ++counts[n][k];
    ++row_totals[n];
  }
  int tested = 0;
  for (int n = 0; n < ch.n_states(); ++n) {
    if (row_totals[n] < 1000) continue;
    for (int k = 0; k < ch.n_states(); ++k) {
      const double p = ch.transition[n][k];
      const double expected = static_cast<double>(row_totals[n]) * p;
      if (expected < 100.0) continue;
      const double se = std::sqrt(expected * (1.0 - p));
      INFO("entry (" << n << "," << k << ")");
      CHECK(std::abs(static_cast<double>(counts[n][k]) - expected) <= 3.0 * se + 1.0);
      ++tested;
    }
  }
  CHECK(tested >= 10);
}

TEST_CASE("detailed balance holds with equal intervals", "[channel]") {
  const ModeTable table = default_mode_table();
  const double mean = db_to_linear(12.0);
  const StatePartition part = solve_thresholds(table, mean);
  const std::vector<double> equal(static_cast<std::size_t>(part.n_states()), 2.5e-3);
  const MarkovChannel ch = build_markov_channel(FadingParams{mean, 40.0}, part, equal);
  for (int n = 0; n < ch.n_states(); ++n) {
    for (int k = 0; k < ch.n_states(); ++k) {
      const double lhs = ch.pi[n] * ch.transition[n][k];
      const double rhs = ch.pi[k] * ch.transition[k][n];
      if (lhs < 1e-30 && rhs < 1e-30) continue;
      CHECK_THAT(lhs, Catch::Matchers::WithinRel(rhs, 1e-6));
    }
  }
}

TEST_CASE("build_markov_channel validates its inputs", "[channel]") {
  const ModeTable table = default_mode_table();
  const double mean = db_to_linear(10.0);
  const StatePartition part = solve_thresholds(table, mean);
  std::vector<double> intervals = per_state_intervals(table, 2e-3, 1e-3);
  intervals.pop_back();
  CHECK_THROWS_AS(build_markov_channel(FadingParams{mean, 10.0}, part, intervals), DomainError);
  std::vector<double> bad = per_state_intervals(table, 2e-3, 1e-3);
  bad[2] = -1.0;
  CHECK_THROWS_AS(build_markov_channel(FadingParams{mean, 10.0}, part, bad), DomainError);
  CHECK_THROWS_AS(build_markov_channel(FadingParams{mean, 10.0}, part, per_state_intervals(table, 2e-3, 1e-3), 1.5),
                  DomainError);
  CHECK_THROWS_AS(build_markov_channel(FadingParams{-1.0, 10.0}, part, per_state_intervals(table, 2e-3, 1e-3)),
                  DomainError);
}

TEST_CASE("zero-mass states are handled explicitly", "[channel]") {
  StatePartition part;
  part.thresholds = {0.0, 1.0, 800.0, kInfinity};
  const std::vector<double> intervals(3, 3e-3);
  const MarkovChannel ch = build_markov_channel(FadingParams{1.0, 30.0}, part, intervals);
  CHECK(ch.pi[2] == 0.0);
  CHECK(ch.transition[2][2] == 1.0);  // unreachable row kept stochastic
  CHECK_THROWS_AS(transition_probability(2, 0, ch), DomainError);
}

TEST_CASE("sample_snr_path is deterministic and flat at zero Doppler", "[channel]") {
  std::vector<double> times;
  for (int i = 0; i < 200; ++i) times.push_back(i * 1e-3);
  const FadingParams params{4.0, 0.0};
  const std::vector<double> a = sample_snr_path(params, times, 99);
  const std::vector<double> b = sample_snr_path(params, times, 99);
  CHECK(a == b);
  for (double snr : a) CHECK(snr == a.front());
  const std::vector<double> c = sample_snr_path(params, times, 100);
  CHECK(c.front() != a.front());
  CHECK_THROWS_AS(sample_snr_path(params, std::vector<double>{0.0, 0.0}, 1), DomainError);
}

TEST_CASE("sample_snr_path has the right mean and lag correlation", "[channel]") {
  const double mean_snr = 2.5;
  const double fd = 80.0;
  const double dt = 2e-3;
  std::vector<double> times;
  times.reserve(1000001);
  for (int i = 0; i <= 1000000; ++i) times.push_back(i * dt);
  const std::vector<double> path = sample_snr_path(FadingParams{mean_snr, fd}, times, 4242);

  double sum = 0.0;
  for (double v : path) sum += v;
  const double sample_mean = sum / static_cast<double>(path.size());
  CHECK_THAT(sample_mean, Catch::Matchers::WithinRel(mean_snr, 5e-3));

  double sxy = 0.0, sx = 0.0, sx2 = 0.0, sy = 0.0, sy2 = 0.0;
  const std::size_t pairs = path.size() - 1;
  for (std::size_t i = 0; i < pairs; ++i) {
    sx += path[i];
    sy += path[i + 1];
    sx2 += path[i] * path[i];
    sy2 += path[i + 1] * path[i + 1];
    sxy += path[i] * path[i + 1];
  }
  const double np = static_cast<double>(pairs);
  const double cov = sxy / np - (sx / np) * (sy / np);
  const double var_x = sx2 / np - (sx / np) * (sx / np);
  const double var_y = sy2 / np - (sy / np) * (sy / np);
  const double corr = cov / std::sqrt(var_x * var_y);
  const double expected = envelope_correlation(fd, dt);
  CHECK_THAT(corr, Catch::Matchers::WithinAbs(expected, 0.01));
}

TEST_CASE("sampled state pairs match the transition matrix", "[channel]") {
  // Equal intervals so a fixed-step path observes the same lag as every row.
  const ModeTable table = default_mode_table();
  const double mean = db_to_linear(10.0);
  const StatePartition part = solve_thresholds(table, mean);
  const double tau = 3e-3;
  const std::vector<double> equal(static_cast<std::size_t>(part.n_states()), tau);
  const double fd = 45.0;
  const MarkovChannel ch = build_markov_channel(FadingParams{mean, fd}, part, equal);

  std::vector<double> times;
  times.reserve(1000001);
  for (int i = 0; i <= 1000000; ++i) times.push_back(i * tau);
  const std::vector<double> path = sample_snr_path(FadingParams{mean, fd}, times, 31337);

  const int states = ch.n_states();
  std::vector<std::vector<long long>> counts(static_cast<std::size_t>(states),
                                             std::vector<long long>(static_cast<std::size_t>(states), 0));
  std::vector<long long> row_totals(static_cast<std::size_t>(states), 0);
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    const int n = part.index_of(path[i]);
    const int k = part.index_of(path[i + 1]);
    ++counts[n][k];
    ++row_totals[n];
  }
  int tested = 0;
  for (int n = 0; n < states; ++n) {
    if (row_totals[n] < 1000) continue;
    for (int k = 0; k < states; ++k) {
      const double p = ch.transition[n][k];
      const double expected = static_cast<double>(row_totals[n]) * p;
      if (expected < 100.0) continue;
      const double se = std::sqrt(expected * (1.0 - p));
      INFO("entry (" << n << "," << k << ")");
      CHECK(std::abs(static_cast<double>(counts[n][k]) - expected) <= 3.0 * se + 1.0);
      ++tested;
    }
  }
  CHECK(tested >= 10);
}
