#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "harqlab/numerics.hpp"
#include "harqlab/rng.hpp"

using namespace harqlab;

namespace {

// Test-local oracles, independent of the library code paths.

long double i0_series_oracle(long double x, int terms = 30) {
  long double q = x * x / 4.0L, term = 1.0L, sum = 1.0L;
  for (int k = 1; k <= terms; ++k) {
    term *= q / (static_cast<long double>(k) * k);
    sum += term;
  }
  return sum;
}

long double i0_scaled_asymptotic_oracle(long double x) {
  long double term = 1.0L, sum = 1.0L;
  for (int k = 1; k <= 30; ++k) {
    const long double odd = 2.0L * k - 1.0L;
    const long double next = term * odd * odd / (8.0L * k * x);
    if (next >= term) break;
    term = next;
    sum += term;
  }
  return sum / std::sqrt(2.0L * 3.141592653589793238L * x);
}

long double j0_series_oracle(long double x) {
  long double q = x * x / 4.0L, term = 1.0L, sum = 1.0L;
  for (int k = 1; k <= 60; ++k) {
    term *= -q / (static_cast<long double>(k) * k);
    sum += term;
  }
  return sum;
}

double j0_first_zero_by_bisection() {
  double lo = 2.0, hi = 3.0;
  for (int i = 0; i < 80; ++i) {
    const double mid = 0.5 * (lo + hi);
    if ((j0_series_oracle(lo) > 0) == (j0_series_oracle(mid) > 0)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("bessel_i0 matches the power series", "[numerics]") {
  CHECK(bessel_i0(0.0) == 1.0);
  CHECK_THAT(bessel_i0(1.0), Catch::Matchers::WithinRel(static_cast<double>(i0_series_oracle(1.0L)), 1e-13));
  CHECK_THAT(bessel_i0(1.0), Catch::Matchers::WithinRel(1.2660658777520083, 1e-12));
  // Unscaled value recovered from the scaled form without overflow.
  CHECK_THAT(bessel_i0(10.0), Catch::Matchers::WithinRel(std::exp(10.0) * bessel_i0_scaled(10.0), 1e-12));
  CHECK_THAT(bessel_i0_scaled(10.0),
             Catch::Matchers::WithinRel(static_cast<double>(i0_series_oracle(10.0L, 60) * std::exp(-10.0L)), 1e-12));
  CHECK_THAT(bessel_i0_scaled(10.0), Catch::Matchers::WithinRel(0.12783333716342861, 1e-11));
  CHECK_THROWS_AS(bessel_i0(-1.0), DomainError);
  CHECK_THROWS_AS(bessel_i0(std::numeric_limits<double>::quiet_NaN()), DomainError);
  CHECK_THROWS_AS(bessel_i0_scaled(-0.5), DomainError);
}

TEST_CASE("bessel_i0 branches agree across the crossover", "[numerics]") {
  for (double x : {14.0, 16.0, 18.0, 20.0, 25.0, 40.0}) {
    const double series = static_cast<double>(i0_series_oracle(x, 120) * std::exp(-static_cast<long double>(x)));
    const double asym = static_cast<double>(i0_scaled_asymptotic_oracle(x));
    CHECK_THAT(series, Catch::Matchers::WithinRel(asym, 1e-12));
    CHECK_THAT(bessel_i0_scaled(x), Catch::Matchers::WithinRel(series, 1e-12));
  }
}

TEST_CASE("bessel_i0_scaled stays in (0,1] and decreases", "[numerics]") {
  double prev = bessel_i0_scaled(0.0);
  CHECK(prev == 1.0);
  for (double x = 0.25; x <= 200.0; x += 0.25) {
    const double v = bessel_i0_scaled(x);
    CHECK(v > 0.0);
    CHECK(v <= prev);
    prev = v;
  }
}

TEST_CASE("bessel_j0 values and symmetry", "[numerics]") {
  CHECK(bessel_j0(0.0) == 1.0);
  const double zero = j0_first_zero_by_bisection();
  CHECK_THAT(zero, Catch::Matchers::WithinAbs(2.404825557695773, 1e-12));
  CHECK(std::abs(bessel_j0(zero)) < 1e-10);
  for (double x : {0.3, 1.7, 4.9, 11.0, 42.0}) {
    CHECK(bessel_j0(-x) == bessel_j0(x));
  }
  for (double x = 0.5; x <= 8.5; x += 0.5) {
    CHECK_THAT(bessel_j0(x), Catch::Matchers::WithinAbs(static_cast<double>(j0_series_oracle(x)), 1e-13));
  }
  // Large-argument branch against frozen high-precision references.
  CHECK_THAT(bessel_j0(12.0), Catch::Matchers::WithinAbs(0.047689310796833537, 1e-12));
  CHECK_THAT(bessel_j0(50.0), Catch::Matchers::WithinAbs(0.055812327669251815, 1e-12));
  CHECK_THAT(bessel_j0(100.0), Catch::Matchers::WithinAbs(0.019985850304223122, 1e-12));
  CHECK_THROWS_AS(bessel_j0(std::numeric_limits<double>::infinity()), DomainError);
}

TEST_CASE("integrate_1d hits known integrals", "[numerics]") {
  QuadratureSpec spec;
  spec.abs_tol = 1e-12;
  spec.rel_tol = 1e-11;
  CHECK_THAT(integrate_1d([](double x) { return std::exp(-x); }, 0.0, kInfinity, spec),
             Catch::Matchers::WithinAbs(1.0, 1e-9));
  CHECK_THAT(integrate_1d([](double x) { return 4.0 / (1.0 + x * x); }, 0.0, 1.0, spec),
             Catch::Matchers::WithinAbs(kPi, 1e-9));
  const double a1 = 274.7229, g1 = 7.9932;
  CHECK_THAT(integrate_1d([=](double x) { return a1 * std::exp(-g1 * x) * std::exp(-x); }, 0.0, kInfinity, spec),
             Catch::Matchers::WithinRel(a1 / (1.0 + g1), 1e-9));
}

TEST_CASE("integrate_1d input validation and convergence failure", "[numerics]") {
  QuadratureSpec spec;
  CHECK(integrate_1d([](double) { return 1.0; }, 2.0, 2.0, spec) == 0.0);
  CHECK_THROWS_AS(integrate_1d([](double) { return 1.0; }, 2.0, 1.0, spec), DomainError);
  CHECK_THROWS_AS(integrate_1d([](double) { return 1.0; }, kInfinity, 1.0, spec), DomainError);
  QuadratureSpec bad;
  bad.abs_tol = -1.0;
  CHECK_THROWS_AS(integrate_1d([](double) { return 1.0; }, 0.0, 1.0, bad), DomainError);

  QuadratureSpec tiny;
  tiny.abs_tol = 1e-300;
  tiny.rel_tol = 1e-14;
  tiny.max_subdivisions = 12;
  try {
    integrate_1d([](double x) { return std::cos(1e6 * x); }, 0.0, 1.0, tiny);
    FAIL("expected convergence error");
  } catch (const ConvergenceError& e) {
    CHECK(std::isfinite(e.best_estimate()));
    CHECK(e.error_bound() > 0.0);
  }
}

TEST_CASE("integrate_1d is linear on exponential mixtures", "[numerics]") {
  QuadratureSpec spec;
  spec.abs_tol = 1e-13;
  spec.rel_tol = 1e-11;
  RandomStream rng(20240811);
  for (int trial = 0; trial < 25; ++trial) {
    const double alpha = 6.0 * rng.uniform() - 3.0;
    const double beta = 6.0 * rng.uniform() - 3.0;
    const double r1 = 0.3 + 3.7 * rng.uniform();
    const double r2 = 0.3 + 3.7 * rng.uniform();
    auto f = [=](double x) { return std::exp(-r1 * x); };
    auto g = [=](double x) { return std::exp(-r2 * x); };
    auto mix = [=](double x) { return alpha * f(x) + beta * g(x); };
    const double lhs = integrate_1d(mix, 0.0, kInfinity, spec);
    const double rhs = alpha * integrate_1d(f, 0.0, kInfinity, spec) + beta * integrate_1d(g, 0.0, kInfinity, spec);
    CHECK_THAT(lhs, Catch::Matchers::WithinAbs(rhs, 1e-8 * (1.0 + std::abs(rhs))));
    CHECK_THAT(lhs, Catch::Matchers::WithinAbs(alpha / r1 + beta / r2, 1e-8 * (1.0 + std::abs(rhs))));
  }
}

TEST_CASE("integrate_2d separable and box integrals", "[numerics]") {
  QuadratureSpec spec;
  spec.abs_tol = 1e-11;
  spec.rel_tol = 1e-9;
  CHECK_THAT(integrate_2d([](double x, double y) { return std::exp(-x - y); }, 0.0, kInfinity, 0.0, kInfinity, spec),
             Catch::Matchers::WithinAbs(1.0, 1e-8));
  CHECK_THAT(integrate_2d([](double, double) { return 1.0; }, 0.0, 1.0, 0.0, 1.0, spec),
             Catch::Matchers::WithinAbs(1.0, 1e-10));
}

TEST_CASE("find_root_bracketed fundamentals", "[numerics]") {
  CHECK_THAT(find_root_bracketed([](double x) { return x - 2.0; }, 0.0, 10.0, 1e-12),
             Catch::Matchers::WithinAbs(2.0, 1e-11));
  const double zero = find_root_bracketed([](double x) { return bessel_j0(x); }, 2.0, 3.0, 1e-13);
  CHECK_THAT(zero, Catch::Matchers::WithinAbs(j0_first_zero_by_bisection(), 1e-10));
  CHECK_THAT(find_root_bracketed([](double x) { return std::exp(-x) - 0.5; }, 0.0, 5.0, 1e-13),
             Catch::Matchers::WithinAbs(0.6931471805599453, 1e-12));
  CHECK_THROWS_AS(find_root_bracketed([](double x) { return x + 1.0; }, 0.0, 1.0, 1e-9), BracketError);
  CHECK_THROWS_AS(find_root_bracketed([](double x) { return x; }, 1.0, 0.5, 1e-9), BracketError);
}

TEST_CASE("find_root_bracketed is stable under tolerance refinement", "[numerics]") {
  auto f = [](double x) { return std::cos(x) - x * x * 0.1; };
  double tol = 1e-4;
  double prev = find_root_bracketed(f, 0.0, 3.0, tol);
  for (int i = 0; i < 8; ++i) {
    tol /= 2.0;
    const double next = find_root_bracketed(f, 0.0, 3.0, tol);
    CHECK(std::abs(next - prev) < 2.0 * tol);
    prev = next;
  }
}
