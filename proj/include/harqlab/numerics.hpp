#pragma once
// Special functions, adaptive quadrature and bracketed root finding shared by
// the analytical engines. Everything here is a pure function of its
// arguments and safe to call concurrently.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace harqlab {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();
inline constexpr double kPi = 3.14159265358979323846;

class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class BracketError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when the subdivision budget runs out before the tolerance is met.
/// Carries the best estimate so far and its error bound.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double best_estimate, double error_bound)
      : std::runtime_error(what), best_estimate_(best_estimate), error_bound_(error_bound) {}

  double best_estimate() const { return best_estimate_; }
  double error_bound() const { return error_bound_; }

 private:
  double best_estimate_;
  double error_bound_;
};

struct QuadratureSpec {
  double abs_tol = 1e-10;
  double rel_tol = 1e-8;
  int max_subdivisions = 2000;

  void validate() const {
    if (!(abs_tol > 0.0) || !(rel_tol > 0.0) || max_subdivisions < 1) {
      throw DomainError("QuadratureSpec: abs_tol and rel_tol must be positive, max_subdivisions >= 1");
    }
  }
};

// ---------------------------------------------------------------------------
// Modified Bessel function I0 and the exp-scaled form e^-x I0(x).
// ---------------------------------------------------------------------------

namespace detail {

inline long double i0_series(long double x) {
  // All terms positive, no cancellation. Converges quickly for x <= ~20.
  const long double q = x * x / 4.0L;
  long double term = 1.0L, sum = 1.0L;
  for (int k = 1; k < 200; ++k) {
    term *= q / (static_cast<long double>(k) * k);
    sum += term;
    if (term < sum * 1e-22L) break;
  }
  return sum;
}

inline long double i0_scaled_asymptotic(long double x) {
  // e^-x I0(x) ~ (2 pi x)^-1/2 * sum_k ((2k-1)!!)^2 / (k! 8^k x^k).
  long double term = 1.0L, sum = 1.0L;
  for (int k = 1; k <= 40; ++k) {
    const long double odd = 2.0L * k - 1.0L;
    const long double next = term * odd * odd / (8.0L * k * x);
    if (next >= term) break;  // asymptotic series started diverging
    term = next;
    sum += term;
    if (term < sum * 1e-19L) break;
  }
  return sum / std::sqrt(2.0L * static_cast<long double>(kPi) * x);
}

}  // namespace detail

/// e^-x I0(x); in (0, 1] for x >= 0 and nonincreasing. Never overflows.
inline double bessel_i0_scaled(double x) {
  if (!std::isfinite(x) || x < 0.0) throw DomainError("bessel_i0_scaled: x must be finite and >= 0");
  if (x <= 18.0) {
    return static_cast<double>(std::exp(static_cast<long double>(-x)) * detail::i0_series(x));
  }
  return static_cast<double>(detail::i0_scaled_asymptotic(x));
}

/// I0(x) for x >= 0. Overflows to +inf past x ~ 713 like e^x does.
inline double bessel_i0(double x) {
  if (!std::isfinite(x) || x < 0.0) throw DomainError("bessel_i0: x must be finite and >= 0");
  if (x <= 18.0) return static_cast<double>(detail::i0_series(x));
  return static_cast<double>(std::exp(static_cast<long double>(x)) * detail::i0_scaled_asymptotic(x));
}

// ---------------------------------------------------------------------------
// Adaptive Gauss-Kronrod quadrature (7-15 pair).
// ---------------------------------------------------------------------------

namespace detail {

// Standard 15-point Kronrod nodes/weights with the embedded 7-point Gauss rule.
inline constexpr double kGK15Nodes[8] = {
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000};

inline constexpr double kGK15WeightsK[8] = {
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714};

inline constexpr double kGK15WeightsG[4] = {
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327};

struct PanelResult {
  double value = 0.0;
  double error = 0.0;
};

template <typename F>
PanelResult gk15(const F& f, double a, double b) {
  const double center = 0.5 * (a + b);
  const double halfwidth = 0.5 * (b - a);
  const double fc = f(center);
  double result_k = kGK15WeightsK[7] * fc;
  double result_g = kGK15WeightsG[3] * fc;
  for (int j = 0; j < 7; ++j) {
    const double offset = halfwidth * kGK15Nodes[j];
    const double f1 = f(center - offset);
    const double f2 = f(center + offset);
    result_k += kGK15WeightsK[j] * (f1 + f2);
    if (j % 2 == 1) result_g += kGK15WeightsG[(j - 1) / 2] * (f1 + f2);
  }
  PanelResult r;
  r.value = result_k * halfwidth;
  r.error = std::abs((result_k - result_g) * halfwidth);
  if (!std::isfinite(r.value)) throw DomainError("integrate: integrand produced a non-finite value");
  return r;
}

struct Panel {
  double a, b, value, error;
  std::size_t seq;  // tie-breaker so the refinement order is deterministic
};

struct PanelLess {
  bool operator()(const Panel& x, const Panel& y) const {
    if (x.error != y.error) return x.error < y.error;
    return x.seq > y.seq;
  }
};

// Globally adaptive rule on a finite interval. `budget` is decremented as
// panels are spent so a semi-infinite outer loop can share one allowance.
template <typename F>
double adaptive_finite(const F& f, double a, double b, double abs_tol, double rel_tol, int& budget) {
  std::vector<Panel> heap;
  std::size_t seq = 0;
  // Start bisected: a single 15-point panel can rate itself converged while
  // a narrow feature sits between its nodes.
  const double split = 0.5 * (a + b);
  double total_value = 0.0;
  double total_error = 0.0;
  for (const auto& [lo, hi] : {std::pair{a, split}, std::pair{split, b}}) {
    if (!(hi > lo)) continue;
    PanelResult r = gk15(f, lo, hi);
    --budget;
    heap.push_back(Panel{lo, hi, r.value, r.error, seq++});
    total_value += r.value;
    total_error += r.error;
  }
  const PanelLess less;
  std::make_heap(heap.begin(), heap.end(), less);
  while (total_error > std::max(abs_tol, rel_tol * std::abs(total_value))) {
    if (budget <= 1 || heap.size() >= 100000) {
      throw ConvergenceError("integrate: subdivision budget exhausted", total_value, total_error);
    }
    std::pop_heap(heap.begin(), heap.end(), less);
    Panel worst = heap.back();
    heap.pop_back();
    const double mid = 0.5 * (worst.a + worst.b);
    if (mid <= worst.a || mid >= worst.b) {
      throw ConvergenceError("integrate: interval cannot be subdivided further", total_value, total_error);
    }
    PanelResult left = gk15(f, worst.a, mid);
    PanelResult right = gk15(f, mid, worst.b);
    budget -= 2;
    total_value += left.value + right.value - worst.value;
    total_error += left.error + right.error - worst.error;
    heap.push_back(Panel{worst.a, mid, left.value, left.error, seq++});
    std::push_heap(heap.begin(), heap.end(), less);
    heap.push_back(Panel{mid, worst.b, right.value, right.error, seq++});
    std::push_heap(heap.begin(), heap.end(), less);
  }
  return total_value;
}

// A piecewise integration schedule. Every piece between consecutive breaks
// is integrated (the count is bounded by construction, and pieces whose
// integrand has underflowed cost almost nothing). `to_infinity` continues
// past the last break with doubling segments that stop once their
// contribution keeps shrinking below the running tolerance; all features are
// inside the break list, so the tail is a plain decaying remainder.
struct PiecewisePlan {
  std::vector<double> breaks;
  bool to_infinity = false;
};

// Schedule builders. Breaks advance by doubling steps of `scale` (in the
// squared coordinate for the quadratic flavor, matching Rayleigh-envelope
// decay) so a boundary layer at the lower edge is always resolved; mandatory
// points mark features (bumps, kinks, capture transitions) that must be
// reached before early termination is allowed.
inline PiecewisePlan make_axis_plan(double lo, double hi, double scale, bool quadratic,
                                    const std::vector<double>& mandatory) {
  PiecewisePlan plan;
  plan.to_infinity = !std::isfinite(hi);
  std::vector<double> pts{lo};
  const double lo_c = quadratic ? lo * lo : lo;
  const double hi_c = std::isfinite(hi) ? (quadratic ? hi * hi : hi) : kInfinity;
  // A finite box is covered completely; toward infinity a handful of steps
  // resolve the lower edge and the doubling tail handles the remainder.
  const int max_steps = std::isfinite(hi) ? 48 : 7;
  for (int j = 0; j < max_steps; ++j) {
    const double v = lo_c + scale * std::ldexp(1.0, j);
    if (!(v < hi_c)) break;
    pts.push_back(quadratic ? std::sqrt(v) : v);
  }
  for (double m : mandatory) {
    if (std::isfinite(m) && m > lo && (!std::isfinite(hi) || m < hi)) pts.push_back(m);
  }
  if (std::isfinite(hi)) pts.push_back(hi);
  std::sort(pts.begin(), pts.end());
  for (double p : pts) {
    if (plan.breaks.empty() || p > plan.breaks.back() + 1e-12 * (std::abs(plan.breaks.back()) + 1e-30)) {
      plan.breaks.push_back(p);
    }
  }
  if (std::isfinite(hi) && plan.breaks.back() != hi) plan.breaks.back() = hi;
  return plan;
}

template <typename F>
double integrate_piecewise(const F& f, const PiecewisePlan& plan, double abs_tol, double rel_tol, int& budget) {
  double accum = 0.0;
  double prev_mag = kInfinity;
  int shrinking = 0;
  auto add_piece = [&](double lo, double hi) {
    const double piece =
        adaptive_finite(f, lo, hi, std::max(abs_tol / 8.0, rel_tol * std::abs(accum) / 8.0), rel_tol, budget);
    accum += piece;
    const double mag = std::abs(piece);
    shrinking = (mag <= prev_mag) ? shrinking + 1 : 0;
    prev_mag = mag;
    return shrinking >= 2 && mag <= std::max(abs_tol, rel_tol * std::abs(accum)) / 10.0;
  };
  for (std::size_t i = 0; i + 1 < plan.breaks.size(); ++i) {
    add_piece(plan.breaks[i], plan.breaks[i + 1]);
  }
  if (plan.to_infinity) {
    double x = plan.breaks.back();
    double h = plan.breaks.size() >= 2 ? std::max(plan.breaks.back() - plan.breaks[plan.breaks.size() - 2], 1e-8)
                                       : std::max(1.0, 0.5 * std::abs(x));
    shrinking = 0;
    prev_mag = kInfinity;
    for (int seg = 0; seg < 64; ++seg) {
      if (add_piece(x, x + h)) return accum;
      x += h;
      h *= 2.0;
    }
    throw ConvergenceError("integrate_piecewise: tail did not decay within the segment allowance", accum, prev_mag);
  }
  return accum;
}

}  // namespace detail

/// Integrates f over [a, b]; b may be +infinity. Semi-infinite ranges are
/// handled by deterministic segment doubling: segments [x, x+h], h doubling,
/// stop once a segment's contribution falls below a tenth of the running
/// tolerance (the integrands used here all decay exponentially).
template <typename F>
double integrate_1d(const F& f, double a, double b, const QuadratureSpec& spec = {}) {
  spec.validate();
  if (!std::isfinite(a)) throw DomainError("integrate_1d: lower limit must be finite");
  if (std::isnan(b)) throw DomainError("integrate_1d: upper limit is NaN");
  if (b <= a) {
    if (b == a) return 0.0;
    throw DomainError("integrate_1d: upper limit must exceed lower limit");
  }
  int budget = spec.max_subdivisions;
  if (std::isfinite(b)) {
    return detail::adaptive_finite(f, a, b, spec.abs_tol, spec.rel_tol, budget);
  }
  const double seg_abs = spec.abs_tol / 16.0;
  const double seg_rel = spec.rel_tol / 2.0;
  double accum = 0.0;
  double x = a;
  double h = std::max(1.0, 0.5 * std::abs(a));
  int shrinking = 0;
  double prev_mag = kInfinity;
  for (int seg = 0; seg < 64; ++seg) {
    const double piece =
        detail::adaptive_finite(f, x, x + h, std::max(seg_abs, seg_rel * std::abs(accum) / 8.0), seg_rel, budget);
    accum += piece;
    const double mag = std::abs(piece);
    shrinking = (mag <= prev_mag) ? shrinking + 1 : 0;  // equality matters: underflowed tails are flat zero
    prev_mag = mag;
    if (shrinking >= 2 && mag <= std::max(spec.abs_tol, spec.rel_tol * std::abs(accum)) / 10.0) {
      return accum;
    }
    x += h;
    h *= 2.0;
  }
  throw ConvergenceError("integrate_1d: tail did not decay within the segment allowance", accum, prev_mag);
}

/// Tensorized adaptive rule: inner integral over y per outer x node, both
/// with tightened tolerances. Either range may be semi-infinite.
template <typename F>
double integrate_2d(const F& f, double x_lo, double x_hi, double y_lo, double y_hi,
                    const QuadratureSpec& spec = {}) {
  spec.validate();
  QuadratureSpec inner = spec;
  inner.abs_tol = spec.abs_tol / 10.0;
  inner.rel_tol = spec.rel_tol / 10.0;
  auto g = [&](double x) { return integrate_1d([&](double y) { return f(x, y); }, y_lo, y_hi, inner); };
  return integrate_1d(g, x_lo, x_hi, spec);
}

// ---------------------------------------------------------------------------
// Bessel function of the first kind, order zero.
// ---------------------------------------------------------------------------

namespace detail {

inline long double j0_series(long double x) {
  // Alternating series; fine in extended precision up to |x| ~ 9.
  const long double q = x * x / 4.0L;
  long double term = 1.0L, sum = 1.0L;
  for (int k = 1; k < 200; ++k) {
    term *= -q / (static_cast<long double>(k) * k);
    sum += term;
    if (std::abs(term) < 1e-22L) break;
  }
  return sum;
}

}  // namespace detail

/// J0(x), absolute error below 1e-12 on |x| <= 100. Even in x.
inline double bessel_j0(double x) {
  if (!std::isfinite(x)) throw DomainError("bessel_j0: x must be finite");
  const double ax = std::abs(x);
  if (ax <= 9.0) return static_cast<double>(detail::j0_series(ax));
  // Integral representation (1/pi) int_0^pi cos(x sin t) dt, evaluated with
  // the adaptive rule. Only used off the hot paths (production arguments for
  // the Doppler correlation stay well inside the series branch).
  QuadratureSpec spec;
  spec.abs_tol = 1e-14;
  spec.rel_tol = 1e-13;
  spec.max_subdivisions = 6000;
  const double integral = integrate_1d([ax](double t) { return std::cos(ax * std::sin(t)); }, 0.0, kPi, spec);
  return integral / kPi;
}

// ---------------------------------------------------------------------------
// Root finding.
// ---------------------------------------------------------------------------

/// Bisection on a sign-changing bracket. Deterministic; returns the bracket
/// midpoint once its width drops below tol (or an exact zero if one is hit).
template <typename F>
double find_root_bracketed(const F& f, double lo, double hi, double tol) {
  if (!std::isfinite(lo) || !std::isfinite(hi) || lo >= hi) {
    throw BracketError("find_root_bracketed: need finite lo < hi");
  }
  if (!(tol > 0.0)) throw BracketError("find_root_bracketed: tol must be positive");
  double flo = f(lo);
  double fhi = f(hi);
  if (std::isnan(flo) || std::isnan(fhi)) throw DomainError("find_root_bracketed: f not finite at bracket");
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if ((flo > 0.0) == (fhi > 0.0)) {
    throw BracketError("find_root_bracketed: f(lo) and f(hi) have the same sign");
  }
  for (int it = 0; it < 200 && (hi - lo) > tol; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if ((fm > 0.0) == (flo > 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace harqlab
