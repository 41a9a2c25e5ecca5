#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

namespace amb {

/// Closed or half-infinite integration interval; endpoints may be +-inf.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool finite() const { return std::isfinite(lo) && std::isfinite(hi); }
  bool symmetric() const { return lo == -hi; }
  double clamp(double x) const { return x < lo ? lo : (x > hi ? hi : x); }
};

struct QuadratureResult {
  double value = 0.0;
  double error = 0.0;
  std::size_t evaluations = 0;
  bool converged = true;
};

namespace detail {

// 7-point Gauss / 15-point Kronrod nodes and weights on [-1, 1].
inline constexpr double kKronrodNodes[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr double kKronrodWeights[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr double kGaussWeights[4] = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

template <class F>
std::pair<double, double> gauss_kronrod15(const F& f, double a, double b) {
  const double center = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  const double fc = f(center);
  double kronrod = fc * kKronrodWeights[7];
  double gauss = fc * kGaussWeights[3];
  for (int j = 0; j < 7; ++j) {
    const double dx = half * kKronrodNodes[j];
    const double sum = f(center - dx) + f(center + dx);
    kronrod += kKronrodWeights[j] * sum;
    if (j % 2 == 1) gauss += kGaussWeights[j / 2] * sum;
  }
  return {kronrod * half, std::abs((kronrod - gauss) * half)};
}

template <class F>
QuadratureResult integrate_finite(const F& f, double a, double b, double abs_tol,
                                  std::size_t max_panels) {
  QuadratureResult out;
  if (a == b) return out;
  const double total_width = std::abs(b - a);
  std::vector<std::pair<double, double>> stack{{a, b}};
  std::size_t panels = 0;
  while (!stack.empty()) {
    auto [lo, hi] = stack.back();
    stack.pop_back();
    auto [value, err] = gauss_kronrod15(f, lo, hi);
    out.evaluations += 15;
    ++panels;
    const double share = abs_tol * std::abs(hi - lo) / total_width;
    if (err <= share || panels + stack.size() >= max_panels || std::abs(hi - lo) < 1e-12 * total_width) {
      if (err > share) out.converged = false;
      out.value += value;
      out.error += err;
      continue;
    }
    const double mid = 0.5 * (lo + hi);
    stack.emplace_back(mid, hi);
    stack.emplace_back(lo, mid);
  }
  return out;
}

}  // namespace detail

/**
 * \brief Adaptive Gauss-Kronrod (G7/K15) quadrature with panel bisection.
 *
 * Infinite endpoints are mapped onto a finite interval with
 * x = a + t / (1 - t). The absolute tolerance is distributed over panels in
 * proportion to their width.
 */
template <class F>
QuadratureResult integrate(const F& f, Interval range, double abs_tol = 1e-9,
                           std::size_t max_panels = 4096) {
  if (std::isnan(range.lo) || std::isnan(range.hi) || range.lo > range.hi)
    throw std::invalid_argument("integrate: invalid interval");
  if (range.finite()) return detail::integrate_finite(f, range.lo, range.hi, abs_tol, max_panels);

  if (std::isinf(range.lo) && std::isinf(range.hi)) {
    auto left = integrate(f, Interval{-std::numeric_limits<double>::infinity(), 0.0}, 0.5 * abs_tol, max_panels);
    auto right = integrate(f, Interval{0.0, std::numeric_limits<double>::infinity()}, 0.5 * abs_tol, max_panels);
    return {left.value + right.value, left.error + right.error, left.evaluations + right.evaluations,
            left.converged && right.converged};
  }
  if (std::isinf(range.hi)) {
    const double a = range.lo;
    auto g = [&](double t) {
      const double s = 1.0 - t;
      return f(a + t / s) / (s * s);
    };
    return detail::integrate_finite(g, 0.0, 1.0, abs_tol, max_panels);
  }
  const double b = range.hi;
  auto g = [&](double t) {
    const double s = 1.0 - t;
    return f(b - t / s) / (s * s);
  };
  return detail::integrate_finite(g, 0.0, 1.0, abs_tol, max_panels);
}

}  // namespace amb
