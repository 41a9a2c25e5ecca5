#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "amb/loss.hpp"
#include "amb/quadrature.hpp"

namespace amb {

enum class AdaptiveVariant { Barron, Chebrolu };

/// Feasible shape parameters. Barron's untruncated likelihood only exists on
/// [0, 2]; the truncated (Chebrolu) likelihood admits [kAlphaMin, 2] and maps
/// a minimizer at the lower edge onto -inf.
struct AlphaDomain {
  double lo = kAlphaMin;
  double hi = 2.0;
  AdaptiveVariant variant = AdaptiveVariant::Chebrolu;

  static AlphaDomain barron() { return {0.0, 2.0, AdaptiveVariant::Barron}; }
  static AlphaDomain chebrolu() { return {kAlphaMin, 2.0, AdaptiveVariant::Chebrolu}; }
};

struct AlphaOptResult {
  ShapeAlpha alpha_star;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct AlphaSolverOptions {
  double hessian_step = 1e-3;
  double armijo = 1e-4;
  double shrink = 0.5;
  int max_backtracks = 20;
  int max_iters = 50;
  double tol = 1e-4;
  double max_step = 10.0;
};

/// Truncation interval [-tau, tau] used by the truncated likelihood.
inline Interval truncation_bounds(double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("truncation bound must be positive");
  return {-tau, tau};
}

/// Integration domain of Barron's untruncated likelihood.
inline Interval untruncated_bounds() {
  return {-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
}

namespace detail {

inline constexpr double kPartitionTol = 1e-9;

// rho is even in eps, so symmetric intervals integrate over [0, hi] only.
inline Interval fold(Interval bounds) { return bounds.symmetric() ? Interval{0.0, bounds.hi} : bounds; }
inline double fold_factor(Interval bounds) { return bounds.symmetric() ? 2.0 : 1.0; }

inline std::vector<double> clamp_residuals(std::span<const double> residuals, Interval bounds) {
  std::vector<double> out;
  out.reserve(residuals.size());
  for (double r : residuals) out.push_back(bounds.clamp(r));
  return out;
}

inline double nudge_off_branch(double alpha) {
  if (alpha > 2.0 - kBranchTol) return 2.0 - 2.0 * kBranchTol;
  if (std::abs(alpha) < kBranchTol) return alpha < 0.0 ? -2.0 * kBranchTol : 2.0 * kBranchTol;
  return alpha;
}

inline double partition_half(ShapeAlpha alpha, Interval half) {
  return integrate([&](double e) { return std::exp(-rho(e, alpha)); }, half, kPartitionTol).value;
}

// Lambda on pre-clamped residuals over a folded interval, without the
// N log(fold factor) constant.
inline double lambda_folded(std::span<const double> xs, ShapeAlpha alpha, Interval half) {
  double sum = 0.0;
  for (double x : xs) sum += rho(x, alpha);
  return static_cast<double>(xs.size()) * std::log(partition_half(alpha, half)) + sum;
}

inline double grad_folded(std::span<const double> xs, double alpha, Interval half) {
  const ShapeAlpha a(alpha);
  const double z = partition_half(a, half);
  const double moment =
      integrate([&](double e) { return std::exp(-rho(e, a)) * drho_dalpha(e, alpha); }, half, kPartitionTol).value;
  double sum = 0.0;
  for (double x : xs) sum += drho_dalpha(x, alpha);
  return -static_cast<double>(xs.size()) * moment / z + sum;
}

}  // namespace detail

/// Normalizer of exp(-rho(eps, alpha)) over the given interval.
inline double partition_z(ShapeAlpha alpha, Interval bounds) {
  if (!(bounds.lo < bounds.hi)) throw std::invalid_argument("partition_z: empty interval");
  if (bounds.symmetric()) return 2.0 * detail::partition_half(alpha, detail::fold(bounds));
  return detail::partition_half(alpha, bounds);
}

/// Negative log-likelihood N log Z(alpha) + sum rho(eps_i, alpha). Residuals
/// outside the bounds are clamped onto them first.
inline double neg_log_likelihood(std::span<const double> residuals, ShapeAlpha alpha, Interval bounds) {
  if (residuals.empty()) throw std::invalid_argument("neg_log_likelihood: empty residual list");
  const auto xs = detail::clamp_residuals(residuals, bounds);
  return static_cast<double>(xs.size()) * std::log(detail::fold_factor(bounds)) +
         detail::lambda_folded(xs, alpha, detail::fold(bounds));
}

/// Analytic d(Lambda)/d(alpha); alpha must lie in the general branch.
inline double grad_lambda(std::span<const double> residuals, double alpha, Interval bounds) {
  if (residuals.empty()) throw std::invalid_argument("grad_lambda: empty residual list");
  if (!in_general_branch(alpha))
    throw std::domain_error("grad_lambda: alpha outside the general branch");
  const auto xs = detail::clamp_residuals(residuals, bounds);
  return detail::grad_folded(xs, alpha, detail::fold(bounds));
}

namespace detail {

// Coarse scan followed by golden-section refinement; used when Newton sees a
// non-finite objective.
template <class F>
double grid_refine(const F& objective, double lo, double hi) {
  const int n = static_cast<int>(std::ceil((hi - lo) / 0.05));
  double best = lo, best_val = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= n; ++i) {
    const double a = std::min(hi, lo + 0.05 * i);
    const double v = objective(a);
    if (std::isfinite(v) && v < best_val) {
      best_val = v;
      best = a;
    }
  }
  double a = std::max(lo, best - 0.05), b = std::min(hi, best + 0.05);
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = objective(c), fd = objective(d);
  while (b - a > 1e-5) {
    if (!(fd < fc)) {
      b = d; d = c; fd = fc;
      c = b - g * (b - a); fc = objective(c);
    } else {
      a = c; c = d; fc = fd;
      d = a + g * (b - a); fd = objective(d);
    }
  }
  const double mid = 0.5 * (a + b);
  return objective(mid) <= best_val ? mid : best;
}

}  // namespace detail

/**
 * \brief Minimize Lambda(alpha) over the domain.
 *
 * Seeds from the best point of a coarse alpha scan, then runs projected
 * Newton iterations using the analytic gradient, a central-difference
 * second derivative, and Armijo backtracking.
 */
inline AlphaOptResult optimize_alpha(std::span<const double> residuals, const AlphaDomain& domain,
                                     Interval bounds, const AlphaSolverOptions& opt = {}) {
  if (residuals.empty()) throw std::invalid_argument("optimize_alpha: empty residual list");
  if (domain.variant == AdaptiveVariant::Barron && domain.lo < 0.0)
    throw std::invalid_argument("optimize_alpha: Barron domain must not extend below 0");

  const auto xs = detail::clamp_residuals(residuals, bounds);
  const Interval half = detail::fold(bounds);
  const double offset = static_cast<double>(xs.size()) * std::log(detail::fold_factor(bounds));
  const double lo = std::max(domain.lo, kAlphaMin);
  const double hi = std::min(domain.hi, 2.0);

  auto objective = [&](double a) { return detail::lambda_folded(xs, ShapeAlpha(a), half); };
  auto gradient = [&](double a) { return detail::grad_folded(xs, detail::nudge_off_branch(a), half); };

  static constexpr std::array<double, 17> kSeeds = {-50.0, -30.0, -20.0, -12.0, -8.0, -5.0, -3.0, -2.0, -1.0,
                                                    -0.5,  0.0,   0.25,  0.5,   1.0,  1.5,  1.9,  2.0};
  double a = hi;
  double f = std::numeric_limits<double>::infinity();
  bool finite = true;
  for (double s : kSeeds) {
    if (s < lo || s > hi) continue;
    const double v = objective(s);
    if (!std::isfinite(v)) {
      finite = false;
      continue;
    }
    if (v < f) {
      f = v;
      a = s;
    }
  }

  AlphaOptResult result;
  if (finite) {
    for (int it = 1; it <= opt.max_iters; ++it) {
      result.iterations = it;
      const double g = gradient(a);
      if (!std::isfinite(g)) {
        finite = false;
        break;
      }
      if ((a <= lo && g >= 0.0) || (a >= hi && g <= 0.0)) {
        result.converged = true;
        break;
      }
      const double ap = std::min(hi, a + opt.hessian_step);
      const double am = std::max(lo, a - opt.hessian_step);
      const double h = (gradient(ap) - gradient(am)) / (ap - am);
      double step = (std::isfinite(h) && h > 0.0) ? -g / h : -g;
      step = std::clamp(step, -opt.max_step, opt.max_step);

      double t = 1.0;
      double a_new = a, f_new = f;
      bool accepted = false;
      for (int k = 0; k <= opt.max_backtracks; ++k) {
        a_new = std::clamp(a + t * step, lo, hi);
        f_new = objective(a_new);
        if (!std::isfinite(f_new)) {
          finite = false;
          break;
        }
        if (f_new <= f + opt.armijo * g * (a_new - a)) {
          accepted = true;
          break;
        }
        t *= opt.shrink;
      }
      if (!finite) break;
      if (!accepted) {
        // no descent along the Newton direction: a is stationary to working precision
        result.converged = true;
        break;
      }
      const double delta = a_new - a;
      a = a_new;
      f = f_new;
      if (std::abs(delta) < opt.tol) {
        result.converged = true;
        break;
      }
    }
  }

  if (!finite) {
    auto safe = [&](double x) {
      const double v = objective(x);
      return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    };
    a = detail::grid_refine(safe, lo, hi);
    result.converged = false;
  }

  ShapeAlpha alpha_star = ShapeAlpha(a).snapped();
  if (domain.variant == AdaptiveVariant::Chebrolu && a <= lo + kBranchTol)
    alpha_star = ShapeAlpha::negative_infinity();
  result.alpha_star = alpha_star;
  result.objective = offset + detail::lambda_folded(xs, alpha_star, half);
  return result;
}

}  // namespace amb
