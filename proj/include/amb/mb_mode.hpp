#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "amb/adaptive_alpha.hpp"
#include "amb/loss.hpp"

namespace amb {

/// Probability mass of the Chi distribution kept by the pre-fit threshold (3 sigma).
inline constexpr double kChiThresholdProbability = 0.9973;

/// Maxwell-Boltzmann speed density in n_e dimensions with shape a.
inline double mb_pdf(double eps, double a, int n_e) {
  if (!(a > 0.0) || n_e < 1) throw std::invalid_argument("mb_pdf: need a > 0 and n_e >= 1");
  if (eps < 0.0) return 0.0;
  const double n = static_cast<double>(n_e);
  if (eps == 0.0) {
    if (n_e > 1) return 0.0;
    return std::sqrt(2.0 / M_PI) / a;
  }
  const double log_pdf = (n - 1.0) * std::log(eps) - eps * eps / (2.0 * a * a) - n * std::log(a) -
                         (0.5 * n - 1.0) * M_LN2 - std::lgamma(0.5 * n);
  return std::exp(log_pdf);
}

/// d(mb_pdf)/da = mb_pdf * (eps^2 / a^3 - n_e / a).
inline double dmb_da(double eps, double a, int n_e) {
  const double p = mb_pdf(eps, a, n_e);
  return p * (eps * eps / (a * a * a) - static_cast<double>(n_e) / a);
}

/// Mode of the MB density, a * sqrt(n_e - 1).
inline double mb_mode_value(double a, int n_e) { return a * std::sqrt(static_cast<double>(n_e - 1)); }

/// CDF of the Chi distribution with n_e degrees of freedom.
inline double chi_cdf(double x, int n_e) {
  if (x <= 0.0) return 0.0;
  return boost::math::gamma_p(0.5 * static_cast<double>(n_e), 0.5 * x * x);
}

/// Inverse Chi CDF by bisection on the regularized lower incomplete gamma function.
inline double chi_quantile(int n_e, double p) {
  if (n_e < 1) throw std::invalid_argument("chi_quantile: n_e must be >= 1");
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("chi_quantile: p must lie in (0, 1)");
  double lo = 0.0, hi = std::sqrt(static_cast<double>(n_e)) + 1.0;
  while (chi_cdf(hi, n_e) < p) {
    lo = hi;
    hi *= 2.0;
  }
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    (chi_cdf(mid, n_e) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Thrown when a residual set cannot be binned into a usable histogram.
struct DegenerateHistogram : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Equal-width histogram on [0, max residual] normalized as a density.
struct HistogramBins {
  std::vector<double> edges;
  std::vector<double> density;

  std::size_t size() const { return density.size(); }
  double center(std::size_t k) const { return 0.5 * (edges[k] + edges[k + 1]); }
  double width(std::size_t k) const { return edges[k + 1] - edges[k]; }
};

/// Bin count clamp(ceil(sqrt(N)), 10, 100).
inline std::size_t default_bin_count(std::size_t n) {
  const auto k = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  return std::clamp<std::size_t>(k, 10, 100);
}

/// Equal-width density histogram on [0, upper]; `upper` defaults to the
/// largest residual and must not be below it.
inline HistogramBins build_histogram(std::span<const double> residuals, std::size_t bins,
                                     std::optional<double> upper = std::nullopt) {
  if (residuals.empty()) throw std::invalid_argument("build_histogram: empty residual list");
  if (bins == 0) throw std::invalid_argument("build_histogram: zero bins");
  double max_r = 0.0;
  for (double r : residuals) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw std::invalid_argument("build_histogram: residuals must be finite and >= 0");
    max_r = std::max(max_r, r);
  }
  const double min_r = *std::min_element(residuals.begin(), residuals.end());
  if (max_r <= 0.0 || min_r == max_r)
    throw DegenerateHistogram("build_histogram: all residuals identical");

  if (upper && !(*upper >= max_r)) throw std::invalid_argument("build_histogram: upper edge below largest residual");
  const double hi = upper ? *upper : max_r;

  HistogramBins h;
  h.edges.resize(bins + 1);
  const double width = hi / static_cast<double>(bins);
  for (std::size_t k = 0; k <= bins; ++k) h.edges[k] = width * static_cast<double>(k);
  h.edges[bins] = hi;
  std::vector<std::size_t> counts(bins, 0);
  for (double r : residuals) {
    auto k = static_cast<std::size_t>(r / width);
    ++counts[std::min(k, bins - 1)];
  }
  h.density.resize(bins);
  const double n = static_cast<double>(residuals.size());
  for (std::size_t k = 0; k < bins; ++k) h.density[k] = static_cast<double>(counts[k]) / (n * h.width(k));
  return h;
}

/// Frequency-weighted histogram misfit sum_k (q_k (p_MB(c_k) - q_k))^2.
inline double mb_fit_objective(const HistogramBins& h, double a, int n_e) {
  double sum = 0.0;
  for (std::size_t k = 0; k < h.size(); ++k) {
    const double q = h.density[k];
    const double d = q * (mb_pdf(h.center(k), a, n_e) - q);
    sum += d * d;
  }
  return sum;
}

inline double mb_fit_gradient(const HistogramBins& h, double a, int n_e) {
  double sum = 0.0;
  for (std::size_t k = 0; k < h.size(); ++k) {
    const double q = h.density[k];
    const double c = h.center(k);
    sum += q * q * (mb_pdf(c, a, n_e) - q) * dmb_da(c, a, n_e);
  }
  return 2.0 * sum;
}

struct MbFit {
  double a_star = 1.0;
  int n_e = 1;
  double mode = 0.0;
  /// True when the fit fell back to the Chi default a = 1.
  bool fallback = false;
  int iterations = 0;
  std::size_t used = 0;
};

struct MbFitOptions {
  bool apply_threshold = true;
  double armijo = 1e-4;
  double shrink = 0.5;
  int max_backtracks = 20;
  int max_iters = 50;
  double tol = 1e-5;
};

inline MbFit mb_fallback_fit(int n_e, std::size_t used) {
  return MbFit{1.0, n_e, mb_mode_value(1.0, n_e), true, 0, used};
}

/**
 * \brief Fit the MB shape to a residual histogram.
 *
 * Residuals at or above the 99.73% Chi quantile are dropped first (when
 * enabled). The shape starts from the best of a method-of-moments estimate
 * and a geometric scan, then Newton iterations with Armijo backtracking
 * minimize the histogram misfit.
 */
inline MbFit fit_mb(std::span<const double> residuals, int n_e, const MbFitOptions& opt = {}) {
  if (n_e < 1) throw std::invalid_argument("fit_mb: n_e must be >= 1");
  if (residuals.empty()) throw std::invalid_argument("fit_mb: empty residual list");

  std::vector<double> xs;
  xs.reserve(residuals.size());
  const double cut = opt.apply_threshold ? chi_quantile(n_e, kChiThresholdProbability)
                                         : std::numeric_limits<double>::infinity();
  for (double r : residuals)
    if (r < cut) xs.push_back(r);
  if (xs.empty()) return mb_fallback_fit(n_e, 0);

  HistogramBins hist;
  try {
    hist = opt.apply_threshold ? build_histogram(xs, default_bin_count(xs.size()), cut)
                               : build_histogram(xs, default_bin_count(xs.size()));
  } catch (const DegenerateHistogram&) {
    return mb_fallback_fit(n_e, xs.size());
  }

  double mean_sq = 0.0;
  for (double x : xs) mean_sq += x * x;
  mean_sq /= static_cast<double>(xs.size());
  const double a0 = std::sqrt(mean_sq / static_cast<double>(n_e));
  if (!(a0 > 0.0)) return mb_fallback_fit(n_e, xs.size());

  auto objective = [&](double a) { return mb_fit_objective(hist, a, n_e); };
  auto gradient = [&](double a) { return mb_fit_gradient(hist, a, n_e); };

  double a = a0, f = objective(a0);
  {
    const double scan_lo = std::min(0.05, 0.25 * a0), scan_hi = std::max(5.0, 4.0 * a0);
    const int n = 60;
    for (int i = 0; i <= n; ++i) {
      const double s = scan_lo * std::pow(scan_hi / scan_lo, static_cast<double>(i) / n);
      const double v = objective(s);
      if (v < f) {
        f = v;
        a = s;
      }
    }
  }

  const double a_floor = 1e-6 * a0;
  MbFit fit;
  fit.n_e = n_e;
  fit.used = xs.size();
  for (int it = 1; it <= opt.max_iters; ++it) {
    fit.iterations = it;
    const double g = gradient(a);
    const double s = 1e-4 * a;
    const double h = (gradient(a + s) - gradient(a - s)) / (2.0 * s);
    double step = h > 0.0 ? -g / h : -g;
    step = std::clamp(step, -0.5 * a, a);
    double t = 1.0, a_new = a, f_new = f;
    bool accepted = false;
    for (int k = 0; k <= opt.max_backtracks; ++k) {
      a_new = std::max(a_floor, a + t * step);
      f_new = objective(a_new);
      if (f_new <= f + opt.armijo * g * (a_new - a)) {
        accepted = true;
        break;
      }
      t *= opt.shrink;
    }
    if (!accepted) break;
    const double delta = a_new - a;
    a = a_new;
    f = f_new;
    if (std::abs(delta) < opt.tol) break;
  }
  fit.a_star = a;
  fit.mode = mb_mode_value(a, n_e);
  return fit;
}

inline MbFit fit_mb(std::span<const double> residuals, int n_e, bool apply_threshold) {
  MbFitOptions opt;
  opt.apply_threshold = apply_threshold;
  return fit_mb(residuals, n_e, opt);
}

/// Residuals at or above the mode, shifted down by it, plus the shifted bound.
struct ShiftedResiduals {
  std::vector<double> xi;
  double nu = 0.0;
  std::size_t inlier_count = 0;
};

inline ShiftedResiduals shift_residuals(std::span<const double> residuals, double mode, double tau) {
  if (!(tau > mode))
    throw std::invalid_argument("shift_residuals: truncation bound " + std::to_string(tau) +
                                " must exceed the mode " + std::to_string(mode));
  ShiftedResiduals out;
  out.nu = tau - mode;
  for (double r : residuals) {
    if (r < mode)
      ++out.inlier_count;
    else
      out.xi.push_back(r - mode);
  }
  return out;
}

struct AdaptiveMbResult {
  std::vector<double> weights;
  MbFit fit;
  AlphaOptResult alpha;
  std::size_t below_mode = 0;
  double nu = 0.0;

  double inlier_fraction() const {
    return weights.empty() ? 0.0 : static_cast<double>(below_mode) / static_cast<double>(weights.size());
  }
};

/**
 * \brief Norm-aware adaptive weights.
 *
 * 1. fit the MB shape a* to the residual histogram,
 * 2. take the mode a* sqrt(n_e - 1),
 * 3. shift residuals at or above the mode and the truncation bound,
 * 4. optimize alpha* on the shifted residuals over [0, nu],
 * 5. weight 1 below the mode, w(xi_i, alpha*) above it.
 */
inline AdaptiveMbResult adaptive_mb_weights(std::span<const double> residuals, int n_e, double tau,
                                            const AlphaSolverOptions& alpha_opt = {}) {
  if (residuals.empty()) throw std::invalid_argument("adaptive_mb_weights: empty residual list");
  AdaptiveMbResult out;
  out.fit = fit_mb(residuals, n_e);
  if (!(tau > out.fit.mode)) out.fit = mb_fallback_fit(n_e, out.fit.used);
  const ShiftedResiduals shifted = shift_residuals(residuals, out.fit.mode, tau);
  out.nu = shifted.nu;
  out.below_mode = shifted.inlier_count;

  if (shifted.xi.empty()) {
    out.alpha.alpha_star = ShapeAlpha(2.0);
    out.alpha.converged = true;
  } else {
    out.alpha = optimize_alpha(shifted.xi, AlphaDomain::chebrolu(), Interval{0.0, shifted.nu}, alpha_opt);
  }

  out.weights.resize(residuals.size());
  const double mode = out.fit.mode;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    const double r = residuals[i];
    out.weights[i] = r < mode ? 1.0 : weight(r - mode, out.alpha.alpha_star);
  }
  return out;
}

}  // namespace amb
