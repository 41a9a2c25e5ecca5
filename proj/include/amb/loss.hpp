#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace amb {

/// Shape parameters below this are treated as the Welsch-like (-inf) branch.
inline constexpr double kAlphaMin = -50.0;

/// Half-width of the band around alpha = 0 and alpha = 2 inside which the
/// general-branch alpha derivative is not evaluated, and to which optimized
/// shape parameters are snapped.
inline constexpr double kBranchTol = 1e-4;

inline constexpr double kMadConsistency = 1.4826;
inline constexpr double kMadFloor = 1e-9;

/**
 * \brief Shape parameter of the general adaptive loss.
 *
 * Holds a finite value in [kAlphaMin, 2] or the explicit -inf state. Finite
 * inputs below kAlphaMin collapse onto -inf.
 */
class ShapeAlpha {
 public:
  enum class Branch { Quadratic, Cauchy, Welsch, General };

  constexpr ShapeAlpha() = default;

  explicit ShapeAlpha(double value) {
    if (std::isnan(value) || value > 2.0)
      throw std::invalid_argument("ShapeAlpha: value must be <= 2, got " + std::to_string(value));
    if (value < kAlphaMin) {
      neg_inf_ = true;
      value_ = -std::numeric_limits<double>::infinity();
    } else {
      value_ = value;
    }
  }

  static ShapeAlpha negative_infinity() {
    ShapeAlpha a;
    a.neg_inf_ = true;
    a.value_ = -std::numeric_limits<double>::infinity();
    return a;
  }

  bool is_negative_infinity() const { return neg_inf_; }
  double value() const { return value_; }

  Branch branch() const {
    if (neg_inf_) return Branch::Welsch;
    if (value_ == 2.0) return Branch::Quadratic;
    if (value_ == 0.0) return Branch::Cauchy;
    return Branch::General;
  }

  /// Snap onto the exact branch points when within kBranchTol of them.
  ShapeAlpha snapped() const {
    if (neg_inf_) return *this;
    if (std::abs(value_ - 2.0) < kBranchTol) return ShapeAlpha(2.0);
    if (std::abs(value_) < kBranchTol) return ShapeAlpha(0.0);
    return *this;
  }

  friend bool operator==(const ShapeAlpha&, const ShapeAlpha&) = default;

 private:
  double value_ = 2.0;
  bool neg_inf_ = false;
};

/// Robust loss of the general adaptive family.
///
/// The general branch is evaluated with log1p/expm1 so it stays accurate
/// arbitrarily close to alpha = 0 and alpha = 2.
inline double rho(double eps, ShapeAlpha alpha) {
  const double e2 = eps * eps;
  switch (alpha.branch()) {
    case ShapeAlpha::Branch::Quadratic: return 0.5 * e2;
    case ShapeAlpha::Branch::Cauchy: return std::log1p(0.5 * e2);
    case ShapeAlpha::Branch::Welsch: return -std::expm1(-0.5 * e2);
    case ShapeAlpha::Branch::General: break;
  }
  const double a = alpha.value();
  const double b = std::abs(a - 2.0);
  return (b / a) * std::expm1(0.5 * a * std::log1p(e2 / b));
}

/// IRLS weight (1/eps) d(rho)/d(eps); the eps -> 0 limit is 1 on every branch.
inline double weight(double eps, ShapeAlpha alpha) {
  const double e2 = eps * eps;
  switch (alpha.branch()) {
    case ShapeAlpha::Branch::Quadratic: return 1.0;
    case ShapeAlpha::Branch::Cauchy: return 1.0 / (0.5 * e2 + 1.0);
    case ShapeAlpha::Branch::Welsch: return std::exp(-0.5 * e2);
    case ShapeAlpha::Branch::General: break;
  }
  const double a = alpha.value();
  const double b = std::abs(a - 2.0);
  return std::exp((0.5 * a - 1.0) * std::log1p(e2 / b));
}

/// True when alpha is far enough from 0 and 2 for the general-branch derivative.
inline bool in_general_branch(double alpha) {
  return alpha < 2.0 - kBranchTol && std::abs(alpha) >= kBranchTol && alpha >= kAlphaMin;
}

/// Partial derivative of the general-branch loss with respect to alpha.
inline double drho_dalpha(double eps, double alpha) {
  if (!in_general_branch(alpha))
    throw std::domain_error("drho_dalpha: alpha " + std::to_string(alpha) +
                            " is outside the general branch");
  const double e2 = eps * eps;
  if (e2 == 0.0) return 0.0;
  const double b = 2.0 - alpha;
  const double log_u = std::log1p(e2 / b);
  const double u_pow = std::exp(0.5 * alpha * log_u);
  const double u = 1.0 + e2 / b;
  // d/da [(b/a)(u^{a/2} - 1)] with b = 2 - a, du/da = e2 / b^2
  const double term_scale = (-2.0 / (alpha * alpha)) * std::expm1(0.5 * alpha * log_u);
  const double term_pow = (b / alpha) * u_pow * (0.5 * log_u + 0.5 * alpha * e2 / (b * b * u));
  return term_scale + term_pow;
}

namespace detail {

inline double median_inplace(std::vector<double>& v) {
  const std::size_t n = v.size();
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (n % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(v.begin(), mid);
  return 0.5 * (lower + upper);
}

}  // namespace detail

/// Normal-consistent median absolute deviation, floored at kMadFloor.
inline double mad_scale(std::span<const double> residuals) {
  if (residuals.empty()) throw std::invalid_argument("mad_scale: empty residual list");
  std::vector<double> work(residuals.begin(), residuals.end());
  const double med = detail::median_inplace(work);
  for (std::size_t i = 0; i < residuals.size(); ++i) work[i] = std::abs(residuals[i] - med);
  const double mad = kMadConsistency * detail::median_inplace(work);
  return mad > 0.0 ? mad : kMadFloor;
}

enum class FixedKind { Cauchy, Tukey, Welsch, VarTrimmed };

/// A fixed (non-adaptive) robust loss. Tuning constants default to the
/// 95%-efficiency values for Gaussian noise.
struct FixedRlf {
  FixedKind kind = FixedKind::Cauchy;
  double tuning_constant = 2.3849;

  static FixedRlf cauchy(double c = 2.3849) { return {FixedKind::Cauchy, c}; }
  static FixedRlf tukey(double c = 4.6851) { return {FixedKind::Tukey, c}; }
  static FixedRlf welsch(double c = 2.9846) { return {FixedKind::Welsch, c}; }
  static FixedRlf var_trimmed() { return {FixedKind::VarTrimmed, 1.0}; }
};

/// Weight of a MAD-scaled residual under a fixed loss. VarTrimmed has no
/// per-residual weight; use var_trimmed_weights.
inline double fixed_weight(const FixedRlf& rlf, double eps_scaled) {
  if (!(rlf.tuning_constant > 0.0))
    throw std::invalid_argument("fixed_weight: tuning constant must be positive");
  const double u = eps_scaled / rlf.tuning_constant;
  const double u2 = u * u;
  switch (rlf.kind) {
    case FixedKind::Cauchy: return 1.0 / (1.0 + u2);
    case FixedKind::Tukey: return std::abs(u) < 1.0 ? (1.0 - u2) * (1.0 - u2) : 0.0;
    case FixedKind::Welsch: return std::exp(-u2);
    case FixedKind::VarTrimmed: break;
  }
  throw std::invalid_argument("fixed_weight: VarTrimmed weights depend on the whole residual set");
}

struct VarTrimmedParams {
  double lambda = 2.0;
  double min_ratio = 0.4;
};

/// Binary weights keeping the fraction phi in [min_ratio, 1] of smallest
/// residuals that minimizes mean(kept eps^2) / phi^lambda. All candidate
/// fractions are scanned using prefix sums over the sorted squares.
inline std::vector<double> var_trimmed_weights(std::span<const double> residuals,
                                               const VarTrimmedParams& params = {}) {
  const std::size_t n = residuals.size();
  if (n == 0) throw std::invalid_argument("var_trimmed_weights: empty residual list");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(residuals[a]) < std::abs(residuals[b]);
  });

  const auto min_keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(params.min_ratio * static_cast<double>(n))));
  double prefix = 0.0;
  double best_cost = std::numeric_limits<double>::infinity();
  std::size_t best_keep = n;
  for (std::size_t k = 1; k <= n; ++k) {
    const double r = residuals[order[k - 1]];
    prefix += r * r;
    if (k < min_keep) continue;
    const double phi = static_cast<double>(k) / static_cast<double>(n);
    const double cost = (prefix / static_cast<double>(k)) / std::pow(phi, params.lambda);
    // ties resolve toward keeping more residuals
    if (cost <= best_cost) {
      best_cost = cost;
      best_keep = k;
    }
  }

  std::vector<double> w(n, 0.0);
  for (std::size_t k = 0; k < best_keep; ++k) w[order[k]] = 1.0;
  return w;
}

}  // namespace amb
