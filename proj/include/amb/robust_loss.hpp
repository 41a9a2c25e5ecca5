#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "amb/adaptive_alpha.hpp"
#include "amb/loss.hpp"
#include "amb/mb_mode.hpp"

namespace amb {

enum class RlfKind { L2, Cauchy, Tukey, Welsch, VarTrimmed, AdaptiveBarron, AdaptiveChebrolu, AdaptiveMb };

inline constexpr std::array<RlfKind, 8> kAllRlfs = {
    RlfKind::L2,         RlfKind::Cauchy,         RlfKind::Tukey,           RlfKind::Welsch,
    RlfKind::VarTrimmed, RlfKind::AdaptiveBarron, RlfKind::AdaptiveChebrolu, RlfKind::AdaptiveMb};

inline std::string_view rlf_name(RlfKind k) {
  switch (k) {
    case RlfKind::L2: return "l2";
    case RlfKind::Cauchy: return "cauchy";
    case RlfKind::Tukey: return "tukey";
    case RlfKind::Welsch: return "welsch";
    case RlfKind::VarTrimmed: return "var-trimmed";
    case RlfKind::AdaptiveBarron: return "adaptive-barron";
    case RlfKind::AdaptiveChebrolu: return "adaptive-chebrolu";
    case RlfKind::AdaptiveMb: return "adaptive-mb";
  }
  return "unknown";
}

inline RlfKind parse_rlf(std::string_view name) {
  for (RlfKind k : kAllRlfs)
    if (rlf_name(k) == name) return k;
  throw std::invalid_argument("unknown robust loss '" + std::string(name) + "'");
}

inline bool is_fixed(RlfKind k) {
  return k == RlfKind::Cauchy || k == RlfKind::Tukey || k == RlfKind::Welsch || k == RlfKind::VarTrimmed;
}

/// Which robust loss turns residuals into weights, with its parameters.
struct RobustLoss {
  RlfKind kind = RlfKind::L2;
  double tau = 10.0;
  double cauchy_c = 2.3849;
  double tukey_c = 4.6851;
  double welsch_c = 2.9846;
  VarTrimmedParams var_trimmed{};
  AlphaSolverOptions alpha_options{};

  std::string_view name() const { return rlf_name(kind); }
};

/// Per-call record of what the weighting did.
struct WeightDiagnostics {
  std::optional<ShapeAlpha> alpha_star;
  std::optional<double> a_star;
  std::optional<double> mode;
  std::optional<double> scale;
  bool mb_fallback = false;
  std::size_t below_mode = 0;
};

struct WeightResult {
  std::vector<double> weights;
  WeightDiagnostics diagnostics;
};

/// Process-wide tally of Adaptive MB invocations and of residuals below the
/// fitted mode that did not receive weight exactly 1.
class MbWeightAudit {
 public:
  static void record(std::uint64_t checked, std::uint64_t violations) {
    calls_.fetch_add(1, std::memory_order_relaxed);
    checked_.fetch_add(checked, std::memory_order_relaxed);
    violations_.fetch_add(violations, std::memory_order_relaxed);
  }
  static std::uint64_t calls() { return calls_.load(); }
  static std::uint64_t checked() { return checked_.load(); }
  static std::uint64_t violations() { return violations_.load(); }
  static void reset() {
    calls_ = 0;
    checked_ = 0;
    violations_ = 0;
  }

 private:
  static inline std::atomic<std::uint64_t> calls_{0};
  static inline std::atomic<std::uint64_t> checked_{0};
  static inline std::atomic<std::uint64_t> violations_{0};
};

/**
 * \brief Weights of `residuals` under `loss`.
 *
 * Fixed losses see MAD-rescaled residuals. Adaptive losses use the residuals
 * as given (already unitless). `n_e` is the error dimension used by the MB
 * fit.
 */
inline WeightResult compute_weights(std::span<const double> residuals, const RobustLoss& loss, int n_e) {
  if (residuals.empty()) throw std::invalid_argument("compute_weights: empty residual list");
  WeightResult out;
  auto& d = out.diagnostics;
  const std::size_t n = residuals.size();

  switch (loss.kind) {
    case RlfKind::L2:
      out.weights.assign(n, 1.0);
      break;
    case RlfKind::Cauchy:
    case RlfKind::Tukey:
    case RlfKind::Welsch: {
      const FixedRlf rlf = loss.kind == RlfKind::Cauchy ? FixedRlf::cauchy(loss.cauchy_c)
                           : loss.kind == RlfKind::Tukey ? FixedRlf::tukey(loss.tukey_c)
                                                         : FixedRlf::welsch(loss.welsch_c);
      const double s = mad_scale(residuals);
      d.scale = s;
      out.weights.resize(n);
      for (std::size_t i = 0; i < n; ++i) out.weights[i] = fixed_weight(rlf, residuals[i] / s);
      break;
    }
    case RlfKind::VarTrimmed:
      out.weights = var_trimmed_weights(residuals, loss.var_trimmed);
      break;
    case RlfKind::AdaptiveBarron:
    case RlfKind::AdaptiveChebrolu: {
      const bool barron = loss.kind == RlfKind::AdaptiveBarron;
      const auto res = barron ? optimize_alpha(residuals, AlphaDomain::barron(), untruncated_bounds(), loss.alpha_options)
                              : optimize_alpha(residuals, AlphaDomain::chebrolu(), truncation_bounds(loss.tau),
                                               loss.alpha_options);
      d.alpha_star = res.alpha_star;
      out.weights.resize(n);
      for (std::size_t i = 0; i < n; ++i) out.weights[i] = weight(residuals[i], res.alpha_star);
      break;
    }
    case RlfKind::AdaptiveMb: {
      auto res = adaptive_mb_weights(residuals, n_e, loss.tau, loss.alpha_options);
      d.alpha_star = res.alpha.alpha_star;
      d.a_star = res.fit.a_star;
      d.mode = res.fit.mode;
      d.mb_fallback = res.fit.fallback;
      d.below_mode = res.below_mode;
      std::uint64_t checked = 0, violations = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (residuals[i] < res.fit.mode) {
          ++checked;
          violations += res.weights[i] != 1.0;
        }
      }
      MbWeightAudit::record(checked, violations);
      out.weights = std::move(res.weights);
      break;
    }
  }
  return out;
}

}  // namespace amb
