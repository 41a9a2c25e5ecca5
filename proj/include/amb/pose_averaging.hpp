#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "amb/icp.hpp"
#include "amb/lie.hpp"
#include "amb/robust_loss.hpp"

namespace amb {

struct PoseMeasurement {
  Pose pose;
  Matrix6 cov = Matrix6::Identity();
};

struct PoseAvgConfig {
  int max_iters = 50;
  double tol_phi = 1e-3;
  double tol_rho = 1e-3;
  RobustLoss rlf{RlfKind::AdaptiveMb, 20.0};
  WeightPlacement placement = WeightPlacement::Squared;
};

struct PoseAvgIteration {
  double step_phi = 0.0;
  double step_rho = 0.0;
  std::optional<ShapeAlpha> alpha_star;
  std::optional<double> a_star;
  std::optional<double> mode;
  std::size_t skipped = 0;
};

struct PoseAvgResult {
  Pose estimate;
  int iterations = 0;
  bool converged = false;
  std::vector<PoseAvgIteration> trace;
};

class PoseAvgError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// log(T^-1 T_meas); throws std::domain_error outside the log branch.
inline Twist left_invariant_error(const Pose& t, const Pose& measured) { return log_map(t.inverse() * measured); }

struct ErrorJacobians {
  Matrix6 h;  ///< d e / d xi for T = T_bar exp(-xi)
  Matrix6 m;  ///< d e / d xi for T_meas = T_meas_bar exp(-xi)
};

inline ErrorJacobians error_jacobians(const Twist& e) {
  return {left_jacobian_inverse(e), -right_jacobian_inverse(e)};
}

/// M R M^T, symmetrized.
inline Matrix6 propagate_cov(const Matrix6& m, const Matrix6& r) {
  const Matrix6 s = m * r * m.transpose();
  return 0.5 * (s + s.transpose());
}

/**
 * \brief Robust SE(3) pose average by IRLS Gauss-Newton.
 *
 * Each iteration evaluates left-invariant errors, propagates measurement
 * covariances through the error Jacobians, weights the Mahalanobis norms with
 * the configured loss (n_e = 6), and solves the weighted normal equations.
 * Measurements whose error leaves the log branch are skipped for that
 * iteration.
 */
inline PoseAvgResult solve_pose_average(std::span<const PoseMeasurement> meas, const Pose& initial,
                                        const PoseAvgConfig& cfg) {
  if (meas.empty()) throw std::invalid_argument("solve_pose_average: no measurements");
  PoseAvgResult result;
  result.estimate = initial;

  struct Term {
    Vector6 e;
    Matrix6 h;
    Eigen::LDLT<Matrix6> sigma;
  };
  std::vector<Term> terms;
  std::vector<double> eps;
  terms.reserve(meas.size());
  eps.reserve(meas.size());

  for (int it = 1; it <= cfg.max_iters; ++it) {
    terms.clear();
    eps.clear();
    PoseAvgIteration rec;
    for (const auto& m : meas) {
      Twist e;
      try {
        e = left_invariant_error(result.estimate, m.pose);
      } catch (const std::domain_error&) {
        ++rec.skipped;
        continue;
      }
      const auto jac = error_jacobians(e);
      Term t{e.as_vector(), jac.h, propagate_cov(jac.m, m.cov).ldlt()};
      if (t.sigma.info() != Eigen::Success || !t.sigma.isPositive()) {
        ++rec.skipped;
        continue;
      }
      eps.push_back(std::sqrt(std::max(0.0, t.e.dot(t.sigma.solve(t.e)))));
      terms.push_back(std::move(t));
    }
    if (terms.empty()) throw PoseAvgError("solve_pose_average: every measurement left the log branch");

    const auto w = compute_weights(eps, cfg.rlf, 6);
    Matrix6 a = Matrix6::Zero();
    Vector6 b = Vector6::Zero();
    for (std::size_t k = 0; k < terms.size(); ++k) {
      const double wk = cfg.placement == WeightPlacement::Squared ? w.weights[k] * w.weights[k] : w.weights[k];
      if (wk <= 0.0) continue;
      const Matrix6 sih = terms[k].sigma.solve(terms[k].h);
      a.noalias() += wk * terms[k].h.transpose() * sih;
      b.noalias() += wk * sih.transpose() * terms[k].e;
    }
    a = 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix6> eig(a);
    if (!(eig.eigenvalues()[5] > 0.0) || eig.eigenvalues()[0] <= 1e-12 * eig.eigenvalues()[5])
      throw PoseAvgError("solve_pose_average: normal equations are singular");
    const Vector6 dxi = -a.ldlt().solve(b);
    const Twist step = Twist::from_vector(dxi);
    result.estimate = (result.estimate * exp_map(Twist{-step.phi, -step.rho})).normalized();
    result.iterations = it;

    rec.step_phi = step.phi.norm();
    rec.step_rho = step.rho.norm();
    rec.alpha_star = w.diagnostics.alpha_star;
    rec.a_star = w.diagnostics.a_star;
    rec.mode = w.diagnostics.mode;
    result.trace.push_back(rec);
    if (rec.step_phi < cfg.tol_phi && rec.step_rho < cfg.tol_rho) {
      result.converged = true;
      break;
    }
  }
  return result;
}

/// Inlier covariance: per-axis standard deviations with correlation between
/// matching rotation and translation axes.
inline Matrix6 default_measurement_cov(const Vector3& sigma_phi = Vector3(0.05, 0.10, 0.15),
                                       const Vector3& sigma_rho = Vector3(0.05, 0.10, 0.15), double corr = 0.2) {
  Vector6 s;
  s << sigma_phi, sigma_rho;
  Matrix6 c = Matrix6::Identity();
  for (int k = 0; k < 3; ++k) c(k, k + 3) = c(k + 3, k) = corr;
  return s.asDiagonal() * c * s.asDiagonal();
}

struct TrialSpec {
  int n_inliers = 20;
  double outlier_fraction = 0.2;
  Matrix6 inlier_cov = default_measurement_cov();
  Matrix6 init_cov = 2.0 * default_measurement_cov();
  double outlier_phi_max = 60.0 * M_PI / 180.0;
  double outlier_rho_max = 1.0;
  std::uint64_t seed = 0;

  /// Outliers added so that they make up outlier_fraction of all measurements.
  int outlier_count() const {
    if (!(outlier_fraction >= 0.0 && outlier_fraction < 1.0))
      throw std::invalid_argument("TrialSpec: outlier fraction must lie in [0, 1)");
    return static_cast<int>(std::lround(n_inliers * outlier_fraction / (1.0 - outlier_fraction)));
  }
};

struct PoseTrial {
  std::vector<PoseMeasurement> measurements;
  Pose initial;
  Pose truth;
  std::size_t n_inliers = 0;
};

namespace detail {

template <class Rng>
Vector6 sample_gaussian6(const Eigen::LLT<Matrix6>& chol, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Vector6 z;
  for (int i = 0; i < 6; ++i) z[i] = n01(rng);
  return chol.matrixL() * z;
}

}  // namespace detail

/// Inliers exp(dxi), dxi ~ N(0, R), around the identity; outliers with
/// per-component uniform rotation vector and translation; initial guess
/// exp(dxi), dxi ~ N(0, P).
inline PoseTrial generate_trial(const TrialSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  const Eigen::LLT<Matrix6> r_chol(spec.inlier_cov), p_chol(spec.init_cov);
  if (r_chol.info() != Eigen::Success || p_chol.info() != Eigen::Success)
    throw std::invalid_argument("generate_trial: covariances must be positive definite");

  PoseTrial trial;
  trial.n_inliers = static_cast<std::size_t>(spec.n_inliers);
  for (int i = 0; i < spec.n_inliers; ++i)
    trial.measurements.push_back({exp_map(Twist::from_vector(detail::sample_gaussian6(r_chol, rng))), spec.inlier_cov});

  std::uniform_real_distribution<double> u_phi(-spec.outlier_phi_max, spec.outlier_phi_max);
  std::uniform_real_distribution<double> u_rho(-spec.outlier_rho_max, spec.outlier_rho_max);
  const int n_out = spec.outlier_count();
  for (int i = 0; i < n_out; ++i) {
    Vector3 phi, r;
    for (int k = 0; k < 3; ++k) phi[k] = u_phi(rng);
    for (int k = 0; k < 3; ++k) r[k] = u_rho(rng);
    trial.measurements.push_back({Pose{so3_exp(phi), r}, spec.inlier_cov});
  }
  trial.initial = exp_map(Twist::from_vector(detail::sample_gaussian6(p_chol, rng)));
  return trial;
}

}  // namespace amb
