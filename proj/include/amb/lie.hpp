#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <utility>

#include <Eigen/Core>
#include <Eigen/Dense>

#include "amb/mb_mode.hpp"

namespace amb {

using Vector3 = Eigen::Vector3d;
using Matrix3 = Eigen::Matrix3d;
using Matrix4 = Eigen::Matrix4d;
using Vector6 = Eigen::Matrix<double, 6, 1>;
using Matrix6 = Eigen::Matrix<double, 6, 6>;

/// Below this rotation angle the Jacobian coefficients use their Taylor series.
inline constexpr double kSmallAngle = 1e-2;
/// log is only defined for rotation angles below pi minus this margin.
inline constexpr double kLogBranchMargin = 1e-6;

/**
 * \brief Lie-algebra coordinates of SE(3).
 *
 * Ordering is (phi, rho): attitude first, position second. Many libraries
 * use (rho, phi); as_vector() and from_vector() follow (phi, rho).
 */
struct Twist {
  Vector3 phi = Vector3::Zero();
  Vector3 rho = Vector3::Zero();

  Vector6 as_vector() const {
    Vector6 v;
    v << phi, rho;
    return v;
  }
  static Twist from_vector(const Vector6& v) { return {v.head<3>(), v.tail<3>()}; }
};

inline Matrix3 skew(const Vector3& v) {
  Matrix3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

/// Rigid transform; acts on points as C p + r.
struct Pose {
  Matrix3 rotation = Matrix3::Identity();
  Vector3 translation = Vector3::Zero();

  static Pose identity() { return {}; }

  Matrix4 matrix() const {
    Matrix4 t = Matrix4::Identity();
    t.topLeftCorner<3, 3>() = rotation;
    t.topRightCorner<3, 1>() = translation;
    return t;
  }

  Pose inverse() const {
    const Matrix3 ct = rotation.transpose();
    return {ct, -ct * translation};
  }

  Vector3 operator*(const Vector3& p) const { return rotation * p + translation; }

  friend Pose operator*(const Pose& a, const Pose& b) {
    return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
  }

  /// Project the rotation back onto SO(3) (polar decomposition via SVD).
  Pose normalized() const {
    Eigen::JacobiSVD<Matrix3> svd(rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Matrix3 c = svd.matrixU() * svd.matrixV().transpose();
    if (c.determinant() < 0.0) {
      Matrix3 u = svd.matrixU();
      u.col(2) *= -1.0;
      c = u * svd.matrixV().transpose();
    }
    return {c, translation};
  }
};

inline bool is_rotation(const Matrix3& c, double tol = 1e-9) {
  return (c * c.transpose() - Matrix3::Identity()).cwiseAbs().maxCoeff() < tol &&
         std::abs(c.determinant() - 1.0) < tol;
}

inline Matrix4 wedge(const Twist& xi) {
  Matrix4 m = Matrix4::Zero();
  m.topLeftCorner<3, 3>() = skew(xi.phi);
  m.topRightCorner<3, 1>() = xi.rho;
  return m;
}

/// Inverse of wedge; throws unless m has the se(3) pattern (tolerance tol).
inline Twist vee(const Matrix4& m, double tol = 1e-12) {
  const Matrix3 s = m.topLeftCorner<3, 3>();
  if ((s + s.transpose()).cwiseAbs().maxCoeff() > tol || m.row(3).cwiseAbs().maxCoeff() > tol)
    throw std::invalid_argument("vee: matrix is not an element of se(3)");
  Twist xi;
  xi.phi = Vector3(m(2, 1), m(0, 2), m(1, 0));
  xi.rho = m.topRightCorner<3, 1>();
  return xi;
}

namespace detail {

// Coefficients of the SO(3) left Jacobian J = I + a phi^ + b phi^ phi^ (unit-free angle t).
inline std::pair<double, double> so3_jac_coeffs(double t) {
  if (t < kSmallAngle) {
    const double t2 = t * t;
    return {0.5 - t2 / 24.0 + t2 * t2 / 720.0, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0};
  }
  const double t2 = t * t;
  const double half_sin = std::sin(0.5 * t);
  return {2.0 * half_sin * half_sin / t2, (t - std::sin(t)) / (t2 * t)};
}

}  // namespace detail

inline Matrix3 so3_exp(const Vector3& phi) {
  const double t = phi.norm();
  const Matrix3 k = skew(phi);
  double a, b;  // C = I + a k + b k^2
  if (t < kSmallAngle) {
    const double t2 = t * t;
    a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
    b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
  } else {
    a = std::sin(t) / t;
    const double half_sin = std::sin(0.5 * t);
    b = 2.0 * half_sin * half_sin / (t * t);
  }
  return Matrix3::Identity() + a * k + b * k * k;
}

inline Vector3 so3_log(const Matrix3& c) {
  const Vector3 axis_sin(c(2, 1) - c(1, 2), c(0, 2) - c(2, 0), c(1, 0) - c(0, 1));
  const double sin_t = 0.5 * axis_sin.norm();
  const double cos_t = 0.5 * (c.trace() - 1.0);
  const double t = std::atan2(sin_t, cos_t);
  if (t > M_PI - kLogBranchMargin)
    throw std::domain_error("so3_log: rotation angle too close to pi");
  if (t < kSmallAngle) {
    // t / sin(t) series
    const double t2 = t * t;
    return 0.5 * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0) * axis_sin;
  }
  return (0.5 * t / sin_t) * axis_sin;
}

inline Matrix3 so3_left_jacobian(const Vector3& phi) {
  const auto [a, b] = detail::so3_jac_coeffs(phi.norm());
  const Matrix3 k = skew(phi);
  return Matrix3::Identity() + a * k + b * k * k;
}

inline Matrix3 so3_left_jacobian_inverse(const Vector3& phi) {
  const double t = phi.norm();
  double c;
  if (t < kSmallAngle) {
    const double t2 = t * t;
    c = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0;
  } else {
    const double half = 0.5 * t;
    c = (1.0 - half * std::cos(half) / std::sin(half)) / (t * t);
  }
  const Matrix3 k = skew(phi);
  return Matrix3::Identity() - 0.5 * k + c * k * k;
}

/// Coupling block of the SE(3) left Jacobian.
inline Matrix3 se3_q_matrix(const Twist& xi) {
  const double t = xi.phi.norm();
  double c1, c2, c3;
  if (t < kSmallAngle) {
    const double t2 = t * t, t4 = t2 * t2;
    c1 = 1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0;
    c2 = 1.0 / 24.0 - t2 / 720.0 + t4 / 40320.0;
    c3 = 1.0 / 120.0 - t2 / 2520.0 + t4 / 120960.0;
  } else {
    const double s = std::sin(t), c = std::cos(t);
    const double t2 = t * t, t3 = t2 * t, t4 = t2 * t2, t5 = t4 * t;
    c1 = (t - s) / t3;
    c2 = (t2 + 2.0 * c - 2.0) / (2.0 * t4);
    c3 = (2.0 * t - 3.0 * s + t * c) / (2.0 * t5);
  }
  const Matrix3 p = skew(xi.phi);
  const Matrix3 r = skew(xi.rho);
  const Matrix3 pr = p * r, rp = r * p, prp = p * r * p, pp = p * p;
  return 0.5 * r + c1 * (pr + rp + prp) + c2 * (pp * r + r * pp - 3.0 * prp) + c3 * (prp * p + p * prp);
}

inline Pose exp_map(const Twist& xi) {
  return {so3_exp(xi.phi), so3_left_jacobian(xi.phi) * xi.rho};
}

inline Twist log_map(const Pose& t) {
  Twist xi;
  xi.phi = so3_log(t.rotation);
  xi.rho = so3_left_jacobian_inverse(xi.phi) * t.translation;
  return xi;
}

/// SE(3) left Jacobian in (phi, rho) ordering: [[J, 0], [Q, J]].
inline Matrix6 left_jacobian(const Twist& xi) {
  const Matrix3 j = so3_left_jacobian(xi.phi);
  Matrix6 out = Matrix6::Zero();
  out.topLeftCorner<3, 3>() = j;
  out.bottomRightCorner<3, 3>() = j;
  out.bottomLeftCorner<3, 3>() = se3_q_matrix(xi);
  return out;
}

inline Matrix6 right_jacobian(const Twist& xi) { return left_jacobian(Twist{-xi.phi, -xi.rho}); }

inline Matrix6 left_jacobian_inverse(const Twist& xi) {
  const Matrix3 ji = so3_left_jacobian_inverse(xi.phi);
  Matrix6 out = Matrix6::Zero();
  out.topLeftCorner<3, 3>() = ji;
  out.bottomRightCorner<3, 3>() = ji;
  out.bottomLeftCorner<3, 3>() = -ji * se3_q_matrix(xi) * ji;
  return out;
}

inline Matrix6 right_jacobian_inverse(const Twist& xi) { return left_jacobian_inverse(Twist{-xi.phi, -xi.rho}); }

/// Attitude (rad) and position (m) error magnitudes of a pose error.
struct ErrorNorms {
  double phi = 0.0;
  double rho = 0.0;
};

inline ErrorNorms pose_error_norms(const Pose& delta) {
  const Twist xi = log_map(delta);
  return {xi.phi.norm(), xi.rho.norm()};
}

/// Per-axis standard deviation whose 3D norm stays below `bound` with
/// probability 0.9973 (Chi(3) quantile).
inline double perturbation_sigma(double bound) {
  return bound / chi_quantile(3, kChiThresholdProbability);
}

/// Random pose with rotation vector ~ N(0, sigma_phi^2 I) and translation
/// ~ N(0, sigma_r^2 I).
template <class Rng>
Pose sample_perturbation(double sigma_phi, double sigma_r, Rng& rng) {
  if (sigma_phi < 0.0 || sigma_r < 0.0) throw std::invalid_argument("sample_perturbation: negative sigma");
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector3 phi, r;
  for (int i = 0; i < 3; ++i) phi[i] = sigma_phi * normal(rng);
  for (int i = 0; i < 3; ++i) r[i] = sigma_r * normal(rng);
  return {so3_exp(phi), r};
}

}  // namespace amb
