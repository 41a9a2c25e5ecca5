#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "amb/kdtree.hpp"
#include "amb/lie.hpp"
#include "amb/robust_loss.hpp"

namespace amb {

/// Points in the sensor frame with optional unit normals.
struct PointCloud {
  std::vector<Vector3> points;
  std::vector<Vector3> normals;
  std::vector<std::uint8_t> normal_valid;
  double point_cov_scale = 0.01;  ///< isotropic point variance d_grid^2 (m^2)

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_normals() const { return normals.size() == points.size() && !points.empty(); }
};

/// How IRLS weights enter the normal equations.
enum class WeightPlacement {
  Squared,  ///< w inside the norm: w^2 multiplies the squared error
  Linear,   ///< w multiplies the squared error directly
};

struct IcpConfig {
  double grid = 0.10;
  std::size_t normal_k = 15;
  int max_iters = 50;
  double tol_phi = 1e-3;
  double tol_rho = 1e-3;
  RobustLoss rlf{};
  WeightPlacement placement = WeightPlacement::Squared;
};

struct Correspondence {
  std::size_t source = 0;
  std::size_t target = 0;
  bool active = true;
  double weight = 1.0;
  Matrix3 cov = Matrix3::Identity();
};

struct IcpIteration {
  double step_phi = 0.0;
  double step_rho = 0.0;
  std::optional<ShapeAlpha> alpha_star;
  std::optional<double> a_star;
  std::optional<double> mode;
};

struct IcpResult {
  Pose estimate;
  int iterations = 0;
  bool converged = false;
  std::vector<IcpIteration> trace;
};

class IcpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct VoxelKey {
  std::int64_t x, y, z;
  auto operator<=>(const VoxelKey&) const = default;
};

}  // namespace detail

/// One centroid per occupied cell of a grid anchored at the sensor origin.
/// Output is ordered by cell index.
inline PointCloud voxel_downsample(const PointCloud& cloud, double d_grid) {
  if (!(d_grid > 0.0)) throw std::invalid_argument("voxel_downsample: grid size must be positive");
  PointCloud out;
  out.point_cov_scale = d_grid * d_grid;
  if (cloud.empty()) return out;

  std::vector<std::pair<detail::VoxelKey, std::size_t>> keyed(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vector3& p = cloud.points[i];
    keyed[i] = {{static_cast<std::int64_t>(std::floor(p.x() / d_grid)), static_cast<std::int64_t>(std::floor(p.y() / d_grid)),
                 static_cast<std::int64_t>(std::floor(p.z() / d_grid))},
                i};
  }
  std::sort(keyed.begin(), keyed.end());
  for (std::size_t i = 0; i < keyed.size();) {
    std::size_t j = i;
    Vector3 sum = Vector3::Zero();
    while (j < keyed.size() && keyed[j].first == keyed[i].first) sum += cloud.points[keyed[j++].second];
    out.points.push_back(sum / static_cast<double>(j - i));
    i = j;
  }
  return out;
}

/// Normals from the smallest-eigenvalue eigenvector of the k-NN scatter,
/// oriented toward the sensor origin. Rank-deficient neighborhoods are
/// flagged invalid.
inline PointCloud estimate_normals(const PointCloud& cloud, std::size_t k = 15) {
  if (cloud.size() <= k) throw std::invalid_argument("estimate_normals: cloud needs more than k points");
  PointCloud out = cloud;
  out.normals.assign(cloud.size(), Vector3::Zero());
  out.normal_valid.assign(cloud.size(), 0);
  const KdTree tree(cloud.points);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto nbrs = tree.knn(cloud.points[i], k);
    Vector3 mean = Vector3::Zero();
    for (const auto& nb : nbrs) mean += cloud.points[nb.index];
    mean /= static_cast<double>(nbrs.size());
    Matrix3 scatter = Matrix3::Zero();
    for (const auto& nb : nbrs) {
      const Vector3 d = cloud.points[nb.index] - mean;
      scatter += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Matrix3> eig(scatter);
    const Vector3 ev = eig.eigenvalues();
    if (!(ev[2] > 0.0) || ev[1] <= 1e-10 * ev[2]) continue;
    Vector3 n = eig.eigenvectors().col(0).normalized();
    if (n.dot(-cloud.points[i]) < 0.0) n = -n;
    out.normals[i] = n;
    out.normal_valid[i] = 1;
  }
  return out;
}

/// Euclidean nearest target point for every source point; all active.
inline std::vector<Correspondence> associate(std::span<const Vector3> source_transformed, const KdTree& target_index,
                                             const Matrix3& cov = Matrix3::Identity()) {
  if (target_index.empty()) throw IcpError("associate: empty target cloud");
  std::vector<Correspondence> out(source_transformed.size());
  for (std::size_t i = 0; i < source_transformed.size(); ++i) {
    out[i].source = i;
    out[i].target = target_index.nearest(source_transformed[i]).index;
    out[i].cov = cov;
  }
  return out;
}

/// Error covariance C R_i C^T + R_j of a point-to-point error.
inline Matrix3 pt2pt_covariance(const Pose& t12, double source_var, double target_var) {
  return t12.rotation * (source_var * Matrix3::Identity()) * t12.rotation.transpose() + target_var * Matrix3::Identity();
}

/// Point-to-point residuals sqrt(0.5 e^T Sigma^-1 e) with e = t_j - T p_i.
inline std::vector<double> residuals_pt2pt(const Pose& t12, std::span<const Correspondence> corr, const PointCloud& source,
                                           const PointCloud& target) {
  std::vector<double> out(corr.size());
  for (std::size_t k = 0; k < corr.size(); ++k) {
    const Vector3 e = target.points[corr[k].target] - t12 * source.points[corr[k].source];
    out[k] = std::sqrt(0.5 * e.dot(corr[k].cov.ldlt().solve(e)));
  }
  return out;
}

struct Pt2PlaneStep {
  Pose pose;
  Twist step;
};

/**
 * \brief One Gauss-Newton step of weighted point-to-plane alignment.
 *
 * Minimizes sum_k w_k (n^T e_k)^2 / (n^T Sigma_k n) over a left perturbation
 * T = exp(dxi) T_current. `weights` are the per-term multipliers already
 * adjusted for the chosen placement. Inactive correspondences and targets
 * without a valid normal are skipped.
 */
inline Pt2PlaneStep minimize_pt2plane(std::span<const Correspondence> corr, std::span<const double> weights,
                                      const PointCloud& source, const PointCloud& target, const Pose& t_current) {
  if (!target.has_normals()) throw IcpError("minimize_pt2plane: target cloud has no normals");
  if (weights.size() != corr.size()) throw std::invalid_argument("minimize_pt2plane: weight count mismatch");
  Matrix6 a = Matrix6::Zero();
  Vector6 b = Vector6::Zero();
  for (std::size_t k = 0; k < corr.size(); ++k) {
    const Correspondence& c = corr[k];
    if (!c.active || weights[k] <= 0.0 || !target.normal_valid[c.target]) continue;
    const Vector3& n = target.normals[c.target];
    const Vector3 q = t_current * source.points[c.source];
    const double r = n.dot(target.points[c.target] - q);
    const double s = n.dot(c.cov * n);
    Vector6 j;
    j << n.cross(q), -n;
    const double w = weights[k] / s;
    a.noalias() += w * j * j.transpose();
    b.noalias() += w * j * r;
  }
  Eigen::SelfAdjointEigenSolver<Matrix6> eig(a);
  const double lmax = eig.eigenvalues()[5], lmin = eig.eigenvalues()[0];
  if (!(lmax > 0.0) || lmin <= 1e-10 * lmax) {
    std::ostringstream msg;
    msg << "minimize_pt2plane: normal equations are singular (eigenvalues " << lmin << " .. " << lmax << ")";
    throw IcpError(msg.str());
  }
  const Vector6 dxi = -a.ldlt().solve(b);
  const Twist step = Twist::from_vector(dxi);
  return {(exp_map(step) * t_current).normalized(), step};
}

/// Robust point-to-plane ICP. `target` needs normals; `source` is used as
/// given (downsample beforehand).
inline IcpResult icp_solve(const PointCloud& source, const PointCloud& target, const Pose& initial,
                           const IcpConfig& cfg) {
  if (source.empty()) throw IcpError("icp_solve: empty source cloud");
  if (!target.has_normals()) throw IcpError("icp_solve: target cloud has no normals");
  const KdTree tree(target.points);
  const double var = cfg.grid * cfg.grid;

  IcpResult result;
  result.estimate = initial;
  std::vector<Vector3> moved(source.size());
  for (int it = 1; it <= cfg.max_iters; ++it) {
    for (std::size_t i = 0; i < source.size(); ++i) moved[i] = result.estimate * source.points[i];
    auto corr = associate(moved, tree, pt2pt_covariance(result.estimate, var, var));
    const auto eps = residuals_pt2pt(result.estimate, corr, source, target);
    auto w = compute_weights(eps, cfg.rlf, 3);
    std::vector<double> mult(w.weights.size());
    for (std::size_t k = 0; k < mult.size(); ++k) {
      corr[k].weight = w.weights[k];
      mult[k] = cfg.placement == WeightPlacement::Squared ? w.weights[k] * w.weights[k] : w.weights[k];
    }
    const auto step = minimize_pt2plane(corr, mult, source, target, result.estimate);
    result.estimate = step.pose;
    result.iterations = it;
    IcpIteration rec;
    rec.step_phi = step.step.phi.norm();
    rec.step_rho = step.step.rho.norm();
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

}  // namespace amb
