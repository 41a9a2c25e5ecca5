#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <tuple>
#include <vector>

#include <gtest/gtest.h>

#include "amb/icp.hpp"
#include "amb/kdtree.hpp"

using amb::IcpConfig;
using amb::KdTree;
using amb::Matrix3;
using amb::PointCloud;
using amb::Pose;
using amb::RlfKind;
using amb::Vector3;

namespace {

std::vector<Vector3> random_points(std::size_t n, std::mt19937_64& rng, double extent = 1.0) {
  std::uniform_real_distribution<double> u(-extent, extent);
  std::vector<Vector3> pts(n);
  for (auto& p : pts) p = Vector3(u(rng), u(rng), u(rng));
  return pts;
}

KdTree::Neighbor brute_nearest(const std::vector<Vector3>& pts, const Vector3& q) {
  KdTree::Neighbor best;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double d2 = (pts[i] - q).squaredNorm();
    if (d2 < best.dist2) best = {i, d2};
  }
  return best;
}

/// Three orthogonal walls meeting at the origin, sampled on a square lattice.
std::vector<Vector3> corner_lattice(double spacing, double size) {
  std::vector<Vector3> pts;
  const int n = static_cast<int>(size / spacing);
  for (int i = 1; i <= n; ++i)
    for (int j = 1; j <= n; ++j) {
      const double a = i * spacing, b = j * spacing;
      pts.emplace_back(a, b, 0.0);
      pts.emplace_back(a, 0.0, b);
      pts.emplace_back(0.0, a, b);
    }
  return pts;
}

PointCloud with_noise(const std::vector<Vector3>& pts, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  PointCloud c;
  for (const auto& p : pts) c.points.push_back(p + sigma * Vector3(n01(rng), n01(rng), n01(rng)));
  return c;
}

/// Exact normals of the corner walls, pointing into the octant.
PointCloud corner_with_normals(const std::vector<Vector3>& pts) {
  PointCloud c;
  c.points = pts;
  for (const auto& p : pts) {
    const int axis = p.x() == 0.0 ? 0 : p.y() == 0.0 ? 1 : 2;
    c.normals.push_back(Vector3::Unit(axis));
    c.normal_valid.push_back(1);
  }
  return c;
}

double angle_deg(const Pose& a, const Pose& b) { return amb::pose_error_norms(a.inverse() * b).phi * 180.0 / M_PI; }
double dist_mm(const Pose& a, const Pose& b) { return amb::pose_error_norms(a.inverse() * b).rho * 1000.0; }

}  // namespace

TEST(KdTree, NearestMatchesLinearScan) {
  std::mt19937_64 rng(1);
  const auto pts = random_points(2000, rng);
  const KdTree tree(pts);
  for (const auto& q : random_points(500, rng, 1.3)) {
    const auto a = tree.nearest(q);
    const auto b = brute_nearest(pts, q);
    EXPECT_EQ(a.index, b.index);
    EXPECT_DOUBLE_EQ(a.dist2, b.dist2);
  }
}

TEST(KdTree, TiesResolveToSmallerIndex) {
  std::vector<Vector3> pts(40, Vector3(1.0, 2.0, 3.0));
  pts.push_back(Vector3::Zero());
  const KdTree tree(pts);
  EXPECT_EQ(tree.nearest(Vector3(1.0, 2.0, 3.1)).index, 0u);
}

TEST(KdTree, KnnSortedAndExact) {
  std::mt19937_64 rng(2);
  const auto pts = random_points(1000, rng);
  const KdTree tree(pts);
  const Vector3 q(0.1, -0.2, 0.3);
  const auto nb = tree.knn(q, 15);
  ASSERT_EQ(nb.size(), 15u);
  std::vector<double> all;
  for (const auto& p : pts) all.push_back((p - q).squaredNorm());
  std::sort(all.begin(), all.end());
  for (std::size_t k = 0; k < nb.size(); ++k) EXPECT_DOUBLE_EQ(nb[k].dist2, all[k]);
  EXPECT_EQ(tree.knn(q, 5000).size(), pts.size());
}

TEST(KdTree, EmptyTreeThrows) {
  const std::vector<Vector3> none;
  const KdTree tree(none);
  EXPECT_THROW(tree.nearest(Vector3::Zero()), std::logic_error);
}

TEST(VoxelDownsample, CentroidPerCell) {
  PointCloud c;
  c.points = {{0.01, 0.01, 0.01}, {0.03, 0.05, 0.07}, {0.15, 0.0, 0.0}, {-0.05, 0.0, 0.0}};
  const auto d = amb::voxel_downsample(c, 0.1);
  ASSERT_EQ(d.size(), 3u);
  EXPECT_DOUBLE_EQ(d.point_cov_scale, 0.01);
  bool found = false;
  for (const auto& p : d.points) found = found || (p - Vector3(0.02, 0.03, 0.04)).norm() < 1e-12;
  EXPECT_TRUE(found);
  EXPECT_THROW(amb::voxel_downsample(c, 0.0), std::invalid_argument);
}

TEST(VoxelDownsample, AtMostOnePointPerCell) {
  std::mt19937_64 rng(3);
  PointCloud c;
  c.points = random_points(5000, rng);
  const double g = 0.25;
  const auto d = amb::voxel_downsample(c, g);
  std::set<std::tuple<long, long, long>> cells;
  for (const auto& p : d.points)
    cells.insert({std::lround(std::floor(p.x() / g)), std::lround(std::floor(p.y() / g)), std::lround(std::floor(p.z() / g))});
  EXPECT_EQ(cells.size(), d.size());
  EXPECT_LE(d.size(), 512u);
}

TEST(EstimateNormals, PlaneNormalsFaceSensor) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  PointCloud c;
  for (int i = 0; i < 800; ++i) c.points.emplace_back(u(rng), u(rng), -1.5);
  const auto n = amb::estimate_normals(c, 15);
  for (std::size_t i = 0; i < n.size(); ++i) {
    ASSERT_TRUE(n.normal_valid[i]);
    EXPECT_NEAR(n.normals[i].z(), 1.0, 1e-9);
  }
}

TEST(EstimateNormals, CollinearNeighborhoodIsInvalid) {
  PointCloud c;
  for (int i = 0; i < 40; ++i) c.points.emplace_back(0.1 * i, 0.0, 1.0);
  const auto n = amb::estimate_normals(c, 10);
  for (auto v : n.normal_valid) EXPECT_FALSE(v);
  EXPECT_THROW(amb::estimate_normals(c, 40), std::invalid_argument);
}

TEST(Covariance, PointToPointIsIsotropic) {
  std::mt19937_64 rng(5);
  const Pose t = amb::sample_perturbation(0.5, 1.0, rng);
  const Matrix3 s = amb::pt2pt_covariance(t, 0.01, 0.01);
  EXPECT_TRUE(s.isApprox(0.02 * Matrix3::Identity(), 1e-12));
}

TEST(Residuals, ScaledMahalanobisNorm) {
  PointCloud src, tgt;
  src.points = {{0, 0, 0}, {1, 0, 0}};
  tgt.points = {{0.3, 0.4, 0.0}, {1, 0, 0}};
  std::vector<amb::Correspondence> corr(2);
  corr[0] = {0, 0, true, 1.0, amb::pt2pt_covariance(Pose::identity(), 0.01, 0.01)};
  corr[1] = {1, 1, true, 1.0, corr[0].cov};
  const auto r = amb::residuals_pt2pt(Pose::identity(), corr, src, tgt);
  // ||e|| / (2 d) with d = 0.1
  EXPECT_NEAR(r[0], 0.5 / 0.2, 1e-12);
  EXPECT_EQ(r[1], 0.0);
}

TEST(Associate, MatchesLinearScan) {
  std::mt19937_64 rng(6);
  const auto tgt = random_points(700, rng);
  const auto src = random_points(300, rng);
  const KdTree tree(tgt);
  const auto corr = amb::associate(src, tree);
  for (std::size_t i = 0; i < src.size(); ++i) {
    EXPECT_EQ(corr[i].source, i);
    EXPECT_EQ(corr[i].target, brute_nearest(tgt, src[i]).index);
  }
}

TEST(PointToPlane, GaussNewtonConvergesWithKnownAssociation) {
  const auto pts = corner_lattice(0.2, 2.0);
  const PointCloud tgt = corner_with_normals(pts);
  std::mt19937_64 rng(7);
  const Pose truth = amb::sample_perturbation(0.1, 0.2, rng);
  PointCloud src;
  for (const auto& p : pts) src.points.push_back(truth.inverse() * p);

  std::vector<amb::Correspondence> corr(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) corr[i] = {i, i, true, 1.0, 0.02 * Matrix3::Identity()};
  const std::vector<double> w(pts.size(), 1.0);
  Pose t = Pose::identity();
  for (int it = 0; it < 10; ++it) t = amb::minimize_pt2plane(corr, w, src, tgt, t).pose;
  EXPECT_LT(angle_deg(t, truth), 1e-8);
  EXPECT_LT(dist_mm(t, truth), 1e-6);
}

TEST(PointToPlane, SinglePlaneIsDegenerate) {
  PointCloud tgt;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) {
      tgt.points.emplace_back(0.1 * i, 0.1 * j, 0.0);
      tgt.normals.emplace_back(0.0, 0.0, 1.0);
      tgt.normal_valid.push_back(1);
    }
  std::vector<amb::Correspondence> corr(tgt.size());
  for (std::size_t i = 0; i < corr.size(); ++i) corr[i] = {i, i, true, 1.0, Matrix3::Identity()};
  const std::vector<double> w(corr.size(), 1.0);
  EXPECT_THROW(amb::minimize_pt2plane(corr, w, tgt, tgt, Pose::identity()), amb::IcpError);
}

TEST(PointToPlane, ZeroWeightsAndInvalidNormalsAreSkipped) {
  const auto pts = corner_lattice(0.2, 2.0);
  PointCloud tgt = corner_with_normals(pts);
  std::vector<amb::Correspondence> corr(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) corr[i] = {i, i, true, 1.0, Matrix3::Identity()};
  std::vector<double> w(pts.size(), 1.0);
  // leave only the floor (z = 0) active
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (pts[i].z() != 0.0 && pts[i].y() != 0.0) w[i] = 0.0;
    if (pts[i].y() == 0.0) tgt.normal_valid[i] = 0;
  }
  EXPECT_THROW(amb::minimize_pt2plane(corr, w, tgt, tgt, Pose::identity()), amb::IcpError);
}

class IcpAllLosses : public ::testing::TestWithParam<RlfKind> {};

TEST_P(IcpAllLosses, RecoversPerturbationOnCleanCorner) {
  std::mt19937_64 rng(8);
  const auto lattice = corner_lattice(0.1, 2.0);
  const double sigma = 0.005;
  PointCloud tgt = amb::estimate_normals(with_noise(lattice, sigma, rng), 15);
  const PointCloud src = with_noise(lattice, sigma, rng);

  const Pose truth = Pose::identity();
  const Pose init = Pose{amb::so3_exp(Vector3(0.03, -0.04, 0.05)), Vector3(0.04, -0.03, 0.05)};
  IcpConfig cfg;
  cfg.grid = 0.05;
  cfg.rlf.kind = GetParam();
  const auto res = amb::icp_solve(src, tgt, init, cfg);
  EXPECT_TRUE(res.converged);
  EXPECT_LT(angle_deg(res.estimate, truth), 0.5);
  EXPECT_LT(dist_mm(res.estimate, truth), 10.0);
  EXPECT_EQ(res.trace.size(), static_cast<std::size_t>(res.iterations));
}

INSTANTIATE_TEST_SUITE_P(Losses, IcpAllLosses, ::testing::ValuesIn(amb::kAllRlfs),
                         [](const auto& info) {
                           std::string s(amb::rlf_name(info.param));
                           for (auto& c : s)
                             if (c == '-') c = '_';
                           return s;
                         });

TEST(IcpSolve, MbShapeMatchesDeclaredNoise) {
  // Both clouds carry N(0, d^2 I) noise about shared points, so at the truth
  // eps = ||e|| / (2 d) is Chi(3) scaled by 1/sqrt(2).
  std::mt19937_64 rng(9);
  const double d = 0.02;
  const auto lattice = corner_lattice(0.25, 4.0);
  PointCloud tgt = with_noise(lattice, d, rng);
  for (std::size_t i = 0; i < lattice.size(); ++i) {
    const int axis = lattice[i].x() == 0.0 ? 0 : lattice[i].y() == 0.0 ? 1 : 2;
    tgt.normals.push_back(Vector3::Unit(axis));
    tgt.normal_valid.push_back(1);
  }
  const PointCloud src = with_noise(lattice, d, rng);
  IcpConfig cfg;
  cfg.grid = d;
  cfg.rlf.kind = RlfKind::AdaptiveMb;
  const auto res = amb::icp_solve(src, tgt, Pose::identity(), cfg);
  ASSERT_FALSE(res.trace.empty());
  ASSERT_TRUE(res.trace.back().a_star.has_value());
  EXPECT_NEAR(*res.trace.back().a_star, 1.0 / std::sqrt(2.0), 0.07);
  EXPECT_GE(*res.trace.back().a_star, 0.3);
  EXPECT_LE(*res.trace.back().a_star, 1.5);
}

TEST(IcpSolve, LinearPlacementAlsoConverges) {
  std::mt19937_64 rng(10);
  const auto lattice = corner_lattice(0.1, 2.0);
  PointCloud tgt = amb::estimate_normals(with_noise(lattice, 0.005, rng), 15);
  const PointCloud src = with_noise(lattice, 0.005, rng);
  IcpConfig cfg;
  cfg.grid = 0.05;
  cfg.rlf.kind = RlfKind::AdaptiveChebrolu;
  cfg.placement = amb::WeightPlacement::Linear;
  const Pose init = Pose{amb::so3_exp(Vector3(0.0, 0.0, 0.05)), Vector3(0.05, 0.0, 0.0)};
  const auto res = amb::icp_solve(src, tgt, init, cfg);
  EXPECT_TRUE(res.converged);
  EXPECT_LT(dist_mm(res.estimate, Pose::identity()), 10.0);
  ASSERT_TRUE(res.trace.back().alpha_star.has_value());
}

TEST(IcpSolve, RejectsMissingNormalsAndEmptySource) {
  PointCloud a, b;
  b.points = {{0, 0, 0}};
  IcpConfig cfg;
  EXPECT_THROW(amb::icp_solve(b, a, Pose::identity(), cfg), amb::IcpError);
  EXPECT_THROW(amb::icp_solve(a, b, Pose::identity(), cfg), amb::IcpError);
}
