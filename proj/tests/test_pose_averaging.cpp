#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "amb/pose_averaging.hpp"
#include "amb/stats.hpp"

using amb::Matrix6;
using amb::Pose;
using amb::PoseAvgConfig;
using amb::PoseMeasurement;
using amb::RlfKind;
using amb::Twist;
using amb::Vector3;
using amb::Vector6;

namespace {

Twist random_twist(std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n01;
  Vector6 v;
  for (int i = 0; i < 6; ++i) v[i] = scale * n01(rng);
  return Twist::from_vector(v);
}

Matrix6 fd_jacobian(const std::function<Vector6(const Vector6&)>& f) {
  const double h = 1e-6;
  Matrix6 j;
  for (int k = 0; k < 6; ++k) {
    Vector6 d = Vector6::Zero();
    d[k] = h;
    j.col(k) = (f(d) - f(-d)) / (2 * h);
  }
  return j;
}

double angle_deg(const Pose& a, const Pose& b) { return amb::pose_error_norms(a.inverse() * b).phi * 180.0 / M_PI; }

}  // namespace

TEST(PoseError, ZeroAtMeasurementAndLeftInvariant) {
  std::mt19937_64 rng(1);
  const Pose t = amb::exp_map(random_twist(rng, 0.4));
  const Pose m = amb::exp_map(random_twist(rng, 0.4));
  const Pose g = amb::exp_map(random_twist(rng, 1.0));
  EXPECT_LT(amb::left_invariant_error(t, t).as_vector().norm(), 1e-12);
  const Vector6 e1 = amb::left_invariant_error(t, m).as_vector();
  const Vector6 e2 = amb::left_invariant_error(g * t, g * m).as_vector();
  EXPECT_LT((e1 - e2).norm(), 1e-10);
}

TEST(PoseError, JacobiansMatchFiniteDifferences) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose t = amb::exp_map(random_twist(rng, 0.5));
    const Pose m = amb::exp_map(random_twist(rng, 0.5));
    const Twist e = amb::left_invariant_error(t, m);
    const auto jac = amb::error_jacobians(e);

    const Matrix6 h_fd = fd_jacobian([&](const Vector6& d) {
      const Twist xi = Twist::from_vector(-d);
      return amb::left_invariant_error(t * amb::exp_map(xi), m).as_vector();
    });
    const Matrix6 m_fd = fd_jacobian([&](const Vector6& d) {
      const Twist xi = Twist::from_vector(-d);
      return amb::left_invariant_error(t, m * amb::exp_map(xi)).as_vector();
    });
    EXPECT_LT((jac.h - h_fd).norm(), 1e-6);
    EXPECT_LT((jac.m - m_fd).norm(), 1e-6);
  }
}

TEST(PoseError, PropagatedCovarianceIsSymmetric) {
  std::mt19937_64 rng(3);
  const auto jac = amb::error_jacobians(random_twist(rng, 0.6));
  const Matrix6 s = amb::propagate_cov(jac.m, amb::default_measurement_cov());
  EXPECT_EQ((s - s.transpose()).norm(), 0.0);
  EXPECT_GT(s.ldlt().vectorD().minCoeff(), 0.0);
}

TEST(DefaultCovariance, DeclaredStructure) {
  const Matrix6 r = amb::default_measurement_cov();
  EXPECT_NEAR(r(0, 0), 0.05 * 0.05, 1e-15);
  EXPECT_NEAR(r(5, 5), 0.15 * 0.15, 1e-15);
  EXPECT_NEAR(r(1, 4), 0.2 * 0.10 * 0.10, 1e-15);
  EXPECT_EQ(r(0, 1), 0.0);
  EXPECT_TRUE(r.isApprox(r.transpose()));
}

class PoseAvgAllLosses : public ::testing::TestWithParam<RlfKind> {};

TEST_P(PoseAvgAllLosses, CleanMeasurementsRecoverPose) {
  amb::TrialSpec spec;
  spec.n_inliers = 40;
  spec.outlier_fraction = 0.0;
  spec.seed = 4;
  const auto trial = amb::generate_trial(spec);
  PoseAvgConfig cfg;
  cfg.rlf.kind = GetParam();
  const auto res = amb::solve_pose_average(trial.measurements, trial.initial, cfg);
  EXPECT_TRUE(res.converged);
  EXPECT_LT(angle_deg(res.estimate, trial.truth), 3.0);
  EXPECT_LT(amb::pose_error_norms(res.estimate).rho, 0.06);
}

INSTANTIATE_TEST_SUITE_P(Losses, PoseAvgAllLosses, ::testing::ValuesIn(amb::kAllRlfs),
                         [](const auto& info) {
                           std::string s(amb::rlf_name(info.param));
                           for (auto& c : s)
                             if (c == '-') c = '_';
                           return s;
                         });

TEST(PoseAverage, L2SolutionIsStationary) {
  amb::TrialSpec spec;
  spec.outlier_fraction = 0.0;
  spec.seed = 5;
  const auto trial = amb::generate_trial(spec);
  PoseAvgConfig cfg;
  cfg.rlf.kind = RlfKind::L2;
  cfg.tol_phi = cfg.tol_rho = 1e-12;
  cfg.max_iters = 100;
  const auto res = amb::solve_pose_average(trial.measurements, trial.initial, cfg);

  // first-order optimality of sum e^T Sigma^-1 e with Sigma frozen at the
  // solution, checked by finite differences
  std::vector<Matrix6> info;
  for (const auto& m : trial.measurements) {
    const Twist e = amb::left_invariant_error(res.estimate, m.pose);
    info.push_back(amb::propagate_cov(amb::error_jacobians(e).m, m.cov).inverse());
  }
  auto cost = [&](const Pose& t) {
    double c = 0.0;
    for (std::size_t k = 0; k < trial.measurements.size(); ++k) {
      const Vector6 e = amb::left_invariant_error(t, trial.measurements[k].pose).as_vector();
      c += e.dot(info[k] * e);
    }
    return c;
  };
  const double h = 1e-5;
  for (int k = 0; k < 6; ++k) {
    Vector6 d = Vector6::Zero();
    d[k] = h;
    const double g = (cost(res.estimate * amb::exp_map(Twist::from_vector(d))) -
                      cost(res.estimate * amb::exp_map(Twist::from_vector(-d)))) / (2 * h);
    EXPECT_NEAR(g, 0.0, 1e-5);
  }
}

TEST(PoseAverage, MbBeatsL2UnderOutliers) {
  std::vector<double> mb, l2;
  for (int s = 0; s < 20; ++s) {
    amb::TrialSpec spec;
    spec.outlier_fraction = 0.4;
    spec.seed = 100 + s;
    const auto trial = amb::generate_trial(spec);
    PoseAvgConfig cfg;
    cfg.rlf.kind = RlfKind::AdaptiveMb;
    mb.push_back(angle_deg(amb::solve_pose_average(trial.measurements, trial.initial, cfg).estimate, trial.truth));
    cfg.rlf.kind = RlfKind::L2;
    l2.push_back(angle_deg(amb::solve_pose_average(trial.measurements, trial.initial, cfg).estimate, trial.truth));
  }
  EXPECT_LT(amb::median(mb), 0.5 * amb::median(l2));
}

TEST(PoseAverage, BranchMeasurementsAreSkipped) {
  std::vector<PoseMeasurement> meas(10, PoseMeasurement{Pose::identity(), amb::default_measurement_cov()});
  std::mt19937_64 rng(6);
  for (auto& m : meas) m.pose = amb::exp_map(random_twist(rng, 0.01));
  meas.push_back({Pose{amb::so3_exp(Vector3(M_PI, 0.0, 0.0)), Vector3::Zero()}, amb::default_measurement_cov()});
  PoseAvgConfig cfg;
  cfg.rlf.kind = RlfKind::Cauchy;
  const auto res = amb::solve_pose_average(meas, Pose::identity(), cfg);
  EXPECT_EQ(res.trace.front().skipped, 1u);
  EXPECT_LT(angle_deg(res.estimate, Pose::identity()), 2.0);
}

TEST(PoseAverage, RejectsEmptyAndDegenerateInput) {
  PoseAvgConfig cfg;
  EXPECT_THROW(amb::solve_pose_average({}, Pose::identity(), cfg), std::invalid_argument);
  const std::vector<PoseMeasurement> bad = {{Pose{amb::so3_exp(Vector3(M_PI, 0, 0)), Vector3::Zero()}, Matrix6::Identity()}};
  EXPECT_THROW(amb::solve_pose_average(bad, Pose::identity(), cfg), amb::PoseAvgError);
}

TEST(TrialGeneration, OutlierCountFollowsFraction) {
  amb::TrialSpec spec;
  const std::vector<std::pair<double, int>> cases = {{0.0, 0}, {0.2, 5}, {0.4, 13}, {0.6, 30}, {0.8, 80}};
  for (const auto& [f, n] : cases) {
    spec.outlier_fraction = f;
    EXPECT_EQ(spec.outlier_count(), n);
    EXPECT_EQ(amb::generate_trial(spec).measurements.size(), static_cast<std::size_t>(20 + n));
  }
  spec.outlier_fraction = 1.0;
  EXPECT_THROW(spec.outlier_count(), std::invalid_argument);
}

TEST(TrialGeneration, InlierCovarianceMatchesDeclaredR) {
  amb::TrialSpec spec;
  spec.n_inliers = 20000;
  spec.outlier_fraction = 0.0;
  spec.seed = 7;
  const auto trial = amb::generate_trial(spec);
  Matrix6 c = Matrix6::Zero();
  for (const auto& m : trial.measurements) {
    const Vector6 v = amb::log_map(m.pose).as_vector();
    c += v * v.transpose();
  }
  c /= static_cast<double>(trial.measurements.size());
  const Matrix6 r = amb::default_measurement_cov();
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(c(i, i) / r(i, i), 1.0, 0.05);
  EXPECT_NEAR(c(2, 5) / std::sqrt(c(2, 2) * c(5, 5)), 0.2, 0.03);
}

TEST(TrialGeneration, OutliersStayWithinBounds) {
  amb::TrialSpec spec;
  spec.outlier_fraction = 0.8;
  spec.seed = 8;
  const auto trial = amb::generate_trial(spec);
  for (std::size_t i = trial.n_inliers; i < trial.measurements.size(); ++i) {
    const Pose& p = trial.measurements[i].pose;
    EXPECT_LE(p.translation.cwiseAbs().maxCoeff(), 1.0);
  }
}

TEST(TrialGeneration, DeterministicPerSeed) {
  amb::TrialSpec spec;
  spec.seed = 9;
  const auto a = amb::generate_trial(spec), b = amb::generate_trial(spec);
  ASSERT_EQ(a.measurements.size(), b.measurements.size());
  for (std::size_t i = 0; i < a.measurements.size(); ++i)
    EXPECT_EQ(a.measurements[i].pose.matrix(), b.measurements[i].pose.matrix());
  EXPECT_EQ(a.initial.matrix(), b.initial.matrix());
}
