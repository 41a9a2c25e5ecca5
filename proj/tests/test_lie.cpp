#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>
#include <gtest/gtest.h>

#include "amb/lie.hpp"

using amb::Matrix3;
using amb::Matrix4;
using amb::Matrix6;
using amb::Pose;
using amb::Twist;
using amb::Vector3;
using amb::Vector6;

namespace {

Twist random_twist(std::mt19937_64& rng, double max_angle = 3.0, double max_r = 5.0) {
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector3 axis(n01(rng), n01(rng), n01(rng));
  axis.normalize();
  Twist xi;
  xi.phi = max_angle * u(rng) * axis;
  xi.rho = Vector3(n01(rng), n01(rng), n01(rng)) * (max_r / 2.0);
  return xi;
}

Vector6 fd_column(const Twist& xi, int k, bool left) {
  // Numerical Jacobian of the exponential map: exp(xi + h e_k) vs exp(xi).
  const double h = 1e-6;
  const Pose base = amb::exp_map(xi);
  auto perturbed = [&](double s) {
    Vector6 v = xi.as_vector();
    v[k] += s;
    const Pose p = amb::exp_map(Twist::from_vector(v));
    return left ? amb::log_map(p * base.inverse()).as_vector() : amb::log_map(base.inverse() * p).as_vector();
  };
  return (perturbed(h) - perturbed(-h)) / (2.0 * h);
}

}  // namespace

TEST(Lie, WedgeVeeRoundTrip) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const Twist xi = random_twist(rng);
    const Twist back = amb::vee(amb::wedge(xi));
    EXPECT_EQ(back.phi, xi.phi);
    EXPECT_EQ(back.rho, xi.rho);
  }
  Matrix4 bad = Matrix4::Identity();
  EXPECT_THROW(amb::vee(bad), std::invalid_argument);
}

TEST(Lie, ExpMatchesMatrixExponential) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const Twist xi = random_twist(rng);
    const Matrix4 oracle = amb::wedge(xi).exp();
    EXPECT_LT((amb::exp_map(xi).matrix() - oracle).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Lie, ExpLogRoundTrip) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 10000; ++i) {
    const Twist xi = random_twist(rng, 3.0);
    const Twist back = amb::log_map(amb::exp_map(xi));
    EXPECT_LT((back.as_vector() - xi.as_vector()).norm(), 1e-9);
  }
  for (double t : {0.0, 1e-12, 1e-8, 1e-5, 5e-3, 1.5e-2}) {
    Twist xi;
    xi.phi = Vector3(t, -0.5 * t, 0.25 * t);
    xi.rho = Vector3(0.3, -1.0, 2.0);
    EXPECT_LT((amb::log_map(amb::exp_map(xi)).as_vector() - xi.as_vector()).norm(), 1e-12);
  }
}

TEST(Lie, LogNearPiThrows) {
  Pose p;
  p.rotation = amb::so3_exp(Vector3(M_PI - 1e-9, 0.0, 0.0));
  EXPECT_THROW(amb::log_map(p), std::domain_error);
}

TEST(Lie, IdentityTwist) {
  const Pose p = amb::exp_map(Twist{});
  EXPECT_EQ(p.rotation, Matrix3::Identity());
  EXPECT_EQ(p.translation, Vector3::Zero());
  EXPECT_EQ(amb::left_jacobian(Twist{}), Matrix6::Identity());
}

TEST(Lie, RotationIsOrthonormal) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i) EXPECT_TRUE(amb::is_rotation(amb::exp_map(random_twist(rng)).rotation));
}

TEST(Lie, JacobianIdentities) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    const Twist xi = random_twist(rng);
    const Matrix6 jl = amb::left_jacobian(xi), jr = amb::right_jacobian(xi);
    EXPECT_LT((jl * amb::left_jacobian_inverse(xi) - Matrix6::Identity()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((jr * amb::right_jacobian_inverse(xi) - Matrix6::Identity()).cwiseAbs().maxCoeff(), 1e-10);
    const Vector6 v = xi.as_vector();
    EXPECT_LT((jl * v - v).norm(), 1e-10);
    EXPECT_LT((jr * v - v).norm(), 1e-10);
  }
}

TEST(Lie, JacobiansMatchFiniteDifference) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 20; ++i) {
    const Twist xi = random_twist(rng, 2.0, 2.0);
    const Matrix6 jl = amb::left_jacobian(xi), jr = amb::right_jacobian(xi);
    for (int k = 0; k < 6; ++k) {
      EXPECT_LT((fd_column(xi, k, true) - jl.col(k)).norm(), 1e-6);
      EXPECT_LT((fd_column(xi, k, false) - jr.col(k)).norm(), 1e-6);
    }
  }
}

TEST(Lie, SmallAngleSeriesIsContinuous) {
  Twist a, b;
  a.phi = Vector3(amb::kSmallAngle * (1.0 - 1e-9), 0.0, 0.0);
  b.phi = Vector3(amb::kSmallAngle * (1.0 + 1e-9), 0.0, 0.0);
  a.rho = b.rho = Vector3(1.0, 2.0, 3.0);
  EXPECT_LT((amb::left_jacobian(a) - amb::left_jacobian(b)).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((amb::left_jacobian_inverse(a) - amb::left_jacobian_inverse(b)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Lie, PoseComposition) {
  std::mt19937_64 rng(7);
  const Pose a = amb::exp_map(random_twist(rng)), b = amb::exp_map(random_twist(rng));
  EXPECT_LT(((a * b).matrix() - a.matrix() * b.matrix()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(((a * a.inverse()).matrix() - Matrix4::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  const Vector3 p(0.1, -2.0, 3.0);
  EXPECT_LT((a * p - (a.matrix() * p.homogeneous()).head<3>()).norm(), 1e-12);
}

TEST(Lie, NormalizedProjectsToSO3) {
  Pose p;
  p.rotation = amb::so3_exp(Vector3(0.3, 0.2, -0.1)) + 1e-4 * Matrix3::Ones();
  EXPECT_FALSE(amb::is_rotation(p.rotation));
  EXPECT_TRUE(amb::is_rotation(p.normalized().rotation));
}

TEST(Lie, PerturbationSamplerCoverage) {
  const double bound = 0.2;
  const double sigma = amb::perturbation_sigma(bound);
  std::mt19937_64 rng(8);
  const int n = 200000;
  int inside = 0;
  for (int i = 0; i < n; ++i) {
    const Pose p = amb::sample_perturbation(sigma, sigma, rng);
    inside += amb::pose_error_norms(p).phi < bound;
  }
  // binomial std for p=0.9973, n=2e5 is about 1.2e-4
  EXPECT_NEAR(static_cast<double>(inside) / n, 0.9973, 1e-3);
  EXPECT_THROW(amb::sample_perturbation(-1.0, 1.0, rng), std::invalid_argument);
}

TEST(Lie, PoseErrorNorms) {
  Twist xi;
  xi.phi = Vector3(0.0, 0.0, 0.5);
  xi.rho = Vector3(3.0, 4.0, 0.0);
  const auto e = amb::pose_error_norms(amb::exp_map(xi));
  EXPECT_NEAR(e.phi, 0.5, 1e-12);
  EXPECT_NEAR(e.rho, 5.0, 1e-12);
}
