#include "tforce/error.hpp"
#include "tforce/geometry.hpp"
#include "tforce/random.hpp"

#include "test_util.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <numbers>

using namespace tforce;
using namespace tforce::geometry;

namespace {

JointVector random_q(Rng& rng, const FingerChain& chain) {
  JointVector q;
  for (int j = 0; j < 4; ++j) {
    const auto& lim = chain.joint_limits[static_cast<std::size_t>(j)];
    q[j] = rng.uniform(lim.lower, lim.upper);
  }
  return q;
}

Matrix3d random_rotation(Rng& rng) {
  Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  return axis_angle(axis, rng.uniform(-3.0, 3.0));
}

// 4x4 homogeneous matrices, rotation built from Rodrigues' formula.
using Homogeneous = Eigen::Matrix4d;

Homogeneous rot_h(const Vector3d& axis_in, double angle) {
  const Vector3d k = axis_in / axis_in.norm();
  Matrix3d kx;
  kx << 0, -k.z(), k.y(), k.z(), 0, -k.x(), -k.y(), k.x(), 0;
  Homogeneous h = Homogeneous::Identity();
  h.topLeftCorner<3, 3>() = Matrix3d::Identity() + std::sin(angle) * kx + (1 - std::cos(angle)) * kx * kx;
  return h;
}

Homogeneous trans_h(const Vector3d& t) {
  Homogeneous h = Homogeneous::Identity();
  h.topRightCorner<3, 1>() = t;
  return h;
}

Homogeneous oracle_tip(const JointVector& q, const FingerChain& chain) {
  Homogeneous h = Homogeneous::Identity();
  h.topLeftCorner<3, 3>() = chain.base_pose.rotation;
  h.topRightCorner<3, 1>() = chain.base_pose.translation;
  for (std::size_t j = 0; j < 4; ++j) {
    h = h * rot_h(chain.joint_axes[j], q[static_cast<Eigen::Index>(j)]) *
        trans_h(Vector3d(chain.link_lengths[j], 0, 0));
  }
  return h;
}

double potential(const JointVector& q, const FingerChain& chain, const Vector3d& g) {
  const auto coms = link_com_positions(q, chain);
  double u = 0.0;
  for (std::size_t i = 0; i < 4; ++i) u -= chain.link_masses[i] * g.dot(coms[i]);
  return u;
}

FingerChain tilted_chain() {
  FingerChain c = default_finger_chain();
  c.base_pose.rotation = axis_angle(Vector3d(1, 2, 3), 0.7);
  c.base_pose.translation = Vector3d(0.01, -0.02, 0.03);
  c.link_coms[2] = Vector3d(0.02, 0.003, -0.004);
  return c;
}

}  // namespace

TEST(Rotation, QuaternionRoundTripAndNormalization) {
  Rng rng(3);
  for (int k = 0; k < 50; ++k) {
    const Matrix3d r = random_rotation(rng);
    const auto q = wxyz_from_rotation(r);
    EXPECT_LT(test::max_abs(rotation_from_wxyz(q) - r), 1e-12);
    EXPECT_GE(q[0], 0.0);
  }
  const Matrix3d a = rotation_from_wxyz({2.0, 0.0, 0.0, 2.0});
  EXPECT_LT(test::max_abs(a - axis_angle(Vector3d::UnitZ(), std::numbers::pi / 2)), 1e-12);
  EXPECT_THROW(rotation_from_wxyz({0, 0, 0, 0}), ShapeError);
}

TEST(Rotation, RejectsNonOrthogonal) {
  Matrix3d m = Matrix3d::Identity();
  m(0, 1) = 1e-6;
  EXPECT_FALSE(is_rotation(m));
  EXPECT_THROW(require_rotation(m, "m"), ShapeError);
  EXPECT_FALSE(is_rotation(-Matrix3d::Identity()));
}

TEST(Layout, PresetsAreValid) {
  for (const char* name : {"fingertip", "phalanx", "rectangular"}) {
    const auto layout = layout_preset(name);
    EXPECT_NO_THROW(layout.validate());
    EXPECT_EQ(layout.h * layout.w, layout.n);
  }
  const auto tip = fingertip_layout();
  EXPECT_EQ(tip.n, 30);
  EXPECT_EQ(tip.h, 6);
  EXPECT_EQ(tip.w, 5);
  for (int i = 0; i < tip.n; ++i) {
    const Vector3d p = tip.positions[static_cast<std::size_t>(i)];
    EXPECT_NEAR(p.norm(), kFingertipRadius, 1e-12);
    EXPECT_NEAR(tip.normal(i).dot(p / p.norm()), 1.0, 1e-12);
  }
  EXPECT_EQ(phalanx_layout().n, 16);
  EXPECT_EQ(rectangular_layout().n, 24);
  EXPECT_THROW(layout_preset("thumb"), ConfigError);
}

TEST(Layout, JsonRoundTrip) {
  test::ScratchDir dir;
  const auto layout = fingertip_layout();
  save_layout(layout, dir / "tip.json");
  const auto back = load_layout(dir / "tip.json");
  ASSERT_EQ(back.n, layout.n);
  EXPECT_EQ(back.array_id, "fingertip");
  for (std::size_t i = 0; i < layout.rotations.size(); ++i) {
    EXPECT_LT(test::max_abs(back.rotations[i] - layout.rotations[i]), 1e-14);
    EXPECT_LT(test::max_abs(back.positions[i] - layout.positions[i]), 1e-15);
  }
  auto j = layout_to_json(layout);
  j["h"] = 5;
  EXPECT_THROW(layout_from_json(j), ShapeError);
  EXPECT_THROW(load_layout(dir / "missing.json"), ConfigError);
}

TEST(ProjectToCommon, ExamplesAndShape) {
  ArrayLayout two;
  two.array_id = "two";
  two.n = 2;
  two.h = 1;
  two.w = 2;
  two.rotations = {Matrix3d::Identity(), axis_angle(Vector3d::UnitZ(), std::numbers::pi / 2)};
  two.positions = {Vector3d::Zero(), Vector3d::UnitX()};
  Eigen::VectorXd x(6);
  x << 1, 2, 3, 1, 0, 0;
  EXPECT_LT((project_to_common(x, two) - Vector3d(1, 3, 3)).norm(), 1e-15);
  EXPECT_THROW(project_to_common(Eigen::VectorXd::Zero(5), two), ShapeError);
}

TEST(ProjectToCommon, IsLinear) {
  const auto layout = fingertip_layout();
  Rng rng(11);
  for (int k = 0; k < 20; ++k) {
    Eigen::VectorXd x(90), y(90);
    for (int i = 0; i < 90; ++i) {
      x[i] = rng.normal() * 50;
      y[i] = rng.normal() * 50;
    }
    const double a = rng.uniform(-3, 3), b = rng.uniform(-3, 3);
    const Vector3d lhs = project_to_common(a * x + b * y, layout);
    const Vector3d rhs = a * project_to_common(x, layout) + b * project_to_common(y, layout);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, rhs.norm()));
  }
}

TEST(ProjectToCommon, EquivariantUnderCommonRotation) {
  const auto layout = fingertip_layout();
  Rng rng(12);
  for (int k = 0; k < 20; ++k) {
    const Matrix3d q = random_rotation(rng);
    ArrayLayout rotated = layout;
    for (auto& r : rotated.rotations) r = q * r;
    Eigen::VectorXd x(90);
    for (int i = 0; i < 90; ++i) x[i] = rng.normal();
    const Vector3d z = project_to_common(x, layout);
    EXPECT_LT((project_to_common(x, rotated) - q * z).norm(), 1e-12);
  }
}

TEST(Kinematics, ZeroConfigurationIsSumOfLinks) {
  const auto chain = default_finger_chain();
  const auto fk = forward_kinematics(JointVector::Zero(), chain);
  const double total = 0.055 + 0.055 + 0.045 + 0.035;
  EXPECT_LT((fk.pose.translation - Vector3d(total, 0, 0)).norm(), 1e-15);
  EXPECT_LT(test::max_abs(fk.pose.rotation - Matrix3d::Identity()), 1e-15);
  EXPECT_FALSE(fk.clamped);

  const auto tilted = tilted_chain();
  const auto fk2 = forward_kinematics(JointVector::Zero(), tilted);
  EXPECT_LT((fk2.pose.translation - tilted.base_pose.apply(Vector3d(total, 0, 0))).norm(), 1e-15);
}

TEST(Kinematics, SingleJointRotation) {
  FingerChain chain = default_finger_chain();
  const double l = 0.04;
  chain.link_lengths = {l, l, l, l};
  chain.joint_limits[0] = {-2.0, 2.0};
  const JointVector q(std::numbers::pi / 2, 0, 0, 0);
  const auto zero = forward_kinematics(JointVector::Zero(), chain).pose;
  const auto turned = forward_kinematics(q, chain).pose;
  const Matrix3d rz = axis_angle(Vector3d::UnitZ(), std::numbers::pi / 2);
  EXPECT_LT((turned.translation - rz * zero.translation).norm(), 1e-15);
  EXPECT_LT((turned.translation - Vector3d(0, 4 * l, 0)).norm(), 1e-15);
  EXPECT_LT(test::max_abs(turned.rotation - rz * zero.rotation), 1e-15);
}

TEST(Kinematics, MatchesHomogeneousMatrixOracle) {
  const auto chain = tilted_chain();
  Rng rng(5);
  for (int k = 0; k < 100; ++k) {
    const JointVector q = random_q(rng, chain);
    const auto fk = forward_kinematics(q, chain);
    const Homogeneous h = oracle_tip(q, chain);
    EXPECT_LT((fk.pose.translation - h.topRightCorner<3, 1>()).norm(), 1e-10);
    EXPECT_LT(test::max_abs(fk.pose.rotation - h.topLeftCorner<3, 3>()), 1e-10);
  }
}

TEST(Kinematics, ClampsOutOfLimitConfigurations) {
  const auto chain = default_finger_chain();
  const JointVector q(0.0, 2.5, 0.2, 0.2);
  const auto fk = forward_kinematics(q, chain);
  EXPECT_TRUE(fk.clamped);
  const auto at_limit = forward_kinematics(JointVector(0.0, 1.8, 0.2, 0.2), chain);
  EXPECT_FALSE(at_limit.clamped);
  EXPECT_LT((fk.pose.translation - at_limit.pose.translation).norm(), 1e-15);
}

TEST(Jacobian, MatchesCentralDifferences) {
  const auto chain = tilted_chain();
  Rng rng(6);
  const double h = 1e-6;
  for (int k = 0; k < 100; ++k) {
    // Stay away from the limits so the difference stencil is not clamped.
    JointVector q = random_q(rng, chain) * 0.9;
    const TaskJacobian J = jacobian(q, chain);
    TaskJacobian fd;
    for (int j = 0; j < 4; ++j) {
      JointVector qp = q, qm = q;
      qp[j] += h;
      qm[j] -= h;
      fd.col(j) = (forward_kinematics(qp, chain).pose.translation - forward_kinematics(qm, chain).pose.translation) /
                  (2 * h);
    }
    EXPECT_LT((J - fd).norm() / fd.norm(), 1e-5);
  }
}

TEST(Jacobian, PlanarTwoLinkClosedForm) {
  const auto chain = default_finger_chain();
  const JointVector q(0, 0, 0.3, 0.5);
  const TaskJacobian J = jacobian(q, chain);
  // Flexion about +y: a link at angle phi points along (cos phi, 0, -sin phi).
  const double l3 = 0.045, l4 = 0.035;
  const double p3 = 0.3, p4 = 0.8;
  const double dx3 = -(l3 * std::sin(p3) + l4 * std::sin(p4));
  const double dz3 = -(l3 * std::cos(p3) + l4 * std::cos(p4));
  const double dx4 = -l4 * std::sin(p4);
  const double dz4 = -l4 * std::cos(p4);
  EXPECT_NEAR(J(0, 2), dx3, 1e-14);
  EXPECT_NEAR(J(2, 2), dz3, 1e-14);
  EXPECT_NEAR(J(0, 3), dx4, 1e-14);
  EXPECT_NEAR(J(2, 3), dz4, 1e-14);
  EXPECT_LT(J(0, 2), 0.0);
  EXPECT_LT(J(2, 2), 0.0);
  EXPECT_NEAR(J(1, 2), 0.0, 1e-15);
  EXPECT_NEAR(J(1, 3), 0.0, 1e-15);
  // Joint 2 moves the remaining links rigidly about the base.
  EXPECT_NEAR(J(0, 1), dx3, 1e-14);
}

TEST(Jacobian, StretchedConfigurationIsSingular) {
  const auto chain = default_finger_chain();
  const TaskJacobian J = jacobian(JointVector::Zero(), chain);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(J);
  EXPECT_LT(svd.singularValues()(2), 1e-8);
}

TEST(Gravity, ZeroGravityGivesZeroTorque) {
  const auto chain = tilted_chain();
  Rng rng(7);
  EXPECT_EQ(gravity_torque(random_q(rng, chain), chain, Vector3d::Zero()), JointVector::Zero());
}

TEST(Gravity, HangingChainHasNoMomentArm) {
  const auto chain = default_finger_chain();
  const JointVector hanging(0, std::numbers::pi / 2, 0, 0);
  const auto tip = forward_kinematics(hanging, chain).pose.translation;
  // The first link stays horizontal; the rest hang below joint 1.
  ASSERT_LT(std::abs(tip.x() - chain.link_lengths[0]), 1e-15);
  ASSERT_LT(tip.z(), 0.0);
  EXPECT_LT(gravity_torque(hanging, chain, Vector3d(0, 0, -9.81)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Gravity, IsGradientOfPotentialEnergy) {
  const auto chain = tilted_chain();
  const Vector3d g(0.3, -1.2, -9.81);
  Rng rng(8);
  const double h = 1e-6;
  for (int k = 0; k < 100; ++k) {
    const JointVector q = random_q(rng, chain) * 0.9;
    const JointVector tau = gravity_torque(q, chain, g);
    JointVector fd;
    for (int j = 0; j < 4; ++j) {
      JointVector qp = q, qm = q;
      qp[j] += h;
      qm[j] -= h;
      fd[j] = (potential(qp, chain, g) - potential(qm, chain, g)) / (2 * h);
    }
    EXPECT_LT((tau - fd).norm(), 1e-5 * std::max(fd.norm(), 1e-3));
  }
}

TEST(Gravity, IsLinearInG) {
  const auto chain = tilted_chain();
  Rng rng(9);
  for (int k = 0; k < 20; ++k) {
    const JointVector q = random_q(rng, chain);
    const Vector3d g1(rng.normal(), rng.normal(), rng.normal());
    const Vector3d g2(rng.normal(), rng.normal(), rng.normal());
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    const JointVector lhs = gravity_torque(q, chain, a * g1 + b * g2);
    const JointVector rhs = a * gravity_torque(q, chain, g1) + b * gravity_torque(q, chain, g2);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Chain, JsonRoundTripAndValidation) {
  test::ScratchDir dir;
  const auto chain = tilted_chain();
  {
    std::ofstream f(dir / "chain.json");
    f << chain_to_json(chain).dump(2);
  }
  const auto back = load_chain(dir / "chain.json");
  Rng rng(10);
  const JointVector q = random_q(rng, chain);
  EXPECT_LT((forward_kinematics(q, back).pose.translation - forward_kinematics(q, chain).pose.translation).norm(),
            1e-14);

  auto j = chain_to_json(chain);
  j["link_masses"][1] = -0.1;
  EXPECT_THROW(chain_from_json(j), ConfigError);
  EXPECT_THROW(load_chain(dir / "nope.json"), ConfigError);
}
