#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace tforce::geometry {

using Eigen::Matrix3d;
using Eigen::Vector3d;
using JointVector = Eigen::Matrix<double, 4, 1>;
using TaskJacobian = Eigen::Matrix<double, 3, 4>;

/// Orthogonality tolerance used for every rotation accepted by the toolkit.
inline constexpr double kRotationTolerance = 1e-9;

bool is_rotation(const Matrix3d& r, double tol = kRotationTolerance);

/// Throws ShapeError naming `what` when `r` is not a proper rotation.
void require_rotation(const Matrix3d& r, std::string_view what);

Matrix3d axis_angle(const Vector3d& axis, double angle);

/// Unit quaternion (w, x, y, z) -> rotation matrix; the quaternion is
/// normalized first.
Matrix3d rotation_from_wxyz(const std::array<double, 4>& wxyz);
std::array<double, 4> wxyz_from_rotation(const Matrix3d& r);

struct RigidTransform {
  Matrix3d rotation = Matrix3d::Identity();
  Vector3d translation = Vector3d::Zero();

  static RigidTransform identity() { return {}; }

  Vector3d apply(const Vector3d& p) const { return rotation * p + translation; }
  RigidTransform operator*(const RigidTransform& rhs) const {
    return {rotation * rhs.rotation, rotation * rhs.translation + translation};
  }
  RigidTransform inverse() const {
    return {rotation.transpose(), -(rotation.transpose() * translation)};
  }
};

/// Geometry of one tactile array. Taxel i is reported as the consecutive
/// triple (3i, 3i+1, 3i+2) in its local frame; rotations[i] maps that local
/// frame into the common array frame. On the grid, taxel i occupies row
/// i / w and column i % w.
struct ArrayLayout {
  std::string array_id;
  int n = 0;
  int h = 0;
  int w = 0;
  std::vector<Matrix3d> rotations;
  std::vector<Vector3d> positions;

  void validate() const;
  Vector3d normal(int i) const { return rotations[static_cast<std::size_t>(i)].col(2); }
};

/// Curved fingertip cap, 30 taxels on a 6x5 grid (sphere of radius 12 mm).
ArrayLayout fingertip_layout();
/// Flat phalanx array, 16 taxels on a 4x4 grid.
ArrayLayout phalanx_layout();
/// Flat rectangular array, 24 taxels on a 6x4 grid.
ArrayLayout rectangular_layout();

/// "fingertip", "phalanx" or "rectangular"; throws ConfigError otherwise.
ArrayLayout layout_preset(std::string_view name);

/// Radius of the fingertip sphere the curved preset is laid out on.
inline constexpr double kFingertipRadius = 0.012;

nlohmann::json layout_to_json(const ArrayLayout& layout);
ArrayLayout layout_from_json(const nlohmann::json& j);
ArrayLayout load_layout(const std::filesystem::path& path);
void save_layout(const ArrayLayout& layout, const std::filesystem::path& path);

/// Sum of all taxel activities rotated into the common frame.
Vector3d project_to_common(const Eigen::Ref<const Eigen::VectorXd>& x, const ArrayLayout& layout);

struct JointLimit {
  double lower = -3.14159265358979323846;
  double upper = 3.14159265358979323846;
};

/// Serial chain of four revolute joints. Joint j rotates about joint_axes[j]
/// (expressed in the frame of the preceding link); link j then extends by
/// link_lengths[j] along its own +x axis. link_coms[j] is given in the link
/// frame after the joint rotation. The frame reached after the last link is
/// the fingertip (common array) frame.
struct FingerChain {
  std::array<double, 4> link_lengths{};
  std::array<double, 4> link_masses{};
  std::array<Vector3d, 4> link_coms{};
  std::array<Vector3d, 4> joint_axes{};
  RigidTransform base_pose;
  std::array<JointLimit, 4> joint_limits{};

  void validate() const;
};

FingerChain default_finger_chain();

nlohmann::json chain_to_json(const FingerChain& chain);
FingerChain chain_from_json(const nlohmann::json& j);
FingerChain load_chain(const std::filesystem::path& path);

struct KinematicsResult {
  RigidTransform pose;  // fingertip in the hand base frame
  bool clamped = false; // q was outside the joint limits and was clamped
};

KinematicsResult forward_kinematics(const JointVector& q, const FingerChain& chain);

/// Translation Jacobian of the fingertip origin, 3x4, base frame.
TaskJacobian jacobian(const JointVector& q, const FingerChain& chain);

/// Joint torque that holds the chain static against gravity g (base frame),
/// i.e. the gradient of the potential energy -sum m_i g^T c_i(q).
JointVector gravity_torque(const JointVector& q, const FingerChain& chain, const Vector3d& g);

/// World positions of the link centers of mass.
std::array<Vector3d, 4> link_com_positions(const JointVector& q, const FingerChain& chain);

}  // namespace tforce::geometry
