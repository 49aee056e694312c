#include "tforce/geometry.hpp"

#include "tforce/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace tforce::geometry {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kTaxelPitch = 0.0047;

ArrayLayout flat_grid(std::string id, int h, int w) {
  ArrayLayout layout;
  layout.array_id = std::move(id);
  layout.n = h * w;
  layout.h = h;
  layout.w = w;
  const double x0 = -0.5 * (w - 1) * kTaxelPitch;
  const double y0 = -0.5 * (h - 1) * kTaxelPitch;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      layout.rotations.push_back(Matrix3d::Identity());
      layout.positions.emplace_back(x0 + c * kTaxelPitch, y0 + r * kTaxelPitch, 0.0);
    }
  }
  return layout;
}

std::array<double, 3> vec3_from_json(const nlohmann::json& j, std::string_view what) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(std::string(what) + ": expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Vector3d to_vec(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }

struct ChainFrames {
  std::array<Vector3d, 4> origins;     // joint origins, world
  std::array<Vector3d, 4> axes;        // joint axes, world
  std::array<Vector3d, 4> coms;        // link COMs, world
  RigidTransform tip;
  bool clamped = false;
};

ChainFrames chain_frames(const JointVector& q_in, const FingerChain& chain) {
  ChainFrames out;
  RigidTransform frame = chain.base_pose;
  for (std::size_t j = 0; j < 4; ++j) {
    double qj = q_in[static_cast<Eigen::Index>(j)];
    const auto& lim = chain.joint_limits[j];
    if (qj < lim.lower || qj > lim.upper) {
      qj = std::clamp(qj, lim.lower, lim.upper);
      out.clamped = true;
    }
    out.origins[j] = frame.translation;
    out.axes[j] = frame.rotation * chain.joint_axes[j];
    RigidTransform joint{axis_angle(chain.joint_axes[j], qj), Vector3d::Zero()};
    frame = frame * joint;
    out.coms[j] = frame.apply(chain.link_coms[j]);
    frame = frame * RigidTransform{Matrix3d::Identity(), Vector3d(chain.link_lengths[j], 0.0, 0.0)};
  }
  out.tip = frame;
  return out;
}

}  // namespace

bool is_rotation(const Matrix3d& r, double tol) {
  if (!r.allFinite()) return false;
  const double ortho = (r.transpose() * r - Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return ortho < tol && std::abs(r.determinant() - 1.0) < 1e-6;
}

void require_rotation(const Matrix3d& r, std::string_view what) {
  if (!is_rotation(r)) throw ShapeError(std::string(what) + " is not a proper rotation matrix");
}

Matrix3d axis_angle(const Vector3d& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

Matrix3d rotation_from_wxyz(const std::array<double, 4>& wxyz) {
  Eigen::Quaterniond quat(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
  if (!(quat.norm() > 0.0)) throw ShapeError("zero-norm quaternion");
  quat.normalize();
  return quat.toRotationMatrix();
}

std::array<double, 4> wxyz_from_rotation(const Matrix3d& r) {
  Eigen::Quaterniond quat(r);
  quat.normalize();
  // Canonical hemisphere keeps serialization stable.
  if (quat.w() < 0.0) quat.coeffs() *= -1.0;
  return {quat.w(), quat.x(), quat.y(), quat.z()};
}

void ArrayLayout::validate() const {
  if (n <= 0 || h <= 0 || w <= 0) throw ShapeError("layout '" + array_id + "': sizes must be positive");
  if (h * w != n) throw ShapeError("layout '" + array_id + "': h*w != n");
  if (rotations.size() != static_cast<std::size_t>(n) || positions.size() != static_cast<std::size_t>(n)) {
    throw ShapeError("layout '" + array_id + "': expected " + std::to_string(n) + " rotations and positions");
  }
  for (std::size_t i = 0; i < rotations.size(); ++i) {
    require_rotation(rotations[i], "layout '" + array_id + "' rotation " + std::to_string(i));
  }
}

ArrayLayout fingertip_layout() {
  ArrayLayout layout;
  layout.array_id = "fingertip";
  layout.h = 6;
  layout.w = 5;
  layout.n = 30;
  // Local z is the outward normal. Rows sweep from the tip over the pad,
  // columns sweep around the finger's long axis.
  const Matrix3d flip = axis_angle(Vector3d::UnitX(), std::numbers::pi);
  for (int r = 0; r < layout.h; ++r) {
    const double pitch = (-75.0 + 20.0 * r) * kDeg;
    for (int c = 0; c < layout.w; ++c) {
      const double roll = (-50.0 + 25.0 * c) * kDeg;
      const Matrix3d rot =
          axis_angle(Vector3d::UnitY(), pitch) * axis_angle(Vector3d::UnitX(), roll) * flip;
      layout.rotations.push_back(rot);
      layout.positions.push_back(kFingertipRadius * rot.col(2));
    }
  }
  return layout;
}

ArrayLayout phalanx_layout() { return flat_grid("phalanx", 4, 4); }

ArrayLayout rectangular_layout() { return flat_grid("rectangular", 6, 4); }

ArrayLayout layout_preset(std::string_view name) {
  if (name == "fingertip") return fingertip_layout();
  if (name == "phalanx") return phalanx_layout();
  if (name == "rectangular") return rectangular_layout();
  throw ConfigError("unknown layout preset '" + std::string(name) + "' (fingertip, phalanx, rectangular)");
}

nlohmann::json layout_to_json(const ArrayLayout& layout) {
  nlohmann::json j;
  j["array_id"] = layout.array_id;
  j["n"] = layout.n;
  j["h"] = layout.h;
  j["w"] = layout.w;
  j["grid_mapping"] = "taxel i -> (row i / w, col i % w)";
  auto quats = nlohmann::json::array();
  auto pos = nlohmann::json::array();
  for (int i = 0; i < layout.n; ++i) {
    quats.push_back(wxyz_from_rotation(layout.rotations[static_cast<std::size_t>(i)]));
    const auto& p = layout.positions[static_cast<std::size_t>(i)];
    pos.push_back({p.x(), p.y(), p.z()});
  }
  j["quaternions"] = quats;
  j["positions"] = pos;
  return j;
}

ArrayLayout layout_from_json(const nlohmann::json& j) {
  ArrayLayout layout;
  try {
    layout.array_id = j.at("array_id").get<std::string>();
    layout.n = j.at("n").get<int>();
    layout.h = j.at("h").get<int>();
    layout.w = j.at("w").get<int>();
    for (const auto& q : j.at("quaternions")) {
      if (q.size() != 4) throw ConfigError("layout quaternion must have 4 entries");
      layout.rotations.push_back(
          rotation_from_wxyz({q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>()}));
    }
    for (const auto& p : j.at("positions")) layout.positions.push_back(to_vec(vec3_from_json(p, "position")));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed layout: ") + e.what());
  }
  layout.validate();
  return layout;
}

ArrayLayout load_layout(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open layout file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse layout file " + path.string() + ": " + e.what());
  }
  return layout_from_json(j);
}

void save_layout(const ArrayLayout& layout, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write layout file: " + path.string());
  out << layout_to_json(layout).dump(2) << '\n';
}

Vector3d project_to_common(const Eigen::Ref<const Eigen::VectorXd>& x, const ArrayLayout& layout) {
  if (x.size() != 3 * layout.n) {
    throw ShapeError("project_to_common: expected " + std::to_string(3 * layout.n) + " activities, got " +
                     std::to_string(x.size()));
  }
  Vector3d z = Vector3d::Zero();
  for (int i = 0; i < layout.n; ++i) z += layout.rotations[static_cast<std::size_t>(i)] * x.segment<3>(3 * i);
  return z;
}

void FingerChain::validate() const {
  for (std::size_t j = 0; j < 4; ++j) {
    if (!(link_lengths[j] > 0.0)) throw ConfigError("finger chain: link lengths must be positive");
    if (!(link_masses[j] > 0.0)) throw ConfigError("finger chain: link masses must be positive");
    if (std::abs(joint_axes[j].norm() - 1.0) > 1e-12) throw ConfigError("finger chain: joint axes must be unit");
    if (!(joint_limits[j].lower <= joint_limits[j].upper)) throw ConfigError("finger chain: bad joint limits");
  }
  require_rotation(base_pose.rotation, "finger chain base pose");
}

FingerChain default_finger_chain() {
  FingerChain chain;
  chain.link_lengths = {0.055, 0.055, 0.045, 0.035};
  chain.link_masses = {0.06, 0.06, 0.04, 0.03};
  for (std::size_t j = 0; j < 4; ++j) chain.link_coms[j] = Vector3d(0.5 * chain.link_lengths[j], 0.0, 0.0);
  // Abduction about z, then three parallel flexion joints about y; positive
  // flexion curls the finger toward its pad (-z).
  chain.joint_axes = {Vector3d::UnitZ(), Vector3d::UnitY(), Vector3d::UnitY(), Vector3d::UnitY()};
  chain.joint_limits = {JointLimit{-0.6, 0.6}, JointLimit{-0.3, 1.8}, JointLimit{-0.3, 1.8}, JointLimit{-0.3, 1.8}};
  chain.base_pose = RigidTransform::identity();
  return chain;
}

nlohmann::json chain_to_json(const FingerChain& chain) {
  nlohmann::json j;
  j["link_lengths"] = chain.link_lengths;
  j["link_masses"] = chain.link_masses;
  auto coms = nlohmann::json::array();
  auto axes = nlohmann::json::array();
  auto limits = nlohmann::json::array();
  for (std::size_t k = 0; k < 4; ++k) {
    coms.push_back({chain.link_coms[k].x(), chain.link_coms[k].y(), chain.link_coms[k].z()});
    axes.push_back({chain.joint_axes[k].x(), chain.joint_axes[k].y(), chain.joint_axes[k].z()});
    limits.push_back({chain.joint_limits[k].lower, chain.joint_limits[k].upper});
  }
  j["link_coms"] = coms;
  j["joint_axes"] = axes;
  j["joint_limits"] = limits;
  const auto& t = chain.base_pose.translation;
  j["base_pose"] = {{"quaternion", wxyz_from_rotation(chain.base_pose.rotation)},
                    {"translation", {t.x(), t.y(), t.z()}}};
  return j;
}

FingerChain chain_from_json(const nlohmann::json& j) {
  FingerChain chain;
  try {
    chain.link_lengths = j.at("link_lengths").get<std::array<double, 4>>();
    chain.link_masses = j.at("link_masses").get<std::array<double, 4>>();
    const auto& coms = j.at("link_coms");
    const auto& axes = j.at("joint_axes");
    const auto& limits = j.at("joint_limits");
    if (coms.size() != 4 || axes.size() != 4 || limits.size() != 4) {
      throw ConfigError("finger chain: expected 4 entries per joint field");
    }
    for (std::size_t k = 0; k < 4; ++k) {
      chain.link_coms[k] = to_vec(vec3_from_json(coms[k], "link_coms"));
      // Axes are normalized on load, like quaternions.
      chain.joint_axes[k] = to_vec(vec3_from_json(axes[k], "joint_axes")).normalized();
      chain.joint_limits[k] = {limits[k].at(0).get<double>(), limits[k].at(1).get<double>()};
    }
    if (j.contains("base_pose")) {
      const auto& bp = j.at("base_pose");
      chain.base_pose.rotation = rotation_from_wxyz(bp.at("quaternion").get<std::array<double, 4>>());
      chain.base_pose.translation = to_vec(vec3_from_json(bp.at("translation"), "translation"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed finger chain: ") + e.what());
  }
  chain.validate();
  return chain;
}

FingerChain load_chain(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open chain file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse chain file " + path.string() + ": " + e.what());
  }
  return chain_from_json(j);
}

KinematicsResult forward_kinematics(const JointVector& q, const FingerChain& chain) {
  const ChainFrames frames = chain_frames(q, chain);
  return {frames.tip, frames.clamped};
}

TaskJacobian jacobian(const JointVector& q, const FingerChain& chain) {
  const ChainFrames frames = chain_frames(q, chain);
  TaskJacobian jac;
  for (std::size_t j = 0; j < 4; ++j) {
    jac.col(static_cast<Eigen::Index>(j)) = frames.axes[j].cross(frames.tip.translation - frames.origins[j]);
  }
  return jac;
}

JointVector gravity_torque(const JointVector& q, const FingerChain& chain, const Vector3d& g) {
  const ChainFrames frames = chain_frames(q, chain);
  JointVector tau = JointVector::Zero();
  for (std::size_t j = 0; j < 4; ++j) {
    // Link i moves with joint j only for i >= j.
    for (std::size_t i = j; i < 4; ++i) {
      const Vector3d dcom = frames.axes[j].cross(frames.coms[i] - frames.origins[j]);
      tau[static_cast<Eigen::Index>(j)] -= chain.link_masses[i] * g.dot(dcom);
    }
  }
  return tau;
}

std::array<Vector3d, 4> link_com_positions(const JointVector& q, const FingerChain& chain) {
  return chain_frames(q, chain).coms;
}

}  // namespace tforce::geometry
