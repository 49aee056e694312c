#pragma once

#include "tforce/geometry.hpp"
#include "tforce/models.hpp"
#include "tforce/random.hpp"
#include "tforce/synth.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace tforce::control {

using Eigen::Matrix3d;
using Eigen::Vector3d;
using geometry::JointVector;

inline constexpr double kTorqueLimit = 0.35;  // N*m

struct ControllerConfig {
  Vector3d k_i = Vector3d::Constant(5.0);     // diagonal of K_i, 1/s
  JointVector k_p = JointVector::Constant(0.3);
  JointVector k_d = JointVector::Constant(0.01);
  JointVector q_d = JointVector::Zero();
  Vector3d f_d = Vector3d::Zero();            // N, frame {F}
  double torque_limit = kTorqueLimit;
  double integral_rate_limit = 5.0;            // N/s per axis
  double integral_clamp = 10.0;                // N per axis
  double control_rate = 100.0;                 // Hz

  void validate() const;
};

/// `integral` holds K_i * integral(e_f dt) in N; the commanded task force is
/// f_d - integral.
struct ControllerState {
  Vector3d integral = Vector3d::Zero();
  JointVector previous_command = JointVector::Zero();
  bool saturation_active = false;
  bool fault = false;
};

/// Rate-limited, clamped integration of e_f over dt. While the previous
/// command was saturated, axes whose increment would enlarge the commanded
/// task force |f_d - integral| are frozen.
void integrate_error(const Vector3d& e_f, double dt, const ControllerConfig& cfg, ControllerState& st);

/// Scales tau so that max |tau_j| <= limit, keeping its direction.
JointVector saturate_preserving_direction(const JointVector& tau, double limit = kTorqueLimit);

/// tau = J^T (f_d - K_i int e_f) + tau_g - K_d qdot - K_p (q - q_d), then
/// saturated. e_f = f_hat - f_d. J is the translation Jacobian expressed in
/// the force frame {F}; tau_g the gravity compensation torque. A non-finite
/// f_hat holds the previous command and sets st.fault.
JointVector control_law(const JointVector& q, const JointVector& qdot, const Vector3d& f_hat,
                        const ControllerConfig& cfg, ControllerState& st, const geometry::TaskJacobian& J,
                        const JointVector& tau_g);

enum class ContactRegime { Rigid, Soft };
ContactRegime parse_regime(std::string_view text);
std::string to_string(ContactRegime r);

/// Penalty contact of the spherical fingertip with a plane.
struct ContactParams {
  ContactRegime regime = ContactRegime::Rigid;
  double stiffness = 2e4;         // N/m
  double damping = 0.1 * 141.4213562373095;  // N*s/m
  double tangential_damping = 2.0;  // N*s/m
  Eigen::Vector2d kappa = Eigen::Vector2d::Zero();  // seen by the sensor model

  void validate() const;
};
ContactParams contact_preset(ContactRegime regime);

/// Plane through `point` with unit `normal` pointing toward the finger.
struct Surface {
  Vector3d point = Vector3d::Zero();
  Vector3d normal = Vector3d::UnitZ();
};

struct PlantParams {
  JointVector inertia = (JointVector() << 2e-3, 2e-3, 1.5e-3, 1e-3).finished();  // kg*m^2
  JointVector damping = JointVector::Constant(0.005);                               // N*m*s/rad
  Vector3d gravity{0.0, 0.0, -9.81};  // base frame
  double actuator_gain = 1.0;         // applied torque / commanded torque
  double dt = 1e-3;
  double tip_radius = geometry::kFingertipRadius;
};

struct PlantState {
  JointVector q = JointVector::Zero();
  JointVector qdot = JointVector::Zero();
  ContactParams contact;
  Surface surface;
  Vector3d contact_force = Vector3d::Zero();  // fingertip on object, base frame
};

struct ContactResult {
  Vector3d force = Vector3d::Zero();  // fingertip on object, base frame
  double penetration = 0.0;           // m, positive when in contact
  bool touching = false;
};

/// Penalty force for the fingertip sphere centred at `center` moving with
/// `velocity`.
ContactResult contact_force(const Vector3d& center, const Vector3d& velocity, const ContactParams& c,
                            const Surface& surface, double radius);

/// One semi-implicit Euler step of
///   M qdd = gain * tau_cmd - tau_g - b qdot - J^T f_contact.
/// Throws NumericalError on a non-finite state.
void step_plant(PlantState& ps, const JointVector& tau_cmd, const PlantParams& pp,
                const geometry::FingerChain& chain);

/// Contact state seen by the sensor: force and location in the array frame.
synth::ContactState sensed_contact(const PlantState& ps, const PlantParams& pp, const geometry::FingerChain& chain,
                                   double temperature = 25.0);

enum class EstimatorMode { OpenLoop, Perfect, Model };

struct ForceStep {
  double t = 0.0;  // s, from the start of the run
  Vector3d f_d = Vector3d::Zero();  // N, frame {F}
};

struct Scenario {
  EstimatorMode mode = EstimatorMode::Perfect;
  std::optional<models::ForceModel> model;  // required for EstimatorMode::Model
  Vector3d estimator_bias = Vector3d::Zero();
  ControllerConfig controller;
  std::vector<ForceStep> profile;  // f_d schedule; empty means controller.f_d throughout
  double duration = 10.0;
  double summary_window = 13.0;    // trailing, clipped to the run
  PlantParams plant;
  ContactParams contact;
  geometry::FingerChain chain;
  geometry::ArrayLayout layout;
  synth::SensorModelParams sensor;
  Matrix3d base_to_force = Matrix3d::Identity();  // rotation of {F} in {B}
  Surface surface;
  JointVector q0 = JointVector::Zero();
  std::uint64_t seed = 0;
  double temperature = 25.0;

  void validate() const;
};

/// Fingertip chain, fingertip array, touching plane and force frame chosen so
/// that {F} z points along the pressing direction at q_d. f_d = (0, 0, f_n).
Scenario default_scenario(ContactRegime regime, EstimatorMode mode, double f_n = 1.5,
                          const synth::SensorModelParams* sensor = nullptr);

struct TraceRow {
  double t = 0.0;
  JointVector q, qdot, tau;
  Vector3d f_true, f_hat, f_d, integral;  // frame {F}
  bool saturated = false;
  bool fault = false;
};

struct SimSummary {
  double window = 0.0;  // s actually averaged
  std::optional<double> e_hat;    // mean |f_hat - f_true|
  std::optional<double> e_track;  // mean |f_hat - f_d|
  double e_real = 0.0;            // mean |f_true - f_d|
  double saturated_fraction = 0.0;
  double max_torque = 0.0;
  double max_integral = 0.0;
  double max_speed = 0.0;
  bool bounded = true;
  long faults = 0;
};

struct SimTrace {
  EstimatorMode mode = EstimatorMode::Perfect;
  std::vector<TraceRow> rows;
  SimSummary summary;
};

/// 100 Hz controller over the 1 kHz plant with zero-order hold.
SimTrace run_closed_loop(const Scenario& scenario);

/// Averages over the trailing `window` seconds.
SimSummary summarize(const SimTrace& trace, double window);

void write_trace_csv(std::ostream& out, const SimTrace& trace);
void write_summary(std::ostream& out, const SimSummary& s);

}  // namespace tforce::control
