#pragma once

#include "tforce/geometry.hpp"
#include "tforce/random.hpp"
#include "tforce/recording.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <limits>
#include <vector>

namespace tforce::synth {

using Eigen::Vector2d;
using Eigen::Vector3d;
using Eigen::VectorXd;
using geometry::ArrayLayout;

/// Everything the environment does to the array at one instant, in the
/// common array frame. `force` is the force the array exerts on the touched
/// object (pressing points along the outward surface normal).
struct ContactState {
  Vector3d force = Vector3d::Zero();
  double tau_n = 0.0;                  // N*m about the contact normal
  Vector3d location = Vector3d::Zero(); // m, on the sensor surface
  Vector2d kappa = Vector2d::Zero();   // 1/m, principal curvatures of the touched surface
  double temperature = 25.0;           // degC
};

/// Parameters of the generative taxel model.
///
/// Per taxel i the noiseless response is
///   raw_i = w_i * C_i * R_i(f)^T * (f + swirl_i)
///   x_i   = baseline_i + sat(raw_i) + coupling_eps * sum_{4-neighbours j} sat(raw_j)
///           + temp_drift * (temperature - temp_ref)
/// where w_i = exp(-(a1^2/s1^2 + a2^2/s2^2 + a3^2/s^2)) is the contact
/// footprint (a = taxel offset from the contact point in the contact's
/// tangent/normal basis, s = spatial_sigma, s_k shrunk or widened by the
/// curvature kappa_k), R_i(f) is the nominal taxel rotation tilted by
/// deform_gain * |f| about (n_i x f), and sat(a) = s * tanh(a / s) with
/// s = saturation_scale. i.i.d. Gaussian noise of std noise_sigma is added.
struct SensorModelParams {
  std::vector<Eigen::Matrix3d> gains;  // C_i, activity units per N
  double spatial_sigma = 0.005;
  double saturation_scale = std::numeric_limits<double>::infinity();
  double coupling_eps = 0.0;
  double deform_gain = 0.0;  // rad/N
  double temp_drift = 0.0;   // activity units per degC
  double temp_ref = 25.0;
  double noise_sigma = 0.0;
  double swirl_gain = 1.0;  // scales the shear induced by tau_n
  VectorXd baseline;        // 3n
  std::uint64_t seed = 0;

  void validate(int n) const;
};

/// Scalar knobs from which per-taxel parameters are drawn.
struct SensorSettings {
  double gain_shear = 40.0;
  double gain_normal = 20.0;
  double gain_spread = 0.0;      // relative per-taxel, per-axis gain heterogeneity
  double gain_cross = 0.0;       // relative off-diagonal gain magnitude
  double baseline_spread = 50.0; // baseline drawn uniformly in +-spread
  double spatial_sigma = 0.005;
  double saturation_scale = std::numeric_limits<double>::infinity();
  double coupling_eps = 0.0;
  double deform_gain = 0.0;
  double temp_drift = 0.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Curved-array regime: heterogeneous gains, frame tilt under load,
/// saturation and coupling enabled.
SensorSettings curved_settings(std::uint64_t seed = 1);
/// Flat-array regime: no deformation tilt, homogeneous gains, strong
/// saturation knee.
SensorSettings flat_settings(std::uint64_t seed = 1);
/// Exactly linear model: no saturation, tilt, coupling or noise.
SensorSettings linear_settings(std::uint64_t seed = 1);

SensorModelParams build_sensor_params(const ArrayLayout& layout, const SensorSettings& settings);

/// Odd soft-saturation knee; identity for an infinite scale.
double saturate(double a, double scale);

/// Taxel activities (3n) for one contact. Draws 3n normals from `rng` when
/// noise_sigma > 0 and none otherwise.
VectorXd sensor_response(const ContactState& c, const ArrayLayout& layout, const SensorModelParams& p, Rng& rng);

enum class ProfileKind { Hold, Ramp, Sinusoid };

/// One piece of a scripted press. Magnitude over the local time u in
/// [0, duration): Hold -> magnitude_hi, Ramp -> lo + (hi - lo) u / duration,
/// Sinusoid -> lo + (hi - lo) (1 - cos(2 pi frequency u)) / 2. The contact
/// point moves linearly from contact_start to contact_end.
struct PressSegment {
  ProfileKind kind = ProfileKind::Hold;
  double duration = 1.0;
  Vector3d direction = Vector3d::UnitZ();
  double magnitude_lo = 0.0;
  double magnitude_hi = 0.0;
  double frequency = 0.5;
  Vector3d contact_start = Vector3d::Zero();
  Vector3d contact_end = Vector3d::Zero();
  double tau_n = 0.0;
  Vector2d kappa = Vector2d::Zero();
};

/// Scripted stand-in for a human operator. The recording starts with
/// `static_lead` seconds of zero force, then plays the segments in order.
struct PressScript {
  double static_lead = 2.0;
  std::vector<PressSegment> segments;
  double sample_rate = 100.0;

  double duration() const;
  void validate() const;
};

/// Random press sequence covering the array, filling `total_duration`
/// seconds (static lead included).
PressScript default_press_script(const ArrayLayout& layout, std::uint64_t seed, double total_duration = 150.0,
                                 double max_force = 5.0);

/// How the array is held while being pressed against the reference sensor.
struct CollectionRig {
  geometry::JointVector q_nominal = (geometry::JointVector() << 0.0, 0.4, 0.5, 0.4).finished();
  double wobble_amplitude = 0.05;  // rad
  double wobble_frequency = 0.05;  // Hz
  Eigen::Matrix3d base_to_reference = Eigen::Matrix3d::Identity();  // rotation of {F} in {B}
  double force_noise_sigma = 0.0;  // N, on the reference measurement
  double temperature = 25.0;
};

/// Samples the script at its sample rate. Forces are recorded as the
/// reference sensor sees them (frame {F}); the frame channel holds R0_F as a
/// quaternion and the joint channel the finger configuration.
pipeline::Recording generate_recording(const PressScript& script, const ArrayLayout& layout,
                                       const SensorModelParams& p, const geometry::FingerChain& chain,
                                       const CollectionRig& rig = {});

}  // namespace tforce::synth
