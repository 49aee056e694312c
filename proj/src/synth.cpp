#include "tforce/synth.hpp"

#include "tforce/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace tforce::synth {

namespace {

using Eigen::Matrix3d;

constexpr double kMaxTilt = std::numbers::pi / 3.0;

int nearest_taxel(const ArrayLayout& layout, const Vector3d& p) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < layout.n; ++i) {
    const double d = (layout.positions[static_cast<std::size_t>(i)] - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

void tangent_basis(const Vector3d& normal, Vector3d& t1, Vector3d& t2) {
  const Vector3d ref = std::abs(normal.y()) < 0.9 ? Vector3d::UnitY() : Vector3d::UnitX();
  t1 = ref.cross(normal).normalized();
  t2 = normal.cross(t1);
}

double footprint_sigma(double sigma, double kappa) {
  return sigma / std::sqrt(std::max(0.1, 1.0 + sigma * kappa));
}

bool on_sphere(const ArrayLayout& layout, double& radius) {
  radius = layout.positions.front().norm();
  if (radius <= 0.0) return false;
  return std::all_of(layout.positions.begin(), layout.positions.end(),
                     [&](const Vector3d& p) { return std::abs(p.norm() - radius) < 1e-9; });
}

// Bilinear blend of taxel positions/normals at fractional grid coordinates.
void surface_point(const ArrayLayout& layout, double row, double col, Vector3d& pos, Vector3d& normal) {
  const int r0 = std::clamp(static_cast<int>(std::floor(row)), 0, layout.h - 1);
  const int c0 = std::clamp(static_cast<int>(std::floor(col)), 0, layout.w - 1);
  const int r1 = std::min(r0 + 1, layout.h - 1);
  const int c1 = std::min(c0 + 1, layout.w - 1);
  const double fr = std::clamp(row - r0, 0.0, 1.0);
  const double fc = std::clamp(col - c0, 0.0, 1.0);
  auto idx = [&](int r, int c) { return static_cast<std::size_t>(r * layout.w + c); };
  const double w00 = (1 - fr) * (1 - fc), w01 = (1 - fr) * fc, w10 = fr * (1 - fc), w11 = fr * fc;
  pos = w00 * layout.positions[idx(r0, c0)] + w01 * layout.positions[idx(r0, c1)] +
        w10 * layout.positions[idx(r1, c0)] + w11 * layout.positions[idx(r1, c1)];
  normal = (w00 * layout.rotations[idx(r0, c0)].col(2) + w01 * layout.rotations[idx(r0, c1)].col(2) +
            w10 * layout.rotations[idx(r1, c0)].col(2) + w11 * layout.rotations[idx(r1, c1)].col(2))
               .normalized();
  double radius = 0.0;
  if (on_sphere(layout, radius)) pos = radius * pos.normalized();
}

double segment_magnitude(const PressSegment& s, double u) {
  switch (s.kind) {
    case ProfileKind::Hold:
      return s.magnitude_hi;
    case ProfileKind::Ramp:
      return s.magnitude_lo + (s.magnitude_hi - s.magnitude_lo) * (u / s.duration);
    case ProfileKind::Sinusoid:
      return s.magnitude_lo +
             (s.magnitude_hi - s.magnitude_lo) * 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * s.frequency * u));
  }
  return 0.0;
}

}  // namespace

void SensorModelParams::validate(int n) const {
  if (gains.size() != static_cast<std::size_t>(n)) throw ShapeError("sensor params: expected one gain matrix per taxel");
  if (baseline.size() != 3 * n) throw ShapeError("sensor params: baseline must have 3n entries");
  if (!(spatial_sigma > 0.0)) throw ConfigError("sensor params: spatial_sigma must be positive");
  if (!(noise_sigma >= 0.0)) throw ConfigError("sensor params: noise_sigma must be non-negative");
  if (!(saturation_scale > 0.0)) throw ConfigError("sensor params: saturation_scale must be positive");
}

SensorSettings curved_settings(std::uint64_t seed) {
  SensorSettings s;
  s.gain_shear = 40.0;
  s.gain_normal = 16.0;
  s.gain_spread = 0.35;
  s.gain_cross = 0.08;
  s.spatial_sigma = 0.0055;
  s.saturation_scale = 220.0;
  s.coupling_eps = 0.03;
  s.deform_gain = 0.08;
  s.temp_drift = 0.5;
  s.noise_sigma = 0.5;
  s.seed = seed;
  return s;
}

SensorSettings flat_settings(std::uint64_t seed) {
  SensorSettings s;
  s.gain_shear = 30.0;
  s.gain_normal = 30.0;
  s.gain_spread = 0.03;
  s.spatial_sigma = 0.006;
  s.saturation_scale = 60.0;
  s.coupling_eps = 0.02;
  s.deform_gain = 0.0;
  s.temp_drift = 0.5;
  s.noise_sigma = 0.5;
  s.seed = seed;
  return s;
}

SensorSettings linear_settings(std::uint64_t seed) {
  SensorSettings s;
  s.gain_spread = 0.2;
  s.seed = seed;
  return s;
}

SensorModelParams build_sensor_params(const ArrayLayout& layout, const SensorSettings& settings) {
  layout.validate();
  Rng rng(settings.seed);
  SensorModelParams p;
  p.gains.reserve(static_cast<std::size_t>(layout.n));
  for (int i = 0; i < layout.n; ++i) {
    Matrix3d c = Matrix3d::Zero();
    c(0, 0) = settings.gain_shear * (1.0 + settings.gain_spread * rng.uniform(-1.0, 1.0));
    c(1, 1) = settings.gain_shear * (1.0 + settings.gain_spread * rng.uniform(-1.0, 1.0));
    c(2, 2) = settings.gain_normal * (1.0 + settings.gain_spread * rng.uniform(-1.0, 1.0));
    for (int r = 0; r < 3; ++r) {
      for (int k = 0; k < 3; ++k) {
        if (r != k) c(r, k) = settings.gain_cross * settings.gain_shear * rng.uniform(-1.0, 1.0);
      }
    }
    p.gains.push_back(c);
  }
  p.baseline.resize(3 * layout.n);
  for (Eigen::Index k = 0; k < p.baseline.size(); ++k) {
    p.baseline[k] = settings.baseline_spread * rng.uniform(-1.0, 1.0);
  }
  p.spatial_sigma = settings.spatial_sigma;
  p.saturation_scale = settings.saturation_scale;
  p.coupling_eps = settings.coupling_eps;
  p.deform_gain = settings.deform_gain;
  p.temp_drift = settings.temp_drift;
  p.noise_sigma = settings.noise_sigma;
  p.seed = settings.seed;
  p.validate(layout.n);
  return p;
}

double saturate(double a, double scale) {
  if (std::isinf(scale)) return a;
  return scale * std::tanh(a / scale);
}

VectorXd sensor_response(const ContactState& c, const ArrayLayout& layout, const SensorModelParams& p, Rng& rng) {
  const int n = layout.n;
  if (p.gains.size() != static_cast<std::size_t>(n) || p.baseline.size() != 3 * n) {
    throw ShapeError("sensor_response: parameters do not match the layout");
  }

  const Vector3d n_c = layout.normal(nearest_taxel(layout, c.location));
  Vector3d t1, t2;
  tangent_basis(n_c, t1, t2);
  const double s = p.spatial_sigma;
  const double s1 = footprint_sigma(s, c.kappa.x());
  const double s2 = footprint_sigma(s, c.kappa.y());

  const double fnorm = c.force.norm();
  const double tilt = std::min(p.deform_gain * fnorm, kMaxTilt);

  Eigen::MatrixXd sat(3, n);
  for (int i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const Vector3d d = layout.positions[ui] - c.location;
    const double a1 = d.dot(t1) / s1, a2 = d.dot(t2) / s2, a3 = d.dot(n_c) / s;
    const double weight = std::exp(-(a1 * a1 + a2 * a2 + a3 * a3));

    Matrix3d rot = layout.rotations[ui];
    if (tilt > 0.0) {
      const Vector3d axis = layout.normal(i).cross(c.force);
      if (axis.norm() > 1e-12) rot = geometry::axis_angle(axis, tilt) * rot;
    }
    Vector3d load = c.force;
    if (c.tau_n != 0.0) load += p.swirl_gain * c.tau_n / (s * s) * n_c.cross(d);
    const Vector3d raw = weight * (p.gains[ui] * (rot.transpose() * load));
    for (int a = 0; a < 3; ++a) sat(a, i) = saturate(raw[a], p.saturation_scale);
  }

  VectorXd x(3 * n);
  const double drift = p.temp_drift * (c.temperature - p.temp_ref);
  for (int i = 0; i < n; ++i) {
    Vector3d v = sat.col(i);
    if (p.coupling_eps != 0.0) {
      const int r = i / layout.w, col = i % layout.w;
      Vector3d neighbours = Vector3d::Zero();
      if (r > 0) neighbours += sat.col(i - layout.w);
      if (r + 1 < layout.h) neighbours += sat.col(i + layout.w);
      if (col > 0) neighbours += sat.col(i - 1);
      if (col + 1 < layout.w) neighbours += sat.col(i + 1);
      v += p.coupling_eps * neighbours;
    }
    x.segment<3>(3 * i) = p.baseline.segment<3>(3 * i) + v + Vector3d::Constant(drift);
  }
  if (p.noise_sigma > 0.0) {
    for (Eigen::Index k = 0; k < x.size(); ++k) x[k] += p.noise_sigma * rng.normal();
  }
  return x;
}

double PressScript::duration() const {
  double d = static_lead;
  for (const auto& s : segments) d += s.duration;
  return d;
}

void PressScript::validate() const {
  if (segments.empty()) throw ConfigError("press script has no segments");
  if (!(sample_rate > 0.0)) throw ConfigError("press script: sample_rate must be positive");
  if (!(static_lead >= 0.0)) throw ConfigError("press script: static_lead must be non-negative");
  for (const auto& s : segments) {
    if (!(s.duration > 0.0)) throw ConfigError("press script: segment durations must be positive");
    if (!(s.magnitude_lo >= 0.0 && s.magnitude_hi >= 0.0)) throw ConfigError("press script: magnitudes must be >= 0");
    if (!(s.direction.norm() > 0.0)) throw ConfigError("press script: segment direction must be nonzero");
  }
}

PressScript default_press_script(const ArrayLayout& layout, std::uint64_t seed, double total_duration,
                                 double max_force) {
  layout.validate();
  Rng rng(seed);
  PressScript script;
  double remaining = total_duration - script.static_lead;
  if (remaining <= 0.0) throw ConfigError("press script duration shorter than the static lead");

  auto push = [&](PressSegment seg) {
    if (remaining <= 0.0) return;
    seg.duration = std::min(seg.duration, remaining);
    remaining -= seg.duration;
    script.segments.push_back(seg);
  };

  while (remaining > 1e-9) {
    Vector3d pos, normal;
    surface_point(layout, rng.uniform(0.3, layout.h - 1.3), rng.uniform(0.3, layout.w - 1.3), pos, normal);
    Vector3d t1, t2;
    tangent_basis(normal, t1, t2);
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double shear = rng.uniform(0.0, 0.7);
    const Vector3d dir = (normal + shear * (std::cos(phi) * t1 + std::sin(phi) * t2)).normalized();
    const double mag = rng.uniform(0.6, max_force);
    Vector3d slide_pos, slide_normal;
    surface_point(layout, rng.uniform(0.3, layout.h - 1.3), rng.uniform(0.3, layout.w - 1.3), slide_pos, slide_normal);
    const Vector3d end = pos + 0.15 * (slide_pos - pos);

    PressSegment seg;
    seg.direction = dir;
    seg.contact_start = pos;
    seg.contact_end = pos;

    seg.kind = ProfileKind::Ramp;
    seg.magnitude_lo = 0.0;
    seg.magnitude_hi = mag;
    seg.duration = rng.uniform(0.8, 2.0);
    push(seg);

    if (rng.uniform() < 0.5) {
      seg.kind = ProfileKind::Hold;
      seg.magnitude_lo = mag;
      seg.duration = rng.uniform(0.5, 2.0);
    } else {
      seg.kind = ProfileKind::Sinusoid;
      seg.magnitude_lo = mag;
      seg.magnitude_hi = mag * rng.uniform(0.4, 1.0);
      seg.frequency = rng.uniform(0.3, 1.2);
      seg.duration = 1.0 / seg.frequency;
    }
    seg.contact_end = end;
    push(seg);

    seg.kind = ProfileKind::Ramp;
    seg.magnitude_lo = mag;
    seg.magnitude_hi = 0.0;
    seg.contact_start = end;
    seg.duration = rng.uniform(0.5, 1.5);
    push(seg);

    seg.kind = ProfileKind::Hold;
    seg.magnitude_lo = 0.0;
    seg.magnitude_hi = 0.0;
    seg.duration = rng.uniform(0.2, 0.8);
    push(seg);
  }
  return script;
}

pipeline::Recording generate_recording(const PressScript& script, const ArrayLayout& layout,
                                       const SensorModelParams& p, const geometry::FingerChain& chain,
                                       const CollectionRig& rig) {
  script.validate();
  layout.validate();
  p.validate(layout.n);
  geometry::require_rotation(rig.base_to_reference, "collection rig reference frame");

  const auto samples = static_cast<Eigen::Index>(std::llround(script.duration() * script.sample_rate));
  pipeline::Recording rec;
  rec.meta.array_id = layout.array_id;
  rec.meta.n = layout.n;
  rec.meta.h = layout.h;
  rec.meta.w = layout.w;
  rec.meta.nominal_rate = script.sample_rate;
  if (script.static_lead > 0.0) rec.meta.static_segments.push_back({0.0, script.static_lead});
  rec.meta.tags["source"] = "synth";
  rec.offsets.x = VectorXd::Zero(3 * layout.n);

  std::vector<double> t(static_cast<std::size_t>(samples));
  Eigen::MatrixXd taxels(samples, 3 * layout.n), force(samples, 3), frame(samples, 4), joints(samples, 4);

  Rng sensor_rng(p.seed);
  Rng force_rng(p.seed ^ 0x9e3779b97f4a7c15ULL);

  std::size_t seg_index = 0;
  double seg_start = script.static_lead;
  for (Eigen::Index k = 0; k < samples; ++k) {
    const double tk = static_cast<double>(k) / script.sample_rate;
    t[static_cast<std::size_t>(k)] = tk;

    ContactState contact;
    contact.temperature = rig.temperature;
    if (tk >= script.static_lead) {
      while (seg_index + 1 < script.segments.size() && tk >= seg_start + script.segments[seg_index].duration) {
        seg_start += script.segments[seg_index].duration;
        ++seg_index;
      }
      const auto& seg = script.segments[seg_index];
      const double u = std::min(tk - seg_start, seg.duration);
      const double frac = u / seg.duration;
      contact.force = segment_magnitude(seg, u) * seg.direction.normalized();
      contact.location = (1.0 - frac) * seg.contact_start + frac * seg.contact_end;
      contact.tau_n = seg.tau_n;
      contact.kappa = seg.kappa;
    } else {
      contact.location = script.segments.front().contact_start;
    }
    taxels.row(k) = sensor_response(contact, layout, p, sensor_rng).transpose();

    geometry::JointVector q = rig.q_nominal;
    for (int j = 0; j < 4; ++j) {
      q[j] += rig.wobble_amplitude *
              std::sin(2.0 * std::numbers::pi * rig.wobble_frequency * tk + 0.5 * std::numbers::pi * j);
    }
    const Matrix3d r_b_s0 = geometry::forward_kinematics(q, chain).pose.rotation;
    const Matrix3d r0_f = r_b_s0.transpose() * rig.base_to_reference;
    Vector3d f_ref = r0_f.transpose() * contact.force;
    if (rig.force_noise_sigma > 0.0) {
      for (int a = 0; a < 3; ++a) f_ref[a] += rig.force_noise_sigma * force_rng.normal();
    }
    force.row(k) = f_ref.transpose();
    const auto quat = geometry::wxyz_from_rotation(r0_f);
    frame.row(k) << quat[0], quat[1], quat[2], quat[3];
    joints.row(k) = q.transpose();
  }
  rec.taxels = {t, std::move(taxels)};
  rec.force = {t, std::move(force)};
  rec.frame = {t, std::move(frame)};
  rec.joints = {t, std::move(joints)};
  return rec;
}

}  // namespace tforce::synth
