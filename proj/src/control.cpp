#include "tforce/control.hpp"

#include "tforce/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>

namespace tforce::control {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kSpeedBound = 50.0;  // rad/s, beyond this a run counts as unbounded

std::string lower(std::string_view s) {
  std::string out;
  for (char c : s) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

Vector3d profile_at(const Scenario& sc, double t) {
  Vector3d f = sc.controller.f_d;
  for (const auto& step : sc.profile) {
    if (t >= step.t) f = step.f_d;
  }
  return f;
}

}  // namespace

void ControllerConfig::validate() const {
  if ((k_i.array() < 0.0).any() || (k_p.array() < 0.0).any() || (k_d.array() < 0.0).any()) {
    throw ConfigError("controller: gains must be non-negative");
  }
  if (!(torque_limit > 0.0)) throw ConfigError("controller: torque_limit must be positive");
  if (!(integral_rate_limit > 0.0) || !(integral_clamp > 0.0)) {
    throw ConfigError("controller: integral limits must be positive");
  }
  if (!(control_rate > 0.0)) throw ConfigError("controller: control_rate must be positive");
  if (!f_d.allFinite() || !q_d.allFinite()) throw ConfigError("controller: setpoints must be finite");
}

void integrate_error(const Vector3d& e_f, double dt, const ControllerConfig& cfg, ControllerState& st) {
  if (!(dt > 0.0)) throw ConfigError("integrate_error: dt must be positive");
  const double step_limit = cfg.integral_rate_limit * dt;
  for (int a = 0; a < 3; ++a) {
    double inc = std::clamp(cfg.k_i[a] * e_f[a] * dt, -step_limit, step_limit);
    if (st.saturation_active) {
      const double now = cfg.f_d[a] - st.integral[a];
      const double next = now - inc;
      if (std::abs(next) > std::abs(now)) inc = 0.0;
    }
    st.integral[a] = std::clamp(st.integral[a] + inc, -cfg.integral_clamp, cfg.integral_clamp);
  }
}

JointVector saturate_preserving_direction(const JointVector& tau, double limit) {
  if (!(limit > 0.0)) throw ConfigError("saturation limit must be positive");
  const double peak = tau.cwiseAbs().maxCoeff();
  if (peak <= limit) return tau;
  // the product can round one ulp past the limit
  const JointVector scaled = tau * (limit / peak);
  return scaled.cwiseMin(limit).cwiseMax(-limit);
}

JointVector control_law(const JointVector& q, const JointVector& qdot, const Vector3d& f_hat,
                        const ControllerConfig& cfg, ControllerState& st, const geometry::TaskJacobian& J,
                        const JointVector& tau_g) {
  if (!f_hat.allFinite()) {
    st.fault = true;
    return st.previous_command;
  }
  st.fault = false;
  integrate_error(f_hat - cfg.f_d, 1.0 / cfg.control_rate, cfg, st);
  const Vector3d f_cmd = cfg.f_d - st.integral;
  const JointVector tau =
      J.transpose() * f_cmd + tau_g - cfg.k_d.cwiseProduct(qdot) - cfg.k_p.cwiseProduct(q - cfg.q_d);
  const JointVector out = saturate_preserving_direction(tau, cfg.torque_limit);
  st.saturation_active = tau.cwiseAbs().maxCoeff() > cfg.torque_limit;
  st.previous_command = out;
  return out;
}

ContactRegime parse_regime(std::string_view text) {
  const std::string s = lower(text);
  if (s == "rigid") return ContactRegime::Rigid;
  if (s == "soft") return ContactRegime::Soft;
  throw ConfigError("unknown contact regime '" + std::string(text) + "' (rigid, soft)");
}

std::string to_string(ContactRegime r) { return r == ContactRegime::Rigid ? "rigid" : "soft"; }

void ContactParams::validate() const {
  if (!(stiffness > 0.0)) throw ConfigError("contact: stiffness must be positive");
  if (!(damping >= 0.0) || !(tangential_damping >= 0.0)) throw ConfigError("contact: damping must be >= 0");
  if (!kappa.allFinite()) throw ConfigError("contact: curvatures must be finite");
}

ContactParams contact_preset(ContactRegime regime) {
  ContactParams c;
  c.regime = regime;
  c.stiffness = regime == ContactRegime::Rigid ? 2e4 : 4e2;
  c.damping = 0.1 * std::sqrt(c.stiffness);
  c.tangential_damping = 2.0;
  // A sponge wraps around the fingertip: negative curvature widens the
  // footprint seen by the taxels.
  if (regime == ContactRegime::Soft) c.kappa = Eigen::Vector2d(-40.0, -40.0);
  return c;
}

ContactResult contact_force(const Vector3d& center, const Vector3d& velocity, const ContactParams& c,
                            const Surface& surface, double radius) {
  ContactResult r;
  r.penetration = radius - surface.normal.dot(center - surface.point);
  if (r.penetration <= 0.0) return r;
  r.touching = true;
  const double vn = surface.normal.dot(velocity);
  const double fn = std::max(0.0, c.stiffness * r.penetration - c.damping * vn);
  const Vector3d vt = velocity - vn * surface.normal;
  const Vector3d on_finger = fn * surface.normal - c.tangential_damping * vt;
  r.force = -on_finger;
  return r;
}

void step_plant(PlantState& ps, const JointVector& tau_cmd, const PlantParams& pp,
                const geometry::FingerChain& chain) {
  const auto fk = geometry::forward_kinematics(ps.q, chain);
  const geometry::TaskJacobian J = geometry::jacobian(ps.q, chain);
  const Vector3d v = J * ps.qdot;
  const ContactResult cr = contact_force(fk.pose.translation, v, ps.contact, ps.surface, pp.tip_radius);
  ps.contact_force = cr.force;

  const JointVector tau_g = geometry::gravity_torque(ps.q, chain, pp.gravity);
  const JointVector qdd = (pp.actuator_gain * tau_cmd - tau_g - pp.damping.cwiseProduct(ps.qdot) -
                           J.transpose() * cr.force)
                              .cwiseQuotient(pp.inertia);
  ps.qdot += pp.dt * qdd;
  ps.q += pp.dt * ps.qdot;
  if (!ps.q.allFinite() || !ps.qdot.allFinite()) throw NumericalError("plant state became non-finite");
}

synth::ContactState sensed_contact(const PlantState& ps, const PlantParams& pp, const geometry::FingerChain& chain,
                                   double temperature) {
  const auto fk = geometry::forward_kinematics(ps.q, chain);
  const Matrix3d& r = fk.pose.rotation;
  const Vector3d v = geometry::jacobian(ps.q, chain) * ps.qdot;
  const ContactResult cr = contact_force(fk.pose.translation, v, ps.contact, ps.surface, pp.tip_radius);
  synth::ContactState c;
  c.location = -pp.tip_radius * (r.transpose() * ps.surface.normal);
  c.force = r.transpose() * cr.force;
  c.kappa = ps.contact.kappa;
  c.temperature = temperature;
  return c;
}

void Scenario::validate() const {
  controller.validate();
  contact.validate();
  chain.validate();
  layout.validate();
  sensor.validate(layout.n);
  geometry::require_rotation(base_to_force, "scenario force frame");
  if (!(duration > 0.0) || !(summary_window > 0.0)) throw ConfigError("scenario: durations must be positive");
  if (!(plant.dt > 0.0) || plant.dt > 1.0 / controller.control_rate + 1e-15) {
    throw ConfigError("scenario: plant step must be positive and no longer than the control period");
  }
  if ((plant.inertia.array() <= 0.0).any()) throw ConfigError("scenario: inertias must be positive");
  if (mode == EstimatorMode::Model && !model) throw ConfigError("scenario: estimator mode needs a trained model");
}

Scenario default_scenario(ContactRegime regime, EstimatorMode mode, double f_n,
                          const synth::SensorModelParams* sensor) {
  Scenario sc;
  sc.mode = mode;
  sc.chain = geometry::default_finger_chain();
  sc.layout = geometry::fingertip_layout();
  sc.sensor = sensor ? *sensor : synth::build_sensor_params(sc.layout, synth::curved_settings(1));
  sc.contact = contact_preset(regime);
  sc.controller.q_d << 0.0, 0.4, 0.5, 0.4;
  sc.q0 = sc.controller.q_d;
  sc.controller.f_d = Vector3d(0.0, 0.0, f_n);

  // Touch the plane with the middle of the pad.
  Vector3d pad = Vector3d::Zero();
  for (int i = 0; i < sc.layout.n; ++i) pad += sc.layout.normal(i);
  pad.normalize();
  const auto pose = geometry::forward_kinematics(sc.controller.q_d, sc.chain).pose;
  const Vector3d press = pose.rotation * pad;
  sc.surface.normal = -press;
  sc.surface.point = pose.translation + sc.plant.tip_radius * press;

  const Vector3d ref = std::abs(press.y()) < 0.9 ? Vector3d::UnitY() : Vector3d::UnitX();
  const Vector3d x = ref.cross(press).normalized();
  sc.base_to_force.col(0) = x;
  sc.base_to_force.col(1) = press.cross(x);
  sc.base_to_force.col(2) = press;
  return sc;
}

SimTrace run_closed_loop(const Scenario& sc) {
  sc.validate();
  SimTrace trace;
  trace.mode = sc.mode;

  ControllerConfig cfg = sc.controller;
  if (sc.mode == EstimatorMode::OpenLoop) cfg.k_i.setZero();
  ControllerState st;

  PlantState ps;
  ps.q = sc.q0;
  ps.contact = sc.contact;
  ps.surface = sc.surface;

  Rng sensor_rng(sc.seed);
  const Matrix3d r_f = sc.base_to_force.transpose();  // base -> {F}
  const double period = 1.0 / cfg.control_rate;
  const int inner = std::max(1, static_cast<int>(std::lround(period / sc.plant.dt)));
  const auto ticks = static_cast<long>(std::llround(sc.duration * cfg.control_rate));
  trace.rows.reserve(static_cast<std::size_t>(ticks));

  for (long k = 0; k < ticks; ++k) {
    const double t = static_cast<double>(k) * period;
    cfg.f_d = profile_at(sc, t);

    const auto fk = geometry::forward_kinematics(ps.q, sc.chain);
    const geometry::TaskJacobian J_b = geometry::jacobian(ps.q, sc.chain);
    const ContactResult cr =
        contact_force(fk.pose.translation, J_b * ps.qdot, ps.contact, ps.surface, sc.plant.tip_radius);
    const Vector3d f_true = r_f * cr.force;

    const synth::ContactState seen = sensed_contact(ps, sc.plant, sc.chain, sc.temperature);
    const Eigen::VectorXd x = synth::sensor_response(seen, sc.layout, sc.sensor, sensor_rng);

    Vector3d f_hat = Vector3d::Constant(kNaN);
    Vector3d f_ctrl = cfg.f_d;
    if (sc.mode == EstimatorMode::Perfect) {
      f_hat = f_true + sc.estimator_bias;
      f_ctrl = f_hat;
    } else if (sc.mode == EstimatorMode::Model) {
      const Vector3d f_s0 = models::estimate(*sc.model, x, sc.layout);
      f_hat = r_f * (fk.pose.rotation * f_s0) + sc.estimator_bias;
      f_ctrl = f_hat;
    }

    const JointVector tau_g = geometry::gravity_torque(ps.q, sc.chain, sc.plant.gravity);
    const geometry::TaskJacobian J_f = r_f * J_b;
    const JointVector tau = control_law(ps.q, ps.qdot, f_ctrl, cfg, st, J_f, tau_g);

    TraceRow row;
    row.t = t;
    row.q = ps.q;
    row.qdot = ps.qdot;
    row.tau = tau;
    row.f_true = f_true;
    row.f_hat = f_hat;
    row.f_d = cfg.f_d;
    row.integral = st.integral;
    row.saturated = st.saturation_active;
    row.fault = st.fault;
    trace.rows.push_back(row);

    for (int s = 0; s < inner; ++s) {
      try {
        step_plant(ps, tau, sc.plant, sc.chain);
      } catch (const NumericalError&) {
        throw NumericalError("simulation diverged at control tick " + std::to_string(k));
      }
    }
  }
  trace.summary = summarize(trace, sc.summary_window);
  return trace;
}

SimSummary summarize(const SimTrace& trace, double window) {
  SimSummary s;
  if (trace.rows.empty()) return s;
  const double period = trace.rows.size() > 1 ? trace.rows[1].t - trace.rows[0].t : 0.01;
  const auto want = static_cast<std::size_t>(std::llround(window / period));
  const std::size_t count = std::clamp<std::size_t>(want, 1, trace.rows.size());
  const std::size_t first = trace.rows.size() - count;
  s.window = static_cast<double>(count) * period;

  double e_hat = 0.0, e_track = 0.0, e_real = 0.0;
  for (std::size_t k = first; k < trace.rows.size(); ++k) {
    const auto& r = trace.rows[k];
    e_hat += (r.f_hat - r.f_true).norm();
    e_track += (r.f_hat - r.f_d).norm();
    e_real += (r.f_true - r.f_d).norm();
  }
  const auto n = static_cast<double>(count);
  s.e_real = e_real / n;
  if (trace.mode != EstimatorMode::OpenLoop) {
    s.e_hat = e_hat / n;
    s.e_track = e_track / n;
  }

  long saturated = 0;
  for (const auto& r : trace.rows) {
    if (r.saturated) ++saturated;
    if (r.fault) ++s.faults;
    s.max_torque = std::max(s.max_torque, r.tau.cwiseAbs().maxCoeff());
    s.max_integral = std::max(s.max_integral, r.integral.cwiseAbs().maxCoeff());
    s.max_speed = std::max(s.max_speed, r.qdot.cwiseAbs().maxCoeff());
    if (!r.q.allFinite() || !r.qdot.allFinite() || !r.f_true.allFinite()) s.bounded = false;
  }
  if (s.max_speed > kSpeedBound) s.bounded = false;
  s.saturated_fraction = static_cast<double>(saturated) / static_cast<double>(trace.rows.size());
  return s;
}

void write_trace_csv(std::ostream& out, const SimTrace& trace) {
  out << "t,q0,q1,q2,q3,qd0,qd1,qd2,qd3,tau0,tau1,tau2,tau3,f_x,f_y,f_z,fhat_x,fhat_y,fhat_z,fd_x,fd_y,fd_z,"
         "e_hat,e_track,e_real,saturated,i_x,i_y,i_z\n";
  const bool open = trace.mode == EstimatorMode::OpenLoop;
  for (const auto& r : trace.rows) {
    std::string line = pipeline::format_double(r.t);
    auto put = [&](double v) {
      line += ',';
      line += pipeline::format_double(v);
    };
    for (int j = 0; j < 4; ++j) put(r.q[j]);
    for (int j = 0; j < 4; ++j) put(r.qdot[j]);
    for (int j = 0; j < 4; ++j) put(r.tau[j]);
    for (int a = 0; a < 3; ++a) put(r.f_true[a]);
    for (int a = 0; a < 3; ++a) put(r.f_hat[a]);
    for (int a = 0; a < 3; ++a) put(r.f_d[a]);
    put(open ? kNaN : (r.f_hat - r.f_true).norm());
    put(open ? kNaN : (r.f_hat - r.f_d).norm());
    put((r.f_true - r.f_d).norm());
    line += r.saturated ? ",1" : ",0";
    for (int a = 0; a < 3; ++a) put(r.integral[a]);
    out << line << '\n';
  }
}

void write_summary(std::ostream& out, const SimSummary& s) {
  auto field = [&](const char* name, const std::optional<double>& v) {
    char buf[96];
    if (v) {
      std::snprintf(buf, sizeof buf, "%-20s %.6f N\n", name, *v);
    } else {
      std::snprintf(buf, sizeof buf, "%-20s n/a\n", name);
    }
    out << buf;
  };
  char buf[96];
  std::snprintf(buf, sizeof buf, "%-20s %.2f s\n", "window", s.window);
  out << buf;
  field("e_hat", s.e_hat);
  field("e_track", s.e_track);
  field("e_real", s.e_real);
  std::snprintf(buf, sizeof buf, "%-20s %.4f\n", "saturated_fraction", s.saturated_fraction);
  out << buf;
  std::snprintf(buf, sizeof buf, "%-20s %.6f N*m\n", "max_torque", s.max_torque);
  out << buf;
  std::snprintf(buf, sizeof buf, "%-20s %.6f N\n", "max_integral", s.max_integral);
  out << buf;
  out << "bounded              " << (s.bounded ? "yes" : "no") << '\n';
  out << "faults               " << s.faults << '\n';
}

}  // namespace tforce::control
