#include "tforce/control.hpp"
#include "tforce/error.hpp"

#include "test_util.hpp"

#include <cmath>
#include <limits>
#include <sstream>

using namespace tforce;
using namespace tforce::control;

namespace {

models::ForceModel flat_model(models::ModelKind kind, const Eigen::VectorXd& theta) {
  models::ForceModel m;
  m.kind = kind;
  m.theta = theta;
  m.layout = models::layout_ref(geometry::fingertip_layout());
  m.scales.x = Eigen::VectorXd::Ones(90);
  return m;
}

geometry::TaskJacobian some_jacobian() {
  geometry::TaskJacobian J;
  J << 0.01, 0.02, 0.0, -0.01, 0.03, 0.0, 0.01, 0.02, -0.02, 0.01, 0.04, 0.0;
  return J;
}

}  // namespace

TEST(Saturation, Examples) {
  JointVector tau(0.7, 0.35, 0.0, -0.1);
  const JointVector s = saturate_preserving_direction(tau, 0.35);
  EXPECT_LT((s - JointVector(0.35, 0.175, 0.0, -0.05)).norm(), 1e-15);
  const JointVector small(0.1, -0.2, 0.3, 0.0);
  EXPECT_EQ(saturate_preserving_direction(small, 0.35), small);
}

TEST(Saturation, BoundedAndParallel) {
  Rng rng(1);
  for (int k = 0; k < 10000; ++k) {
    JointVector tau;
    const double scale = std::exp(rng.uniform(-4.0, 4.0));
    for (int j = 0; j < 4; ++j) tau[j] = scale * rng.normal();
    const JointVector s = saturate_preserving_direction(tau);
    ASSERT_LE(s.cwiseAbs().maxCoeff(), kTorqueLimit * (1.0 + 1e-15));
    ASSERT_NEAR(s.normalized().dot(tau.normalized()), 1.0, 1e-12);
    if (tau.cwiseAbs().maxCoeff() <= kTorqueLimit) ASSERT_EQ(s, tau);
  }
}

TEST(Integrator, ZeroErrorKeepsState) {
  ControllerConfig cfg;
  ControllerState st;
  st.integral = Vector3d(0.3, -0.2, 1.0);
  integrate_error(Vector3d::Zero(), 0.01, cfg, st);
  EXPECT_EQ(st.integral, Vector3d(0.3, -0.2, 1.0));
}

TEST(Integrator, RateLimitAndClamp) {
  ControllerConfig cfg;
  ControllerState st;
  integrate_error(Vector3d(1e3, -1e3, 0.01), 0.01, cfg, st);
  EXPECT_NEAR(st.integral[0], cfg.integral_rate_limit * 0.01, 1e-15);
  EXPECT_NEAR(st.integral[1], -cfg.integral_rate_limit * 0.01, 1e-15);
  EXPECT_NEAR(st.integral[2], cfg.k_i[2] * 0.01 * 0.01, 1e-15);
  for (int k = 0; k < 1000; ++k) integrate_error(Vector3d(1e3, -1e3, 0.0), 0.01, cfg, st);
  EXPECT_EQ(st.integral[0], cfg.integral_clamp);
  EXPECT_EQ(st.integral[1], -cfg.integral_clamp);
}

TEST(Integrator, FreezesWhileSaturated) {
  ControllerConfig cfg;
  cfg.f_d = Vector3d(0, 0, 2.0);
  ControllerState st;
  st.saturation_active = true;
  // f_hat below f_d would raise the command further: frozen.
  integrate_error(Vector3d(0, 0, -0.5), 0.01, cfg, st);
  EXPECT_EQ(st.integral[2], 0.0);
  // The opposite sign lowers it and is allowed.
  integrate_error(Vector3d(0, 0, 0.5), 0.01, cfg, st);
  EXPECT_GT(st.integral[2], 0.0);
}

TEST(ControlLaw, AtRestCommandsFeedforward) {
  ControllerConfig cfg;
  cfg.f_d = Vector3d(0.2, -0.1, 1.5);
  cfg.q_d = JointVector(0.0, 0.4, 0.5, 0.4);
  ControllerState st;
  const auto J = some_jacobian();
  const JointVector tau = control_law(cfg.q_d, JointVector::Zero(), cfg.f_d, cfg, st, J, JointVector::Zero());
  EXPECT_LT((tau - saturate_preserving_direction(J.transpose() * cfg.f_d)).norm(), 1e-15);
  EXPECT_FALSE(st.fault);
}

TEST(ControlLaw, ConstantDeficitGrowsCommandLinearly) {
  ControllerConfig cfg;
  cfg.f_d = Vector3d(0, 0, 1.0);
  ControllerState st;
  const auto J = some_jacobian();
  // 0.5 N short of the set-point for one second.
  for (int k = 0; k < 100; ++k) {
    control_law(JointVector::Zero(), JointVector::Zero(), Vector3d(0, 0, 0.5), cfg, st, J, JointVector::Zero());
  }
  const Vector3d f_cmd = cfg.f_d - st.integral;
  EXPECT_NEAR(f_cmd[2], 1.0 + cfg.k_i[2] * 0.5 * 1.0, 1e-12);
  EXPECT_NEAR(f_cmd[0], 0.0, 1e-15);
}

TEST(ControlLaw, NonFiniteEstimateHoldsCommand) {
  ControllerConfig cfg;
  cfg.f_d = Vector3d(0, 0, 1.0);
  ControllerState st;
  const auto J = some_jacobian();
  const JointVector first =
      control_law(JointVector::Zero(), JointVector::Zero(), Vector3d(0, 0, 0.8), cfg, st, J, JointVector::Zero());
  const Vector3d integral = st.integral;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const JointVector held =
      control_law(JointVector::Ones(), JointVector::Ones(), Vector3d(nan, 0, 0), cfg, st, J, JointVector::Zero());
  EXPECT_EQ(held, first);
  EXPECT_TRUE(st.fault);
  EXPECT_EQ(st.integral, integral);
}

TEST(Contact, PenaltyLaw) {
  const auto c = contact_preset(ContactRegime::Rigid);
  Surface s;
  const double r = 0.012;
  const auto none = contact_force(Vector3d(0, 0, 0.02), Vector3d::Zero(), c, s, r);
  EXPECT_FALSE(none.touching);
  EXPECT_EQ(none.force, Vector3d::Zero());
  const auto hit = contact_force(Vector3d(0.3, -0.1, 0.011), Vector3d::Zero(), c, s, r);
  EXPECT_TRUE(hit.touching);
  EXPECT_NEAR(hit.penetration, 0.001, 1e-15);
  EXPECT_LT((hit.force - Vector3d(0, 0, -c.stiffness * 0.001)).norm(), 1e-12);
  EXPECT_LT(contact_preset(ContactRegime::Soft).stiffness, c.stiffness);
}

TEST(Plant, GravityCompensationIsEquilibrium) {
  const auto chain = geometry::default_finger_chain();
  PlantParams pp;
  PlantState ps;
  ps.q = JointVector(0.1, 0.5, 0.3, 0.2);
  ps.surface.point = Vector3d(0, 0, -10.0);
  const JointVector q0 = ps.q;
  for (int k = 0; k < 1000; ++k) step_plant(ps, geometry::gravity_torque(ps.q, chain, pp.gravity), pp, chain);
  EXPECT_LT((ps.q - q0).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(ps.qdot.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Plant, UnforcedMotionLosesEnergy) {
  const auto chain = geometry::default_finger_chain();
  PlantParams pp;
  pp.gravity.setZero();
  PlantState ps;
  ps.surface.point = Vector3d(0, 0, -10.0);
  ps.qdot = JointVector(1.0, -2.0, 0.5, 3.0);
  double energy = 0.5 * ps.qdot.cwiseProduct(ps.qdot).dot(pp.inertia);
  for (int k = 0; k < 2000; ++k) {
    step_plant(ps, JointVector::Zero(), pp, chain);
    const double now = 0.5 * ps.qdot.cwiseProduct(ps.qdot).dot(pp.inertia);
    ASSERT_LT(now, energy);
    energy = now;
  }
}

TEST(ClosedLoop, PerfectEstimatorTracks) {
  auto sc = default_scenario(ContactRegime::Rigid, EstimatorMode::Perfect);
  sc.duration = 10.0;
  const auto trace = run_closed_loop(sc);
  const auto s = summarize(trace, 2.0);
  EXPECT_LT(*s.e_track, 1e-6);
  EXPECT_LT(*s.e_hat, 1e-12);
  EXPECT_LT(s.e_real, 1e-6);
  EXPECT_TRUE(s.bounded);
  EXPECT_EQ(s.faults, 0);
}

TEST(ClosedLoop, BiasedEstimatorTracksItsOwnEstimate) {
  auto sc = default_scenario(ContactRegime::Rigid, EstimatorMode::Perfect);
  // Along the normal only: the frictionless plane cannot carry a tangential load.
  sc.estimator_bias = Vector3d(0.0, 0.0, 0.1);
  sc.duration = 10.0;
  const auto s = summarize(run_closed_loop(sc), 2.0);
  EXPECT_LT(*s.e_track, 1e-6);
  EXPECT_NEAR(*s.e_hat, sc.estimator_bias.norm(), 1e-9);
  EXPECT_NEAR(s.e_real, sc.estimator_bias.norm(), 1e-6);
}

TEST(ClosedLoop, WithoutIntegralTheEstimatorIsIrrelevant) {
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(12);
  m1.head(9) << 1, 0.2, 0, 0, 1, 0, 0.1, 0, 1;
  Eigen::VectorXd m3 = Eigen::VectorXd::Zero(273);
  m3.tail(3) << 0.1, 0.2, 5.0;
  auto a = default_scenario(ContactRegime::Rigid, EstimatorMode::Model);
  a.controller.k_i.setZero();
  a.duration = 3.0;
  auto b = a;
  auto open = a;
  a.model = flat_model(models::ModelKind::M1, m1);
  b.model = flat_model(models::ModelKind::M3L, m3);
  open.mode = EstimatorMode::OpenLoop;
  const auto ta = run_closed_loop(a), tb = run_closed_loop(b), to = run_closed_loop(open);
  ASSERT_EQ(ta.rows.size(), tb.rows.size());
  for (std::size_t k = 0; k < ta.rows.size(); ++k) {
    ASSERT_EQ(ta.rows[k].q, tb.rows[k].q);
    ASSERT_EQ(ta.rows[k].tau, tb.rows[k].tau);
    ASSERT_EQ(ta.rows[k].f_true, tb.rows[k].f_true);
    ASSERT_EQ(ta.rows[k].tau, to.rows[k].tau);
  }
  EXPECT_NE(ta.rows.back().f_hat, tb.rows.back().f_hat);
  EXPECT_FALSE(to.summary.e_hat.has_value());
  EXPECT_FALSE(to.summary.e_track.has_value());
  EXPECT_TRUE(std::isnan(to.rows.back().f_hat[0]));
}

TEST(ClosedLoop, DeterministicAndWithinLimits) {
  auto sc = default_scenario(ContactRegime::Soft, EstimatorMode::Perfect, 2.0);
  sc.estimator_bias = Vector3d(0.3, 0.0, -0.4);
  sc.profile = {{0.0, Vector3d(0, 0, 0.5)}, {1.5, Vector3d(0.3, 0, 3.0)}, {3.0, Vector3d(0, 0, 1.0)}};
  sc.duration = 5.0;
  const auto a = run_closed_loop(sc);
  const auto b = run_closed_loop(sc);
  ASSERT_EQ(a.rows.size(), 500u);
  for (std::size_t k = 0; k < a.rows.size(); ++k) {
    ASSERT_EQ(a.rows[k].q, b.rows[k].q);
    ASSERT_EQ(a.rows[k].f_hat, b.rows[k].f_hat);
    ASSERT_LE(a.rows[k].tau.cwiseAbs().maxCoeff(), sc.controller.torque_limit * (1.0 + 1e-15));
    ASSERT_LE(a.rows[k].integral.cwiseAbs().maxCoeff(), sc.controller.integral_clamp);
  }
  EXPECT_EQ(a.rows[200].f_d, Vector3d(0.3, 0, 3.0));
  EXPECT_NEAR(a.summary.window, 5.0, 1e-9);  // clipped to the run
}

TEST(ClosedLoop, SummaryFormatting) {
  auto sc = default_scenario(ContactRegime::Rigid, EstimatorMode::OpenLoop);
  sc.duration = 1.0;
  std::ostringstream out;
  write_summary(out, run_closed_loop(sc).summary);
  EXPECT_NE(out.str().find("e_hat                n/a"), std::string::npos);
  EXPECT_THROW(parse_regime("jelly"), ConfigError);
  sc.mode = EstimatorMode::Model;
  EXPECT_THROW(run_closed_loop(sc), ConfigError);
}
