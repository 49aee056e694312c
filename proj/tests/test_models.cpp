#include "tforce/error.hpp"
#include "tforce/models.hpp"

#include "test_util.hpp"

#include <gmock/gmock.h>

#include <cmath>

using namespace tforce;
using namespace tforce::models;
using ::testing::HasSubstr;

namespace {

MatrixXd gaussian(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  MatrixXd m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m(k) = rng.normal();
  return m;
}

pipeline::Dataset unit_dataset(const MatrixXd& X, const MatrixXd& F) {
  pipeline::Dataset d;
  d.X = X;
  d.F = F;
  d.scales.x = VectorXd::Ones(X.cols());
  return d;
}

ForceModel linear_model(ModelKind kind, const geometry::ArrayLayout& layout, const VectorXd& theta) {
  ForceModel m;
  m.kind = kind;
  m.theta = theta;
  m.layout = layout_ref(layout);
  m.scales.x = VectorXd::Ones(3 * layout.n);
  return m;
}

}  // namespace

TEST(Featurize, QuadraticTerms) {
  Eigen::Matrix<double, 9, 1> expect;
  expect << 1, 2, 3, 1, 4, 9, 2, 6, 3;
  EXPECT_EQ(featurize_m2(Vector3d(1, 2, 3)), expect);
}

TEST(ParamCount, MatchesLayouts) {
  EXPECT_EQ(param_count(ModelKind::M1, 30), 12);
  EXPECT_EQ(param_count(ModelKind::M2, 30), 30);
  EXPECT_EQ(param_count(ModelKind::M3, 30), 273);
  EXPECT_EQ(param_count(ModelKind::M3L, 30), 273);
  EXPECT_EQ(param_count(ModelKind::M5, 30), 2479);
  EXPECT_EQ(param_count(ModelKind::M5, 16), 2479);
  // Architecture count; the published figures differ (see kM4CountNote).
  EXPECT_EQ(param_count(ModelKind::M4, 30), 1507);
  EXPECT_EQ(param_count(ModelKind::M4, 16), 48 * 16 + 67);
  EXPECT_THAT(std::string(kM4CountNote), HasSubstr("1597"));
}

TEST(ParseKind, AcceptsAliases) {
  EXPECT_EQ(parse_kind("M3L"), ModelKind::M3L);
  EXPECT_EQ(parse_kind("m3lambda"), ModelKind::M3L);
  EXPECT_EQ(parse_kind("m3λ"), ModelKind::M3L);
  EXPECT_EQ(parse_kind("m5"), ModelKind::M5);
  try {
    parse_kind("m9");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_THAT(e.what(), HasSubstr(std::string(kValidKinds)));
  }
}

TEST(Predict, M1IdentityExample) {
  const auto layout = geometry::phalanx_layout();
  for (const auto& r : layout.rotations) ASSERT_LT((r - Eigen::Matrix3d::Identity()).norm(), 1e-15);
  VectorXd theta = VectorXd::Zero(12);
  theta.head(9) << 1, 0, 0, 0, 1, 0, 0, 0, 1;
  const auto m = linear_model(ModelKind::M1, layout, theta);
  VectorXd x = VectorXd::Zero(48);
  x[2] = 1.0;
  EXPECT_LT((predict(m, x, layout) - Vector3d(0, 0, 1)).norm(), 1e-15);
}

TEST(Predict, M3BiasOnly) {
  const auto layout = geometry::fingertip_layout();
  VectorXd theta = VectorXd::Zero(273);
  theta.tail(3) << 1, 2, 3;
  const auto m = linear_model(ModelKind::M3, layout, theta);
  const MatrixXd out = predict(m, gaussian(4, 90, 1), layout);
  for (Eigen::Index r = 0; r < 4; ++r) EXPECT_EQ(out.row(r), Eigen::RowVector3d(1, 2, 3));
}

TEST(Predict, AppliesForceScales) {
  const auto layout = geometry::fingertip_layout();
  VectorXd theta = VectorXd::Zero(273);
  theta.tail(3) << 1, 2, 3;
  auto m = linear_model(ModelKind::M3, layout, theta);
  m.scales.f = Vector3d(2, 3, 4);
  EXPECT_EQ(predict(m, VectorXd(VectorXd::Zero(90)), layout), Vector3d(2, 6, 12));
}

TEST(LeastSquares, RecoversGenerativeM3) {
  const auto layout = geometry::phalanx_layout();
  const MatrixXd X = gaussian(400, 48, 2);
  const MatrixXd A = gaussian(3, 48, 3);
  const Vector3d b(0.3, -1.2, 2.0);
  const MatrixXd F = (X * A.transpose()).rowwise() + b.transpose();
  const auto m = fit_least_squares(unit_dataset(X, F), ModelKind::M3, layout, 0.0);
  VectorXd expect(147);
  for (int a = 0; a < 3; ++a) expect.segment(48 * a, 48) = A.row(a).transpose();
  expect.tail(3) = b;
  EXPECT_LT((m.theta - expect).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(test::max_abs(predict(m, X, layout) - F), 1e-8);
}

TEST(LeastSquares, SmallDampingIsContinuous) {
  const auto layout = geometry::phalanx_layout();
  const MatrixXd X = gaussian(300, 48, 4);
  const MatrixXd F = gaussian(300, 3, 5);
  const auto d = unit_dataset(X, F);
  const auto m0 = fit_least_squares(d, ModelKind::M3, layout, 0.0);
  const auto m1 = fit_least_squares(d, ModelKind::M3L, layout, 1e-10);
  EXPECT_LT((m0.theta - m1.theta).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(RidgeSolve, SatisfiesNormalEquations) {
  const MatrixXd phi = with_bias(gaussian(200, 20, 6));
  const MatrixXd F = gaussian(200, 3, 7);
  const MatrixXd I = MatrixXd::Identity(21, 21);
  for (double lambda : {0.0, 1.0, 33.0, 1000.0}) {
    const MatrixXd theta = ridge_solve(phi, F, lambda);
    const MatrixXd resid = (phi.transpose() * phi + lambda * I) * theta - phi.transpose() * F;
    EXPECT_LT(test::max_abs(resid), 1e-9 * (phi.squaredNorm() + lambda) * (1.0 + test::max_abs(theta)))
        << "lambda " << lambda;
  }
}

TEST(RidgeSolve, DampingShrinks) {
  const MatrixXd phi = with_bias(gaussian(100, 10, 8));
  const MatrixXd F = gaussian(100, 3, 9);
  double prev = ridge_solve(phi, F, 0.0).norm();
  for (double lambda : {0.1, 1.0, 10.0, 100.0, 1e4}) {
    const double now = ridge_solve(phi, F, lambda).norm();
    EXPECT_LT(now, prev);
    prev = now;
  }
}

TEST(RidgeSolve, ResidualIsOrthogonal) {
  const MatrixXd phi = with_bias(gaussian(500, 30, 10));
  const MatrixXd F = gaussian(500, 3, 11);
  const MatrixXd theta = ridge_solve(phi, F, 0.0);
  const MatrixXd inner = phi.transpose() * (F - phi * theta);
  EXPECT_LT(test::max_abs(inner), 1e-8 * phi.norm() * F.norm());
}

TEST(RidgeSolve, RankDeficientNeedsDamping) {
  MatrixXd feats = gaussian(50, 4, 12);
  feats.col(3) = feats.col(0);
  const MatrixXd phi = with_bias(feats);
  const MatrixXd F = gaussian(50, 3, 13);
  try {
    ridge_solve(phi, F, 0.0);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_THAT(e.what(), HasSubstr("lambda > 0"));
  }
  EXPECT_TRUE(ridge_solve(phi, F, 1.0).allFinite());
}

TEST(LeastSquares, NeedsEnoughSamples) {
  const auto layout = geometry::phalanx_layout();
  EXPECT_THROW(fit_least_squares(unit_dataset(gaussian(49, 48, 1), gaussian(49, 3, 2)), ModelKind::M3, layout, 1.0),
               DataError);
  EXPECT_NO_THROW(
      fit_least_squares(unit_dataset(gaussian(50, 48, 1), gaussian(50, 3, 2)), ModelKind::M3, layout, 1.0));
  EXPECT_THROW(fit_least_squares(unit_dataset(gaussian(4, 48, 1), gaussian(4, 3, 2)), ModelKind::M1, layout, 0.0),
               DataError);
}

TEST(LeastSquares, M1IsRotationEquivariant) {
  const auto layout = geometry::fingertip_layout();
  const MatrixXd X = gaussian(200, 90, 14);
  const MatrixXd F = gaussian(200, 3, 15);
  const Eigen::Matrix3d R = geometry::axis_angle(Vector3d(1, 2, -0.5).normalized(), 0.9);
  // Local activities chosen so that the common-frame sum rotates by R.
  MatrixXd Xr(X.rows(), X.cols());
  for (Eigen::Index s = 0; s < X.rows(); ++s) {
    for (int i = 0; i < 30; ++i) {
      const auto& Ri = layout.rotations[static_cast<std::size_t>(i)];
      Xr.row(s).segment(3 * i, 3) = (Ri.transpose() * R * Ri * X.row(s).segment(3 * i, 3).transpose()).transpose();
    }
  }
  const MatrixXd Fr = F * R.transpose();
  const auto m = fit_least_squares(unit_dataset(X, F), ModelKind::M1, layout, 0.0);
  const auto mr = fit_least_squares(unit_dataset(Xr, Fr), ModelKind::M1, layout, 0.0);
  const MatrixXd probe = gaussian(20, 90, 16);
  MatrixXd probe_r(20, 90);
  for (Eigen::Index s = 0; s < 20; ++s) {
    for (int i = 0; i < 30; ++i) {
      const auto& Ri = layout.rotations[static_cast<std::size_t>(i)];
      probe_r.row(s).segment(3 * i, 3) =
          (Ri.transpose() * R * Ri * probe.row(s).segment(3 * i, 3).transpose()).transpose();
    }
  }
  EXPECT_LT(test::max_abs(predict(mr, probe_r, layout) - predict(m, probe, layout) * R.transpose()), 1e-8);
}

TEST(Serialization, RoundTripsEveryKind) {
  test::ScratchDir dir;
  const auto layout = geometry::phalanx_layout();
  const MatrixXd X = gaussian(300, 48, 17);
  const MatrixXd F = gaussian(300, 3, 18);
  auto d = unit_dataset(X, F);
  d.scales.x = VectorXd::LinSpaced(48, 0.5, 2.0);
  d.scales.f = Vector3d(1.5, 2.5, 0.7);
  d.offsets.x = VectorXd::LinSpaced(48, -1.0, 1.0);
  d.offsets.f = Vector3d(0.1, 0.2, 0.3);
  TrainSpec spec;
  spec.batch_size = 100;
  spec.epochs = 2;
  for (ModelKind kind : {ModelKind::M1, ModelKind::M2, ModelKind::M3, ModelKind::M3L, ModelKind::M4, ModelKind::M5}) {
    const auto m = fit(d, kind, layout, 33.0, spec);
    const std::string path = dir / (to_string(kind) + ".json");
    save_model(m, path);
    const auto back = load_model(path);
    EXPECT_EQ(back.kind, kind);
    EXPECT_LT((back.theta - m.theta).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(back.scales.x, m.scales.x);
    EXPECT_EQ(back.offsets.x, m.offsets.x);
    EXPECT_EQ(back.lambda, m.lambda);
    EXPECT_LT(test::max_abs(predict(back, X, layout) - predict(m, X, layout)), 1e-12);
    if (kind == ModelKind::M5) {
      EXPECT_LT((back.bn.mean - m.bn.mean).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LT((back.bn.var - m.bn.var).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Serialization, RejectsBrokenFiles) {
  const auto layout = geometry::fingertip_layout();
  auto j = model_to_json(linear_model(ModelKind::M3, layout, VectorXd::Zero(273)));
  j["theta"].erase(0);
  EXPECT_THROW(model_from_json(j), Error);
  EXPECT_THROW(load_model("/nonexistent/model.json"), ConfigError);
}

TEST(Predict, LayoutMismatchIsShapeError) {
  const auto m = linear_model(ModelKind::M3, geometry::fingertip_layout(), VectorXd::Zero(273));
  EXPECT_THROW(predict(m, MatrixXd(MatrixXd::Zero(1, 48)), geometry::phalanx_layout()), ShapeError);
}

TEST(Estimate, SubtractsOffsetsThenScales) {
  const auto layout = geometry::phalanx_layout();
  auto m = linear_model(ModelKind::M3, layout, gaussian(147, 1, 19).col(0));
  m.scales.x = VectorXd::LinSpaced(48, 1.0, 3.0);
  m.offsets.x = VectorXd::LinSpaced(48, -0.5, 0.5);
  const VectorXd x = gaussian(48, 1, 20).col(0);
  const VectorXd raw = x.cwiseProduct(m.scales.x) + m.offsets.x;
  EXPECT_LT((estimate(m, raw, layout) - predict(m, x, layout)).norm(), 1e-12);
}

TEST(Adam, DeterministicAndDescending) {
  const auto layout = geometry::phalanx_layout();
  const MatrixXd X = gaussian(512, 48, 21);
  const MatrixXd A = gaussian(3, 48, 22) * 0.2;
  const auto d = unit_dataset(X, X * A.transpose());
  TrainSpec spec;
  spec.batch_size = 64;
  spec.epochs = 10;
  spec.learning_rate = 1e-2;
  spec.seed = 5;
  const auto a = train_adam(d, ModelKind::M4, layout, spec);
  const auto b = train_adam(d, ModelKind::M4, layout, spec);
  EXPECT_EQ(a.model.theta, b.model.theta);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  ASSERT_EQ(a.epoch_loss.size(), 10u);
  EXPECT_LT(a.epoch_loss.back(), 0.5 * a.initial_loss);
  spec.seed = 6;
  EXPECT_NE(train_adam(d, ModelKind::M4, layout, spec).model.theta, a.model.theta);
}

TEST(Adam, DivergenceNamesTheEpoch) {
  const auto layout = geometry::phalanx_layout();
  const auto d = unit_dataset(gaussian(128, 48, 23) * 1e160, gaussian(128, 3, 24) * 1e160);
  TrainSpec spec;
  spec.batch_size = 32;
  spec.epochs = 3;
  try {
    train_adam(d, ModelKind::M4, layout, spec);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_THAT(e.what(), HasSubstr("epoch"));
  }
}

TEST(Adam, NeedsOneFullBatch) {
  const auto layout = geometry::phalanx_layout();
  TrainSpec spec;
  spec.batch_size = 256;
  EXPECT_THROW(train_adam(unit_dataset(gaussian(100, 48, 1), gaussian(100, 3, 2)), ModelKind::M4, layout, spec),
               DataError);
  EXPECT_THROW(train_adam(unit_dataset(gaussian(300, 48, 1), gaussian(300, 3, 2)), ModelKind::M3, layout, spec),
               ConfigError);
}
