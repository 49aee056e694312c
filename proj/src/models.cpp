#include "tforce/models.hpp"

#include "tforce/error.hpp"
#include "tforce/random.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

namespace tforce::models {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

int feature_count(ModelKind kind, int n) {
  switch (kind) {
    case ModelKind::M1: return 3;
    case ModelKind::M2: return 9;
    case ModelKind::M3:
    case ModelKind::M3L: return 3 * n;
    default: break;
  }
  throw ConfigError("feature_count: not a linear model kind");
}

void check_layout(const ForceModel& model, const ArrayLayout& layout) {
  if (layout.n != model.layout.n || layout.h != model.layout.h || layout.w != model.layout.w) {
    throw ShapeError("model expects an array with n=" + std::to_string(model.layout.n) + " (" +
                     std::to_string(model.layout.h) + "x" + std::to_string(model.layout.w) + "), got n=" +
                     std::to_string(layout.n) + " (" + std::to_string(layout.h) + "x" + std::to_string(layout.w) +
                     ")");
  }
}

// theta = [A row-major, b]; Theta from ridge_solve has column a = [A.row(a), b_a].
VectorXd pack_linear(const MatrixXd& solution) {
  const Eigen::Index p = solution.rows() - 1;
  VectorXd theta(3 * p + 3);
  for (int a = 0; a < 3; ++a) theta.segment(a * p, p) = solution.col(a).head(p);
  theta.tail(3) = solution.row(p).transpose();
  return theta;
}

MatrixXd gather(const MatrixXd& m, const std::vector<Eigen::Index>& idx, std::size_t begin, std::size_t end) {
  MatrixXd out(static_cast<Eigen::Index>(end - begin), m.cols());
  for (std::size_t k = begin; k < end; ++k) out.row(static_cast<Eigen::Index>(k - begin)) = m.row(idx[k]);
  return out;
}

std::vector<double> to_vector(const Eigen::Ref<const VectorXd>& v) { return {v.data(), v.data() + v.size()}; }

VectorXd from_json_vector(const nlohmann::json& j, const char* what) {
  if (!j.is_array()) throw ConfigError(std::string("model file: '") + what + "' must be an array");
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v[static_cast<Eigen::Index>(k)] = j[k].get<double>();
  return v;
}

}  // namespace

ModelKind parse_kind(std::string_view text) {
  std::string s;
  for (char c : text) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s == "m1") return ModelKind::M1;
  if (s == "m2") return ModelKind::M2;
  if (s == "m3") return ModelKind::M3;
  if (s == "m3l" || s == "m3lambda" || s == "m3\xce\xbb") return ModelKind::M3L;
  if (s == "m4") return ModelKind::M4;
  if (s == "m5") return ModelKind::M5;
  throw ConfigError("unknown model kind '" + std::string(text) + "'; valid kinds: " + std::string(kValidKinds));
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::M1: return "m1";
    case ModelKind::M2: return "m2";
    case ModelKind::M3: return "m3";
    case ModelKind::M3L: return "m3l";
    case ModelKind::M4: return "m4";
    case ModelKind::M5: return "m5";
  }
  return "?";
}

bool is_linear(ModelKind kind) { return kind != ModelKind::M4 && kind != ModelKind::M5; }

int param_count(ModelKind kind, int n) {
  switch (kind) {
    case ModelKind::M4: return nn::total_size(nn::mlp_manifest(3 * n));
    case ModelKind::M5: return nn::total_size(nn::cnn_manifest());
    default: return 3 * feature_count(kind, n) + 3;
  }
}

LayoutRef layout_ref(const ArrayLayout& layout) { return {layout.array_id, layout.n, layout.h, layout.w}; }

void ForceModel::validate() const {
  if (layout.n <= 0 || layout.h * layout.w != layout.n) throw ShapeError("model: invalid layout reference");
  if (theta.size() != param_count(kind, layout.n)) {
    throw ShapeError("model: " + to_string(kind) + " expects " + std::to_string(param_count(kind, layout.n)) +
                     " parameters, got " + std::to_string(theta.size()));
  }
  if (!theta.allFinite()) throw NumericalError("model: non-finite parameters");
  if (scales.x.size() != 3 * layout.n) throw ShapeError("model: scale vector length mismatch");
  if ((scales.x.array() <= 0.0).any() || (scales.f.array() <= 0.0).any()) throw DataError("model: scales must be positive");
  if (offsets.x.size() != 0 && offsets.x.size() != 3 * layout.n) throw ShapeError("model: offset vector length mismatch");
  if (lambda < 0.0) throw ConfigError("model: damping must be non-negative");
}

Eigen::Matrix<double, 9, 1> featurize_m2(const Vector3d& z) {
  Eigen::Matrix<double, 9, 1> out;
  out << z[0], z[1], z[2], z[0] * z[0], z[1] * z[1], z[2] * z[2], z[0] * z[1], z[1] * z[2], z[0] * z[2];
  return out;
}

MatrixXd regressors(ModelKind kind, const MatrixXd& X, const pipeline::Scales& scales, const ArrayLayout& layout) {
  if (X.cols() != 3 * layout.n) throw ShapeError("regressors: X has " + std::to_string(X.cols()) + " columns, expected " + std::to_string(3 * layout.n));
  if (kind == ModelKind::M3 || kind == ModelKind::M3L) return X;
  if (!is_linear(kind)) throw ConfigError("regressors: " + to_string(kind) + " is not a linear model");
  if (scales.x.size() != X.cols()) throw ShapeError("regressors: scale vector length mismatch");

  MatrixXd Z(X.rows(), 3);
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const VectorXd phys = X.row(r).transpose().cwiseProduct(scales.x);
    Z.row(r) = geometry::project_to_common(phys, layout).transpose();
  }
  if (kind == ModelKind::M1) return Z;
  MatrixXd out(X.rows(), 9);
  for (Eigen::Index r = 0; r < X.rows(); ++r) out.row(r) = featurize_m2(Z.row(r).transpose()).transpose();
  return out;
}

MatrixXd with_bias(const MatrixXd& features) {
  MatrixXd out(features.rows(), features.cols() + 1);
  out << features, MatrixXd::Ones(features.rows(), 1);
  return out;
}

MatrixXd ridge_solve(const MatrixXd& phi, const MatrixXd& F, double lambda) {
  if (phi.rows() != F.rows()) throw ShapeError("ridge_solve: row count mismatch");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("ridge_solve: damping must be finite and >= 0");
  const Eigen::Index p = phi.cols();
  MatrixXd stacked(phi.rows() + (lambda > 0.0 ? p : 0), p);
  MatrixXd rhs = MatrixXd::Zero(stacked.rows(), F.cols());
  stacked.topRows(phi.rows()) = phi;
  rhs.topRows(F.rows()) = F;
  if (lambda > 0.0) stacked.bottomRows(p) = std::sqrt(lambda) * MatrixXd::Identity(p, p);

  Eigen::ColPivHouseholderQR<MatrixXd> qr(stacked);
  if (lambda == 0.0 && qr.rank() < p) {
    throw NumericalError("least squares: regressor matrix is rank deficient (rank " + std::to_string(qr.rank()) +
                         " < " + std::to_string(p) + "); use a damping lambda > 0");
  }
  return qr.solve(rhs);
}

ForceModel fit_least_squares(const pipeline::Dataset& train, ModelKind kind, const ArrayLayout& layout,
                             double lambda) {
  if (!is_linear(kind)) throw ConfigError("fit_least_squares: " + to_string(kind) + " is trained with Adam");
  train.validate();
  const int p = feature_count(kind, layout.n) + 1;
  if (train.rows() < p + 1) {
    throw DataError("fit_least_squares: " + to_string(kind) + " needs at least " + std::to_string(p + 1) +
                    " samples, got " + std::to_string(train.rows()));
  }
  const MatrixXd solution = ridge_solve(with_bias(regressors(kind, train.X, train.scales, layout)), train.F, lambda);

  ForceModel m;
  m.kind = kind;
  m.theta = pack_linear(solution);
  m.layout = layout_ref(layout);
  m.scales = train.scales;
  m.offsets = train.offsets;
  m.lambda = lambda;
  m.validate();
  return m;
}

MatrixXd predict(const ForceModel& model, const MatrixXd& X, const ArrayLayout& layout) {
  check_layout(model, layout);
  if (X.cols() != 3 * layout.n) throw ShapeError("predict: input has " + std::to_string(X.cols()) + " columns, expected " + std::to_string(3 * layout.n));
  MatrixXd out;
  switch (model.kind) {
    case ModelKind::M4:
      out = nn::mlp_forward(model.theta, 3 * layout.n, X);
      break;
    case ModelKind::M5:
      out = nn::cnn_forward(model.theta, {layout.h, layout.w}, X, model.bn);
      break;
    default: {
      const MatrixXd phi = regressors(model.kind, X, model.scales, layout);
      const auto p = static_cast<int>(phi.cols());
      const Eigen::Map<const RowMatrix> A(model.theta.data(), 3, p);
      out = (phi * A.transpose()).rowwise() + model.theta.tail(3).transpose();
    }
  }
  return out.array().rowwise() * model.scales.f.transpose().array();
}

Vector3d predict(const ForceModel& model, const VectorXd& x, const ArrayLayout& layout) {
  return predict(model, MatrixXd(x.transpose()), layout).row(0).transpose();
}

Vector3d estimate(const ForceModel& model, const VectorXd& x_raw, const ArrayLayout& layout) {
  if (x_raw.size() != model.scales.x.size()) throw ShapeError("estimate: activity vector length mismatch");
  VectorXd x = x_raw;
  if (model.offsets.x.size() == x.size()) x -= model.offsets.x;
  return predict(model, VectorXd(x.cwiseQuotient(model.scales.x)), layout);
}

void TrainSpec::validate() const {
  if (batch_size <= 0 || !(learning_rate > 0.0) || epochs <= 0) {
    throw ConfigError("train spec: batch size, learning rate and epochs must be positive");
  }
}

TrainResult train_adam(const pipeline::Dataset& train, ModelKind kind, const ArrayLayout& layout,
                       const TrainSpec& spec) {
  if (is_linear(kind)) throw ConfigError("train_adam: " + to_string(kind) + " is fitted by least squares");
  spec.validate();
  train.validate();
  if (train.X.cols() != 3 * layout.n) throw ShapeError("train_adam: dataset does not match the layout");
  if (train.rows() < spec.batch_size) {
    throw DataError("train_adam: need at least one full batch (" + std::to_string(spec.batch_size) +
                    " samples), got " + std::to_string(train.rows()));
  }

  const int inputs = 3 * layout.n;
  const nn::GridShape grid{layout.h, layout.w};
  Rng init_rng(spec.seed);
  Rng shuffle_rng(spec.seed ^ 0x5851f42d4c957f2dULL);

  TrainResult result;
  ForceModel& m = result.model;
  m.kind = kind;
  m.layout = layout_ref(layout);
  m.scales = train.scales;
  m.offsets = train.offsets;
  m.theta = kind == ModelKind::M4 ? nn::init_mlp(inputs, init_rng) : nn::init_cnn(init_rng);

  auto loss_of = [&](const MatrixXd& xb, const MatrixXd& yb, VectorXd* grad, nn::BatchNormStats* stats) {
    return kind == ModelKind::M4 ? nn::mlp_loss(m.theta, inputs, xb, yb, grad)
                                 : nn::cnn_loss(m.theta, grid, xb, yb, grad, stats);
  };

  const auto n = static_cast<std::size_t>(train.rows());
  const auto batch = static_cast<std::size_t>(spec.batch_size);
  std::vector<Eigen::Index> idx(n);
  for (std::size_t k = 0; k < n; ++k) idx[k] = static_cast<Eigen::Index>(k);

  double acc = 0.0;
  for (std::size_t b = 0; b < n; b += batch) {
    const std::size_t e = std::min(n, b + batch);
    acc += loss_of(gather(train.X, idx, b, e), gather(train.F, idx, b, e), nullptr, nullptr) *
           static_cast<double>(e - b);
  }
  result.initial_loss = acc / static_cast<double>(n);

  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  VectorXd mom = VectorXd::Zero(m.theta.size());
  VectorXd vel = VectorXd::Zero(m.theta.size());
  VectorXd grad;
  nn::BatchNormStats stats;
  long step = 0;

  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    for (std::size_t k = n; k > 1; --k) std::swap(idx[k - 1], idx[shuffle_rng.below(k)]);
    double total = 0.0;
    for (std::size_t b = 0; b < n; b += batch) {
      const std::size_t e = std::min(n, b + batch);
      const double loss = loss_of(gather(train.X, idx, b, e), gather(train.F, idx, b, e), &grad, &stats);
      if (!std::isfinite(loss) || !grad.allFinite()) {
        throw NumericalError("training diverged at epoch " + std::to_string(epoch));
      }
      total += loss * static_cast<double>(e - b);
      ++step;
      mom = beta1 * mom + (1.0 - beta1) * grad;
      vel = beta2 * vel + (1.0 - beta2) * grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      m.theta.array() -= spec.learning_rate * (mom.array() / c1) / ((vel.array() / c2).sqrt() + eps);
      if (kind == ModelKind::M5) nn::update_running(m.bn, stats);
    }
    const double mean = total / static_cast<double>(n);
    if (!std::isfinite(mean)) throw NumericalError("training diverged at epoch " + std::to_string(epoch));
    result.epoch_loss.push_back(mean);
  }
  m.validate();
  return result;
}

ForceModel fit(const pipeline::Dataset& train, ModelKind kind, const ArrayLayout& layout, double damping,
               const TrainSpec& spec) {
  switch (kind) {
    case ModelKind::M1:
    case ModelKind::M2:
    case ModelKind::M3: return fit_least_squares(train, kind, layout, 0.0);
    case ModelKind::M3L: return fit_least_squares(train, kind, layout, damping);
    default: return train_adam(train, kind, layout, spec).model;
  }
}

nlohmann::ordered_json model_to_json(const ForceModel& model) {
  model.validate();
  nlohmann::ordered_json j;
  j["kind"] = to_string(model.kind);
  j["layout_ref"] = {{"array_id", model.layout.array_id},
                     {"n", model.layout.n},
                     {"h", model.layout.h},
                     {"w", model.layout.w}};
  j["lambda"] = model.lambda;
  j["param_count"] = param_count(model.kind, model.layout.n);
  j["scales"] = {{"x", to_vector(model.scales.x)}, {"f", to_vector(model.scales.f)}};
  if (model.offsets.x.size() > 0) {
    j["offsets"] = {{"x", to_vector(model.offsets.x)}, {"f", to_vector(model.offsets.f)}};
  }
  if (!is_linear(model.kind)) {
    const auto layers = model.kind == ModelKind::M4 ? nn::mlp_manifest(3 * model.layout.n) : nn::cnn_manifest();
    auto manifest = nlohmann::ordered_json::array();
    for (const auto& l : layers) manifest.push_back({{"name", l.name}, {"shape", l.shape}});
    j["layers"] = manifest;
  }
  if (model.kind == ModelKind::M5) {
    j["bn_running"] = {{"mean", to_vector(model.bn.mean)}, {"var", to_vector(model.bn.var)}};
  }
  j["theta"] = to_vector(model.theta);
  return j;
}

ForceModel model_from_json(const nlohmann::json& j) {
  try {
    ForceModel m;
    m.kind = parse_kind(j.at("kind").get<std::string>());
    const auto& lr = j.at("layout_ref");
    m.layout = {lr.at("array_id").get<std::string>(), lr.at("n").get<int>(), lr.at("h").get<int>(),
                lr.at("w").get<int>()};
    m.lambda = j.value("lambda", 0.0);
    m.scales.x = from_json_vector(j.at("scales").at("x"), "scales.x");
    const VectorXd sf = from_json_vector(j.at("scales").at("f"), "scales.f");
    if (sf.size() != 3) throw ShapeError("model file: scales.f must have 3 entries");
    m.scales.f = sf;
    if (j.contains("offsets")) {
      m.offsets.x = from_json_vector(j["offsets"].at("x"), "offsets.x");
      const VectorXd of = from_json_vector(j["offsets"].at("f"), "offsets.f");
      if (of.size() != 3) throw ShapeError("model file: offsets.f must have 3 entries");
      m.offsets.f = of;
    }
    if (m.kind == ModelKind::M5) {
      m.bn.mean = from_json_vector(j.at("bn_running").at("mean"), "bn_running.mean");
      m.bn.var = from_json_vector(j.at("bn_running").at("var"), "bn_running.var");
      if (m.bn.mean.size() != nn::kBatchNormChannels || m.bn.var.size() != nn::kBatchNormChannels) {
        throw ShapeError("model file: batch norm statistics must have 12 entries");
      }
    }
    m.theta = from_json_vector(j.at("theta"), "theta");
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model file: ") + e.what());
  }
}

void save_model(const ForceModel& model, const std::filesystem::path& path, const nlohmann::ordered_json& meta) {
  nlohmann::ordered_json j;
  if (!meta.is_null()) j["meta"] = meta;
  const nlohmann::ordered_json body = model_to_json(model);
  for (const auto& [k, v] : body.items()) j[k] = v;
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

ForceModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("model file " + path.string() + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace tforce::models
