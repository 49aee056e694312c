#pragma once

#include "tforce/geometry.hpp"
#include "tforce/nn.hpp"
#include "tforce/pipeline.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace tforce::models {

using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;
using geometry::ArrayLayout;

enum class ModelKind { M1, M2, M3, M3L, M4, M5 };

inline constexpr std::string_view kValidKinds = "m1, m2, m3, m3l, m4, m5";

/// Case-insensitive; accepts "m3l", "m3lambda" and "m3λ" for the damped
/// fit. Throws ConfigError listing the valid kinds.
ModelKind parse_kind(std::string_view text);
std::string to_string(ModelKind kind);
bool is_linear(ModelKind kind);

/// Trainable parameter count. M5 does not depend on n.
int param_count(ModelKind kind, int n);

/// Published M4 counts disagree with the architecture: 48n + 69 in the text,
/// 1597 in the table. param_count() reports the architecture (48n + 67).
inline constexpr std::string_view kM4CountNote =
    "M4 count is architecture-derived (48n+67); published values are 48n+69 and 1597";

struct LayoutRef {
  std::string array_id;
  int n = 0;
  int h = 0;
  int w = 0;
};
LayoutRef layout_ref(const ArrayLayout& layout);

/// theta layouts:
///   M1  A (3x3, row-major), b         -> 12
///   M2  A (3x9), b                    -> 30
///   M3  A (3x3n), b                   -> 9n + 3
///   M4  see nn::mlp_manifest(3n)
///   M5  see nn::cnn_manifest()
/// M1 and M2 regress on z = sum_i R_i x_i computed from physical activities.
struct ForceModel {
  ModelKind kind = ModelKind::M3;
  VectorXd theta;
  LayoutRef layout;
  pipeline::Scales scales;
  pipeline::Offsets offsets;
  double lambda = 0.0;
  nn::BatchNormStats bn;  // M5 only

  void validate() const;
};

Eigen::Matrix<double, 9, 1> featurize_m2(const Vector3d& z);

/// Regressor rows for the linear kinds without the constant column.
/// X is standardized with `scales`.
MatrixXd regressors(ModelKind kind, const MatrixXd& X, const pipeline::Scales& scales, const ArrayLayout& layout);

/// Forces in N for standardized inputs (one sample per row).
MatrixXd predict(const ForceModel& model, const MatrixXd& X, const ArrayLayout& layout);
Vector3d predict(const ForceModel& model, const VectorXd& x, const ArrayLayout& layout);

/// Same from raw activities: subtracts the stored offsets, then scales.
Vector3d estimate(const ForceModel& model, const VectorXd& x_raw, const ArrayLayout& layout);

/// Solves (Phi^T Phi + lambda I) Theta = Phi^T F column-wise through a QR
/// factorization of the stacked [Phi; sqrt(lambda) I]. Phi must already
/// contain the constant column. lambda = 0 on rank-deficient Phi throws
/// NumericalError.
MatrixXd ridge_solve(const MatrixXd& phi, const MatrixXd& F, double lambda);

/// Appends the constant column.
MatrixXd with_bias(const MatrixXd& features);

/// kind must be M1, M2, M3 or M3L. The bias column is damped as well.
ForceModel fit_least_squares(const pipeline::Dataset& train, ModelKind kind, const ArrayLayout& layout,
                             double lambda);

inline constexpr double kDefaultDamping = 33.0;

struct TrainSpec {
  int batch_size = 256;
  double learning_rate = 2.5e-4;
  int epochs = 80;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainResult {
  ForceModel model;
  double initial_loss = 0.0;       // mean batch loss with the initial parameters
  std::vector<double> epoch_loss;  // mean training loss of every epoch
};

/// Adam on the mean squared error of standardized forces.
TrainResult train_adam(const pipeline::Dataset& train, ModelKind kind, const ArrayLayout& layout,
                       const TrainSpec& spec);

/// Least squares for the linear kinds (M3L uses `damping`), Adam otherwise.
ForceModel fit(const pipeline::Dataset& train, ModelKind kind, const ArrayLayout& layout, double damping,
               const TrainSpec& spec);

nlohmann::ordered_json model_to_json(const ForceModel& model);
ForceModel model_from_json(const nlohmann::json& j);
void save_model(const ForceModel& model, const std::filesystem::path& path, const nlohmann::ordered_json& meta = {});
ForceModel load_model(const std::filesystem::path& path);

}  // namespace tforce::models
