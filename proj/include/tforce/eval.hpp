#pragma once

#include "tforce/models.hpp"
#include "tforce/pipeline.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace tforce::eval {

using Eigen::MatrixXd;
using Eigen::Vector3d;

/// Samples whose reference force norm is below this are excluded (N).
inline constexpr double kExclusionThreshold = 0.5;
/// Axes whose reference component is below this are skipped in e_r (N).
inline constexpr double kAxisFloor = 1e-3;
/// Angular error is undefined when either norm is below this (N).
inline constexpr double kAngleFloor = 1e-6;

/// Mean over axes of |(truth_a - est_a) / truth_a| in percent; nullopt when
/// |truth| < 0.5 N.
std::optional<double> relative_error(const Vector3d& truth, const Vector3d& est);

struct ForceErrors {
  double magnitude = 0.0;             // N
  std::optional<double> angle_deg;    // nullopt when undefined
};
ForceErrors error_metrics(const Vector3d& truth, const Vector3d& est);

struct ErrorReport {
  double e_r_mean = 0.0;     // %
  double e_r_std = 0.0;      // %
  double mag_err_mean = 0.0; // N
  double ang_err_mean = 0.0; // deg
  long n_used = 0;
  long n_excluded = 0;
};

/// Aggregates over rows (N x 3 each, physical units). Samples below the
/// exclusion threshold do not enter any mean.
ErrorReport evaluate(const MatrixXd& truth, const MatrixXd& est);

struct BenchmarkOptions {
  std::vector<models::ModelKind> kinds;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7};
  double train_fraction = 0.7;
  double damping = models::kDefaultDamping;
  models::TrainSpec train;
  bool include_perfect = false;
};

struct BenchmarkRow {
  std::string name;
  int params = 0;
  std::vector<ErrorReport> per_seed;
  double e_r_mean = 0.0;  // mean of the per-seed e_r means
  double e_r_std = 0.0;   // sample std of the per-seed e_r means
  double mag_err_mean = 0.0;
  double ang_err_mean = 0.0;
};

/// `data` in physical units (scales of one). For every seed: split, derive
/// the scales from the training rows only, fit, and score the test rows.
std::vector<BenchmarkRow> benchmark(const pipeline::Dataset& data, const geometry::ArrayLayout& layout,
                                    const BenchmarkOptions& options);

void write_benchmark_csv(std::ostream& out, const std::vector<BenchmarkRow>& rows);
void write_benchmark_table(std::ostream& out, const std::vector<BenchmarkRow>& rows);

struct StreamResult {
  ErrorReport report;
  std::vector<double> t;
  MatrixXd truth;      // N x 3, N
  MatrixXd estimate;   // N x 3, N
};

/// Predicts every sample in arrival order from a processed recording.
StreamResult stream_eval(const models::ForceModel& model, const pipeline::Recording& processed,
                         const geometry::ArrayLayout& layout);

void write_stream_trace(std::ostream& out, const StreamResult& result);
void write_report(std::ostream& out, const ErrorReport& report);

}  // namespace tforce::eval
