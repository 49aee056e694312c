#pragma once

#include "tforce/recording.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tforce::pipeline {

/// Per-column standard deviations used to standardize a dataset.
struct Scales {
  Eigen::VectorXd x;  // 3n
  Eigen::Vector3d f = Eigen::Vector3d::Ones();
};

/// Rows are samples. X holds taxel activities, F forces in the array
/// frame, both divided column-wise by `scales` (physical = X .* scales.x).
struct Dataset {
  std::string array_id;
  Eigen::MatrixXd X;
  Eigen::MatrixXd F;
  Scales scales;
  Offsets offsets;

  Eigen::Index rows() const { return X.rows(); }
  void validate() const;
};

/// Second-order Butterworth low-pass run forward then backward.
struct Biquad {
  double b0, b1, b2, a1, a2;
};
Biquad butterworth_lowpass(double fc, double fs);

/// Samples needed for the biquad's impulse response to decay below 1e-3.
int settle_length(const Biquad& bq);

std::vector<double> lowpass_zero_phase(std::span<const double> signal, double fc, double fs);
Eigen::MatrixXd lowpass_zero_phase(const Eigen::MatrixXd& columns, double fc, double fs);

/// Linear interpolation of every channel onto t0 + k / rate over the common
/// time range; quaternions are renormalized (nlerp).
Recording resample_align(const Recording& rec, double rate);

/// R0_F * f_F; throws ShapeError on a non-rotation.
Eigen::Vector3d project_force(const Eigen::Vector3d& f_ref, const Eigen::Matrix3d& r0_f);

/// Applies project_force sample-wise using the recording's frame channel.
/// Requires a shared grid.
Recording project_forces(const Recording& rec);

/// Means of the taxel and force channels over the static segments.
Offsets estimate_offsets(const Recording& rec);
/// Subtracts estimate_offsets() from the taxel and force channels; the
/// removed offsets accumulate in rec.offsets.
Recording remove_offsets(const Recording& rec);

struct PreprocessOptions {
  double cutoff_hz = 10.0;
  double rate_hz = 100.0;
};

/// Filtering, resampling, force projection and offset removal, in that order.
Recording preprocess(const Recording& raw, const PreprocessOptions& options = {});

/// Population standard deviation of every column; throws DataError naming a
/// column whose std is not above 1e-12.
Scales compute_scales(const Eigen::MatrixXd& X, const Eigen::MatrixXd& F);

/// Dataset of a processed recording in physical units (scales of one).
Dataset to_dataset(const Recording& processed);

/// Divides every column by its own std. The returned scales compose with
/// the input's so that destandardize() recovers physical units.
Dataset standardize(const Dataset& d);
Dataset standardize(const Recording& processed);

/// Rescales to the given scales (physical units in between).
Dataset apply_scales(const Dataset& d, const Scales& scales);
Dataset destandardize(const Dataset& d);

Dataset select_rows(const Dataset& d, std::span<const Eigen::Index> rows);

/// Seeded uniform row permutation; the first floor(fraction * N) rows train.
std::pair<Dataset, Dataset> split(const Dataset& d, double train_fraction, std::uint64_t seed);
std::vector<Eigen::Index> permutation(Eigen::Index n, std::uint64_t seed);

}  // namespace tforce::pipeline
