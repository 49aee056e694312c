#pragma once

#include "tforce/random.hpp"

#include <Eigen/Core>

#include <string>
#include <vector>

// Dense and convolutional force regressors on flat parameter vectors.
// Inputs are batches with one sample per row; outputs have 3 columns.
namespace tforce::nn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct LayerShape {
  std::string name;
  std::vector<int> shape;
  int size() const;
};

int total_size(const std::vector<LayerShape>& layers);

// ---------------------------------------------------------------------------
// MLP: inputs -> 16 (ReLU) -> 3 (linear). Parameter order: W1 (16 x in,
// row-major), b1, W2 (3 x 16), b2.

inline constexpr int kMlpHidden = 16;

std::vector<LayerShape> mlp_manifest(int inputs);
VectorXd init_mlp(int inputs, Rng& rng);
MatrixXd mlp_forward(const VectorXd& theta, int inputs, const MatrixXd& X);
/// Mean squared error over all outputs; fills grad (same layout as theta)
/// when non-null.
double mlp_loss(const VectorXd& theta, int inputs, const MatrixXd& X, const MatrixXd& Y, VectorXd* grad);

// ---------------------------------------------------------------------------
// CNN over the h x w taxel grid with the three activity axes as channels:
//   conv3x3(3->6, same) ReLU, conv3x3(6->12, same) ReLU, batch norm(12),
//   conv2x2(12->24, valid) ReLU, global average pool, dense 24->16 ReLU,
//   dense 16->3.
// Weight tensors are (out, in, ky, kx) row-major; batch norm stores gamma
// then beta.

struct GridShape {
  int h = 0;
  int w = 0;
};

inline constexpr int kBatchNormChannels = 12;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

struct BatchNormStats {
  VectorXd mean = VectorXd::Zero(kBatchNormChannels);
  VectorXd var = VectorXd::Ones(kBatchNormChannels);
};

std::vector<LayerShape> cnn_manifest();
VectorXd init_cnn(Rng& rng);

/// Inference: batch norm uses the running statistics.
MatrixXd cnn_forward(const VectorXd& theta, GridShape grid, const MatrixXd& X, const BatchNormStats& running);

/// Training-mode loss (batch statistics). When `batch_stats` is non-null it
/// receives the batch mean and unbiased variance for the running update.
double cnn_loss(const VectorXd& theta, GridShape grid, const MatrixXd& X, const MatrixXd& Y, VectorXd* grad,
                BatchNormStats* batch_stats = nullptr);

/// Exponential running-average update used after every training batch.
void update_running(BatchNormStats& running, const BatchNormStats& batch);

}  // namespace tforce::nn
