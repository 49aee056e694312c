#include "tforce/nn.hpp"

#include "tforce/error.hpp"

#include <cmath>

namespace tforce::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstWeights = Eigen::Map<const RowMatrix>;
using Weights = Eigen::Map<RowMatrix>;

// Cursor over a flat parameter vector.
template <typename Vec>
class Blocks {
 public:
  explicit Blocks(Vec& v) : v_(v) {}
  auto matrix(int rows, int cols) {
    auto m = map(rows, cols);
    offset_ += static_cast<Eigen::Index>(rows) * cols;
    return m;
  }
  auto vector(int size) {
    auto s = v_.segment(offset_, size);
    offset_ += size;
    return s;
  }
  Eigen::Index offset() const { return offset_; }

 private:
  auto map(int rows, int cols) {
    if constexpr (std::is_const_v<Vec>) {
      return ConstWeights(v_.data() + offset_, rows, cols);
    } else {
      return Weights(v_.data() + offset_, rows, cols);
    }
  }
  Vec& v_;
  Eigen::Index offset_ = 0;
};

MatrixXd relu(const MatrixXd& z) { return z.cwiseMax(0.0); }

MatrixXd relu_mask(const MatrixXd& z, const MatrixXd& upstream) {
  return (z.array() > 0.0).select(upstream, 0.0);
}

// Activations are (channels, batch * height * width) with the column index
// b * H * W + y * W + x.
MatrixXd im2col(const MatrixXd& in, int batch, int height, int width, int k, int pad) {
  const int channels = static_cast<int>(in.rows());
  const int ho = height + 2 * pad - k + 1;
  const int wo = width + 2 * pad - k + 1;
  MatrixXd cols = MatrixXd::Zero(static_cast<Eigen::Index>(channels) * k * k,
                                 static_cast<Eigen::Index>(batch) * ho * wo);
  for (int b = 0; b < batch; ++b) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const Eigen::Index col = (static_cast<Eigen::Index>(b) * ho + oy) * wo + ox;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy + ky - pad;
          if (iy < 0 || iy >= height) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox + kx - pad;
            if (ix < 0 || ix >= width) continue;
            const Eigen::Index src = (static_cast<Eigen::Index>(b) * height + iy) * width + ix;
            for (int c = 0; c < channels; ++c) cols((c * k + ky) * k + kx, col) = in(c, src);
          }
        }
      }
    }
  }
  return cols;
}

MatrixXd col2im(const MatrixXd& cols, int channels, int batch, int height, int width, int k, int pad) {
  const int ho = height + 2 * pad - k + 1;
  const int wo = width + 2 * pad - k + 1;
  MatrixXd out = MatrixXd::Zero(channels, static_cast<Eigen::Index>(batch) * height * width);
  for (int b = 0; b < batch; ++b) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const Eigen::Index col = (static_cast<Eigen::Index>(b) * ho + oy) * wo + ox;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy + ky - pad;
          if (iy < 0 || iy >= height) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox + kx - pad;
            if (ix < 0 || ix >= width) continue;
            const Eigen::Index dst = (static_cast<Eigen::Index>(b) * height + iy) * width + ix;
            for (int c = 0; c < channels; ++c) out(c, dst) += cols((c * k + ky) * k + kx, col);
          }
        }
      }
    }
  }
  return out;
}

MatrixXd to_channels(const MatrixXd& X, GridShape grid) {
  const int n = grid.h * grid.w;
  if (X.cols() != 3 * n) throw ShapeError("cnn: input width does not match the grid");
  MatrixXd a(3, X.rows() * n);
  for (Eigen::Index b = 0; b < X.rows(); ++b) {
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) a(c, b * n + i) = X(b, 3 * i + c);
    }
  }
  return a;
}

MatrixXd average_pool(const MatrixXd& a, int batch, int positions) {
  MatrixXd g(a.rows(), batch);
  for (int b = 0; b < batch; ++b) {
    g.col(b) = a.middleCols(static_cast<Eigen::Index>(b) * positions, positions).rowwise().mean();
  }
  return g;
}

void check_theta(const VectorXd& theta, Eigen::Index expected, const char* what) {
  if (theta.size() != expected) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(expected) + " parameters, got " +
                     std::to_string(theta.size()));
  }
}

struct CnnForward {
  MatrixXd c1, z1, a1, c2, z2, a2, xhat, a3, c3, z3, a4, g, z5, a5, y;
  VectorXd mean, var, inv_std;
};

CnnForward cnn_run(const VectorXd& theta, GridShape grid, const MatrixXd& X, const BatchNormStats* running) {
  check_theta(theta, total_size(cnn_manifest()), "cnn");
  if (grid.h < 2 || grid.w < 2) throw ShapeError("cnn: grid must be at least 2 x 2");
  const int batch = static_cast<int>(X.rows());
  const int h = grid.h, w = grid.w;
  const int p3 = (h - 1) * (w - 1);

  Blocks<const VectorXd> blk(theta);
  auto w1 = blk.matrix(6, 27);
  auto b1 = blk.vector(6);
  auto w2 = blk.matrix(12, 54);
  auto b2 = blk.vector(12);
  auto gamma = blk.vector(12);
  auto beta = blk.vector(12);
  auto w3 = blk.matrix(24, 48);
  auto b3 = blk.vector(24);
  auto wf1 = blk.matrix(16, 24);
  auto bf1 = blk.vector(16);
  auto wf2 = blk.matrix(3, 16);
  auto bf2 = blk.vector(3);

  CnnForward f;
  const MatrixXd a0 = to_channels(X, grid);
  f.c1 = im2col(a0, batch, h, w, 3, 1);
  f.z1 = (w1 * f.c1).colwise() + b1;
  f.a1 = relu(f.z1);
  f.c2 = im2col(f.a1, batch, h, w, 3, 1);
  f.z2 = (w2 * f.c2).colwise() + b2;
  f.a2 = relu(f.z2);

  if (running) {
    f.mean = running->mean;
    f.var = running->var;
  } else {
    const double count = static_cast<double>(f.a2.cols());
    f.mean = f.a2.rowwise().mean();
    f.var = (f.a2.colwise() - f.mean).array().square().rowwise().sum() / count;
  }
  f.inv_std = (f.var.array() + kBatchNormEps).rsqrt();
  f.xhat = (f.a2.colwise() - f.mean).array().colwise() * f.inv_std.array();
  f.a3 = (f.xhat.array().colwise() * gamma.array()).colwise() + beta.array();

  f.c3 = im2col(f.a3, batch, h, w, 2, 0);
  f.z3 = (w3 * f.c3).colwise() + b3;
  f.a4 = relu(f.z3);
  f.g = average_pool(f.a4, batch, p3);
  f.z5 = (wf1 * f.g).colwise() + bf1;
  f.a5 = relu(f.z5);
  f.y = (wf2 * f.a5).colwise() + bf2;
  return f;
}

}  // namespace

int LayerShape::size() const {
  int s = 1;
  for (int d : shape) s *= d;
  return s;
}

int total_size(const std::vector<LayerShape>& layers) {
  int s = 0;
  for (const auto& l : layers) s += l.size();
  return s;
}

std::vector<LayerShape> mlp_manifest(int inputs) {
  return {{"fc1.weight", {kMlpHidden, inputs}},
          {"fc1.bias", {kMlpHidden}},
          {"fc2.weight", {3, kMlpHidden}},
          {"fc2.bias", {3}}};
}

VectorXd init_mlp(int inputs, Rng& rng) {
  VectorXd theta(total_size(mlp_manifest(inputs)));
  const double bound1 = std::sqrt(1.0 / inputs);
  const double bound2 = std::sqrt(1.0 / kMlpHidden);
  for (int k = 0; k < kMlpHidden * inputs + kMlpHidden; ++k) theta[k] = rng.uniform(-bound1, bound1);
  for (Eigen::Index k = kMlpHidden * inputs + kMlpHidden; k < theta.size(); ++k) theta[k] = rng.uniform(-bound2, bound2);
  return theta;
}

MatrixXd mlp_forward(const VectorXd& theta, int inputs, const MatrixXd& X) {
  check_theta(theta, total_size(mlp_manifest(inputs)), "mlp");
  if (X.cols() != inputs) throw ShapeError("mlp: input width mismatch");
  Blocks<const VectorXd> blk(theta);
  auto w1 = blk.matrix(kMlpHidden, inputs);
  auto b1 = blk.vector(kMlpHidden);
  auto w2 = blk.matrix(3, kMlpHidden);
  auto b2 = blk.vector(3);
  const MatrixXd a1 = relu((w1 * X.transpose()).colwise() + b1);
  return ((w2 * a1).colwise() + b2).transpose();
}

double mlp_loss(const VectorXd& theta, int inputs, const MatrixXd& X, const MatrixXd& Y, VectorXd* grad) {
  check_theta(theta, total_size(mlp_manifest(inputs)), "mlp");
  if (X.cols() != inputs || Y.cols() != 3 || Y.rows() != X.rows()) throw ShapeError("mlp: batch shape mismatch");
  Blocks<const VectorXd> blk(theta);
  auto w1 = blk.matrix(kMlpHidden, inputs);
  auto b1 = blk.vector(kMlpHidden);
  auto w2 = blk.matrix(3, kMlpHidden);
  auto b2 = blk.vector(3);

  const MatrixXd xt = X.transpose();
  const MatrixXd z1 = (w1 * xt).colwise() + b1;
  const MatrixXd a1 = relu(z1);
  const MatrixXd diff = ((w2 * a1).colwise() + b2) - Y.transpose();
  const double denom = static_cast<double>(diff.size());
  const double loss = diff.squaredNorm() / denom;
  if (!grad) return loss;

  grad->resize(theta.size());
  Blocks<VectorXd> g(*grad);
  auto gw1 = g.matrix(kMlpHidden, inputs);
  auto gb1 = g.vector(kMlpHidden);
  auto gw2 = g.matrix(3, kMlpHidden);
  auto gb2 = g.vector(3);
  const MatrixXd dy = (2.0 / denom) * diff;
  gw2 = dy * a1.transpose();
  gb2 = dy.rowwise().sum();
  const MatrixXd dz1 = relu_mask(z1, w2.transpose() * dy);
  gw1 = dz1 * xt.transpose();
  gb1 = dz1.rowwise().sum();
  return loss;
}

std::vector<LayerShape> cnn_manifest() {
  return {{"conv1.weight", {6, 3, 3, 3}}, {"conv1.bias", {6}},       {"conv2.weight", {12, 6, 3, 3}},
          {"conv2.bias", {12}},           {"bn.weight", {12}},       {"bn.bias", {12}},
          {"conv3.weight", {24, 12, 2, 2}}, {"conv3.bias", {24}},    {"fc1.weight", {16, 24}},
          {"fc1.bias", {16}},             {"fc2.weight", {3, 16}},   {"fc2.bias", {3}}};
}

VectorXd init_cnn(Rng& rng) {
  const auto layers = cnn_manifest();
  VectorXd theta(total_size(layers));
  // fan-in of the weight tensor each block belongs to; 0 marks batch norm.
  const int fan_in[] = {27, 27, 54, 54, 0, 0, 48, 48, 24, 24, 16, 16};
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const int size = layers[l].size();
    for (int k = 0; k < size; ++k) {
      if (fan_in[l] == 0) {
        theta[off + k] = layers[l].name == "bn.weight" ? 1.0 : 0.0;
      } else {
        const double bound = std::sqrt(1.0 / fan_in[l]);
        theta[off + k] = rng.uniform(-bound, bound);
      }
    }
    off += size;
  }
  return theta;
}

MatrixXd cnn_forward(const VectorXd& theta, GridShape grid, const MatrixXd& X, const BatchNormStats& running) {
  return cnn_run(theta, grid, X, &running).y.transpose();
}

double cnn_loss(const VectorXd& theta, GridShape grid, const MatrixXd& X, const MatrixXd& Y, VectorXd* grad,
                BatchNormStats* batch_stats) {
  if (Y.cols() != 3 || Y.rows() != X.rows()) throw ShapeError("cnn: batch shape mismatch");
  const CnnForward f = cnn_run(theta, grid, X, nullptr);
  const MatrixXd diff = f.y - Y.transpose();
  const double denom = static_cast<double>(diff.size());
  const double loss = diff.squaredNorm() / denom;

  if (batch_stats) {
    const double count = static_cast<double>(f.a2.cols());
    batch_stats->mean = f.mean;
    batch_stats->var = count > 1.0 ? VectorXd(f.var * count / (count - 1.0)) : f.var;
  }
  if (!grad) return loss;

  const int batch = static_cast<int>(X.rows());
  const int h = grid.h, w = grid.w;
  const int p3 = (h - 1) * (w - 1);

  Blocks<const VectorXd> blk(theta);
  auto w1 = blk.matrix(6, 27);
  (void)blk.vector(6);
  auto w2 = blk.matrix(12, 54);
  (void)blk.vector(12);
  auto gamma = blk.vector(12);
  (void)blk.vector(12);
  auto w3 = blk.matrix(24, 48);
  (void)blk.vector(24);
  auto wf1 = blk.matrix(16, 24);
  (void)blk.vector(16);
  auto wf2 = blk.matrix(3, 16);
  (void)w1;

  grad->resize(theta.size());
  Blocks<VectorXd> g(*grad);
  auto gw1 = g.matrix(6, 27);
  auto gb1 = g.vector(6);
  auto gw2 = g.matrix(12, 54);
  auto gb2 = g.vector(12);
  auto ggamma = g.vector(12);
  auto gbeta = g.vector(12);
  auto gw3 = g.matrix(24, 48);
  auto gb3 = g.vector(24);
  auto gwf1 = g.matrix(16, 24);
  auto gbf1 = g.vector(16);
  auto gwf2 = g.matrix(3, 16);
  auto gbf2 = g.vector(3);

  const MatrixXd dy = (2.0 / denom) * diff;
  gwf2 = dy * f.a5.transpose();
  gbf2 = dy.rowwise().sum();
  const MatrixXd dz5 = relu_mask(f.z5, wf2.transpose() * dy);
  gwf1 = dz5 * f.g.transpose();
  gbf1 = dz5.rowwise().sum();
  const MatrixXd dg = wf1.transpose() * dz5;

  MatrixXd da4(24, static_cast<Eigen::Index>(batch) * p3);
  for (int b = 0; b < batch; ++b) {
    da4.middleCols(static_cast<Eigen::Index>(b) * p3, p3) = (dg.col(b) / p3).replicate(1, p3);
  }
  const MatrixXd dz3 = relu_mask(f.z3, da4);
  gw3 = dz3 * f.c3.transpose();
  gb3 = dz3.rowwise().sum();
  const MatrixXd da3 = col2im(w3.transpose() * dz3, 12, batch, h, w, 2, 0);

  ggamma = (da3.cwiseProduct(f.xhat)).rowwise().sum();
  gbeta = da3.rowwise().sum();
  const double count = static_cast<double>(f.a2.cols());
  const MatrixXd dxhat = da3.array().colwise() * gamma.array();
  const VectorXd sum_dxhat = dxhat.rowwise().sum();
  const VectorXd sum_dxhat_xhat = dxhat.cwiseProduct(f.xhat).rowwise().sum();
  MatrixXd da2 = (count * dxhat).colwise() - sum_dxhat;
  da2.array() -= f.xhat.array().colwise() * sum_dxhat_xhat.array();
  da2 = da2.array().colwise() * (f.inv_std.array() / count);

  const MatrixXd dz2 = relu_mask(f.z2, da2);
  gw2 = dz2 * f.c2.transpose();
  gb2 = dz2.rowwise().sum();
  const MatrixXd da1 = col2im(w2.transpose() * dz2, 6, batch, h, w, 3, 1);
  const MatrixXd dz1 = relu_mask(f.z1, da1);
  gw1 = dz1 * f.c1.transpose();
  gb1 = dz1.rowwise().sum();
  return loss;
}

void update_running(BatchNormStats& running, const BatchNormStats& batch) {
  running.mean = (1.0 - kBatchNormMomentum) * running.mean + kBatchNormMomentum * batch.mean;
  running.var = (1.0 - kBatchNormMomentum) * running.var + kBatchNormMomentum * batch.var;
}

}  // namespace tforce::nn
