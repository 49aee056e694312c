#pragma once

#include "tforce/nn.hpp"
#include "tforce/random.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace tforce::test {

using LossFn = std::function<double(const Eigen::VectorXd&)>;

struct GradCheck {
  int checked = 0;
  int skipped = 0;     // draws whose interval straddles a ReLU kink
  double worst = 0.0;  // largest relative error seen
};

// Seeded jitter moves the zero-initialized biases off the ReLU kinks.
inline Eigen::VectorXd generic_point(Eigen::VectorXd theta, std::uint64_t seed, double sd = 0.05) {
  Rng rng(seed);
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] += sd * rng.normal();
  return theta;
}

inline double central(const LossFn& loss, const Eigen::VectorXd& theta, Eigen::Index i, double step) {
  Eigen::VectorXd plus = theta, minus = theta;
  plus[i] += step;
  minus[i] -= step;
  return (loss(plus) - loss(minus)) / (2.0 * step);
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-7}); }

// Central differences with `step` on `per_layer` random coordinates of every
// layer. The loss is only piecewise smooth; a draw counts when the differences
// at step and step/10 agree, i.e. no kink lies in the interval. That filter
// never looks at the analytic gradient.
inline GradCheck check_gradient(const LossFn& loss, const Eigen::VectorXd& theta, const Eigen::VectorXd& grad,
                                const std::vector<nn::LayerShape>& layers, int per_layer, std::uint64_t seed,
                                double step = 1e-4, double tol = 1e-3) {
  Rng rng(seed);
  GradCheck out;
  Eigen::Index offset = 0;
  for (const auto& layer : layers) {
    int done = 0;
    for (int attempt = 0; done < per_layer && attempt < 50 * per_layer; ++attempt) {
      const Eigen::Index i = offset + static_cast<Eigen::Index>(rng.below(static_cast<std::size_t>(layer.size())));
      const double fd = central(loss, theta, i, step);
      if (rel_err(fd, central(loss, theta, i, step / 10.0)) > tol) {
        ++out.skipped;
        continue;
      }
      out.worst = std::max(out.worst, rel_err(fd, grad[i]));
      ++out.checked;
      ++done;
    }
    offset += layer.size();
  }
  return out;
}

inline GradCheck check_all(const LossFn& loss, const Eigen::VectorXd& theta, const Eigen::VectorXd& grad,
                           double step) {
  GradCheck out;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    out.worst = std::max(out.worst, rel_err(central(loss, theta, i, step), grad[i]));
    ++out.checked;
  }
  return out;
}

}  // namespace tforce::test
