#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "sdsac/nn.hpp"

namespace sdsac::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  return m;
}

/// Relative error with a floor so that gradients near zero compare absolutely.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Worst relative error between `grads` and central differences of `loss` over
/// every weight and bias of `net`.
inline double max_fd_error(Mlp& net, const Gradients& grads, const std::function<double()>& loss,
                           double h = 1e-5, double floor = 1e-6) {
  double worst = 0.0;
  auto probe = [&](double& p, double analytic) {
    const double saved = p;
    p = saved + h;
    const double up = loss();
    p = saved - h;
    const double down = loss();
    p = saved;
    worst = std::max(worst, rel_error(analytic, (up - down) / (2.0 * h), floor));
  };
  for (std::size_t l = 0; l < net.depth(); ++l) {
    auto& L = net.layers()[l];
    for (Eigen::Index j = 0; j < L.weight.cols(); ++j)
      for (Eigen::Index i = 0; i < L.weight.rows(); ++i) probe(L.weight(i, j), grads.layers[l].weight(i, j));
    for (Eigen::Index i = 0; i < L.bias.size(); ++i) probe(L.bias[i], grads.layers[l].bias[i]);
  }
  return worst;
}

} // namespace sdsac::testing
