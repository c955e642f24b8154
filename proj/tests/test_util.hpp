#pragma once

// Shared test helpers: finite-difference oracles, random network configs,
// and an independent scalar Adam reference. These stay deliberately separate
// from the implementation paths they check.

#include <cmath>
#include <functional>
#include <vector>

#include "sgde/matrix.hpp"
#include "sgde/rng.hpp"
#include "sgde/tensor_nn.hpp"

namespace sgde_test {

// Central finite differences of a scalar function of the parameters.
inline std::vector<double> finite_difference_gradient(
    const std::function<double(const sgde::ParameterVector&)>& f,
    sgde::ParameterVector params, double h = 1e-6) {
  std::vector<double> grad(params.size(), 0.0);
  for (std::size_t p = 0; p < params.size(); ++p) {
    const double orig = params[p];
    params[p] = orig + h;
    const double plus = f(params);
    params[p] = orig - h;
    const double minus = f(params);
    params[p] = orig;
    grad[p] = (plus - minus) / (2.0 * h);
  }
  return grad;
}

// Relative error with an absolute floor, the usual gradient-check metric.
inline double gradient_rel_error(std::span<const double> analytic,
                                 std::span<const double> numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric[i])});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

// Small random architecture: widths <= 8, depth <= 3, mixed activations.
inline sgde::NetworkArch random_small_arch(sgde::RngStream& rng,
                                           bool softmax_head = false) {
  const std::size_t depth = 1 + rng.uniform_int(3);
  const sgde::Activation hidden_acts[] = {
      sgde::Activation::LeakyRelu, sgde::Activation::Swish,
      sgde::Activation::Sigmoid, sgde::Activation::Linear};
  sgde::NetworkArch arch;
  std::size_t prev = 1 + rng.uniform_int(8);
  for (std::size_t l = 0; l < depth; ++l) {
    const std::size_t width = 1 + rng.uniform_int(8);
    sgde::Activation act = hidden_acts[rng.uniform_int(4)];
    if (l + 1 == depth && softmax_head) act = sgde::Activation::Softmax;
    arch.layers.push_back({prev, width, act, 0.2});
    prev = width;
  }
  arch.validate();
  return arch;
}

inline sgde::Matrix random_matrix(sgde::RngStream& rng, std::size_t rows,
                                  std::size_t cols, double lo = -1.0,
                                  double hi = 1.0) {
  sgde::Matrix m(rows, cols);
  for (double& v : m.data) v = rng.uniform(lo, hi);
  return m;
}

// Textbook Adam, written independently as a scalar loop.
struct ScalarAdamRef {
  std::vector<double> m, v;
  std::size_t t = 0;
  double lr, b1, b2, eps;

  ScalarAdamRef(std::size_t n, double lr_ = 1e-3, double b1_ = 0.9,
                double b2_ = 0.999, double eps_ = 1e-8)
      : m(n, 0.0), v(n, 0.0), lr(lr_), b1(b1_), b2(b2_), eps(eps_) {}

  void step(std::vector<double>& params, const std::vector<double>& g) {
    t += 1;
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mhat = m[i] / (1 - std::pow(b1, static_cast<double>(t)));
      const double vhat = v[i] / (1 - std::pow(b2, static_cast<double>(t)));
      params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
};

}  // namespace sgde_test
