#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sgde/errors.hpp"
#include "sgde/matrix.hpp"
#include "sgde/rng.hpp"

// Minimal dense-network math: forward pass, per-example backward pass,
// Glorot initialization and plain Adam. Everything is 64-bit and pure;
// repeated calls with the same inputs are bit-identical.

namespace sgde {

enum class Activation { LeakyRelu, Swish, Sigmoid, Linear, Softmax };

inline std::string activation_name(Activation a) {
  switch (a) {
    case Activation::LeakyRelu: return "leaky_relu";
    case Activation::Swish: return "swish";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Linear: return "linear";
    case Activation::Softmax: return "softmax";
  }
  throw ConfigError("unknown activation");
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "leaky_relu") return Activation::LeakyRelu;
  if (s == "swish") return Activation::Swish;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "linear") return Activation::Linear;
  if (s == "softmax") return Activation::Softmax;
  throw ConfigError("unknown activation: " + s);
}

struct LayerSpec {
  std::size_t in_width = 0;
  std::size_t out_width = 0;
  Activation activation = Activation::Linear;
  double slope = 0.2;  // leaky_relu only

  std::size_t param_count() const { return in_width * out_width + out_width; }
};

// Layer sequence of a dense network. Weights for layer l are stored
// row-major (in_width x out_width) followed by the biases.
struct NetworkArch {
  std::vector<LayerSpec> layers;

  void validate() const {
    if (layers.empty()) throw ConfigError("network must have at least one layer");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& L = layers[l];
      if (L.in_width < 1 || L.out_width < 1)
        throw ConfigError("layer widths must be >= 1");
      if (L.activation == Activation::LeakyRelu &&
          (L.slope <= 0.0 || L.slope >= 1.0))
        throw ConfigError("leaky_relu slope must lie in (0, 1)");
      if (l + 1 < layers.size() && L.out_width != layers[l + 1].in_width)
        throw ConfigError("consecutive layer widths do not chain");
    }
  }

  std::size_t input_width() const { return layers.front().in_width; }
  std::size_t output_width() const { return layers.back().out_width; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& L : layers) n += L.param_count();
    return n;
  }

  std::size_t layer_offset(std::size_t l) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < l; ++i) n += layers[i].param_count();
    return n;
  }
};

// Builds the common hidden-stack-plus-head shape used throughout:
// hidden layers with one activation, then a final layer with another.
inline NetworkArch make_dense_arch(std::size_t input_width,
                                   const std::vector<std::size_t>& hidden,
                                   std::size_t output_width,
                                   Activation hidden_act, Activation out_act,
                                   double slope = 0.2) {
  NetworkArch arch;
  std::size_t prev = input_width;
  for (std::size_t w : hidden) {
    arch.layers.push_back({prev, w, hidden_act, slope});
    prev = w;
  }
  arch.layers.push_back({prev, output_width, out_act, slope});
  arch.validate();
  return arch;
}

using ParameterVector = std::vector<double>;

// Glorot-uniform weights, zero biases. Deterministic for a fixed seed.
inline ParameterVector init_params(const NetworkArch& arch, std::uint64_t seed) {
  arch.validate();
  RngStream rng = RngStream(seed).derive("glorot-init");
  ParameterVector params(arch.param_count(), 0.0);
  std::size_t off = 0;
  for (const auto& L : arch.layers) {
    const double limit =
        std::sqrt(6.0 / static_cast<double>(L.in_width + L.out_width));
    for (std::size_t i = 0; i < L.in_width * L.out_width; ++i)
      params[off + i] = rng.uniform(-limit, limit);
    // biases stay zero
    off += L.param_count();
  }
  return params;
}

namespace detail {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// y = act(z), written into `out` (row-wise for softmax).
inline void apply_activation(const LayerSpec& L, std::span<const double> z,
                             std::span<double> out) {
  switch (L.activation) {
    case Activation::LeakyRelu:
      for (std::size_t i = 0; i < z.size(); ++i)
        out[i] = z[i] > 0.0 ? z[i] : L.slope * z[i];
      break;
    case Activation::Swish:
      for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] * sigmoid(z[i]);
      break;
    case Activation::Sigmoid:
      for (std::size_t i = 0; i < z.size(); ++i) out[i] = sigmoid(z[i]);
      break;
    case Activation::Linear:
      std::copy(z.begin(), z.end(), out.begin());
      break;
    case Activation::Softmax: {
      const double m = *std::max_element(z.begin(), z.end());
      double sum = 0.0;
      for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = std::exp(z[i] - m);
        sum += out[i];
      }
      for (std::size_t i = 0; i < z.size(); ++i) out[i] /= sum;
      break;
    }
  }
}

// dL/dz from dL/dy. Softmax needs the full Jacobian; the others are
// elementwise.
inline void activation_backward(const LayerSpec& L, std::span<const double> z,
                                std::span<const double> y,
                                std::span<const double> dy,
                                std::span<double> dz) {
  switch (L.activation) {
    case Activation::LeakyRelu:
      for (std::size_t i = 0; i < z.size(); ++i)
        dz[i] = dy[i] * (z[i] > 0.0 ? 1.0 : L.slope);
      break;
    case Activation::Swish:
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double s = sigmoid(z[i]);
        dz[i] = dy[i] * (s + z[i] * s * (1.0 - s));
      }
      break;
    case Activation::Sigmoid:
      for (std::size_t i = 0; i < z.size(); ++i)
        dz[i] = dy[i] * y[i] * (1.0 - y[i]);
      break;
    case Activation::Linear:
      std::copy(dy.begin(), dy.end(), dz.begin());
      break;
    case Activation::Softmax: {
      double dot = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) dot += dy[i] * y[i];
      for (std::size_t i = 0; i < y.size(); ++i) dz[i] = y[i] * (dy[i] - dot);
      break;
    }
  }
}

}  // namespace detail

// All intermediate activations of one forward pass. acts[0] is the input
// batch, acts[l + 1] the output of layer l; pre[l] holds pre-activations.
struct ForwardTrace {
  std::vector<Matrix> pre;
  std::vector<Matrix> acts;

  const Matrix& output() const { return acts.back(); }
};

inline ForwardTrace forward(const NetworkArch& arch, const ParameterVector& params,
                            const Matrix& batch) {
  arch.validate();
  if (params.size() != arch.param_count())
    throw ShapeError("parameter vector length does not match architecture");
  if (batch.cols != arch.input_width())
    throw ShapeError("batch width does not match first layer input");
  if (!batch.all_finite()) throw NumericError("non-finite input batch");

  ForwardTrace trace;
  trace.acts.reserve(arch.layers.size() + 1);
  trace.pre.reserve(arch.layers.size());
  trace.acts.push_back(batch);

  std::size_t off = 0;
  for (const auto& L : arch.layers) {
    const Matrix& x = trace.acts.back();
    const double* W = params.data() + off;
    const double* b = W + L.in_width * L.out_width;
    Matrix z(batch.rows, L.out_width);
    for (std::size_t i = 0; i < batch.rows; ++i) {
      auto xi = x.row(i);
      auto zi = z.row(i);
      std::copy(b, b + L.out_width, zi.begin());
      for (std::size_t r = 0; r < L.in_width; ++r) {
        const double xv = xi[r];
        const double* Wr = W + r * L.out_width;
        for (std::size_t c = 0; c < L.out_width; ++c) zi[c] += xv * Wr[c];
      }
    }
    Matrix a(batch.rows, L.out_width);
    for (std::size_t i = 0; i < batch.rows; ++i)
      detail::apply_activation(L, z.row(i), a.row(i));
    trace.pre.push_back(std::move(z));
    trace.acts.push_back(std::move(a));
    off += L.param_count();
  }
  return trace;
}

// Gradient of one example's loss with respect to every parameter, given
// dL/d(final activation) for that example. param_grads is accumulated into
// (callers zero it first); input_grads may be empty when not needed.
inline void backward_example(const NetworkArch& arch, const ParameterVector& params,
                             const ForwardTrace& trace, std::size_t row,
                             std::span<const double> upstream,
                             std::span<double> param_grads,
                             std::span<double> input_grads) {
  if (upstream.size() != arch.output_width())
    throw ShapeError("upstream gradient width mismatch");

  std::vector<double> dy(upstream.begin(), upstream.end());
  std::vector<double> dz;
  std::vector<double> dx;
  for (std::size_t li = arch.layers.size(); li-- > 0;) {
    const auto& L = arch.layers[li];
    const std::size_t off = arch.layer_offset(li);
    const double* W = params.data() + off;
    auto z = trace.pre[li].row(row);
    auto y = trace.acts[li + 1].row(row);
    auto x = trace.acts[li].row(row);

    dz.assign(L.out_width, 0.0);
    detail::activation_backward(L, z, y, dy, dz);

    double* gW = param_grads.data() + off;
    double* gb = gW + L.in_width * L.out_width;
    for (std::size_t r = 0; r < L.in_width; ++r) {
      const double xv = x[r];
      double* gWr = gW + r * L.out_width;
      for (std::size_t c = 0; c < L.out_width; ++c) gWr[c] += xv * dz[c];
    }
    for (std::size_t c = 0; c < L.out_width; ++c) gb[c] += dz[c];

    if (li > 0 || !input_grads.empty()) {
      dx.assign(L.in_width, 0.0);
      for (std::size_t r = 0; r < L.in_width; ++r) {
        const double* Wr = W + r * L.out_width;
        double s = 0.0;
        for (std::size_t c = 0; c < L.out_width; ++c) s += Wr[c] * dz[c];
        dx[r] = s;
      }
      if (li == 0 && !input_grads.empty())
        std::copy(dx.begin(), dx.end(), input_grads.begin());
      dy = dx;
    }
  }
}

// Row i of the result is the exact gradient of example i's loss with
// respect to all parameters; the mean over rows therefore equals the
// gradient of the mean loss. Backward replays per row.
inline Matrix backward_per_example(const NetworkArch& arch,
                                   const ParameterVector& params,
                                   const Matrix& batch,
                                   const Matrix& upstream_loss_gradients) {
  const ForwardTrace trace = forward(arch, params, batch);
  if (upstream_loss_gradients.rows != batch.rows ||
      upstream_loss_gradients.cols != arch.output_width())
    throw ShapeError("upstream gradient shape mismatch");

  Matrix grads(batch.rows, arch.param_count());
  for (std::size_t i = 0; i < batch.rows; ++i)
    backward_example(arch, params, trace, i, upstream_loss_gradients.row(i),
                     grads.row(i), {});
  return grads;
}

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_stability = 1e-8;
};

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::size_t step_count = 0;
  AdamHyper hyper;

  AdamState() = default;
  AdamState(std::size_t param_count, AdamHyper h = {})
      : first_moment(param_count, 0.0),
        second_moment(param_count, 0.0),
        step_count(0),
        hyper(h) {}
};

// One bias-corrected Adam update.
inline std::pair<ParameterVector, AdamState> adam_step(
    AdamState state, ParameterVector params, std::span<const double> gradient) {
  if (gradient.size() != params.size())
    throw ShapeError("gradient length does not match parameters");
  if (state.first_moment.size() != params.size())
    throw ShapeError("optimizer state does not match parameters");
  for (double g : gradient)
    if (!std::isfinite(g)) throw NumericError("non-finite gradient");

  state.step_count += 1;
  const auto& h = state.hyper;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = gradient[i];
    state.first_moment[i] = h.beta1 * state.first_moment[i] + (1.0 - h.beta1) * g;
    state.second_moment[i] =
        h.beta2 * state.second_moment[i] + (1.0 - h.beta2) * g * g;
    const double mhat = state.first_moment[i] / bc1;
    const double vhat = state.second_moment[i] / bc2;
    params[i] -= h.learning_rate * mhat / (std::sqrt(vhat) + h.eps_stability);
  }
  return {std::move(params), std::move(state)};
}

// ---- Loss heads -----------------------------------------------------------

// Per-example losses plus dL_i/d(final activation); feed `upstream` straight
// into backward_per_example.
struct LossEval {
  std::vector<double> per_example_loss;
  Matrix upstream;

  double mean_loss() const {
    if (per_example_loss.empty()) return 0.0;
    return std::accumulate(per_example_loss.begin(), per_example_loss.end(), 0.0) /
           static_cast<double>(per_example_loss.size());
  }
};

// Cross-entropy on softmax outputs: loss_i = -ln p_i[label_i].
inline LossEval cross_entropy_loss(const Matrix& probs,
                                   std::span<const int> labels) {
  if (probs.rows != labels.size())
    throw ShapeError("label count does not match batch");
  LossEval ev;
  ev.per_example_loss.resize(probs.rows, 0.0);
  ev.upstream = Matrix(probs.rows, probs.cols);
  constexpr double floor = 1e-12;
  for (std::size_t i = 0; i < probs.rows; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= probs.cols)
      throw DataError("label index out of range");
    const double p = std::max(probs(i, static_cast<std::size_t>(y)), floor);
    ev.per_example_loss[i] = -std::log(p);
    ev.upstream(i, static_cast<std::size_t>(y)) = -1.0 / p;
  }
  return ev;
}

// Binary cross-entropy against [0,1] targets, summed over features:
// loss_i = -sum_j [x ln p + (1-x) ln(1-p)]. Predictions are clamped away
// from 0/1 so the loss and its gradient stay finite.
inline LossEval bce_sum_loss(const Matrix& preds, const Matrix& targets) {
  if (preds.rows != targets.rows || preds.cols != targets.cols)
    throw ShapeError("prediction/target shape mismatch");
  LossEval ev;
  ev.per_example_loss.resize(preds.rows, 0.0);
  ev.upstream = Matrix(preds.rows, preds.cols);
  constexpr double eps = 1e-7;
  for (std::size_t i = 0; i < preds.rows; ++i) {
    double loss = 0.0;
    for (std::size_t j = 0; j < preds.cols; ++j) {
      const double x = targets(i, j);
      const double p = preds(i, j);
      // Each log argument is floored separately, so a perfect binary
      // reconstruction scores exactly zero.
      loss += -(x * std::log(std::max(p, eps)) +
                (1.0 - x) * std::log(std::max(1.0 - p, eps)));
      const double pc = std::clamp(p, eps, 1.0 - eps);
      ev.upstream(i, j) = (pc - x) / (pc * (1.0 - pc));
    }
    ev.per_example_loss[i] = loss;
  }
  return ev;
}

}  // namespace sgde
