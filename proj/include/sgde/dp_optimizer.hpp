#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sgde/dp_accountant.hpp"
#include "sgde/errors.hpp"
#include "sgde/matrix.hpp"
#include "sgde/rng.hpp"
#include "sgde/tensor_nn.hpp"

// Differentially private Adam: per-example gradient clipping, Gaussian noise
// on the clipped sum, and step bookkeeping that feeds the accountant.

namespace sgde {

struct DpTrainingConfig {
  double clip_norm = 1.0;  // +infinity disables clipping
  double noise_multiplier = 0.0;
  std::size_t batch_size = 16;
  std::size_t epochs = 1;
  AdamHyper adam;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be > 0");
    if (noise_multiplier < 0.0) throw ConfigError("noise multiplier must be >= 0");
  }
};

// What the accountant needs to certify a finished training run.
struct DpStepLog {
  std::size_t steps_taken = 0;
  double sampling_rate = 0.0;
  MechanismParams mechanism;
};

// Each row g is replaced by g * min(1, C/||g||_2); rows already within the
// clip norm pass through unchanged.
inline Matrix clip_per_example(Matrix per_example_grads, double clip_norm) {
  if (!(clip_norm > 0.0)) throw DomainError("clip norm must be > 0");
  if (std::isinf(clip_norm)) return per_example_grads;
  for (std::size_t i = 0; i < per_example_grads.rows; ++i) {
    auto row = per_example_grads.row(i);
    const double norm = l2_norm(row);
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient row");
    if (norm > clip_norm) {
      const double scale = clip_norm / norm;
      for (double& v : row) v *= scale;
    }
  }
  return per_example_grads;
}

// (sum of rows + N(0, sigma^2 C^2 I)) / L. Noise comes from the caller's
// named stream so runs are reproducible.
inline std::vector<double> noisy_aggregate(const Matrix& clipped, double sigma,
                                           double clip_norm, RngStream& noise_rng) {
  if (clipped.rows == 0) throw DataError("empty batch");
  std::vector<double> out(clipped.cols, 0.0);
  for (std::size_t i = 0; i < clipped.rows; ++i) {
    auto row = clipped.row(i);
    for (std::size_t j = 0; j < clipped.cols; ++j) out[j] += row[j];
  }
  if (sigma > 0.0) {
    const double noise_std = sigma * (std::isinf(clip_norm) ? 1.0 : clip_norm);
    for (double& v : out) v += noise_rng.normal(0.0, noise_std);
  }
  const double inv_n = 1.0 / static_cast<double>(clipped.rows);
  for (double& v : out) v *= inv_n;
  return out;
}

// Model concept for dp_train:
//   std::size_t example_count() const;
//   Matrix per_example_gradients(const ParameterVector&,
//                                std::span<const std::size_t> indices,
//                                RngStream& model_rng, double* mean_loss);
//
// Training samples fixed-size uniform batches without replacement per epoch
// and accounts them with q = L/n; noise is applied to the clipped sum and
// divided by the actual batch size; the update is plain Adam on the result.
template <typename Model>
std::pair<ParameterVector, DpStepLog> dp_train(Model& model, ParameterVector params,
                                               const DpTrainingConfig& config) {
  config.validate();
  const std::size_t n = model.example_count();
  if (n < 1) throw DataError("dataset must contain at least one example");

  const std::size_t batch = std::min(config.batch_size, n);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const double q = static_cast<double>(batch) / static_cast<double>(n);

  RngStream root(config.seed);
  RngStream batch_rng = root.derive("batch-sampling");
  RngStream noise_rng = root.derive("noise");
  RngStream model_rng = root.derive("model");

  AdamState state(params.size(), config.adam);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    batch_rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t len = std::min(batch, n - start);
      std::vector<std::size_t> idx(order.begin() + start,
                                   order.begin() + start + len);
      std::sort(idx.begin(), idx.end());

      double mean_loss = 0.0;
      Matrix grads = model.per_example_gradients(params, idx, model_rng, &mean_loss);
      if (!std::isfinite(mean_loss))
        throw NumericError("non-finite loss at step " + std::to_string(step));
      grads = clip_per_example(std::move(grads), config.clip_norm);
      const std::vector<double> agg =
          noisy_aggregate(grads, config.noise_multiplier, config.clip_norm, noise_rng);
      auto [next_params, next_state] = adam_step(std::move(state), std::move(params), agg);
      params = std::move(next_params);
      state = std::move(next_state);
      ++step;
    }
  }

  DpStepLog log;
  log.steps_taken = step;
  log.sampling_rate = q;
  log.mechanism = MechanismParams{config.noise_multiplier, q, step, config.clip_norm};
  return {std::move(params), log};
}

// Plain dense network under a supervised loss; the adapter that lets
// dp_train drive classifier training.
class DenseSupervisedModel {
 public:
  enum class Loss { CrossEntropy };

  DenseSupervisedModel(NetworkArch arch, const Matrix& features,
                       std::span<const int> labels, Loss loss = Loss::CrossEntropy)
      : arch_(std::move(arch)), features_(features), labels_(labels), loss_(loss) {
    if (features_.rows != labels_.size())
      throw ShapeError("feature/label row counts differ");
  }

  std::size_t example_count() const { return features_.rows; }
  std::size_t param_count() const { return arch_.param_count(); }
  const NetworkArch& arch() const { return arch_; }

  Matrix per_example_gradients(const ParameterVector& params,
                               std::span<const std::size_t> idx, RngStream&,
                               double* mean_loss) const {
    const Matrix batch = features_.select_rows(idx);
    std::vector<int> batch_labels(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) batch_labels[i] = labels_[idx[i]];

    const ForwardTrace trace = forward(arch_, params, batch);
    LossEval ev;
    switch (loss_) {
      case Loss::CrossEntropy:
        ev = cross_entropy_loss(trace.output(), batch_labels);
        break;
    }
    if (mean_loss) *mean_loss = ev.mean_loss();

    Matrix grads(batch.rows, arch_.param_count());
    for (std::size_t i = 0; i < batch.rows; ++i)
      backward_example(arch_, params, trace, i, ev.upstream.row(i), grads.row(i), {});
    return grads;
  }

 private:
  NetworkArch arch_;
  const Matrix& features_;
  std::span<const int> labels_;
  Loss loss_;
};

}  // namespace sgde
