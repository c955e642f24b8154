#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "sgde/errors.hpp"
#include "sgde/matrix.hpp"
#include "sgde/rng.hpp"
#include "sgde/tensor_nn.hpp"

// Consumers of (real or synthetic) data: multinomial logistic regression,
// accuracy / F1 / AUC evaluation, stratified k-fold cross-validation, and a
// FedAvg trainer with score-based early stopping.

namespace sgde {

struct LabeledDataset {
  Matrix features;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  // Index of the designated positive class for binary F1; -1 selects
  // macro-averaged F1.
  int positive_class = -1;

  std::size_t size() const { return features.rows; }

  void validate() const {
    if (features.rows != labels.size())
      throw DataError("feature/label row counts differ");
    for (int y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= class_names.size())
        throw DataError("label index out of range");
  }

  LabeledDataset select(std::span<const std::size_t> idx) const {
    LabeledDataset out;
    out.features = features.select_rows(idx);
    out.labels.reserve(idx.size());
    for (std::size_t i : idx) out.labels.push_back(labels[i]);
    out.class_names = class_names;
    out.positive_class = positive_class;
    return out;
  }

  std::size_t classes_present() const {
    return std::set<int>(labels.begin(), labels.end()).size();
  }
};

struct Metrics {
  double accuracy = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  std::vector<std::string> flags;  // zero-division / undefined-term notes
};

inline Metrics mean_metrics(const std::vector<Metrics>& all) {
  if (all.empty()) throw DataError("cannot average zero metric records");
  Metrics m;
  for (const auto& x : all) {
    m.accuracy += x.accuracy;
    m.f1 += x.f1;
    m.auc += x.auc;
    for (const auto& f : x.flags)
      if (std::find(m.flags.begin(), m.flags.end(), f) == m.flags.end())
        m.flags.push_back(f);
  }
  const double inv = 1.0 / static_cast<double>(all.size());
  m.accuracy *= inv;
  m.f1 *= inv;
  m.auc *= inv;
  return m;
}

struct LogregModel {
  NetworkArch arch;
  ParameterVector params;
};

namespace detail {

// Row order independent of dataset permutation, so full-batch gradients sum
// in a canonical order and training is permutation invariant bit-for-bit.
inline std::vector<std::size_t> canonical_row_order(const LabeledDataset& ds) {
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    auto ra = ds.features.row(a);
    auto rb = ds.features.row(b);
    if (const auto cmp = std::lexicographical_compare_three_way(
            ra.begin(), ra.end(), rb.begin(), rb.end());
        cmp != 0)
      return cmp < 0;
    return ds.labels[a] < ds.labels[b];
  });
  return order;
}

inline std::vector<double> full_batch_gradient(const NetworkArch& arch,
                                               const ParameterVector& params,
                                               const Matrix& features,
                                               std::span<const int> labels) {
  const ForwardTrace trace = forward(arch, params, features);
  const LossEval ev = cross_entropy_loss(trace.output(), labels);
  Matrix grads(features.rows, arch.param_count());
  for (std::size_t i = 0; i < features.rows; ++i)
    backward_example(arch, params, trace, i, ev.upstream.row(i), grads.row(i), {});
  std::vector<double> mean(arch.param_count(), 0.0);
  for (std::size_t i = 0; i < grads.rows; ++i) {
    auto row = grads.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) mean[j] += row[j];
  }
  const double inv = 1.0 / static_cast<double>(features.rows);
  for (double& v : mean) v *= inv;
  return mean;
}

}  // namespace detail

// Multinomial logistic regression: a single softmax layer trained with
// full-batch Adam. Deterministic per seed and invariant to example order.
inline LogregModel train_logreg(const LabeledDataset& dataset, std::size_t epochs,
                                double learning_rate, std::uint64_t seed) {
  dataset.validate();
  if (dataset.class_names.size() < 2)
    throw DataError("logistic regression needs at least 2 classes");
  if (dataset.classes_present() < 2)
    throw DataError("dataset contains a single class");

  LogregModel model;
  model.arch = NetworkArch{{{dataset.features.cols, dataset.class_names.size(),
                             Activation::Softmax, 0.2}}};
  model.params = init_params(model.arch, seed);
  if (epochs == 0) return model;

  const std::vector<std::size_t> order = detail::canonical_row_order(dataset);
  const Matrix features = dataset.features.select_rows(order);
  std::vector<int> labels(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) labels[i] = dataset.labels[order[i]];

  AdamHyper hyper;
  hyper.learning_rate = learning_rate;
  AdamState state(model.params.size(), hyper);
  for (std::size_t e = 0; e < epochs; ++e) {
    const std::vector<double> grad =
        detail::full_batch_gradient(model.arch, model.params, features, labels);
    auto [next_params, next_state] =
        adam_step(std::move(state), std::move(model.params), grad);
    model.params = std::move(next_params);
    state = std::move(next_state);
  }
  return model;
}

namespace detail {

// Rank-statistic ROC-AUC with midranks for tied scores. Equivalent to
// counting positive-negative pairs with half credit for ties.
inline double binary_auc(std::span<const double> scores,
                         std::span<const int> is_positive, bool* defined) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  std::size_t n_pos = 0;
  for (int p : is_positive) n_pos += static_cast<std::size_t>(p);
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    *defined = false;
    return 0.5;
  }
  *defined = true;

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
    for (std::size_t k = i; k < j; ++k)
      if (is_positive[order[k]]) rank_sum_pos += midrank;
    i = j;
  }
  return (rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1)) /
         (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct F1Parts {
  std::size_t tp = 0, fp = 0, fn = 0;

  double f1(bool* defined) const {
    const std::size_t denom = 2 * tp + fp + fn;
    if (denom == 0) {
      *defined = false;
      return 0.0;
    }
    *defined = true;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
};

}  // namespace detail

// Accuracy, F1 and AUC of a classifier on a dataset. Binary tasks report the
// F1 of the designated positive class and plain ROC-AUC; multiclass tasks
// report macro F1 and macro one-vs-rest AUC. Undefined terms contribute the
// zero-division value and are flagged.
inline Metrics evaluate(const LogregModel& model, const LabeledDataset& dataset) {
  dataset.validate();
  if (dataset.size() == 0) throw DataError("cannot evaluate on an empty dataset");
  const std::size_t n_classes = dataset.class_names.size();
  const Matrix probs = forward(model.arch, model.params, dataset.features).output();
  if (probs.cols != n_classes)
    throw ShapeError("model output width does not match class count");

  Metrics m;
  std::vector<int> predicted(dataset.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    auto row = probs.row(i);
    predicted[i] = static_cast<int>(
        std::max_element(row.begin(), row.end()) - row.begin());
    if (predicted[i] == dataset.labels[i]) ++correct;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());

  const bool binary = n_classes == 2 && dataset.positive_class >= 0;
  if (binary) {
    const int pos = dataset.positive_class;
    detail::F1Parts parts;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const bool truth = dataset.labels[i] == pos;
      const bool pred = predicted[i] == pos;
      if (truth && pred) ++parts.tp;
      if (!truth && pred) ++parts.fp;
      if (truth && !pred) ++parts.fn;
    }
    bool defined = true;
    m.f1 = parts.f1(&defined);
    if (!defined) m.flags.push_back("f1 undefined (no positives in truth or prediction); reported 0");

    std::vector<double> scores(dataset.size());
    std::vector<int> is_pos(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      scores[i] = probs(i, static_cast<std::size_t>(pos));
      is_pos[i] = dataset.labels[i] == pos ? 1 : 0;
    }
    bool auc_defined = true;
    m.auc = detail::binary_auc(scores, is_pos, &auc_defined);
    if (!auc_defined) m.flags.push_back("auc undefined (single-class dataset); reported 0.5");
  } else {
    double f1_sum = 0.0;
    double auc_sum = 0.0;
    std::size_t auc_terms = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
      detail::F1Parts parts;
      std::vector<double> scores(dataset.size());
      std::vector<int> is_pos(dataset.size());
      bool class_in_truth = false;
      for (std::size_t i = 0; i < dataset.size(); ++i) {
        const bool truth = dataset.labels[i] == static_cast<int>(c);
        const bool pred = predicted[i] == static_cast<int>(c);
        class_in_truth = class_in_truth || truth;
        if (truth && pred) ++parts.tp;
        if (!truth && pred) ++parts.fp;
        if (truth && !pred) ++parts.fn;
        scores[i] = probs(i, c);
        is_pos[i] = truth ? 1 : 0;
      }
      bool defined = true;
      f1_sum += parts.f1(&defined);
      if (!class_in_truth)
        m.flags.push_back("class '" + dataset.class_names[c] +
                          "' absent from dataset; its F1 term is 0");
      bool auc_defined = true;
      const double auc = detail::binary_auc(scores, is_pos, &auc_defined);
      if (auc_defined) {
        auc_sum += auc;
        ++auc_terms;
      } else {
        m.flags.push_back("auc term for class '" + dataset.class_names[c] +
                          "' undefined; skipped");
      }
    }
    m.f1 = f1_sum / static_cast<double>(n_classes);
    m.auc = auc_terms > 0 ? auc_sum / static_cast<double>(auc_terms) : 0.5;
  }
  return m;
}

using Trainer = std::function<LogregModel(const LabeledDataset&, std::uint64_t)>;

// Stratified k-fold cross-validation; returns the unweighted mean of fold
// metrics. Classes with fewer than k members trigger a fallback to plain
// folds, recorded as a flag.
inline Metrics kfold_cv(const LabeledDataset& dataset, std::size_t k,
                        const Trainer& trainer, std::uint64_t seed) {
  dataset.validate();
  if (k < 2) throw ConfigError("k must be >= 2");
  if (dataset.size() < k) throw DataError("fewer examples than folds");

  RngStream rng = RngStream(seed).derive("kfold");
  std::vector<std::vector<std::size_t>> by_class(dataset.class_names.size());
  for (std::size_t i = 0; i < dataset.size(); ++i)
    by_class[static_cast<std::size_t>(dataset.labels[i])].push_back(i);

  bool stratified = true;
  for (const auto& members : by_class)
    if (!members.empty() && members.size() < k) stratified = false;

  std::vector<std::vector<std::size_t>> folds(k);
  if (stratified) {
    std::size_t next = 0;
    for (auto& members : by_class) {
      rng.shuffle(members);
      for (std::size_t i : members) folds[next++ % k].push_back(i);
    }
  } else {
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (std::size_t i = 0; i < order.size(); ++i) folds[i % k].push_back(order[i]);
  }

  std::vector<Metrics> fold_metrics;
  fold_metrics.reserve(k);
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> train_idx;
    train_idx.reserve(dataset.size() - folds[f].size());
    for (std::size_t g = 0; g < k; ++g)
      if (g != f) train_idx.insert(train_idx.end(), folds[g].begin(), folds[g].end());
    std::sort(train_idx.begin(), train_idx.end());
    std::vector<std::size_t> test_idx = folds[f];
    std::sort(test_idx.begin(), test_idx.end());

    const LogregModel model =
        trainer(dataset.select(train_idx), RngStream(seed).derive("fold", f).seed());
    fold_metrics.push_back(evaluate(model, dataset.select(test_idx)));
  }
  Metrics mean = mean_metrics(fold_metrics);
  if (!stratified)
    mean.flags.push_back("a class has fewer members than folds; plain folds used");
  return mean;
}

// One FedAvg aggregation: sum of p_k * w_k.
inline ParameterVector fedavg_round(const ParameterVector& global_params,
                                    const std::vector<ParameterVector>& client_params,
                                    std::span<const double> weights) {
  if (client_params.empty()) throw PlanError("no client parameter vectors");
  if (client_params.size() != weights.size())
    throw PlanError("weight count does not match client count");
  double total = 0.0;
  for (double p : weights) {
    if (p < 0.0) throw PlanError("client weights must be non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw PlanError("client weights must sum to 1");

  ParameterVector out(global_params.size(), 0.0);
  for (std::size_t k = 0; k < client_params.size(); ++k) {
    if (client_params[k].size() != out.size())
      throw ShapeError("client parameter vector length mismatch");
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] += weights[k] * client_params[k][i];
  }
  return out;
}

struct FederationClient {
  LabeledDataset train;
  LabeledDataset validation;
};

struct FederationPlan {
  std::vector<FederationClient> clients;
  std::vector<double> weights;  // p_k >= 0, sum to 1
  std::size_t rounds_max = 500;
  std::size_t local_epochs = 1;
  std::size_t patience = 10;
};

struct FedavgResult {
  LogregModel model;
  std::size_t rounds_run = 0;
  double best_score = 0.0;
};

// Federated averaging with early stopping on the unweighted client mean of
// mean(accuracy, F1, AUC) over validation splits; returns the best-scoring
// model observed.
inline FedavgResult run_fedavg(const FederationPlan& plan, const NetworkArch& arch,
                               double learning_rate, std::uint64_t seed) {
  if (plan.clients.empty()) throw PlanError("federation plan has no clients");
  if (plan.rounds_max < 1) throw PlanError("rounds_max must be >= 1");

  ParameterVector global = init_params(arch, seed);
  AdamHyper hyper;
  hyper.learning_rate = learning_rate;

  FedavgResult result;
  result.model.arch = arch;
  result.model.params = global;
  result.best_score = -std::numeric_limits<double>::infinity();
  std::size_t rounds_since_best = 0;

  for (std::size_t round = 1; round <= plan.rounds_max; ++round) {
    std::vector<ParameterVector> locals;
    locals.reserve(plan.clients.size());
    for (const auto& client : plan.clients) {
      ParameterVector params = global;
      AdamState state(params.size(), hyper);
      for (std::size_t e = 0; e < plan.local_epochs; ++e) {
        const std::vector<double> grad = detail::full_batch_gradient(
            arch, params, client.train.features, client.train.labels);
        auto [next_params, next_state] =
            adam_step(std::move(state), std::move(params), grad);
        params = std::move(next_params);
        state = std::move(next_state);
      }
      locals.push_back(std::move(params));
    }
    global = fedavg_round(global, locals, plan.weights);

    double score_sum = 0.0;
    for (const auto& client : plan.clients) {
      const Metrics m = evaluate(LogregModel{arch, global}, client.validation);
      score_sum += (m.accuracy + m.f1 + m.auc) / 3.0;
    }
    const double score = score_sum / static_cast<double>(plan.clients.size());

    result.rounds_run = round;
    if (score > result.best_score) {
      result.best_score = score;
      result.model.params = global;
      rounds_since_best = 0;
    } else {
      ++rounds_since_best;
    }
    if (rounds_since_best >= plan.patience) break;
  }
  return result;
}

}  // namespace sgde
