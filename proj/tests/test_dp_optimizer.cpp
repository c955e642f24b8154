#include "sgde/dp_optimizer.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace sgde;
using namespace sgde_test;

namespace {

struct TinyProblem {
  NetworkArch arch;
  Matrix features;
  std::vector<int> labels;
};

TinyProblem make_problem(std::size_t n, std::uint64_t seed) {
  TinyProblem p;
  p.arch = NetworkArch{{{3, 2, Activation::Softmax, 0.2}}};
  RngStream rng(seed);
  p.features = random_matrix(rng, n, 3, 0.0, 1.0);
  p.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    p.labels[i] = p.features(i, 0) > 0.5 ? 1 : 0;
  return p;
}

}  // namespace

TEST(ClipPerExample, ScalesOnlyRowsAboveTheNorm) {
  const double C = 2.0;
  Matrix grads(3, 4);
  // row 0: norm 2C, row 1: norm 0.5C, row 2: zero.
  grads(0, 0) = 4.0;
  grads(1, 1) = 1.0;
  const Matrix clipped = clip_per_example(grads, C);
  EXPECT_NEAR(l2_norm(clipped.row(0)), C, 1e-12);
  EXPECT_DOUBLE_EQ(clipped(1, 1), 1.0);  // untouched
  for (double v : clipped.row(2)) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(ClipPerExample, PostClipNormBoundHoldsOnRandomRows) {
  RngStream rng(3);
  Matrix grads = random_matrix(rng, 50, 20, -5.0, 5.0);
  const double C = 1.3;
  const Matrix clipped = clip_per_example(grads, C);
  for (std::size_t i = 0; i < clipped.rows; ++i)
    EXPECT_LE(l2_norm(clipped.row(i)), C + 1e-12);
}

TEST(ClipPerExample, RejectsNonFiniteRowsAndBadNorm) {
  Matrix grads(1, 2);
  grads(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(clip_per_example(grads, 1.0), NumericError);
  Matrix ok(1, 2);
  EXPECT_THROW(clip_per_example(ok, 0.0), DomainError);
}

TEST(NoisyAggregate, NoiselessDegenerateIsExactMean) {
  Matrix rows(4, 3);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) rows(i, j) = static_cast<double>(i + j);
  RngStream rng(1);
  const std::vector<double> agg = noisy_aggregate(rows, 0.0, 1.0, rng);
  for (std::size_t j = 0; j < 3; ++j)
    EXPECT_DOUBLE_EQ(agg[j], (0.0 + 1 + 2 + 3) / 4.0 + static_cast<double>(j));
}

TEST(NoisyAggregate, FixedSeedIsDeterministic) {
  Matrix rows(2, 5);
  RngStream a(77), b(77);
  EXPECT_EQ(noisy_aggregate(rows, 1.5, 1.0, a), noisy_aggregate(rows, 1.5, 1.0, b));
}

TEST(NoisyAggregate, MonteCarloNoiseScale) {
  // Zero rows, L=1, C=1, sigma=2: output coordinate is N(0, 2^2).
  Matrix rows(1, 1);
  RngStream rng(123);
  const std::size_t draws = 100000;
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    const double v = noisy_aggregate(rows, 2.0, 1.0, rng)[0];
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / draws;
  const double stddev = std::sqrt(sum_sq / draws - mean * mean);
  EXPECT_NEAR(stddev, 2.0, 0.02);
}

TEST(DpTrain, DisabledDpMatchesPlainAdam) {
  const TinyProblem p = make_problem(12, 9);
  DenseSupervisedModel model(p.arch, p.features, p.labels);
  const ParameterVector start = init_params(p.arch, 17);

  DpTrainingConfig cfg;
  cfg.clip_norm = std::numeric_limits<double>::infinity();
  cfg.noise_multiplier = 0.0;
  cfg.batch_size = 12;  // full batch
  cfg.epochs = 25;
  cfg.seed = 5;
  auto [dp_params, log] = dp_train(model, start, cfg);

  // Plain Adam on the same mean gradient.
  ParameterVector params = start;
  AdamState state(params.size(), cfg.adam);
  std::vector<std::size_t> all(12);
  std::iota(all.begin(), all.end(), 0);
  RngStream unused(0);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    double loss = 0.0;
    Matrix grads = model.per_example_gradients(params, all, unused, &loss);
    std::vector<double> mean(params.size(), 0.0);
    for (std::size_t i = 0; i < grads.rows; ++i)
      for (std::size_t j = 0; j < grads.cols; ++j) mean[j] += grads(i, j);
    for (double& v : mean) v /= static_cast<double>(grads.rows);
    auto [next, st] = adam_step(std::move(state), std::move(params), mean);
    params = std::move(next);
    state = std::move(st);
  }

  ASSERT_EQ(dp_params.size(), params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    EXPECT_NEAR(dp_params[i], params[i], 1e-12);
}

TEST(DpTrain, StepBookkeeping) {
  const TinyProblem p = make_problem(10, 2);
  DenseSupervisedModel model(p.arch, p.features, p.labels);
  DpTrainingConfig cfg;
  cfg.batch_size = 4;
  cfg.epochs = 3;
  cfg.noise_multiplier = 0.7;
  auto [params, log] = dp_train(model, init_params(p.arch, 1), cfg);
  EXPECT_EQ(log.steps_taken, 3u * 3u);  // ceil(10/4) = 3 steps per epoch
  EXPECT_DOUBLE_EQ(log.sampling_rate, 0.4);
  EXPECT_EQ(log.mechanism.steps, log.steps_taken);
  EXPECT_DOUBLE_EQ(log.mechanism.sampling_rate, log.sampling_rate);
  EXPECT_DOUBLE_EQ(log.mechanism.noise_multiplier, 0.7);
}

TEST(DpTrain, ReproducibleAndSeedSensitive) {
  const TinyProblem p = make_problem(14, 4);
  DenseSupervisedModel model(p.arch, p.features, p.labels);
  DpTrainingConfig cfg;
  cfg.batch_size = 5;
  cfg.epochs = 4;
  cfg.noise_multiplier = 1.1;
  cfg.seed = 42;
  const ParameterVector start = init_params(p.arch, 3);
  auto [a, la] = dp_train(model, start, cfg);
  auto [b, lb] = dp_train(model, start, cfg);
  EXPECT_EQ(a, b);
  cfg.seed = 43;
  auto [c, lc] = dp_train(model, start, cfg);
  EXPECT_NE(a, c);
}

TEST(DpTrain, LogFeedsAccountantConsistently) {
  const TinyProblem p = make_problem(200, 6);
  DenseSupervisedModel model(p.arch, p.features, p.labels);
  DpTrainingConfig cfg;
  cfg.batch_size = 32;
  cfg.epochs = 10;
  const std::size_t steps = cfg.epochs * ((200 + 31) / 32);
  cfg.noise_multiplier = calibrate_sigma(1.5, 1e-5, 32.0 / 200.0, steps);
  cfg.seed = 11;
  auto [params, log] = dp_train(model, init_params(p.arch, 8), cfg);

  const PrivacyCertificate cert = make_certificate(log.mechanism, 200);
  EXPECT_LE(cert.epsilon, 1.5);
  EXPECT_TRUE(certificate_consistent(cert));
}

TEST(DpTrain, EmptyDatasetIsDataError) {
  Matrix empty(0, 3);
  std::vector<int> labels;
  const NetworkArch arch{{{3, 2, Activation::Softmax, 0.2}}};
  DenseSupervisedModel model(arch, empty, labels);
  DpTrainingConfig cfg;
  EXPECT_THROW(dp_train(model, init_params(arch, 1), cfg), DataError);
}
