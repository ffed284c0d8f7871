#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "adabatch/error.hpp"
#include "adabatch/sgd.hpp"
#include "support/oracles.hpp"

using namespace adabatch;

namespace {

Dataset small_squared(std::uint64_t seed, std::size_t n = 500, std::size_t dim = 20) {
  SyntheticSpec spec;
  spec.dim = dim;
  spec.examples = n;
  spec.p_low = 0.05;
  spec.p_high = 0.5;
  spec.noise = 0.1;
  spec.seed = seed;
  return gen_synthetic(spec).data;
}

}  // namespace

TEST(SgdStep, ZeroStepLeavesWeights) {
  auto d = small_squared(1);
  auto stats = estimate_feature_probabilities(d);
  for (auto rule : {MergeRule::minibatch, MergeRule::adabatch, MergeRule::cbp, MergeRule::inv_p}) {
    SgdConfig cfg;
    cfg.gamma = 0.0;
    cfg.batch = 4;
    cfg.rule = rule;
    cfg.reg = {0.5, L2Metric::diag_p};
    auto s = TrainState::zeros(d.dim());
    for (auto& v : s.w) v = 0.3;
    const auto before = s.w;
    std::vector<std::size_t> batch{0, 1, 2, 3};
    sgd_step(s, d, batch, cfg, LossKind::squared, stats);
    EXPECT_EQ(s.w, before);
    EXPECT_EQ(s.samples_seen, 4u);
  }
}

TEST(SgdStep, BatchOneRulesCoincide) {
  auto d = small_squared(2);
  auto stats = estimate_feature_probabilities(d);
  for (std::size_t i = 0; i < 20; ++i) {
    std::vector<double> out[3];
    int r = 0;
    for (auto rule : {MergeRule::minibatch, MergeRule::adabatch, MergeRule::cbp}) {
      SgdConfig cfg;
      cfg.gamma = 0.2;
      cfg.rule = rule;
      auto s = TrainState::zeros(d.dim());
      for (std::size_t k = 0; k < d.dim(); ++k) s.w[k] = 0.1 * static_cast<double>(k);
      std::vector<std::size_t> batch{i};
      sgd_step(s, d, batch, cfg, LossKind::squared, stats);
      out[r++] = s.w;
    }
    EXPECT_EQ(out[0], out[1]);
    EXPECT_EQ(out[0], out[2]);
  }
}

// x = e_k, y = 0, squared loss, B = 1: w(k) <- (1 - gamma) w(k).
TEST(SgdStep, SingleCoordinateContracts) {
  Dataset d({{SparseVector({{1, 1.0}}, 3), 0.0}}, 3);
  auto stats = estimate_feature_probabilities(d);
  SgdConfig cfg;
  cfg.gamma = 0.5;
  auto s = TrainState::zeros(3);
  s.w = {2.0, 1.0, -3.0};
  std::vector<std::size_t> batch{0};
  for (int t = 0; t < 60; ++t) sgd_step(s, d, batch, cfg, LossKind::squared, stats);
  EXPECT_NEAR(s.w[1], std::pow(0.5, 60), 1e-30);
  EXPECT_EQ(s.w[0], 2.0);
  EXPECT_EQ(s.w[2], -3.0);
}

TEST(SgdStep, UpdateTouchesOnlyBatchSupport) {
  auto d = small_squared(3);
  auto stats = estimate_feature_probabilities(d);
  std::mt19937_64 rng(1);
  for (auto rule : {MergeRule::minibatch, MergeRule::adabatch, MergeRule::cbp, MergeRule::inv_p}) {
    SgdConfig cfg;
    cfg.gamma = 0.1;
    cfg.batch = 3;
    cfg.rule = rule;
    auto s = TrainState::zeros(d.dim());
    for (auto& v : s.w) v = std::normal_distribution<double>()(rng);
    const auto before = s.w;
    std::vector<std::size_t> batch{5, 17, 40};
    std::set<Index> support;
    for (auto i : batch) {
      for (const auto& e : d[i].features) support.insert(e.index);
    }
    sgd_step(s, d, batch, cfg, LossKind::squared, stats);
    for (std::size_t k = 0; k < d.dim(); ++k) {
      if (!support.count(static_cast<Index>(k))) EXPECT_EQ(s.w[k], before[k]);
    }
  }
}

// Hand-computed step on a two-example batch against the oracle gradients.
TEST(SgdStep, MatchesOracleMerge) {
  auto d = small_squared(4, 50, 8);
  auto stats = estimate_feature_probabilities(d);
  std::vector<double> w(8);
  for (std::size_t k = 0; k < 8; ++k) w[k] = 0.2 * static_cast<double>(k) - 0.5;
  auto grads = oracle::dense_example_gradients(d, false, w);
  std::vector<std::size_t> batch{3, 9};
  for (auto rule : {MergeRule::minibatch, MergeRule::adabatch}) {
    SgdConfig cfg;
    cfg.gamma = 0.3;
    cfg.batch = 2;
    cfg.rule = rule;
    auto s = TrainState::zeros(8);
    s.w = w;
    sgd_step(s, d, batch, cfg, LossKind::squared, stats);
    for (std::size_t k = 0; k < 8; ++k) {
      double sum = 0.0;
      int count = 0;
      for (auto i : batch) {
        if (d[i].features.at(static_cast<Index>(k)) != 0.0) ++count;
        sum += grads[i][k];
      }
      const double g = rule == MergeRule::minibatch ? sum / 2.0 : (count ? sum / count : 0.0);
      EXPECT_NEAR(s.w[k], w[k] - 0.3 * g, 1e-14);
    }
  }
}

TEST(SgdStep, AdabatchStepBoundedByLargestMemberStep) {
  auto d = small_squared(5);
  auto stats = estimate_feature_probabilities(d);
  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> w(d.dim());
    for (auto& v : w) v = std::normal_distribution<double>()(rng);
    auto grads = oracle::dense_example_gradients(d, false, w);
    std::vector<std::size_t> batch(10);
    for (auto& i : batch) i = rng() % d.size();
    SgdConfig cfg;
    cfg.gamma = 0.1;
    cfg.batch = 10;
    cfg.rule = MergeRule::adabatch;
    auto s = TrainState::zeros(d.dim());
    s.w = w;
    sgd_step(s, d, batch, cfg, LossKind::squared, stats);
    for (std::size_t k = 0; k < d.dim(); ++k) {
      double biggest = 0.0;
      for (auto i : batch) biggest = std::max(biggest, std::abs(grads[i][k]));
      EXPECT_LE(std::abs(s.w[k] - w[k]), 0.1 * biggest + 1e-12);
    }
  }
}

TEST(SgdStep, RejectsWrongBatchSize) {
  auto d = small_squared(6);
  auto stats = estimate_feature_probabilities(d);
  SgdConfig cfg;
  cfg.batch = 3;
  auto s = TrainState::zeros(d.dim());
  std::vector<std::size_t> batch{0, 1};
  EXPECT_THROW(sgd_step(s, d, batch, cfg, LossKind::squared, stats), PreconditionError);
}

TEST(Adagrad, FirstStepIsSignTimesAlpha) {
  Dataset d({{SparseVector({{0, 1.0}, {1, 2.0}}, 2), 1.0}}, 2);
  auto s = TrainState::zeros(2);
  std::vector<std::size_t> batch{0};
  adagrad_step(s, d, batch, {0.5, 0.0, true}, LossKind::squared);
  // gradient (-1, -2): each coordinate moves by alpha in the descent direction
  EXPECT_DOUBLE_EQ(s.w[0], 0.5);
  EXPECT_DOUBLE_EQ(s.w[1], 0.5);
  EXPECT_DOUBLE_EQ(s.adagrad_accum[0], 1.0);
  EXPECT_DOUBLE_EQ(s.adagrad_accum[1], 4.0);
}

TEST(Adagrad, ZeroDenominatorSkipsUpdate) {
  Dataset d({{SparseVector({{0, 1.0}}, 1), 1.0}}, 1);
  auto s = TrainState::zeros(1);
  std::vector<std::size_t> batch{0};
  adagrad_step(s, d, batch, {1.0, 0.0, false}, LossKind::squared);
  EXPECT_EQ(s.w[0], 0.0);
  EXPECT_EQ(s.adagrad_accum[0], 1.0);
  adagrad_step(s, d, batch, {1.0, 0.0, false}, LossKind::squared);
  EXPECT_DOUBLE_EQ(s.w[0], 1.0);
  EXPECT_THROW(adagrad_step(s, d, batch, {0.0, 0.0, true}, LossKind::squared), PreconditionError);
}

TEST(Train, BudgetEqualToBatchRunsOneIteration) {
  auto d = small_squared(7);
  auto stats = estimate_feature_probabilities(d);
  SgdConfig cfg;
  cfg.batch = 8;
  cfg.sample_budget = 8;
  auto m = train(d, cfg, LossKind::squared, stats);
  EXPECT_EQ(m.samples_processed, 8u);
  ASSERT_EQ(m.checkpoints.size(), 2u);
  EXPECT_EQ(m.checkpoints[0].samples, 0u);
  EXPECT_EQ(m.checkpoints[1].samples, 8u);
  cfg.sample_budget = 7;
  EXPECT_THROW(train(d, cfg, LossKind::squared, stats), PreconditionError);
  cfg.sample_budget = 8;
  cfg.gamma = 0.0;
  EXPECT_THROW(train(d, cfg, LossKind::squared, stats), PreconditionError);
}

TEST(Train, SameSeedSameResult) {
  auto d = small_squared(8);
  auto stats = estimate_feature_probabilities(d);
  for (auto sampling : {Sampling::iid, Sampling::shuffled_epochs}) {
    SgdConfig cfg;
    cfg.batch = 5;
    cfg.rule = MergeRule::adabatch;
    cfg.sample_budget = 2000;
    cfg.seed = 42;
    cfg.sampling = sampling;
    auto a = train(d, cfg, LossKind::squared, stats);
    auto b = train(d, cfg, LossKind::squared, stats);
    EXPECT_EQ(a.final_weights, b.final_weights);
    ASSERT_EQ(a.checkpoints.size(), b.checkpoints.size());
    for (std::size_t i = 0; i < a.checkpoints.size(); ++i) {
      EXPECT_EQ(a.checkpoints[i].objective, b.checkpoints[i].objective);
    }
    cfg.seed = 43;
    EXPECT_NE(train(d, cfg, LossKind::squared, stats).final_weights, a.final_weights);
  }
}

TEST(Train, CheckpointsAreGeometric) {
  auto d = small_squared(9);
  auto stats = estimate_feature_probabilities(d);
  SgdConfig cfg;
  cfg.batch = 4;
  cfg.sample_budget = 100;
  auto m = train(d, cfg, LossKind::squared, stats);
  std::vector<std::size_t> samples;
  for (const auto& c : m.checkpoints) samples.push_back(c.samples);
  EXPECT_EQ(samples, (std::vector<std::size_t>{0, 4, 8, 16, 32, 64, 100}));
}

TEST(Train, ShuffledEpochsVisitEveryExampleOncePerPass) {
  BatchSampler s(37, Sampling::shuffled_epochs, 5);
  for (int pass = 0; pass < 3; ++pass) {
    std::set<std::size_t> seen;
    for (int i = 0; i < 37; ++i) seen.insert(s.draw());
    EXPECT_EQ(seen.size(), 37u);
  }
}

TEST(Train, SeparableLogisticObjectiveDecreases) {
  std::vector<Example> ex;
  for (int i = 0; i < 200; ++i) {
    const Index k = static_cast<Index>(i % 4);
    ex.push_back({SparseVector({{k, 1.0}}, 4), k % 2 ? 1.0 : -1.0});
  }
  Dataset d(std::move(ex), 4);
  auto stats = estimate_feature_probabilities(d);
  SgdConfig cfg;
  cfg.gamma = 1.0;
  cfg.batch = 4;
  cfg.sample_budget = 4000;
  cfg.rule = MergeRule::adabatch;
  auto m = train(d, cfg, LossKind::logistic, stats);
  EXPECT_LT(m.final_checkpoint().objective, 0.1 * std::log(2.0));
  EXPECT_EQ(prediction_error(LossKind::logistic, d, m.final_weights), 0.0);
}

TEST(Train, DivergenceCarriesPartialMetrics) {
  auto d = normalize_rows(small_squared(10));
  auto stats = estimate_feature_probabilities(d);
  SgdConfig cfg;
  cfg.gamma = 1e3;
  cfg.batch = 1;
  cfg.sample_budget = 100000;
  try {
    train(d, cfg, LossKind::squared, stats);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_TRUE(e.partial().diverged);
    EXPECT_GE(e.partial().checkpoints.size(), 1u);
    EXPECT_GT(e.iteration(), 0u);
  }
}

TEST(Train, RegularizedObjectiveIsReported) {
  auto d = small_squared(11);
  auto stats = estimate_feature_probabilities(d);
  SgdConfig cfg;
  cfg.sample_budget = 500;
  cfg.reg = {0.2, L2Metric::diag_p};
  auto m = train(d, cfg, LossKind::squared, stats);
  EXPECT_NEAR(m.final_checkpoint().objective,
              full_objective(LossKind::squared, d, m.final_weights, cfg.reg, &stats), 1e-12);
}

TEST(StepBounds, TableRows) {
  FeatureStats stats({0.1, 0.5, 0.25});
  CurvatureConstants c;
  c.L = 2.0;
  c.R2 = 1.0;
  EXPECT_DOUBLE_EQ(max_stable_step(MergeRule::minibatch, c, stats, 4), 1.0 / (2.0 * 0.5 + 0.5));
  EXPECT_DOUBLE_EQ(max_stable_step(MergeRule::adabatch, c, stats, 4), 0.25);
  EXPECT_DOUBLE_EQ(max_stable_step(MergeRule::cbp, c, stats, 4), 0.25);
  EXPECT_DOUBLE_EQ(max_stable_step(MergeRule::inv_p, c, stats, 4), 1.0 / (2.0 + 2.0 / 0.4));
  EXPECT_DOUBLE_EQ(max_stable_step_dense(c, 1), 0.5);
  EXPECT_DOUBLE_EQ(max_stable_step_dense(c, 4), 1.0 / (1.5 + 0.5));
  EXPECT_THROW(max_stable_step(MergeRule::minibatch, c, stats, 0), PreconditionError);
}

// Same variance term on both sides, so the sparse bound is the larger one
// exactly when pmax <= 1 - 1/B.
TEST(StepBounds, SparseVersusDenseCrossover) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int t = 0; t < 100; ++t) {
    FeatureStats stats({u(rng), u(rng), u(rng)});
    CurvatureConstants c;
    c.L = 5 * u(rng);
    c.R2 = 5 * u(rng);
    for (std::size_t b : {1, 2, 10, 1000}) {
      const bool sparse_wins = stats.pmax() <= 1.0 - 1.0 / static_cast<double>(b);
      EXPECT_EQ(max_stable_step(MergeRule::minibatch, c, stats, b) >= max_stable_step_dense(c, b), sparse_wins);
    }
  }
}

TEST(Averaging, Examples) {
  std::vector<std::vector<double>> it{{1.0}, {2.0}, {3.0}};
  EXPECT_DOUBLE_EQ(geometric_average(it, 1.0)[0], 2.0);
  EXPECT_DOUBLE_EQ(geometric_average(it, 0.5)[0], (0.25 * 1 + 0.5 * 2 + 3) / 1.75);
  EXPECT_DOUBLE_EQ(averaged_iterate(it, 0.0, 1.0)[0], 2.0);
  std::vector<std::vector<double>> one{{4.0, -1.0}};
  EXPECT_EQ(averaged_iterate(one, 0.5, 0.3), one[0]);
  EXPECT_THROW(geometric_average({}, 0.5), PreconditionError);
  EXPECT_THROW(geometric_average(it, 0.0), PreconditionError);
}
