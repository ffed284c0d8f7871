#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "adabatch/aggregation.hpp"
#include "adabatch/losses.hpp"
#include "adabatch/metrics.hpp"
#include "adabatch/sparse.hpp"

namespace adabatch {

enum class MergeRule { minibatch, adabatch, cbp, inv_p };
enum class Sampling { iid, shuffled_epochs };

std::string to_string(MergeRule rule);

/// Adagrad with scale alpha and damping epsilon. include_current selects
/// whether the accumulator contains the current gradient before dividing.
struct AdagradConfig {
  double alpha = 1.0;
  double epsilon = 0.0;
  bool include_current = true;
};

struct SgdConfig {
  double gamma = 0.1;
  std::size_t batch = 1;
  MergeRule rule = MergeRule::minibatch;
  std::size_t sample_budget = 0;
  std::uint64_t seed = 0;
  Sampling sampling = Sampling::iid;
  Regularization reg;
  /// When set, the run uses Adagrad (alpha replaces gamma; rule is ignored).
  std::optional<AdagradConfig> adagrad;
};

struct TrainState {
  std::vector<double> w;
  std::size_t samples_seen = 0;
  std::size_t iter = 0;
  std::vector<double> adagrad_accum;

  static TrainState zeros(std::size_t dim) { return {std::vector<double>(dim, 0.0), 0, 0, {}}; }
};

/// Draws example positions, i.i.d. with replacement or in reshuffled passes.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, Sampling sampling, std::uint64_t seed);
  std::size_t draw();
  void next(std::size_t batch, std::vector<std::size_t>& out);

 private:
  std::size_t n_;
  Sampling sampling_;
  std::mt19937_64 rng_;
  std::uniform_int_distribution<std::size_t> pick_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

/// Holds the per-run scratch space and precomputed scalings for sgd_step.
class SgdStepper {
 public:
  SgdStepper(std::size_t dim, const SgdConfig& cfg, const FeatureStats& stats);

  /// One synchronous update: all gradients are taken at the pre-update w.
  /// Throws DivergenceError when an updated weight is not finite.
  void step(TrainState& state, const Dataset& data, std::span<const std::size_t> batch,
            LossKind loss);

 private:
  SparseVector merge() const;

  SgdConfig cfg_;
  const FeatureStats& stats_;
  BatchGradient bg_;
  Preconditioner pre_;
  std::vector<double> reg_coeff_;  // l2 * weight(k) * rule scale(k)
};

class AdagradStepper {
 public:
  AdagradStepper(std::size_t dim, std::size_t batch, const AdagradConfig& acfg,
                 const Regularization& reg, const FeatureStats& stats);
  void step(TrainState& state, const Dataset& data, std::span<const std::size_t> batch,
            LossKind loss);

 private:
  AdagradConfig acfg_;
  Regularization reg_;
  const FeatureStats& stats_;
  BatchGradient bg_;
  std::vector<double> g_;
};

void sgd_step(TrainState& state, const Dataset& data, std::span<const std::size_t> batch,
              const SgdConfig& cfg, LossKind loss, const FeatureStats& stats);

void adagrad_step(TrainState& state, const Dataset& data, std::span<const std::size_t> batch,
                  const AdagradConfig& acfg, LossKind loss, const Regularization& reg = {},
                  const FeatureStats* stats = nullptr);

/// Runs sample_budget / batch iterations from w = 0. Throws TrainingDiverged
/// with the partial metrics when the weights stop being finite.
RunMetrics train(const Dataset& data, const SgdConfig& cfg, LossKind loss,
                 const FeatureStats& stats, const EvalPlan& plan = {});

/// Largest step size allowed by the convergence table row of the rule:
///   minibatch  gamma [L pmax + 2 R^2 / B] <= 1
///   adabatch   gamma [L + 2 R^2] <= 1          (cbp shares this row)
///   inv_p      gamma [L + 2 R^2 / (pmin B)] <= 1
double max_stable_step(MergeRule rule, const CurvatureConstants& consts, const FeatureStats& stats,
                       std::size_t batch);

/// Dense-assumption mini-batch bound gamma [L (1 - 1/B) + 2 R^2 / B] <= 1.
double max_stable_step_dense(const CurvatureConstants& consts, std::size_t batch);

/// sum_n rho^(N-n) w_n / sum_n rho^(N-n) over the logged iterates w_1..w_N.
std::vector<double> geometric_average(std::span<const std::vector<double>> iterates, double rho);

/// Tail average with rho = 1 - gamma * mu_eff / 2 (mu_eff = mu or pmin^{+B} mu).
std::vector<double> averaged_iterate(std::span<const std::vector<double>> iterates, double gamma,
                                     double mu_eff);

}  // namespace adabatch
