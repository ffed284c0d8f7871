#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "adabatch/aggregation.hpp"
#include "adabatch/losses.hpp"
#include "adabatch/metrics.hpp"
#include "adabatch/sgd.hpp"
#include "adabatch/sparse.hpp"

namespace adabatch {

/// Normalization of the variance-reduced batch sum: C(k) = B or C(k) = |D(k)|.
enum class SvrgRule { minibatch, adabatch };

struct SvrgConfig {
  double gamma = 0.1;
  std::size_t m = 1;  // inner iterations per epoch
  std::size_t batch = 1;
  SvrgRule rule = SvrgRule::minibatch;
  std::size_t outer_epochs = 1;
  std::uint64_t seed = 0;
  Sampling sampling = Sampling::iid;
  Regularization reg;
};

/// Snapshot y_s with F'(y_s) and F'(y_s)(k) / p(k). The scaled entry is NaN
/// for coordinates with p(k) = 0.
struct EpochAnchor {
  std::vector<double> y;
  std::vector<double> full_grad;
  std::vector<double> scaled_full_grad;
};

/// Exact mean gradient over the dataset plus the penalty gradient.
std::vector<double> full_gradient(const Dataset& data, LossKind loss, std::span<const double> w,
                                  const Regularization& reg = {},
                                  const FeatureStats* stats = nullptr);

EpochAnchor make_anchor(const Dataset& data, LossKind loss, std::vector<double> y,
                        const Regularization& reg, const FeatureStats& stats);

/// Running sum of the inner iterates, updated lazily per coordinate.
class IterateAverager {
 public:
  void begin(std::span<const double> w);
  /// Must be called before w(k) changes during inner iteration `iter` (1-based).
  void before_write(Index k, double current, std::size_t iter) {
    acc_[k] += current * static_cast<double>(iter - 1 - stamp_[k]);
    stamp_[k] = iter - 1;
  }
  /// Mean of w_1..w_m.
  std::vector<double> finish(std::span<const double> w, std::size_t m);

 private:
  std::vector<double> acc_;
  std::vector<std::size_t> stamp_;
};

class SvrgStepper {
 public:
  SvrgStepper(std::size_t dim, const SvrgConfig& cfg, const FeatureStats& stats);

  /// Variance-reduced update. The penalty enters each sampled function on its
  /// support with weight l2 * weight(k) / p(k), so the update stays sparse.
  void step(TrainState& state, const Dataset& data, std::span<const std::size_t> batch,
            const EpochAnchor& anchor, LossKind loss, IterateAverager* averager = nullptr);

 private:
  SvrgConfig cfg_;
  const FeatureStats& stats_;
  BatchGradient bg_;
  std::vector<double> reg_support_;  // l2 * support_weight(k), 0 where p(k) = 0
};

void svrg_step(TrainState& state, const Dataset& data, std::span<const std::size_t> batch,
               const EpochAnchor& anchor, const SvrgConfig& cfg, LossKind loss,
               const FeatureStats& stats);

/// Outer loop from y_0 = 0 with y_{s+1} the mean of the epoch's inner
/// iterates. One checkpoint per anchor; `samples` counts stochastic samples.
RunMetrics svrg_train(const Dataset& data, const SvrgConfig& cfg, LossKind loss,
                      const FeatureStats& stats, const EvalPlan& plan = {});

struct SvrgSchedule {
  double gamma = 0.0;
  std::size_t m = 1;
  double m_exact = 0.0;         // before the ceiling
  bool regime_warning = false;  // set when the closed form is outside its intended regime
};

/// gamma = 1/L, m = ceil(2 B L / (pmin mu (0.9 B - 4))). Requires B >= 5.
SvrgSchedule schedule_minibatch(const CurvatureConstants& consts, const FeatureStats& stats,
                                std::size_t batch);
/// gamma = 1/(10 L), m = ceil(20 L / (B pmin mu)). Warns when B pmin is not
/// small enough for 1 - (1 - pmin)^B ~ B pmin (ratio above 1.1).
SvrgSchedule schedule_adabatch(const CurvatureConstants& consts, const FeatureStats& stats,
                               std::size_t batch);

/// Theoretical per-epoch contraction factor alpha. The mini-batch form uses
/// pmin * mu as its strong-convexity constant.
double svrg_rate(const CurvatureConstants& consts, const FeatureStats& stats, double gamma,
                 std::size_t m, std::size_t batch, SvrgRule rule);

/// curvature_constants with the penalty folded in: mu = l2 when l2 > 0, else
/// mu_estimate (required); L gains l2 (diag_p) or l2 / pmin (identity).
CurvatureConstants svrg_constants(LossKind loss, const Dataset& data, const FeatureStats& stats,
                                  const Regularization& reg,
                                  std::optional<double> mu_estimate = std::nullopt);

struct ReferenceSolution {
  std::vector<double> w;
  double f_star = 0.0;
};

/// Squared loss: dense normal equations. Logistic: long small-step SVRG run.
ReferenceSolution solve_reference(LossKind loss, const Dataset& data, const Regularization& reg,
                                  const FeatureStats& stats, std::size_t logistic_epochs = 60);

}  // namespace adabatch
