#pragma once

#include <span>
#include <vector>

#include "adabatch/sparse.hpp"

namespace adabatch {

/// squared: 1/2 (x'w - y)^2.  logistic: log(1 + exp(-y x'w)), labels in {-1, +1}.
enum class LossKind { logistic, squared };

double loss_value(LossKind kind, double prediction, double label);
/// d/d(prediction) of the loss. The gradient in w is this scalar times x.
double loss_derivative(LossKind kind, double prediction, double label);
double loss_curvature(LossKind kind, double prediction, double label);

/// Throws PreconditionError when a logistic dataset has labels outside {-1, +1}.
void validate_labels(LossKind kind, const Dataset& data);

enum class L2Metric { identity, diag_p };

/// (l2 / 2) * ||w||^2 under the identity or the Diag(p) metric.
struct Regularization {
  double l2 = 0.0;
  L2Metric metric = L2Metric::identity;

  bool active() const noexcept { return l2 > 0.0; }
  /// Diagonal weight of the penalty for coordinate k: 1 or p(k).
  double weight(const FeatureStats* stats, Index k) const;
  /// Per-sample share of the penalty curvature restricted to the example's
  /// support: weight(k) / p(k). Its expectation over samples is weight(k).
  double support_weight(const FeatureStats& stats, Index k) const;
};

double penalty_value(const Regularization& reg, std::span<const double> w,
                     const FeatureStats* stats);

/// Mean loss plus penalty. diag_p needs stats (falls back to data.stats()).
double full_objective(LossKind kind, const Dataset& data, std::span<const double> w,
                      const Regularization& reg = {}, const FeatureStats* stats = nullptr);

/// Mean unpenalized loss.
double mean_loss(LossKind kind, const Dataset& data, std::span<const double> w);

/// 0/1 misclassification rate for logistic, mean squared error for squared.
double prediction_error(LossKind kind, const Dataset& data, std::span<const double> w);

/// Mean squared norm of per-example loss gradients at w (sigma^2 at w_*).
double gradient_variance(LossKind kind, const Dataset& data, std::span<const double> w);

struct CurvatureConstants {
  double m = 0.0;   // lower bound on the loss curvature
  double M = 0.0;   // upper bound on the loss curvature
  double G2 = 0.0;  // max squared row norm
  double mu = 0.0;  // m (1 - pmax)
  double L = 0.0;   // M (1 + sum_k p(k))
  double R2 = 0.0;  // G2 M
};

/// Sparse-linear-prediction constants. For logistic, m is not derivable and is
/// taken from logistic_m (0 by default).
CurvatureConstants curvature_constants(LossKind kind, const Dataset& data,
                                       const FeatureStats& stats, double logistic_m = 0.0);

}  // namespace adabatch
