#include "adabatch/losses.hpp"

#include <algorithm>
#include <cmath>

#include "adabatch/error.hpp"

namespace adabatch {

double loss_value(LossKind kind, double prediction, double label) {
  if (kind == LossKind::squared) {
    double r = prediction - label;
    return 0.5 * r * r;
  }
  double z = label * prediction;
  return z > 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

double loss_derivative(LossKind kind, double prediction, double label) {
  if (kind == LossKind::squared) return prediction - label;
  double z = label * prediction;
  if (z > 0.0) {
    double e = std::exp(-z);
    return -label * e / (1.0 + e);
  }
  return -label / (1.0 + std::exp(z));
}

double loss_curvature(LossKind kind, double prediction, double label) {
  if (kind == LossKind::squared) return 1.0;
  double e = std::exp(-std::abs(label * prediction));
  return e / ((1.0 + e) * (1.0 + e));
}

void validate_labels(LossKind kind, const Dataset& data) {
  if (kind != LossKind::logistic) return;
  for (const auto& ex : data.examples()) {
    if (ex.label != 1.0 && ex.label != -1.0) {
      throw PreconditionError("logistic loss requires labels in {-1, +1}");
    }
  }
}

double Regularization::weight(const FeatureStats* stats, Index k) const {
  if (metric == L2Metric::identity) return 1.0;
  if (stats == nullptr) throw PreconditionError("diag(p) penalty requires feature statistics");
  return stats->p(k);
}

double Regularization::support_weight(const FeatureStats& stats, Index k) const {
  double p = stats.p(k);
  if (p <= 0.0) throw StatsMismatchError("active coordinate with p(k) = 0");
  return metric == L2Metric::identity ? 1.0 / p : 1.0;
}

double penalty_value(const Regularization& reg, std::span<const double> w,
                     const FeatureStats* stats) {
  if (!reg.active()) return 0.0;
  if (reg.metric == L2Metric::diag_p && stats == nullptr) {
    throw PreconditionError("diag(p) penalty requires feature statistics");
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    double wt = reg.metric == L2Metric::identity ? 1.0 : stats->p(static_cast<Index>(k));
    acc += wt * w[k] * w[k];
  }
  return 0.5 * reg.l2 * acc;
}

double mean_loss(LossKind kind, const Dataset& data, std::span<const double> w) {
  if (data.empty()) throw PreconditionError("objective of an empty dataset");
  double acc = 0.0;
  for (const auto& ex : data.examples()) acc += loss_value(kind, ex.features.dot(w), ex.label);
  return acc / static_cast<double>(data.size());
}

double full_objective(LossKind kind, const Dataset& data, std::span<const double> w,
                      const Regularization& reg, const FeatureStats* stats) {
  if (reg.l2 < 0.0) throw PreconditionError("l2 strength must be >= 0");
  if (stats == nullptr && data.stats()) stats = &*data.stats();
  return mean_loss(kind, data, w) + penalty_value(reg, w, stats);
}

double prediction_error(LossKind kind, const Dataset& data, std::span<const double> w) {
  if (data.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& ex : data.examples()) {
    double pred = ex.features.dot(w);
    if (kind == LossKind::logistic) {
      acc += (pred >= 0.0 ? 1.0 : -1.0) != ex.label ? 1.0 : 0.0;
    } else {
      acc += (pred - ex.label) * (pred - ex.label);
    }
  }
  return acc / static_cast<double>(data.size());
}

double gradient_variance(LossKind kind, const Dataset& data, std::span<const double> w) {
  if (data.empty()) throw PreconditionError("gradient variance of an empty dataset");
  double acc = 0.0;
  for (const auto& ex : data.examples()) {
    double g = loss_derivative(kind, ex.features.dot(w), ex.label);
    acc += g * g * ex.features.squared_norm();
  }
  return acc / static_cast<double>(data.size());
}

CurvatureConstants curvature_constants(LossKind kind, const Dataset& data,
                                       const FeatureStats& stats, double logistic_m) {
  CurvatureConstants c;
  if (kind == LossKind::squared) {
    c.m = 1.0;
    c.M = 1.0;
  } else {
    c.M = 0.25;
    c.m = std::clamp(logistic_m, 0.0, c.M);
  }
  for (const auto& ex : data.examples()) c.G2 = std::max(c.G2, ex.features.squared_norm());
  c.mu = c.m * (1.0 - stats.pmax());
  c.L = c.M * (1.0 + stats.sum());
  c.R2 = c.G2 * c.M;
  return c;
}

}  // namespace adabatch
