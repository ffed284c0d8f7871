#include "adabatch/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "adabatch/error.hpp"

namespace adabatch {

BatchGradient::BatchGradient(std::size_t dim, std::size_t batch_size)
    : sums_(dim, 0.0), counts_(dim, 0), batch_size_(batch_size) {
  if (batch_size == 0) throw PreconditionError("batch size must be >= 1");
}

void BatchGradient::reset() {
  for (Index k : touched_) {
    sums_[k] = 0.0;
    counts_[k] = 0;
  }
  touched_.clear();
}

void BatchGradient::accumulate(const SparseVector& grad) {
  for (const auto& e : grad) add(e.index, e.value);
}

void BatchGradient::accumulate_example(const SparseVector& x, double scale) {
  for (const auto& e : x) add(e.index, scale * e.value);
}

double cbp_scale(double p, std::size_t batch_size) {
  if (!(p > 0.0) || p > 1.0) throw PreconditionError("cbp_scale needs p in (0, 1]");
  if (batch_size == 0) throw PreconditionError("cbp_scale needs B >= 1");
  if (p == 1.0 || batch_size == 1) return 1.0;
  return -std::expm1(static_cast<double>(batch_size) * std::log1p(-p)) / p;
}

Preconditioner Preconditioner::cbp(const FeatureStats& stats, std::size_t batch_size) {
  std::vector<double> scale(stats.dim(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < scale.size(); ++k) {
    double p = stats.p(static_cast<Index>(k));
    if (p > 0.0) scale[k] = cbp_scale(p, batch_size);
  }
  return {PreconditionRule::cbp, std::move(scale)};
}

Preconditioner Preconditioner::inv_p(const FeatureStats& stats) {
  std::vector<double> scale(stats.dim(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < scale.size(); ++k) {
    double p = stats.p(static_cast<Index>(k));
    if (p > 0.0) scale[k] = 1.0 / p;
  }
  return {PreconditionRule::inv_p, std::move(scale)};
}

namespace {

template <class ValueFn>
SparseVector merge_with(const BatchGradient& bg, ValueFn value) {
  std::vector<Index> order(bg.touched().begin(), bg.touched().end());
  std::sort(order.begin(), order.end());
  std::vector<SparseEntry> out;
  out.reserve(order.size());
  for (Index k : order) out.push_back({k, value(k)});
  return SparseVector(std::move(out), bg.dim());
}

}  // namespace

SparseVector merge_minibatch(const BatchGradient& bg) {
  const auto b = static_cast<double>(bg.batch_size());
  return merge_with(bg, [&](Index k) { return bg.sum(k) / b; });
}

SparseVector merge_adabatch(const BatchGradient& bg) {
  return merge_with(bg, [&](Index k) { return bg.sum(k) / static_cast<double>(bg.count(k)); });
}

SparseVector merge_reconditioned(const BatchGradient& bg, const Preconditioner& pre) {
  if (pre.rule() == PreconditionRule::none) {
    throw PreconditionError("merge_reconditioned needs a cbp or inv-p preconditioner");
  }
  const auto b = static_cast<double>(bg.batch_size());
  return merge_with(bg, [&](Index k) {
    if (k >= pre.scale().size() || std::isnan(pre.scale(k))) {
      throw StatsMismatchError("no preconditioner scale for active coordinate " + std::to_string(k));
    }
    return pre.scale(k) * (bg.sum(k) / b);
  });
}

}  // namespace adabatch
