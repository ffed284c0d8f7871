#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "adabatch/sparse.hpp"

namespace adabatch {

/// Per-coordinate partial sums of a batch's gradients together with the
/// number of batch members whose support contains each coordinate.
///
/// Storage is dense with a list of touched coordinates, so reset() costs
/// O(touched) and the accumulator can be reused across iterations.
class BatchGradient {
 public:
  BatchGradient() = default;
  BatchGradient(std::size_t dim, std::size_t batch_size);

  std::size_t dim() const noexcept { return sums_.size(); }
  std::size_t batch_size() const noexcept { return batch_size_; }

  void reset();

  /// sums(k) += grad(k) and counts(k) += 1 over grad's stored support.
  void accumulate(const SparseVector& grad);

  /// Adds the gradient scale * x. Counts the whole support of x, including
  /// coordinates where scale is 0: the support of the sampled function is the
  /// support of x, whatever the current derivative value.
  void accumulate_example(const SparseVector& x, double scale);

  /// One batch member contributes `value` to coordinate k.
  void add(Index k, double value) {
    if (counts_[k] == 0) touched_.push_back(k);
    sums_[k] += value;
    ++counts_[k];
  }

  /// Coordinates with counts >= 1, in first-touch order.
  std::span<const Index> touched() const noexcept { return touched_; }
  double sum(Index k) const { return sums_[k]; }
  std::uint32_t count(Index k) const { return counts_[k]; }

 private:
  std::vector<double> sums_;
  std::vector<std::uint32_t> counts_;
  std::vector<Index> touched_;
  std::size_t batch_size_ = 1;
};

enum class PreconditionRule { none, cbp, inv_p };

/// Deterministic diagonal rescaling. Coordinates with p(k) = 0 have no scale
/// (NaN) and are rejected by merge_reconditioned.
class Preconditioner {
 public:
  Preconditioner() = default;
  static Preconditioner cbp(const FeatureStats& stats, std::size_t batch_size);
  static Preconditioner inv_p(const FeatureStats& stats);

  PreconditionRule rule() const noexcept { return rule_; }
  std::span<const double> scale() const noexcept { return scale_; }
  double scale(Index k) const { return scale_[k]; }

 private:
  Preconditioner(PreconditionRule rule, std::vector<double> scale)
      : rule_(rule), scale_(std::move(scale)) {}

  PreconditionRule rule_ = PreconditionRule::none;
  std::vector<double> scale_;
};

/// (1 - (1 - p)^B) / p, evaluated as -expm1(B log1p(-p)) / p. Exactly 1 for
/// p = 1 or B = 1.
double cbp_scale(double p, std::size_t batch_size);

/// value(k) = sums(k) / B.
SparseVector merge_minibatch(const BatchGradient& bg);
/// value(k) = sums(k) / counts(k).
SparseVector merge_adabatch(const BatchGradient& bg);
/// value(k) = scale(k) * sums(k) / B.
SparseVector merge_reconditioned(const BatchGradient& bg, const Preconditioner& pre);

}  // namespace adabatch
