#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace adabatch {

using Index = std::uint32_t;

struct SparseEntry {
  Index index;
  double value;

  friend bool operator==(const SparseEntry&, const SparseEntry&) = default;
};

/// Sorted (index, value) pairs over a fixed dimension. Stored indices are
/// strictly increasing and no stored value is exactly zero, so the stored
/// indices are the support of the vector.
class SparseVector {
 public:
  SparseVector() = default;
  explicit SparseVector(std::size_t dim) : dim_(dim) {}

  /// Validates ordering and bounds; drops entries whose value is exactly 0.
  /// Throws PreconditionError on unsorted, duplicate or out-of-range indices.
  SparseVector(std::vector<SparseEntry> entries, std::size_t dim);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t nnz() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  std::span<const SparseEntry> entries() const noexcept { return entries_; }
  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

  /// Value at coordinate k (0 outside the support).
  double at(Index k) const;

  double dot(std::span<const double> dense) const;
  double squared_norm() const;

  SparseVector scaled(double factor) const;

  friend bool operator==(const SparseVector&, const SparseVector&) = default;

 private:
  std::vector<SparseEntry> entries_;
  std::size_t dim_ = 0;
};

struct Example {
  SparseVector features;
  double label = 0.0;
};

/// Empirical per-coordinate activity probabilities p(k) = P(k in Supp(x)).
/// pmin is taken over coordinates with p(k) > 0 only; both extrema are 0 when
/// no coordinate is ever active.
class FeatureStats {
 public:
  FeatureStats() = default;
  explicit FeatureStats(std::vector<double> p);

  std::size_t dim() const noexcept { return p_.size(); }
  std::span<const double> p() const noexcept { return p_; }
  double p(Index k) const { return p_[k]; }
  double pmin() const noexcept { return pmin_; }
  double pmax() const noexcept { return pmax_; }
  double sum() const noexcept { return sum_; }

 private:
  std::vector<double> p_;
  double pmin_ = 0.0;
  double pmax_ = 0.0;
  double sum_ = 0.0;
};

class Dataset {
 public:
  Dataset() = default;
  /// Every example must have features.dim() == dim.
  Dataset(std::vector<Example> examples, std::size_t dim);

  std::size_t size() const noexcept { return examples_.size(); }
  bool empty() const noexcept { return examples_.empty(); }
  std::size_t dim() const noexcept { return dim_; }

  std::span<const Example> examples() const noexcept { return examples_; }
  const Example& operator[](std::size_t i) const { return examples_[i]; }

  const std::optional<FeatureStats>& stats() const noexcept { return stats_; }
  void attach_stats(FeatureStats stats);

  /// Examples at the given positions, in order. Stats are not carried over.
  Dataset subset(std::span<const std::size_t> positions) const;

 private:
  std::vector<Example> examples_;
  std::size_t dim_ = 0;
  std::optional<FeatureStats> stats_;
};

/// Reads `label idx:val ...` lines with 1-based indices. Blank lines and
/// `#` comments are skipped. dim = max(max index seen, expected_dim).
Dataset parse_libsvm(std::istream& in, std::optional<std::size_t> expected_dim = std::nullopt);
Dataset load_libsvm(const std::string& path, std::optional<std::size_t> expected_dim = std::nullopt);

/// Writes shortest round-trip representations, so parse(write(d)) == d.
void write_libsvm(std::ostream& out, const Dataset& data);

FeatureStats estimate_feature_probabilities(const Dataset& data);

Dataset normalize_rows(const Dataset& data);

/// Seeded shuffle, then the first round(test_fraction * n) examples become the test set.
std::pair<Dataset, Dataset> train_test_split(const Dataset& data, double test_fraction,
                                             std::uint64_t seed);

enum class ProbabilityLaw { uniform_range, power_law };
enum class TaskKind { logistic, squared };

struct SyntheticSpec {
  std::size_t dim = 100;
  std::size_t examples = 1000;
  ProbabilityLaw law = ProbabilityLaw::uniform_range;
  // uniform_range: p(k) evenly spaced over [p_low, p_high].
  // power_law: p(k) = p_high * (k + 1)^(-exponent), floored at p_low.
  double p_low = 0.01;
  double p_high = 0.5;
  double exponent = 1.0;
  /// Squared task: std-dev of Gaussian label noise. Logistic task: label flip probability.
  double noise = 0.0;
  std::uint64_t seed = 0;
  TaskKind task = TaskKind::squared;
};

struct SyntheticData {
  Dataset data;
  std::vector<double> true_weights;
  std::vector<double> target_p;
};

/// Independent Bernoulli(p(k)) binary features; labels from a planted N(0,1)
/// weight vector. Deterministic given the seed.
SyntheticData gen_synthetic(const SyntheticSpec& spec);

std::vector<double> target_probabilities(const SyntheticSpec& spec);

}  // namespace adabatch
