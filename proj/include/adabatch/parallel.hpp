#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adabatch/losses.hpp"
#include "adabatch/metrics.hpp"
#include "adabatch/sparse.hpp"

namespace adabatch {

/// wild_minibatch is Wild AdaBatch with a unit scale in place of C_{B,p}.
enum class ParallelRule { wild_adabatch, wild_minibatch, hogwild };

std::string to_string(ParallelRule rule);

struct ParallelConfig {
  std::size_t workers = 1;
  std::size_t batch = 1;  // ignored by hogwild
  double gamma = 0.1;
  ParallelRule rule = ParallelRule::wild_adabatch;
  std::size_t sample_budget = 0;
  std::uint64_t seed = 0;
  Regularization reg;
  /// Plain load/store instead of fetch-add; concurrent updates may be lost.
  bool racy_writes = false;
  /// Best-effort CPU affinity for worker threads.
  bool pin_threads = false;
};

/// Returns a message when the configuration is legal but ill-advised.
std::optional<std::string> parallel_config_warning(const ParallelConfig& cfg);

/// Dense weight vector with word-level atomic access per coordinate.
class SharedModel {
 public:
  explicit SharedModel(std::size_t dim);

  std::size_t dim() const noexcept { return dim_; }
  double load(Index k) const noexcept { return w_[k].load(std::memory_order_relaxed); }
  void store(Index k, double v) noexcept { w_[k].store(v, std::memory_order_relaxed); }
  void add(Index k, double delta) noexcept { w_[k].fetch_add(delta, std::memory_order_relaxed); }
  void add_racy(Index k, double delta) noexcept { store(k, load(k) + delta); }

  /// x . w with relaxed per-coordinate reads.
  double dot(const SparseVector& x) const noexcept;
  std::vector<double> snapshot() const;

 private:
  std::size_t dim_;
  std::unique_ptr<std::atomic<double>[]> w_;
};

/// Batch-synchronous parallel SGD: gradients at a fixed w, barrier, apply
/// per-example scaled updates, barrier. The batch is drawn from the same
/// sampler as the sequential engine, so W does not change its content.
RunMetrics wild_train(const Dataset& data, const ParallelConfig& cfg, LossKind loss,
                      const FeatureStats& stats, const EvalPlan& plan = {});

/// Fully asynchronous SGD (B = 1). Workers stop once a shared sample
/// counter reaches the budget; its final value is recorded in the config
/// snapshot under "sample_counter".
RunMetrics hogwild_train(const Dataset& data, const ParallelConfig& cfg, LossKind loss,
                         const FeatureStats& stats, const EvalPlan& plan = {});

struct ThroughputRow {
  std::string method;
  std::size_t workers = 1;
  double samples_per_second = 0.0;
  std::optional<double> time_to_target;  // nullopt when never reached
};

/// One row per run. Time to target is the training time at the first
/// checkpoint whose test error is at or below target_error.
std::vector<ThroughputRow> throughput_report(std::span<const RunMetrics> runs,
                                             std::optional<double> target_error = std::nullopt);

/// `method,workers,samples_per_second,time_to_target` with `unreached` for misses.
void write_throughput_csv(std::ostream& out, std::span<const ThroughputRow> rows);

}  // namespace adabatch
