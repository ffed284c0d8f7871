#pragma once

#include <chrono>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adabatch/error.hpp"
#include "adabatch/losses.hpp"
#include "adabatch/sparse.hpp"

namespace adabatch {

struct Checkpoint {
  std::size_t samples = 0;
  double seconds = 0.0;  // training wall-clock, evaluation excluded
  double objective = 0.0;
  double test_error = 0.0;  // NaN without a test set
  double test_loss = 0.0;   // NaN without a test set
  double gap = 0.0;         // objective - F_*, NaN when F_* is unknown
};

struct RunMetrics {
  std::string method;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<Checkpoint> checkpoints;
  std::optional<double> sigma2;
  std::size_t samples_processed = 0;
  std::size_t workers = 1;
  std::size_t batch = 1;
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
  bool diverged = false;
  std::vector<double> final_weights;

  const Checkpoint& final_checkpoint() const { return checkpoints.back(); }
  double samples_per_second() const;
};

/// Divergence raised by a driver, carrying the metrics recorded so far.
class TrainingDiverged : public DivergenceError {
 public:
  TrainingDiverged(std::size_t iteration, RunMetrics partial)
      : DivergenceError(iteration), partial_(std::move(partial)) {}
  const RunMetrics& partial() const noexcept { return partial_; }

 private:
  RunMetrics partial_;
};

/// What to measure at each checkpoint.
struct EvalPlan {
  const Dataset* test = nullptr;
  std::optional<double> f_star;
  /// When set, sigma^2 (mean squared per-example gradient norm) is computed here.
  const std::vector<double>* reference_weights = nullptr;
};

/// Checkpoints at 0, then B * 2^j samples, then the final sample count.
class CheckpointSchedule {
 public:
  CheckpointSchedule(std::size_t batch, std::size_t budget);
  /// True when `samples` crosses the next target; advances past it.
  bool due(std::size_t samples);

 private:
  std::size_t next_;
  std::size_t budget_;
};

class Evaluator {
 public:
  Evaluator(LossKind loss, const Dataset& train, const Regularization& reg,
            const FeatureStats& stats, const EvalPlan& plan);

  /// Evaluates w, appends a checkpoint and books the evaluation time.
  void record(RunMetrics& metrics, std::span<const double> w, std::size_t samples,
              double train_seconds) const;

 private:
  LossKind loss_;
  const Dataset& train_;
  Regularization reg_;
  const FeatureStats& stats_;
  EvalPlan plan_;
};

/// Accumulating wall-clock timer.
class Stopwatch {
 public:
  void start() { begin_ = std::chrono::steady_clock::now(); }
  void stop() {
    total_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - begin_).count();
  }
  double seconds() const noexcept { return total_; }

 private:
  std::chrono::steady_clock::time_point begin_{};
  double total_ = 0.0;
};

bool all_finite(std::span<const double> w);

/// `samples,seconds,objective,test_error` with one row per checkpoint.
void write_metrics_csv(std::ostream& out, const RunMetrics& metrics);
std::vector<Checkpoint> read_metrics_csv(std::istream& in);

/// Full metrics including config snapshot, test loss and gap.
std::string metrics_to_json(const RunMetrics& metrics);

}  // namespace adabatch
