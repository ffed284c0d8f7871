#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "adabatch/error.hpp"
#include "adabatch/losses.hpp"
#include "adabatch/metrics.hpp"
#include "adabatch/sparse.hpp"

namespace adabatch {

/// Conflicting or malformed command-line options (exit status 1).
class UsageError : public Error {
 public:
  using Error::Error;
};

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitDivergence = 2, kExitVerification = 3 };

/// Environment variable naming the directory searched for relative --data paths.
inline constexpr const char* kDataDirEnv = "ADABATCH_DATA_DIR";

/// The path itself when it exists, otherwise $ADABATCH_DATA_DIR/path when that exists.
std::filesystem::path resolve_data_path(const std::string& path);

struct DataOptions {
  std::string path;
  bool normalize = false;
  double test_split = 0.2;
  std::uint64_t split_seed = 0;
};

struct PreparedData {
  Dataset train;
  Dataset test;
  FeatureStats stats;  // estimated on the training split
};

PreparedData prepare_data(const DataOptions& opts);
PreparedData prepare_data(const Dataset& full, const DataOptions& opts);

/// One training configuration as given on the command line.
struct RunSpec {
  std::string engine = "sgd";  // sgd | svrg | wild | hogwild
  std::string rule = "mb";     // mb | ab | cbp | invp | adagrad
  double gamma = 0.1;
  std::optional<std::size_t> batch;
  std::optional<std::size_t> workers;
  std::size_t budget = 0;  // 0: five passes over the training split
  std::optional<std::size_t> epochs_m;
  std::optional<std::size_t> outer_epochs;
  std::uint64_t seed = 0;
  Regularization reg;
  bool racy_writes = false;
  double adagrad_epsilon = 1e-8;
};

/// Checks engine/rule/flag compatibility; throws UsageError naming the conflict.
void validate_run_spec(const RunSpec& spec);

/// Runs one configuration. TrainingDiverged propagates to the caller.
RunMetrics run_spec(const RunSpec& spec, LossKind loss, const PreparedData& data,
                    const EvalPlan& plan);

/// File stem `<engine>_<rule>_B<B>_W<W>`.
std::string run_file_stem(const RunSpec& spec);

struct GridRow {
  double gamma = 0.0;
  bool diverged = false;
  double final_objective = 0.0;
  double final_test_error = 0.0;
  double selection_value = 0.0;  // test loss when a test split exists, else training objective
};

struct GridResult {
  std::vector<GridRow> rows;
  std::optional<std::size_t> best;  // index into rows; unset when every run diverged
};

/// Powers of two 2^lo .. 2^hi.
std::vector<double> power_of_two_grid(int lo, int hi);

/// Runs spec once per gamma; diverged runs are never selected.
GridResult grid_search(RunSpec spec, const std::vector<double>& gammas, LossKind loss,
                       const PreparedData& data, const EvalPlan& plan);

void write_grid_csv(std::ostream& out, const GridResult& result);

struct CompareRow {
  RunSpec spec;
  RunMetrics metrics;
  std::optional<double> time_to_target;
};

/// `engine,rule,batch,workers,gamma,samples,final_objective,final_test_error,
/// final_test_loss,final_gap,samples_per_second,time_to_target,diverged`.
void write_summary_csv(std::ostream& out, const std::vector<CompareRow>& rows);

/// Shortest round-trip formatting, `nan` for NaN.
std::string format_real(double v);

}  // namespace adabatch
