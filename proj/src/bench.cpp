#include "adabatch/bench.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <ostream>

#include "adabatch/parallel.hpp"
#include "adabatch/sgd.hpp"
#include "adabatch/svrg.hpp"

namespace adabatch {

namespace fs = std::filesystem;

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

fs::path resolve_data_path(const std::string& path) {
  fs::path p(path);
  if (fs::exists(p)) return p;
  if (p.is_relative()) {
    if (const char* dir = std::getenv(kDataDirEnv); dir != nullptr && *dir != '\0') {
      fs::path alt = fs::path(dir) / p;
      if (fs::exists(alt)) return alt;
    }
  }
  throw Error("data file not found: " + path);
}

PreparedData prepare_data(const Dataset& full, const DataOptions& opts) {
  if (!(opts.test_split >= 0.0 && opts.test_split < 1.0)) {
    throw UsageError("--test-split must lie in [0, 1)");
  }
  Dataset data = opts.normalize ? normalize_rows(full) : full;
  PreparedData out;
  if (opts.test_split > 0.0) {
    auto [train, test] = train_test_split(data, opts.test_split, opts.split_seed);
    out.train = std::move(train);
    out.test = std::move(test);
  } else {
    out.train = std::move(data);
  }
  if (out.train.empty()) throw PreconditionError("training split is empty");
  out.stats = estimate_feature_probabilities(out.train);
  return out;
}

PreparedData prepare_data(const DataOptions& opts) {
  return prepare_data(load_libsvm(resolve_data_path(opts.path).string()), opts);
}

namespace {

bool one_of(const std::string& v, std::initializer_list<const char*> options) {
  return std::any_of(options.begin(), options.end(), [&](const char* o) { return v == o; });
}

}  // namespace

void validate_run_spec(const RunSpec& s) {
  if (!one_of(s.engine, {"sgd", "svrg", "wild", "hogwild"})) {
    throw UsageError("unknown engine '" + s.engine + "'");
  }
  if (!one_of(s.rule, {"mb", "ab", "cbp", "invp", "adagrad"})) {
    throw UsageError("unknown rule '" + s.rule + "'");
  }
  if (!(s.gamma > 0.0)) throw UsageError("--gamma must be > 0");
  if (s.batch && *s.batch == 0) throw UsageError("--batch must be >= 1");
  if (s.workers && *s.workers == 0) throw UsageError("--workers must be >= 1");
  if (s.reg.l2 < 0.0) throw UsageError("--l2 must be >= 0");
  const bool parallel = s.engine == "wild" || s.engine == "hogwild";
  if (s.workers && !parallel) {
    throw UsageError("--workers requires --engine wild or hogwild");
  }
  if (s.racy_writes && !parallel) {
    throw UsageError("--racy-writes requires --engine wild or hogwild");
  }
  if ((s.epochs_m || s.outer_epochs) && s.engine != "svrg") {
    throw UsageError("--epochs-m and --outer-epochs require --engine svrg");
  }
  if (s.rule == "adagrad" && s.engine != "sgd") throw UsageError("--rule adagrad requires --engine sgd");
  if (s.engine == "svrg" && !one_of(s.rule, {"mb", "ab"})) {
    throw UsageError("--engine svrg supports --rule mb or ab");
  }
  if (s.engine == "wild" && !one_of(s.rule, {"mb", "ab", "cbp"})) {
    throw UsageError("--engine wild supports --rule mb, ab or cbp");
  }
  if (s.engine == "hogwild") {
    if (s.rule != "mb") throw UsageError("--engine hogwild supports --rule mb only");
    if (s.batch && *s.batch != 1) throw UsageError("--engine hogwild processes one example at a time");
  }
}

std::string run_file_stem(const RunSpec& s) {
  return s.engine + "_" + s.rule + "_B" + std::to_string(s.batch.value_or(1)) + "_W" +
         std::to_string(s.workers.value_or(1));
}

RunMetrics run_spec(const RunSpec& s, LossKind loss, const PreparedData& data,
                    const EvalPlan& plan) {
  validate_run_spec(s);
  const std::size_t n = data.train.size();
  const std::size_t batch = s.batch.value_or(1);
  const std::size_t budget = s.budget > 0 ? s.budget : 5 * n;

  if (s.engine == "sgd") {
    SgdConfig cfg;
    cfg.gamma = s.gamma;
    cfg.batch = batch;
    cfg.sample_budget = budget;
    cfg.seed = s.seed;
    cfg.reg = s.reg;
    if (s.rule == "adagrad") {
      cfg.adagrad = AdagradConfig{s.gamma, s.adagrad_epsilon, true};
    } else if (s.rule == "ab") {
      cfg.rule = MergeRule::adabatch;
    } else if (s.rule == "cbp") {
      cfg.rule = MergeRule::cbp;
    } else if (s.rule == "invp") {
      cfg.rule = MergeRule::inv_p;
    }
    return train(data.train, cfg, loss, data.stats, plan);
  }
  if (s.engine == "svrg") {
    SvrgConfig cfg;
    cfg.gamma = s.gamma;
    cfg.batch = batch;
    cfg.rule = s.rule == "ab" ? SvrgRule::adabatch : SvrgRule::minibatch;
    cfg.m = s.epochs_m.value_or(std::max<std::size_t>(1, n / batch));
    cfg.outer_epochs = s.outer_epochs.value_or(
        std::max<std::size_t>(1, (budget + cfg.m * batch - 1) / (cfg.m * batch)));
    cfg.seed = s.seed;
    cfg.reg = s.reg;
    return svrg_train(data.train, cfg, loss, data.stats, plan);
  }
  ParallelConfig cfg;
  cfg.workers = s.workers.value_or(1);
  cfg.batch = batch;
  cfg.gamma = s.gamma;
  cfg.sample_budget = budget;
  cfg.seed = s.seed;
  cfg.reg = s.reg;
  cfg.racy_writes = s.racy_writes;
  if (s.engine == "hogwild") {
    cfg.rule = ParallelRule::hogwild;
    return hogwild_train(data.train, cfg, loss, data.stats, plan);
  }
  cfg.rule = s.rule == "mb" ? ParallelRule::wild_minibatch : ParallelRule::wild_adabatch;
  return wild_train(data.train, cfg, loss, data.stats, plan);
}

std::vector<double> power_of_two_grid(int lo, int hi) {
  if (lo > hi) throw UsageError("empty step-size grid");
  std::vector<double> out;
  for (int e = lo; e <= hi; ++e) out.push_back(std::ldexp(1.0, e));
  return out;
}

GridResult grid_search(RunSpec spec, const std::vector<double>& gammas, LossKind loss,
                       const PreparedData& data, const EvalPlan& plan) {
  GridResult result;
  for (double g : gammas) {
    spec.gamma = g;
    GridRow row;
    row.gamma = g;
    try {
      const RunMetrics m = run_spec(spec, loss, data, plan);
      const auto& c = m.final_checkpoint();
      row.final_objective = c.objective;
      row.final_test_error = c.test_error;
      row.selection_value = std::isnan(c.test_loss) ? c.objective : c.test_loss;
      row.diverged = !std::isfinite(row.selection_value);
    } catch (const DivergenceError&) {
      row.diverged = true;
      row.final_objective = std::numeric_limits<double>::quiet_NaN();
      row.final_test_error = std::numeric_limits<double>::quiet_NaN();
      row.selection_value = std::numeric_limits<double>::quiet_NaN();
    }
    result.rows.push_back(row);
  }
  for (std::size_t i = 0; i < result.rows.size(); ++i) {
    const auto& r = result.rows[i];
    if (r.diverged) continue;
    if (!result.best || r.selection_value < result.rows[*result.best].selection_value) result.best = i;
  }
  return result;
}

void write_grid_csv(std::ostream& out, const GridResult& result) {
  out << "gamma,status,final_objective,final_test_error,selection_value,selected\n";
  for (std::size_t i = 0; i < result.rows.size(); ++i) {
    const auto& r = result.rows[i];
    out << format_real(r.gamma) << ',' << (r.diverged ? "diverged" : "ok") << ','
        << format_real(r.final_objective) << ',' << format_real(r.final_test_error) << ','
        << format_real(r.selection_value) << ',' << (result.best == i ? 1 : 0) << '\n';
  }
}

void write_summary_csv(std::ostream& out, const std::vector<CompareRow>& rows) {
  out << "engine,rule,batch,workers,gamma,samples,final_objective,final_test_error,"
         "final_test_loss,final_gap,samples_per_second,time_to_target,diverged\n";
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const Checkpoint last = m.checkpoints.empty() ? Checkpoint{0, 0.0, nan, nan, nan, nan}
                                                  : m.final_checkpoint();
    out << r.spec.engine << ',' << r.spec.rule << ',' << r.spec.batch.value_or(1) << ','
        << r.spec.workers.value_or(1) << ',' << format_real(r.spec.gamma) << ','
        << m.samples_processed << ',' << format_real(last.objective) << ','
        << format_real(last.test_error) << ',' << format_real(last.test_loss) << ','
        << format_real(last.gap) << ',' << format_real(m.samples_per_second()) << ','
        << (r.time_to_target ? format_real(*r.time_to_target) : "unreached") << ','
        << (m.diverged ? 1 : 0) << '\n';
  }
}

}  // namespace adabatch
