// adabatch: train, grid-search, compare and verify sparse mini-batch SGD variants.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "adabatch/bench.hpp"
#include "adabatch/parallel.hpp"
#include "adabatch/stats_oracle.hpp"
#include "adabatch/svrg.hpp"

using namespace adabatch;
namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  DataOptions data;
  std::string loss = "logistic";
  std::string l2_metric = "id";
  double l2 = 0.0;
  bool reference = false;
};

struct RunFlags {
  RunSpec spec;
  std::size_t batch = 1;
  std::size_t workers = 1;
  std::size_t epochs_m = 0;
  std::size_t outer_epochs = 0;
  bool schedule = false;
  double mu = 0.0;
  CLI::Option* batch_opt = nullptr;
  CLI::Option* workers_opt = nullptr;
  CLI::Option* m_opt = nullptr;
  CLI::Option* outer_opt = nullptr;
  CLI::Option* mu_opt = nullptr;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--data", f.data.path, "libsvm file (relative paths also searched in $ADABATCH_DATA_DIR)")
      ->required();
  app->add_option("--loss", f.loss)->check(CLI::IsMember({"logistic", "squared"}));
  app->add_option("--l2", f.l2, "penalty strength");
  app->add_option("--l2-metric", f.l2_metric)->check(CLI::IsMember({"id", "p"}));
  app->add_flag("--normalize", f.data.normalize, "scale rows to unit norm");
  app->add_option("--test-split", f.data.test_split, "held-out fraction");
  app->add_option("--split-seed", f.data.split_seed);
  app->add_flag("--reference", f.reference, "compute F_* and report the training gap");
}

void add_run(CLI::App* app, RunFlags& f, bool with_gamma) {
  app->add_option("--engine", f.spec.engine)->check(CLI::IsMember({"sgd", "svrg", "wild", "hogwild"}));
  app->add_option("--rule", f.spec.rule)->check(CLI::IsMember({"mb", "ab", "cbp", "invp", "adagrad"}));
  if (with_gamma) app->add_option("--gamma", f.spec.gamma, "step size (adagrad: alpha)");
  f.batch_opt = app->add_option("--batch", f.batch);
  f.workers_opt = app->add_option("--workers", f.workers);
  app->add_option("--budget", f.spec.budget, "training samples (default: five passes)");
  f.m_opt = app->add_option("--epochs-m", f.epochs_m, "SVRG inner iterations per epoch");
  f.outer_opt = app->add_option("--outer-epochs", f.outer_epochs, "SVRG outer epochs");
  app->add_flag("--schedule", f.schedule, "SVRG: take gamma and m from the closed-form schedule");
  f.mu_opt = app->add_option("--mu", f.mu, "strong convexity estimate when l2 = 0");
  app->add_option("--seed", f.spec.seed);
  app->add_flag("--racy-writes", f.spec.racy_writes, "parallel engines: plain load/store updates");
  app->add_option("--adagrad-eps", f.spec.adagrad_epsilon);
}

LossKind loss_of(const CommonFlags& c) { return c.loss == "squared" ? LossKind::squared : LossKind::logistic; }

// Fills the optional fields from flags that were actually given.
RunSpec finish(const CommonFlags& c, const RunFlags& f) {
  RunSpec s = f.spec;
  if (f.batch_opt->count() > 0) s.batch = f.batch;
  if (f.workers_opt->count() > 0) s.workers = f.workers;
  if (f.m_opt->count() > 0) s.epochs_m = f.epochs_m;
  if (f.outer_opt->count() > 0) s.outer_epochs = f.outer_epochs;
  s.reg.l2 = c.l2;
  s.reg.metric = c.l2_metric == "p" ? L2Metric::diag_p : L2Metric::identity;
  validate_run_spec(s);
  if (f.schedule && s.engine != "svrg") throw UsageError("--schedule requires --engine svrg");
  if (s.engine != "svrg" && s.epochs_m) throw UsageError("--epochs-m requires --engine svrg");
  return s;
}

void apply_schedule(RunSpec& s, const RunFlags& f, LossKind loss, const PreparedData& data) {
  if (!f.schedule) return;
  std::optional<double> mu;
  if (f.mu_opt->count() > 0) mu = f.mu;
  const auto consts = svrg_constants(loss, data.train, data.stats, s.reg, mu);
  const std::size_t b = s.batch.value_or(1);
  const auto sched = s.rule == "ab" ? schedule_adabatch(consts, data.stats, b)
                                    : schedule_minibatch(consts, data.stats, b);
  s.gamma = sched.gamma;
  s.epochs_m = sched.m;
  if (sched.regime_warning) {
    std::cerr << "warning: schedule outside its intended regime (B pmin = "
              << static_cast<double>(b) * data.stats.pmin() << ")\n";
  }
  std::cerr << "schedule: gamma=" << sched.gamma << " m=" << sched.m << " alpha="
            << svrg_rate(consts, data.stats, sched.gamma, sched.m, b,
                         s.rule == "ab" ? SvrgRule::adabatch : SvrgRule::minibatch)
            << '\n';
}

struct Plan {
  EvalPlan plan;
  std::optional<ReferenceSolution> ref;
};

Plan make_plan(const CommonFlags& c, const RunSpec& s, const PreparedData& data) {
  Plan p;
  if (!data.test.empty()) p.plan.test = &data.test;
  if (c.reference) {
    p.ref = solve_reference(loss_of(c), data.train, s.reg, data.stats);
    p.plan.f_star = p.ref->f_star;
    p.plan.reference_weights = &p.ref->w;
  }
  return p;
}

void write_outputs(const fs::path& prefix, const RunMetrics& m) {
  if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
  std::ofstream csv(prefix.string() + ".csv");
  write_metrics_csv(csv, m);
  std::ofstream json(prefix.string() + ".json");
  json << metrics_to_json(m) << '\n';
  if (!csv || !json) throw Error("cannot write metrics to " + prefix.string());
}

void warn_parallel(const RunSpec& s) {
  if (s.engine != "wild") return;
  ParallelConfig pc;
  pc.workers = s.workers.value_or(1);
  pc.batch = s.batch.value_or(1);
  if (auto w = parallel_config_warning(pc)) std::cerr << "warning: " << *w << '\n';
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = s.find(',', start);
    const auto item = s.substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (!item.empty()) out.push_back(item);
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

std::size_t to_size(const std::string& s) {
  std::size_t pos = 0;
  const auto v = std::stoull(s, &pos);
  if (pos != s.size()) throw UsageError("not an integer: " + s);
  return static_cast<std::size_t>(v);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse mini-batch SGD experiments: AdaBatch, SVRG, Wild AdaBatch and Hogwild"};
  app.require_subcommand(1);

  // train
  CommonFlags train_common;
  RunFlags train_run;
  std::string train_out = "run";
  auto* train_cmd = app.add_subcommand("train", "run one configuration");
  add_common(train_cmd, train_common);
  add_run(train_cmd, train_run, true);
  train_cmd->add_option("--out", train_out, "output prefix; writes PREFIX.csv and PREFIX.json");

  // grid
  CommonFlags grid_common;
  RunFlags grid_run;
  int gmin = -10, gmax = 2;
  std::string grid_out;
  auto* grid_cmd = app.add_subcommand("grid", "power-of-two step-size search");
  add_common(grid_cmd, grid_common);
  add_run(grid_cmd, grid_run, false);
  grid_cmd->add_option("--gamma-min-exp", gmin);
  grid_cmd->add_option("--gamma-max-exp", gmax);
  grid_cmd->add_option("--out", grid_out, "CSV path for the per-gamma table (default stdout)");

  // compare
  CommonFlags cmp_common;
  std::string engines = "sgd", rules = "mb,ab", batches = "1,10,50", workers_list;
  std::string cmp_dir = "compare";
  double cmp_gamma = 0.1;
  bool tune = false;
  std::size_t cmp_budget = 0;
  std::uint64_t cmp_seed = 0;
  std::optional<double> target;
  double target_value = 0.0;
  auto* cmp_cmd = app.add_subcommand("compare", "run a sweep of configurations and emit tables");
  add_common(cmp_cmd, cmp_common);
  cmp_cmd->add_option("--engines", engines, "comma list of sgd,svrg,wild,hogwild");
  cmp_cmd->add_option("--rules", rules, "comma list of rules");
  cmp_cmd->add_option("--batches", batches, "comma list of batch sizes");
  cmp_cmd->add_option("--workers-list", workers_list, "comma list of worker counts (parallel engines)");
  cmp_cmd->add_option("--gamma", cmp_gamma);
  cmp_cmd->add_flag("--tune", tune, "grid-search gamma per configuration");
  cmp_cmd->add_option("--gamma-min-exp", gmin);
  cmp_cmd->add_option("--gamma-max-exp", gmax);
  cmp_cmd->add_option("--budget", cmp_budget);
  cmp_cmd->add_option("--seed", cmp_seed);
  auto* target_opt = cmp_cmd->add_option("--target", target_value, "test error for time-to-target");
  cmp_cmd->add_option("--out-dir", cmp_dir);

  // verify-lemmas
  LemmaSuiteOptions lemma;
  lemma.mc_trials = 100000;
  auto* lemma_cmd = app.add_subcommand("verify-lemmas", "check the sparse-average moment formulas");
  lemma_cmd->add_option("--laws", lemma.random_laws);
  lemma_cmd->add_option("--max-n", lemma.max_n);
  lemma_cmd->add_option("--np-min", lemma.np_min);
  lemma_cmd->add_option("--trials", lemma.mc_trials, "Monte Carlo batches per B (0 skips)");
  lemma_cmd->add_option("--seed", lemma.seed);

  // gen-synthetic
  SyntheticSpec syn;
  std::string syn_law = "uniform", syn_task = "logistic", syn_out, syn_weights;
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "write a synthetic sparse dataset");
  gen_cmd->add_option("--dim", syn.dim);
  gen_cmd->add_option("--examples", syn.examples);
  gen_cmd->add_option("--law", syn_law)->check(CLI::IsMember({"uniform", "power"}));
  gen_cmd->add_option("--p-low", syn.p_low);
  gen_cmd->add_option("--p-high", syn.p_high);
  gen_cmd->add_option("--exponent", syn.exponent);
  gen_cmd->add_option("--noise", syn.noise);
  gen_cmd->add_option("--task", syn_task)->check(CLI::IsMember({"logistic", "squared"}));
  gen_cmd->add_option("--seed", syn.seed);
  gen_cmd->add_option("--out", syn_out)->required();
  gen_cmd->add_option("--weights-out", syn_weights, "also write the planted weights, one per line");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train_cmd) {
      RunSpec s = finish(train_common, train_run);
      const auto data = prepare_data(train_common.data);
      const auto loss = loss_of(train_common);
      apply_schedule(s, train_run, loss, data);
      warn_parallel(s);
      const auto plan = make_plan(train_common, s, data);
      try {
        const auto m = run_spec(s, loss, data, plan.plan);
        write_outputs(train_out, m);
        const auto& c = m.final_checkpoint();
        std::cout << m.method << " samples=" << m.samples_processed
                  << " objective=" << format_real(c.objective)
                  << " test_error=" << format_real(c.test_error)
                  << " samples_per_second=" << format_real(m.samples_per_second()) << '\n';
      } catch (const TrainingDiverged& e) {
        write_outputs(train_out, e.partial());
        std::cerr << "error: " << e.what() << '\n';
        return kExitDivergence;
      }
      return kExitOk;
    }

    if (*grid_cmd) {
      RunSpec s = finish(grid_common, grid_run);
      const auto data = prepare_data(grid_common.data);
      const auto loss = loss_of(grid_common);
      warn_parallel(s);
      const auto plan = make_plan(grid_common, s, data);
      const auto result = grid_search(s, power_of_two_grid(gmin, gmax), loss, data, plan.plan);
      if (grid_out.empty()) {
        write_grid_csv(std::cout, result);
      } else {
        std::ofstream out(grid_out);
        write_grid_csv(out, result);
      }
      if (!result.best) {
        std::cerr << "error: every step size diverged\n";
        return kExitDivergence;
      }
      std::cerr << "best gamma " << format_real(result.rows[*result.best].gamma) << '\n';
      return kExitOk;
    }

    if (*cmp_cmd) {
      if (target_opt->count() > 0) target = target_value;
      const auto data = prepare_data(cmp_common.data);
      const auto loss = loss_of(cmp_common);
      fs::create_directories(cmp_dir);
      std::vector<CompareRow> rows;
      std::optional<ReferenceSolution> ref;
      for (const auto& engine : split_list(engines)) {
        const bool parallel = engine == "wild" || engine == "hogwild";
        std::vector<std::string> ws = parallel && !workers_list.empty() ? split_list(workers_list)
                                                                        : std::vector<std::string>{""};
        std::vector<std::string> bs = engine == "hogwild" ? std::vector<std::string>{""} : split_list(batches);
        for (const auto& rule : split_list(rules)) {
          for (const auto& b : bs) {
            for (const auto& w : ws) {
              RunSpec s;
              s.engine = engine;
              s.rule = rule;
              s.gamma = cmp_gamma;
              s.budget = cmp_budget;
              s.seed = cmp_seed;
              if (!b.empty()) s.batch = to_size(b);
              if (!w.empty()) s.workers = to_size(w);
              s.reg.l2 = cmp_common.l2;
              s.reg.metric = cmp_common.l2_metric == "p" ? L2Metric::diag_p : L2Metric::identity;
              try {
                validate_run_spec(s);
              } catch (const UsageError& e) {
                std::cerr << "skipping " << run_file_stem(s) << ": " << e.what() << '\n';
                continue;
              }
              EvalPlan plan;
              if (!data.test.empty()) plan.test = &data.test;
              if (cmp_common.reference) {
                if (!ref) ref = solve_reference(loss, data.train, s.reg, data.stats);
                plan.f_star = ref->f_star;
                plan.reference_weights = &ref->w;
              }
              if (tune) {
                const auto g = grid_search(s, power_of_two_grid(gmin, gmax), loss, data, plan);
                if (!g.best) {
                  std::cerr << "warning: " << run_file_stem(s) << " diverged for every gamma\n";
                } else {
                  s.gamma = g.rows[*g.best].gamma;
                }
              }
              CompareRow row{s, {}, std::nullopt};
              try {
                row.metrics = run_spec(s, loss, data, plan);
              } catch (const TrainingDiverged& e) {
                row.metrics = e.partial();
              }
              if (target) {
                const auto t = throughput_report(std::span(&row.metrics, 1), target);
                row.time_to_target = t.front().time_to_target;
              }
              std::ofstream out(fs::path(cmp_dir) / (run_file_stem(s) + ".csv"));
              write_metrics_csv(out, row.metrics);
              std::cout << run_file_stem(s) << " gamma=" << format_real(s.gamma)
                        << " test_error=" << format_real(row.metrics.final_checkpoint().test_error)
                        << (row.metrics.diverged ? " diverged" : "") << '\n';
              rows.push_back(std::move(row));
            }
          }
        }
      }
      if (rows.empty()) throw UsageError("compare: no valid engine/rule/batch combination");
      std::ofstream summary(fs::path(cmp_dir) / "summary.csv");
      write_summary_csv(summary, rows);
      return kExitOk;
    }

    if (*lemma_cmd) {
      bool ok = true;
      for (const auto& c : run_lemma_suite(lemma)) {
        std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " cases=" << c.cases
                  << " value=" << format_real(c.max_deviation) << '\n';
        ok = ok && c.passed;
      }
      return ok ? kExitOk : kExitVerification;
    }

    if (*gen_cmd) {
      syn.law = syn_law == "power" ? ProbabilityLaw::power_law : ProbabilityLaw::uniform_range;
      syn.task = syn_task == "squared" ? TaskKind::squared : TaskKind::logistic;
      const auto d = gen_synthetic(syn);
      std::ofstream out(syn_out);
      write_libsvm(out, d.data);
      if (!syn_weights.empty()) {
        std::ofstream wout(syn_weights);
        for (double v : d.true_weights) wout << format_real(v) << '\n';
      }
      if (!out) throw Error("cannot write " + syn_out);
      return kExitOk;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitOk;
}
