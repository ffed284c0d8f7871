#include "adabatch/parallel.hpp"

#include <algorithm>
#include <barrier>
#include <cmath>
#include <ostream>
#include <thread>

#ifdef __linux__
#include <pthread.h>
#include <sched.h>
#endif

#include "adabatch/aggregation.hpp"
#include "adabatch/error.hpp"
#include "adabatch/sgd.hpp"

namespace adabatch {

std::string to_string(ParallelRule rule) {
  switch (rule) {
    case ParallelRule::wild_adabatch: return "wild-ab";
    case ParallelRule::wild_minibatch: return "wild-mb";
    case ParallelRule::hogwild: return "hogwild";
  }
  return "?";
}

std::optional<std::string> parallel_config_warning(const ParallelConfig& cfg) {
  if (cfg.rule != ParallelRule::hogwild && cfg.batch < cfg.workers) {
    return "batch size " + std::to_string(cfg.batch) + " is below worker count " +
           std::to_string(cfg.workers) + "; some workers will idle";
  }
  return std::nullopt;
}

SharedModel::SharedModel(std::size_t dim)
    : dim_(dim), w_(std::make_unique<std::atomic<double>[]>(dim)) {
  for (std::size_t k = 0; k < dim; ++k) w_[k].store(0.0, std::memory_order_relaxed);
}

double SharedModel::dot(const SparseVector& x) const noexcept {
  double s = 0.0;
  for (const auto& e : x) s += e.value * load(e.index);
  return s;
}

std::vector<double> SharedModel::snapshot() const {
  std::vector<double> out(dim_);
  for (std::size_t k = 0; k < dim_; ++k) out[k] = load(static_cast<Index>(k));
  return out;
}

namespace {

void pin_current_thread(std::size_t worker) {
#ifdef __linux__
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  cpu_set_t set;
  CPU_ZERO(&set);
  CPU_SET(static_cast<int>(worker % hw), &set);
  pthread_setaffinity_np(pthread_self(), sizeof set, &set);
#else
  (void)worker;
#endif
}

void validate(const Dataset& data, const ParallelConfig& cfg, LossKind loss,
              const FeatureStats& stats) {
  if (data.empty()) throw PreconditionError("cannot train on an empty dataset");
  if (cfg.workers == 0) throw PreconditionError("worker count must be >= 1");
  if (!(cfg.gamma >= 0.0)) throw PreconditionError("step size must be >= 0");
  if (stats.dim() != data.dim()) throw StatsMismatchError("stats dimension differs from dataset");
  validate_labels(loss, data);
}

// Every active coordinate needs p(k) > 0 for the scaled updates.
void require_positive_p(const Dataset& data, const FeatureStats& stats) {
  for (const auto& ex : data.examples()) {
    for (const auto& e : ex.features) {
      if (!(stats.p(e.index) > 0.0)) {
        throw StatsMismatchError("active coordinate " + std::to_string(e.index) + " has p(k) = 0");
      }
    }
  }
}

std::vector<std::pair<std::string, std::string>> snapshot(const ParallelConfig& cfg, LossKind loss) {
  return {{"engine", cfg.rule == ParallelRule::hogwild ? "hogwild" : "wild"},
          {"loss", loss == LossKind::logistic ? "logistic" : "squared"},
          {"rule", to_string(cfg.rule)},
          {"gamma", std::to_string(cfg.gamma)},
          {"batch", std::to_string(cfg.rule == ParallelRule::hogwild ? 1 : cfg.batch)},
          {"workers", std::to_string(cfg.workers)},
          {"budget", std::to_string(cfg.sample_budget)},
          {"seed", std::to_string(cfg.seed)},
          {"racy_writes", cfg.racy_writes ? "1" : "0"},
          {"l2", std::to_string(cfg.reg.l2)},
          {"l2_metric", cfg.reg.metric == L2Metric::identity ? "id" : "p"}};
}

[[noreturn]] void diverged(std::size_t iteration, RunMetrics& metrics, const SharedModel& model,
                           std::size_t samples, double seconds) {
  metrics.diverged = true;
  metrics.samples_processed = samples;
  metrics.train_seconds = seconds;
  metrics.final_weights = model.snapshot();
  throw TrainingDiverged(iteration, std::move(metrics));
}

// Contiguous slice [lo, hi) of n items for worker t out of W.
std::pair<std::size_t, std::size_t> slice(std::size_t n, std::size_t t, std::size_t W) {
  const std::size_t base = n / W;
  const std::size_t extra = n % W;
  const std::size_t lo = t * base + std::min(t, extra);
  return {lo, lo + base + (t < extra ? 1 : 0)};
}

}  // namespace

RunMetrics wild_train(const Dataset& data, const ParallelConfig& cfg, LossKind loss,
                      const FeatureStats& stats, const EvalPlan& plan) {
  validate(data, cfg, loss, stats);
  if (cfg.rule == ParallelRule::hogwild) throw PreconditionError("wild_train needs a wild rule");
  if (cfg.batch == 0) throw PreconditionError("batch size must be >= 1");
  if (cfg.sample_budget < cfg.batch) throw PreconditionError("sample budget must be >= batch size");

  const std::size_t dim = data.dim();
  const std::size_t W = cfg.workers;
  const std::size_t B = cfg.batch;
  const bool ada = cfg.rule == ParallelRule::wild_adabatch;
  if (ada) require_positive_p(data, stats);

  // step(k) = gamma / B * scale(k); penalty coefficient gamma * l2 * weight(k) * scale(k).
  std::vector<double> step(dim), reg_coeff;
  for (std::size_t k = 0; k < dim; ++k) {
    const double p = stats.p(static_cast<Index>(k));
    const double scale = !ada ? 1.0 : (p > 0.0 ? cbp_scale(p, B) : 0.0);
    step[k] = cfg.gamma / static_cast<double>(B) * scale;
    if (cfg.reg.active()) {
      if (reg_coeff.empty()) reg_coeff.assign(dim, 0.0);
      reg_coeff[k] = cfg.gamma * cfg.reg.l2 * cfg.reg.weight(&stats, static_cast<Index>(k)) * scale;
    }
  }

  RunMetrics metrics;
  metrics.method = to_string(cfg.rule);
  metrics.batch = B;
  metrics.workers = W;
  metrics.config = snapshot(cfg, loss);

  SharedModel model(dim);
  Evaluator eval(loss, data, cfg.reg, stats, plan);
  CheckpointSchedule schedule(B, cfg.sample_budget);
  BatchSampler sampler(data.size(), Sampling::iid, cfg.seed);
  Stopwatch watch;
  const std::size_t iterations = cfg.sample_budget / B;

  eval.record(metrics, model.snapshot(), 0, 0.0);

  std::vector<std::size_t> batch(B);
  std::vector<std::vector<double>> derivs(W);
  std::vector<std::vector<double>> reg_delta(W);
  std::atomic<bool> stop{false};
  std::barrier sync(static_cast<std::ptrdiff_t>(W));

  auto phase_compute = [&](std::size_t t) {
    const auto [lo, hi] = slice(B, t, W);
    auto& d = derivs[t];
    d.resize(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& ex = data[batch[i]];
      d[i - lo] = loss_derivative(loss, model.dot(ex.features), ex.label);
    }
    if (!reg_coeff.empty()) {
      const auto [k0, k1] = slice(dim, t, W);
      auto& r = reg_delta[t];
      r.resize(k1 - k0);
      for (std::size_t k = k0; k < k1; ++k) {
        r[k - k0] = -reg_coeff[k] * model.load(static_cast<Index>(k));
      }
    }
  };
  auto phase_apply = [&](std::size_t t) {
    const auto [lo, hi] = slice(B, t, W);
    const auto& d = derivs[t];
    for (std::size_t i = lo; i < hi; ++i) {
      const double di = d[i - lo];
      for (const auto& e : data[batch[i]].features) {
        const double delta = -step[e.index] * di * e.value;
        if (cfg.racy_writes) {
          model.add_racy(e.index, delta);
        } else {
          model.add(e.index, delta);
        }
      }
    }
    if (!reg_coeff.empty()) {
      const auto [k0, k1] = slice(dim, t, W);
      const auto& r = reg_delta[t];
      for (std::size_t k = k0; k < k1; ++k) model.add(static_cast<Index>(k), r[k - k0]);
    }
  };

  std::vector<std::jthread> threads;
  for (std::size_t t = 1; t < W; ++t) {
    threads.emplace_back([&, t] {
      if (cfg.pin_threads) pin_current_thread(t);
      for (;;) {
        sync.arrive_and_wait();
        if (stop.load(std::memory_order_acquire)) return;
        phase_compute(t);
        sync.arrive_and_wait();
        phase_apply(t);
        sync.arrive_and_wait();
      }
    });
  }
  if (cfg.pin_threads) pin_current_thread(0);

  auto shutdown = [&] {
    stop.store(true, std::memory_order_release);
    sync.arrive_and_wait();
    threads.clear();
  };

  std::size_t samples = 0;
  try {
    for (std::size_t it = 1; it <= iterations; ++it) {
      watch.start();
      sampler.next(B, batch);
      sync.arrive_and_wait();
      phase_compute(0);
      sync.arrive_and_wait();
      phase_apply(0);
      sync.arrive_and_wait();
      watch.stop();
      samples += B;
      if (schedule.due(samples) || it == iterations) {
        auto w = model.snapshot();
        if (!all_finite(w)) {
          shutdown();
          diverged(it, metrics, model, samples, watch.seconds());
        }
        eval.record(metrics, w, samples, watch.seconds());
      }
    }
  } catch (const TrainingDiverged&) {
    throw;
  } catch (...) {
    shutdown();
    throw;
  }
  shutdown();

  metrics.samples_processed = samples;
  metrics.train_seconds = watch.seconds();
  metrics.final_weights = model.snapshot();
  if (plan.reference_weights != nullptr) {
    metrics.sigma2 = gradient_variance(loss, data, *plan.reference_weights);
  }
  return metrics;
}

RunMetrics hogwild_train(const Dataset& data, const ParallelConfig& cfg, LossKind loss,
                         const FeatureStats& stats, const EvalPlan& plan) {
  validate(data, cfg, loss, stats);
  if (cfg.sample_budget == 0) throw PreconditionError("sample budget must be >= 1");
  const std::size_t dim = data.dim();
  const std::size_t W = cfg.workers;

  std::vector<double> reg_support;
  if (cfg.reg.active()) {
    reg_support.assign(dim, 0.0);
    for (std::size_t k = 0; k < dim; ++k) {
      const auto idx = static_cast<Index>(k);
      if (stats.p(idx) > 0.0) reg_support[k] = cfg.reg.l2 * cfg.reg.support_weight(stats, idx);
    }
    require_positive_p(data, stats);
  }

  RunMetrics metrics;
  metrics.method = "hogwild";
  metrics.batch = 1;
  metrics.workers = W;
  metrics.config = snapshot(cfg, loss);

  SharedModel model(dim);
  Evaluator eval(loss, data, cfg.reg, stats, plan);
  Stopwatch watch;
  eval.record(metrics, model.snapshot(), 0, 0.0);

  // Worker 0 draws exactly like the sequential sampler with the root seed.
  std::vector<BatchSampler> samplers;
  samplers.reserve(W);
  for (std::size_t t = 0; t < W; ++t) {
    samplers.emplace_back(data.size(), Sampling::iid, cfg.seed + t * 0x9E3779B97F4A7C15ULL);
  }

  std::atomic<std::size_t> counter{0};
  auto worker = [&](std::size_t t, std::size_t target) {
    if (cfg.pin_threads) pin_current_thread(t);
    auto& sampler = samplers[t];
    while (counter.load(std::memory_order_relaxed) < target) {
      if (counter.fetch_add(1, std::memory_order_relaxed) >= target) break;
      const auto& ex = data[sampler.draw()];
      const double d = loss_derivative(loss, model.dot(ex.features), ex.label);
      for (const auto& e : ex.features) {
        double g = d * e.value;
        if (!reg_support.empty()) g += reg_support[e.index] * model.load(e.index);
        if (cfg.racy_writes) {
          model.add_racy(e.index, -cfg.gamma * g);
        } else {
          model.add(e.index, -cfg.gamma * g);
        }
      }
    }
  };

  // Threads run between checkpoints and are joined for evaluation.
  std::size_t done = 0;
  std::size_t target = 1;
  while (done < cfg.sample_budget) {
    target = std::min(target, cfg.sample_budget);
    counter.store(done, std::memory_order_relaxed);
    watch.start();
    if (W == 1) {
      worker(0, target);
    } else {
      std::vector<std::jthread> threads;
      for (std::size_t t = 0; t < W; ++t) threads.emplace_back(worker, t, target);
    }
    watch.stop();
    done = target;
    auto w = model.snapshot();
    if (!all_finite(w)) diverged(done, metrics, model, done, watch.seconds());
    eval.record(metrics, w, done, watch.seconds());
    target *= 2;
  }
  metrics.config.emplace_back("sample_counter", std::to_string(counter.load()));
  metrics.samples_processed = done;
  metrics.train_seconds = watch.seconds();
  metrics.final_weights = model.snapshot();
  if (plan.reference_weights != nullptr) {
    metrics.sigma2 = gradient_variance(loss, data, *plan.reference_weights);
  }
  return metrics;
}

std::vector<ThroughputRow> throughput_report(std::span<const RunMetrics> runs,
                                             std::optional<double> target_error) {
  std::vector<ThroughputRow> rows;
  rows.reserve(runs.size());
  for (const auto& run : runs) {
    ThroughputRow row{run.method, run.workers, run.samples_per_second(), std::nullopt};
    if (target_error) {
      for (const auto& c : run.checkpoints) {
        if (!std::isnan(c.test_error) && c.test_error <= *target_error) {
          row.time_to_target = c.seconds;
          break;
        }
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_throughput_csv(std::ostream& out, std::span<const ThroughputRow> rows) {
  out << "method,workers,samples_per_second,time_to_target\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.workers << ',' << r.samples_per_second << ',';
    if (r.time_to_target) {
      out << *r.time_to_target;
    } else {
      out << "unreached";
    }
    out << '\n';
  }
}

}  // namespace adabatch
