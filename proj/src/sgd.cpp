#include "adabatch/sgd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "adabatch/error.hpp"

namespace adabatch {

std::string to_string(MergeRule rule) {
  switch (rule) {
    case MergeRule::minibatch: return "mb";
    case MergeRule::adabatch: return "ab";
    case MergeRule::cbp: return "cbp";
    case MergeRule::inv_p: return "invp";
  }
  return "?";
}

BatchSampler::BatchSampler(std::size_t n, Sampling sampling, std::uint64_t seed)
    : n_(n), sampling_(sampling), rng_(seed), pick_(0, n == 0 ? 0 : n - 1) {
  if (n == 0) throw PreconditionError("cannot sample from an empty dataset");
  if (sampling_ == Sampling::shuffled_epochs) {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    pos_ = n_;
  }
}

std::size_t BatchSampler::draw() {
  if (sampling_ == Sampling::iid) return pick_(rng_);
  if (pos_ == n_) {
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
  }
  return order_[pos_++];
}

void BatchSampler::next(std::size_t batch, std::vector<std::size_t>& out) {
  out.resize(batch);
  for (auto& i : out) i = draw();
}

namespace {

void check_stats(const Dataset& data, const FeatureStats& stats) {
  if (stats.dim() != data.dim()) throw StatsMismatchError("stats dimension differs from dataset");
}

}  // namespace

SgdStepper::SgdStepper(std::size_t dim, const SgdConfig& cfg, const FeatureStats& stats)
    : cfg_(cfg), stats_(stats), bg_(dim, cfg.batch) {
  if (stats.dim() != dim) throw StatsMismatchError("stats dimension differs from model");
  if (cfg.rule == MergeRule::cbp) pre_ = Preconditioner::cbp(stats, cfg.batch);
  if (cfg.rule == MergeRule::inv_p) pre_ = Preconditioner::inv_p(stats);
  if (cfg.reg.active()) {
    reg_coeff_.assign(dim, 0.0);
    for (std::size_t k = 0; k < dim; ++k) {
      const auto idx = static_cast<Index>(k);
      const double p = stats.p(idx);
      double scale = 1.0;
      switch (cfg.rule) {
        case MergeRule::minibatch: break;
        case MergeRule::adabatch:
        case MergeRule::cbp: scale = p > 0.0 ? cbp_scale(p, cfg.batch) : 0.0; break;
        case MergeRule::inv_p: scale = p > 0.0 ? 1.0 / p : 0.0; break;
      }
      reg_coeff_[k] = cfg.reg.l2 * cfg.reg.weight(&stats, idx) * scale;
    }
  }
}

SparseVector SgdStepper::merge() const {
  switch (cfg_.rule) {
    case MergeRule::minibatch: return merge_minibatch(bg_);
    case MergeRule::adabatch: return merge_adabatch(bg_);
    case MergeRule::cbp:
    case MergeRule::inv_p: return merge_reconditioned(bg_, pre_);
  }
  return {};
}

void SgdStepper::step(TrainState& state, const Dataset& data, std::span<const std::size_t> batch,
                      LossKind loss) {
  if (batch.size() != cfg_.batch) throw PreconditionError("batch must hold exactly B examples");
  auto& w = state.w;
  bg_.reset();
  for (auto i : batch) {
    const auto& ex = data[i];
    bg_.accumulate_example(ex.features, loss_derivative(loss, ex.features.dot(w), ex.label));
  }
  const SparseVector g = merge();
  const double gamma = cfg_.gamma;
  // The penalty term sees the same pre-update w as the sampled gradients.
  for (std::size_t k = 0; k < reg_coeff_.size(); ++k) w[k] -= gamma * reg_coeff_[k] * w[k];
  for (const auto& e : g) w[e.index] -= gamma * e.value;

  ++state.iter;
  state.samples_seen += batch.size();
  bool finite = reg_coeff_.empty()
                    ? std::all_of(g.begin(), g.end(), [&](const SparseEntry& e) { return std::isfinite(w[e.index]); })
                    : all_finite(w);
  if (!finite) throw DivergenceError(state.iter);
}

AdagradStepper::AdagradStepper(std::size_t dim, std::size_t batch, const AdagradConfig& acfg,
                               const Regularization& reg, const FeatureStats& stats)
    : acfg_(acfg), reg_(reg), stats_(stats), bg_(dim, batch), g_(dim, 0.0) {
  if (!(acfg.alpha > 0.0)) throw PreconditionError("adagrad alpha must be > 0");
  if (!(acfg.epsilon >= 0.0)) throw PreconditionError("adagrad epsilon must be >= 0");
}

void AdagradStepper::step(TrainState& state, const Dataset& data,
                          std::span<const std::size_t> batch, LossKind loss) {
  if (batch.size() != bg_.batch_size()) throw PreconditionError("batch must hold exactly B examples");
  auto& w = state.w;
  if (state.adagrad_accum.size() != w.size()) state.adagrad_accum.assign(w.size(), 0.0);
  auto& acc = state.adagrad_accum;

  bg_.reset();
  for (auto i : batch) {
    const auto& ex = data[i];
    bg_.accumulate_example(ex.features, loss_derivative(loss, ex.features.dot(w), ex.label));
  }
  const SparseVector mb = merge_minibatch(bg_);

  auto update = [&](std::size_t k, double g) {
    if (acfg_.include_current) acc[k] += g * g;
    const double denom = std::sqrt(acfg_.epsilon + acc[k]);
    if (denom > 0.0) w[k] -= acfg_.alpha * g / denom;
    if (!acfg_.include_current) acc[k] += g * g;
  };

  if (reg_.active()) {
    std::fill(g_.begin(), g_.end(), 0.0);
    for (std::size_t k = 0; k < w.size(); ++k) {
      g_[k] = reg_.l2 * reg_.weight(&stats_, static_cast<Index>(k)) * w[k];
    }
    for (const auto& e : mb) g_[e.index] += e.value;
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (g_[k] != 0.0) update(k, g_[k]);
    }
  } else {
    for (const auto& e : mb) update(e.index, e.value);
  }

  ++state.iter;
  state.samples_seen += batch.size();
  if (!all_finite(w)) throw DivergenceError(state.iter);
}

void sgd_step(TrainState& state, const Dataset& data, std::span<const std::size_t> batch,
              const SgdConfig& cfg, LossKind loss, const FeatureStats& stats) {
  SgdStepper(data.dim(), cfg, stats).step(state, data, batch, loss);
}

void adagrad_step(TrainState& state, const Dataset& data, std::span<const std::size_t> batch,
                  const AdagradConfig& acfg, LossKind loss, const Regularization& reg,
                  const FeatureStats* stats) {
  FeatureStats empty;
  if (reg.active() && reg.metric == L2Metric::diag_p && stats == nullptr) {
    throw PreconditionError("diag(p) penalty requires feature statistics");
  }
  AdagradStepper(data.dim(), batch.size(), acfg, reg, stats ? *stats : empty)
      .step(state, data, batch, loss);
}

namespace {

std::vector<std::pair<std::string, std::string>> snapshot(const SgdConfig& cfg, LossKind loss) {
  std::vector<std::pair<std::string, std::string>> out = {
      {"engine", "sgd"},
      {"loss", loss == LossKind::logistic ? "logistic" : "squared"},
      {"rule", cfg.adagrad ? "adagrad" : to_string(cfg.rule)},
      {"gamma", std::to_string(cfg.adagrad ? cfg.adagrad->alpha : cfg.gamma)},
      {"batch", std::to_string(cfg.batch)},
      {"budget", std::to_string(cfg.sample_budget)},
      {"seed", std::to_string(cfg.seed)},
      {"sampling", cfg.sampling == Sampling::iid ? "iid" : "shuffled"},
      {"l2", std::to_string(cfg.reg.l2)},
      {"l2_metric", cfg.reg.metric == L2Metric::identity ? "id" : "p"}};
  if (cfg.adagrad) {
    out.emplace_back("adagrad_epsilon", std::to_string(cfg.adagrad->epsilon));
    out.emplace_back("adagrad_include_current", cfg.adagrad->include_current ? "1" : "0");
  }
  return out;
}

}  // namespace

RunMetrics train(const Dataset& data, const SgdConfig& cfg, LossKind loss,
                 const FeatureStats& stats, const EvalPlan& plan) {
  if (data.empty()) throw PreconditionError("cannot train on an empty dataset");
  if (cfg.batch == 0) throw PreconditionError("batch size must be >= 1");
  if (cfg.sample_budget < cfg.batch) throw PreconditionError("sample budget must be >= batch size");
  if (!cfg.adagrad && !(cfg.gamma > 0.0)) throw PreconditionError("step size must be > 0");
  check_stats(data, stats);
  validate_labels(loss, data);

  RunMetrics metrics;
  metrics.method = std::string("sgd-") + (cfg.adagrad ? "adagrad" : to_string(cfg.rule));
  metrics.config = snapshot(cfg, loss);
  metrics.batch = cfg.batch;

  TrainState state = TrainState::zeros(data.dim());
  BatchSampler sampler(data.size(), cfg.sampling, cfg.seed);
  std::optional<SgdStepper> sgd;
  std::optional<AdagradStepper> adagrad;
  if (cfg.adagrad) {
    adagrad.emplace(data.dim(), cfg.batch, *cfg.adagrad, cfg.reg, stats);
  } else {
    sgd.emplace(data.dim(), cfg, stats);
  }
  Evaluator eval(loss, data, cfg.reg, stats, plan);
  CheckpointSchedule schedule(cfg.batch, cfg.sample_budget);
  Stopwatch watch;

  eval.record(metrics, state.w, 0, 0.0);
  const std::size_t iterations = cfg.sample_budget / cfg.batch;
  std::vector<std::size_t> batch;
  for (std::size_t it = 0; it < iterations; ++it) {
    sampler.next(cfg.batch, batch);
    watch.start();
    try {
      if (adagrad) {
        adagrad->step(state, data, batch, loss);
      } else {
        sgd->step(state, data, batch, loss);
      }
    } catch (const DivergenceError& e) {
      watch.stop();
      metrics.diverged = true;
      metrics.samples_processed = state.samples_seen;
      metrics.train_seconds = watch.seconds();
      metrics.final_weights = state.w;
      throw TrainingDiverged(e.iteration(), std::move(metrics));
    }
    watch.stop();
    if (schedule.due(state.samples_seen) || it + 1 == iterations) {
      eval.record(metrics, state.w, state.samples_seen, watch.seconds());
    }
  }
  metrics.samples_processed = state.samples_seen;
  metrics.train_seconds = watch.seconds();
  if (plan.reference_weights != nullptr) {
    metrics.sigma2 = gradient_variance(loss, data, *plan.reference_weights);
  }
  metrics.final_weights = std::move(state.w);
  return metrics;
}

double max_stable_step(MergeRule rule, const CurvatureConstants& c, const FeatureStats& stats,
                       std::size_t batch) {
  if (batch == 0) throw PreconditionError("batch size must be >= 1");
  const auto b = static_cast<double>(batch);
  switch (rule) {
    case MergeRule::minibatch: return 1.0 / (c.L * stats.pmax() + 2.0 * c.R2 / b);
    case MergeRule::adabatch:
    case MergeRule::cbp: return 1.0 / (c.L + 2.0 * c.R2);
    case MergeRule::inv_p: return 1.0 / (c.L + 2.0 * c.R2 / (stats.pmin() * b));
  }
  return 0.0;
}

double max_stable_step_dense(const CurvatureConstants& c, std::size_t batch) {
  if (batch == 0) throw PreconditionError("batch size must be >= 1");
  const auto b = static_cast<double>(batch);
  return 1.0 / (c.L * (1.0 - 1.0 / b) + 2.0 * c.R2 / b);
}

std::vector<double> geometric_average(std::span<const std::vector<double>> iterates, double rho) {
  if (iterates.empty()) throw PreconditionError("averaged iterate of an empty log");
  if (!(rho > 0.0 && rho <= 1.0)) throw PreconditionError("decay factor must lie in (0, 1]");
  std::vector<double> acc(iterates.front().size(), 0.0);
  double total = 0.0;
  double weight = 1.0;
  // Walk backwards so the newest iterate has weight 1.
  for (auto it = iterates.rbegin(); it != iterates.rend(); ++it) {
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += weight * (*it)[k];
    total += weight;
    weight *= rho;
  }
  for (auto& v : acc) v /= total;
  return acc;
}

std::vector<double> averaged_iterate(std::span<const std::vector<double>> iterates, double gamma,
                                     double mu_eff) {
  return geometric_average(iterates, 1.0 - gamma * mu_eff / 2.0);
}

}  // namespace adabatch
