#include "adabatch/svrg.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "adabatch/error.hpp"

namespace adabatch {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const FeatureStats* resolve_stats(const Dataset& data, const FeatureStats* stats) {
  if (stats == nullptr && data.stats()) return &*data.stats();
  return stats;
}

}  // namespace

std::vector<double> full_gradient(const Dataset& data, LossKind loss, std::span<const double> w,
                                  const Regularization& reg, const FeatureStats* stats) {
  if (data.empty()) throw PreconditionError("full gradient of an empty dataset");
  stats = resolve_stats(data, stats);
  std::vector<double> g(data.dim(), 0.0);
  for (const auto& ex : data.examples()) {
    const double d = loss_derivative(loss, ex.features.dot(w), ex.label);
    for (const auto& e : ex.features) g[e.index] += d * e.value;
  }
  const auto n = static_cast<double>(data.size());
  for (auto& v : g) v /= n;
  if (reg.active()) {
    for (std::size_t k = 0; k < g.size(); ++k) {
      g[k] += reg.l2 * reg.weight(stats, static_cast<Index>(k)) * w[k];
    }
  }
  return g;
}

EpochAnchor make_anchor(const Dataset& data, LossKind loss, std::vector<double> y,
                        const Regularization& reg, const FeatureStats& stats) {
  EpochAnchor a;
  a.full_grad = full_gradient(data, loss, y, reg, &stats);
  a.scaled_full_grad.resize(a.full_grad.size());
  for (std::size_t k = 0; k < a.full_grad.size(); ++k) {
    const double p = stats.p(static_cast<Index>(k));
    a.scaled_full_grad[k] = p > 0.0 ? a.full_grad[k] / p : kNaN;
  }
  a.y = std::move(y);
  return a;
}

void IterateAverager::begin(std::span<const double> w) {
  acc_.assign(w.size(), 0.0);
  stamp_.assign(w.size(), 0);
}

std::vector<double> IterateAverager::finish(std::span<const double> w, std::size_t m) {
  std::vector<double> out(w.size());
  for (std::size_t k = 0; k < w.size(); ++k) {
    out[k] = (acc_[k] + w[k] * static_cast<double>(m - stamp_[k])) / static_cast<double>(m);
  }
  return out;
}

SvrgStepper::SvrgStepper(std::size_t dim, const SvrgConfig& cfg, const FeatureStats& stats)
    : cfg_(cfg), stats_(stats), bg_(dim, cfg.batch) {
  if (stats.dim() != dim) throw StatsMismatchError("stats dimension differs from model");
  if (cfg.reg.active()) {
    reg_support_.assign(dim, 0.0);
    for (std::size_t k = 0; k < dim; ++k) {
      const auto idx = static_cast<Index>(k);
      if (stats.p(idx) > 0.0) reg_support_[k] = cfg.reg.l2 * cfg.reg.support_weight(stats, idx);
    }
  }
}

void SvrgStepper::step(TrainState& state, const Dataset& data, std::span<const std::size_t> batch,
                       const EpochAnchor& anchor, LossKind loss, IterateAverager* averager) {
  if (batch.size() != cfg_.batch) throw PreconditionError("batch must hold exactly B examples");
  auto& w = state.w;
  const auto& y = anchor.y;
  bg_.reset();
  for (auto i : batch) {
    const auto& ex = data[i];
    const double dw = loss_derivative(loss, ex.features.dot(w), ex.label);
    const double dy = loss_derivative(loss, ex.features.dot(y), ex.label);
    for (const auto& e : ex.features) {
      const double anchored = anchor.scaled_full_grad[e.index];
      if (std::isnan(anchored)) {
        throw StatsMismatchError("active coordinate " + std::to_string(e.index) + " has p(k) = 0");
      }
      double v = (dw - dy) * e.value + anchored;
      if (!reg_support_.empty()) v += reg_support_[e.index] * (w[e.index] - y[e.index]);
      bg_.add(e.index, v);
    }
  }
  const SparseVector g = cfg_.rule == SvrgRule::minibatch ? merge_minibatch(bg_) : merge_adabatch(bg_);
  ++state.iter;
  state.samples_seen += batch.size();
  bool finite = true;
  for (const auto& e : g) {
    if (averager != nullptr) averager->before_write(e.index, w[e.index], state.iter);
    w[e.index] -= cfg_.gamma * e.value;
    finite = finite && std::isfinite(w[e.index]);
  }
  if (!finite) throw DivergenceError(state.iter);
}

void svrg_step(TrainState& state, const Dataset& data, std::span<const std::size_t> batch,
               const EpochAnchor& anchor, const SvrgConfig& cfg, LossKind loss,
               const FeatureStats& stats) {
  SvrgStepper(data.dim(), cfg, stats).step(state, data, batch, anchor, loss);
}

RunMetrics svrg_train(const Dataset& data, const SvrgConfig& cfg, LossKind loss,
                      const FeatureStats& stats, const EvalPlan& plan) {
  if (data.empty()) throw PreconditionError("cannot train on an empty dataset");
  if (cfg.m == 0) throw PreconditionError("SVRG epoch length m must be >= 1");
  if (!(cfg.gamma > 0.0)) throw PreconditionError("step size must be > 0");
  if (stats.dim() != data.dim()) throw StatsMismatchError("stats dimension differs from dataset");
  validate_labels(loss, data);

  RunMetrics metrics;
  metrics.method = cfg.rule == SvrgRule::minibatch ? "svrg-mb" : "svrg-ab";
  metrics.batch = cfg.batch;
  metrics.config = {{"engine", "svrg"},
                    {"loss", loss == LossKind::logistic ? "logistic" : "squared"},
                    {"rule", cfg.rule == SvrgRule::minibatch ? "mb" : "ab"},
                    {"gamma", std::to_string(cfg.gamma)},
                    {"batch", std::to_string(cfg.batch)},
                    {"m", std::to_string(cfg.m)},
                    {"outer_epochs", std::to_string(cfg.outer_epochs)},
                    {"seed", std::to_string(cfg.seed)},
                    {"l2", std::to_string(cfg.reg.l2)},
                    {"l2_metric", cfg.reg.metric == L2Metric::identity ? "id" : "p"}};

  Evaluator eval(loss, data, cfg.reg, stats, plan);
  SvrgStepper stepper(data.dim(), cfg, stats);
  BatchSampler sampler(data.size(), cfg.sampling, cfg.seed);
  IterateAverager averager;
  Stopwatch watch;
  TrainState state = TrainState::zeros(data.dim());
  std::vector<double> y(data.dim(), 0.0);
  eval.record(metrics, y, 0, 0.0);

  std::vector<std::size_t> batch;
  for (std::size_t s = 0; s < cfg.outer_epochs; ++s) {
    watch.start();
    const EpochAnchor anchor = make_anchor(data, loss, y, cfg.reg, stats);
    state.w = y;
    state.iter = 0;
    averager.begin(state.w);
    try {
      for (std::size_t n = 0; n < cfg.m; ++n) {
        sampler.next(cfg.batch, batch);
        stepper.step(state, data, batch, anchor, loss, &averager);
      }
    } catch (const DivergenceError&) {
      watch.stop();
      metrics.diverged = true;
      metrics.samples_processed = state.samples_seen;
      metrics.train_seconds = watch.seconds();
      metrics.final_weights = state.w;
      throw TrainingDiverged(s * cfg.m + state.iter, std::move(metrics));
    }
    y = averager.finish(state.w, cfg.m);
    watch.stop();
    eval.record(metrics, y, state.samples_seen, watch.seconds());
  }
  metrics.samples_processed = state.samples_seen;
  metrics.train_seconds = watch.seconds();
  if (plan.reference_weights != nullptr) {
    metrics.sigma2 = gradient_variance(loss, data, *plan.reference_weights);
  }
  metrics.final_weights = std::move(y);
  return metrics;
}

SvrgSchedule schedule_minibatch(const CurvatureConstants& c, const FeatureStats& stats,
                                std::size_t batch) {
  if (batch <= 4) throw PreconditionError("mini-batch SVRG schedule needs B >= 5");
  if (!(c.L > 0.0 && c.mu > 0.0 && stats.pmin() > 0.0)) {
    throw PreconditionError("schedule needs L, mu, pmin > 0");
  }
  const auto b = static_cast<double>(batch);
  SvrgSchedule s;
  s.gamma = 1.0 / c.L;
  s.m_exact = 2.0 * b * c.L / (stats.pmin() * c.mu * (0.9 * b - 4.0));
  s.m = static_cast<std::size_t>(std::max(1.0, std::ceil(s.m_exact)));
  s.regime_warning = s.m_exact < 1.0;
  return s;
}

SvrgSchedule schedule_adabatch(const CurvatureConstants& c, const FeatureStats& stats,
                               std::size_t batch) {
  if (batch == 0) throw PreconditionError("batch size must be >= 1");
  if (!(c.L > 0.0 && c.mu > 0.0 && stats.pmin() > 0.0)) {
    throw PreconditionError("schedule needs L, mu, pmin > 0");
  }
  const auto b = static_cast<double>(batch);
  SvrgSchedule s;
  s.gamma = 1.0 / (10.0 * c.L);
  s.m_exact = 20.0 * c.L / (b * stats.pmin() * c.mu);
  s.m = static_cast<std::size_t>(std::max(1.0, std::ceil(s.m_exact)));
  const double pplus = -std::expm1(b * std::log1p(-std::min(stats.pmin(), 1.0 - 1e-300)));
  s.regime_warning = s.m_exact < 1.0 || b * stats.pmin() / pplus > 1.1;
  return s;
}

double svrg_rate(const CurvatureConstants& c, const FeatureStats& stats, double gamma,
                 std::size_t m, std::size_t batch, SvrgRule rule) {
  if (!(gamma > 0.0) || m == 0 || batch == 0) throw PreconditionError("svrg_rate needs gamma > 0, m >= 1, B >= 1");
  const auto b = static_cast<double>(batch);
  const auto md = static_cast<double>(m);
  if (rule == SvrgRule::minibatch) {
    const double slack = 1.0 - gamma * c.L * (3.0 + b) / (2.0 * b);
    if (!(slack > 0.0)) throw PreconditionError("svrg_rate: gamma L (3 + B) / (2B) < 1 violated");
    const double mu = stats.pmin() * c.mu;
    return 1.0 / (mu * gamma * slack * md) + 2.0 * c.L * gamma / (b * slack);
  }
  const double slack = 1.0 - 2.0 * gamma * c.L;
  if (!(slack > 0.0)) throw PreconditionError("svrg_rate: 2 gamma L < 1 violated");
  const double pplus = stats.pmin() >= 1.0 ? 1.0 : -std::expm1(b * std::log1p(-stats.pmin()));
  return 1.0 / (c.mu * pplus * gamma * slack * md) + 2.0 * c.L * gamma / slack;
}

CurvatureConstants svrg_constants(LossKind loss, const Dataset& data, const FeatureStats& stats,
                                  const Regularization& reg, std::optional<double> mu_estimate) {
  CurvatureConstants c = curvature_constants(loss, data, stats);
  if (reg.active()) {
    c.mu = reg.l2;
    c.L += reg.metric == L2Metric::diag_p ? reg.l2 : reg.l2 / stats.pmin();
  } else if (mu_estimate) {
    c.mu = *mu_estimate;
  } else {
    throw PreconditionError("strong convexity constant unavailable: set l2 > 0 or supply an estimate");
  }
  return c;
}

ReferenceSolution solve_reference(LossKind loss, const Dataset& data, const Regularization& reg,
                                  const FeatureStats& stats, std::size_t logistic_epochs) {
  if (data.empty()) throw PreconditionError("reference solution of an empty dataset");
  const std::size_t d = data.dim();
  ReferenceSolution out;
  if (loss == LossKind::squared) {
    if (d > 5000) throw PreconditionError("direct least-squares reference limited to d <= 5000");
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    for (const auto& ex : data.examples()) {
      for (const auto& a : ex.features) {
        rhs[a.index] += a.value * ex.label;
        for (const auto& b : ex.features) h(a.index, b.index) += a.value * b.value;
      }
    }
    const auto n = static_cast<double>(data.size());
    h /= n;
    rhs /= n;
    for (std::size_t k = 0; k < d; ++k) {
      const auto idx = static_cast<Index>(k);
      h(idx, idx) += reg.active() ? reg.l2 * reg.weight(&stats, idx) : 0.0;
    }
    // Coordinates never active have an all-zero row; pin them at 0.
    for (std::size_t k = 0; k < d; ++k) {
      if (h(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)) == 0.0) {
        h(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)) = 1.0;
      }
    }
    Eigen::VectorXd sol = h.ldlt().solve(rhs);
    out.w.assign(sol.data(), sol.data() + sol.size());
  } else {
    double smooth = 0.0;
    for (const auto& ex : data.examples()) smooth = std::max(smooth, 0.25 * ex.features.squared_norm());
    double reg_max = 0.0;
    if (reg.active()) {
      for (std::size_t k = 0; k < d; ++k) {
        if (stats.p(static_cast<Index>(k)) > 0.0) {
          reg_max = std::max(reg_max, reg.l2 * reg.support_weight(stats, static_cast<Index>(k)));
        }
      }
    }
    SvrgConfig cfg;
    cfg.gamma = 0.1 / (smooth + reg_max);
    cfg.m = 2 * data.size();
    cfg.batch = 1;
    cfg.rule = SvrgRule::minibatch;
    cfg.outer_epochs = logistic_epochs;
    cfg.reg = reg;
    cfg.seed = 0x5eed;
    out.w = svrg_train(data, cfg, loss, stats).final_weights;
  }
  out.f_star = full_objective(loss, data, out.w, reg, &stats);
  return out;
}

}  // namespace adabatch
