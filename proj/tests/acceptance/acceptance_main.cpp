// Acceptance suite: one PASS/FAIL line per criterion.
// Usage: adabatch_acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "adabatch/bench.hpp"
#include "adabatch/parallel.hpp"
#include "adabatch/sgd.hpp"
#include "adabatch/stats_oracle.hpp"
#include "adabatch/svrg.hpp"

using namespace adabatch;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double time_limit;  // seconds
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<DiscreteLaw> random_three_atom_laws(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0), value(-4.0, 4.0);
  std::vector<DiscreteLaw> laws;
  for (std::size_t i = 0; i < count; ++i) {
    double a = unit(rng) + 1e-3, b = unit(rng) + 1e-3;
    const double s = a + b + unit(rng) + 1e-3;
    a /= s;
    b /= s;
    // A fifth of the laws have no zero atom (p = 1).
    const double v0 = i % 5 == 4 ? value(rng) : 0.0;
    laws.emplace_back(std::vector<Atom>{{v0, a}, {value(rng), b}, {value(rng), 1.0 - a - b}});
  }
  return laws;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

// Shared problem for criteria 5 and 6: squared loss with a diag(p) penalty.
struct StronglyConvexProblem {
  Dataset data;
  FeatureStats stats;
  Regularization reg{1.0, L2Metric::diag_p};
  ReferenceSolution ref;

  StronglyConvexProblem() {
    SyntheticSpec spec;
    spec.dim = 50;
    spec.examples = 5000;
    spec.p_low = 0.02;
    spec.p_high = 0.5;
    spec.noise = 0.1;
    spec.task = TaskKind::squared;
    spec.seed = 11;
    data = gen_synthetic(spec).data;
    stats = estimate_feature_probabilities(data);
    ref = solve_reference(LossKind::squared, data, reg, stats);
  }
};

const StronglyConvexProblem& convex_problem() {
  static const StronglyConvexProblem p;
  return p;
}

Outcome criterion1() {
  const auto laws = random_three_atom_laws(120, 101);
  double worst = 0.0;
  std::size_t cases = 0;
  for (const auto& law : laws) {
    for (std::size_t n = 1; n <= 8; ++n) {
      const auto bf = brute_force_moments(law, n);
      worst = std::max({worst, rel(lemma1_mean(law, n), bf.mean), rel(lemma1_second_moment(law, n), bf.second)});
      ++cases;
    }
  }
  return {worst <= 1e-12, fmt("%zu law/N cases, max relative deviation %.2e", cases, worst)};
}

Outcome criterion2() {
  const auto laws = random_three_atom_laws(120, 202);
  double simple_margin = INFINITY, lemma2_margin = INFINITY, inverse_margin = INFINITY;
  std::size_t lemma2_cases = 0, inverse_cases = 0;
  for (const auto& law : laws) {
    for (std::size_t n = 1; n <= 8; ++n) {
      const double exact = brute_force_moments(law, n).second;
      simple_margin = std::min(simple_margin, lemma1_second_moment_bound(law, n) - exact);
    }
    for (std::size_t n = 1; n <= 64; ++n) {
      if (static_cast<double>(n) * law.p() < 5.0) continue;
      lemma2_margin = std::min(lemma2_margin, lemma2_bound(law, n) - lemma1_second_moment(law, n));
      ++lemma2_cases;
    }
  }
  for (std::size_t n = 1; n <= 64; ++n) {
    for (int j = 1; j <= 100; ++j) {
      const double p = 0.01 * j;
      if (static_cast<double>(n) * p < 5.0) continue;
      inverse_margin = std::min(inverse_margin, 5.0 / (static_cast<double>(n) * p) - inverse_count_expectation(n, p));
      ++inverse_cases;
    }
  }
  const bool ok = simple_margin >= -1e-12 && lemma2_margin >= -1e-12 && lemma2_cases > 0 &&
                  inverse_margin >= 0.0 && inverse_cases > 0;
  return {ok, fmt("min margins: simple %.3e, improved %.3e (%zu cases), E[1/M|M>0] %.3e (%zu grid points)",
                  simple_margin, lemma2_margin, lemma2_cases, inverse_margin, inverse_cases)};
}

Outcome criterion3() {
  SyntheticSpec spec;
  spec.dim = 20;
  spec.examples = 2000;
  spec.p_low = 0.05;
  spec.p_high = 0.6;
  spec.noise = 0.1;
  spec.task = TaskKind::squared;
  spec.seed = 303;
  const auto data = gen_synthetic(spec).data;
  const auto stats = estimate_feature_probabilities(data);
  std::mt19937_64 rng(304);
  std::normal_distribution<double> normal;
  bool ok = true;
  std::ostringstream detail;
  for (std::size_t b : {2, 10, 50}) {
    std::size_t inside = 0, total = 0;
    for (int point = 0; point < 3; ++point) {
      std::vector<double> w(spec.dim);
      for (auto& v : w) v = normal(rng);
      const auto est = monte_carlo_adabatch_expectation(data, w, b, LossKind::squared, stats, 1000000,
                                                        1000 * b + static_cast<std::uint64_t>(point));
      for (std::size_t k = 0; k < spec.dim; ++k) {
        if (std::isnan(est.predicted[k])) continue;
        ++total;
        if (std::abs(est.mean[k] - est.predicted[k]) <= 4.0 * est.std_error[k]) ++inside;
      }
    }
    const double frac = static_cast<double>(inside) / static_cast<double>(total);
    ok = ok && frac >= 0.99;
    detail << "B=" << b << ": " << inside << "/" << total << " within 4 SE; ";
  }
  return {ok, detail.str()};
}

Outcome criterion4() {
  SyntheticSpec spec;
  spec.dim = 200;
  spec.examples = 3000;
  spec.p_low = 0.005;
  spec.p_high = 0.3;
  spec.task = TaskKind::logistic;
  spec.seed = 404;
  const auto data = gen_synthetic(spec).data;
  const auto stats = estimate_feature_probabilities(data);
  bool ok = true;
  for (auto reg : {Regularization{}, Regularization{0.01, L2Metric::diag_p}}) {
    std::vector<RunMetrics> runs;
    for (auto rule : {MergeRule::minibatch, MergeRule::adabatch, MergeRule::cbp}) {
      SgdConfig cfg;
      cfg.gamma = 0.5;
      cfg.batch = 1;
      cfg.rule = rule;
      cfg.sample_budget = 1000;
      cfg.seed = 405;
      cfg.reg = reg;
      runs.push_back(train(data, cfg, LossKind::logistic, stats));
    }
    for (std::size_t r = 1; r < runs.size(); ++r) {
      ok = ok && runs[r].final_weights == runs[0].final_weights;
      for (std::size_t c = 0; c < runs[0].checkpoints.size(); ++c) {
        ok = ok && runs[r].checkpoints[c].objective == runs[0].checkpoints[c].objective;
      }
    }
  }
  return {ok, "1000 iterations, mb/ab/cbp with and without l2: weights and objectives compared bitwise"};
}

Outcome criterion5() {
  const auto& prob = convex_problem();
  const auto consts = svrg_constants(LossKind::squared, prob.data, prob.stats, prob.reg);
  const double floor = 1e-12 * std::max(1.0, std::abs(prob.ref.f_star));
  bool decay_ok = true, alpha_ok = true;
  std::ostringstream detail;
  detail << fmt("pmin=%.4f L=%.3f mu=%.3f; ", prob.stats.pmin(), consts.L, consts.mu);
  for (std::size_t b : {1, 10, 50}) {
    const auto sched = schedule_adabatch(consts, prob.stats, b);
    const double alpha = svrg_rate(consts, prob.stats, sched.gamma, sched.m, b, SvrgRule::adabatch);
    SvrgConfig cfg;
    cfg.gamma = sched.gamma;
    cfg.m = sched.m;
    cfg.batch = b;
    cfg.rule = SvrgRule::adabatch;
    cfg.outer_epochs = 10;
    cfg.reg = prob.reg;
    cfg.seed = 505;
    EvalPlan plan;
    plan.f_star = prob.ref.f_star;
    const auto m = svrg_train(prob.data, cfg, LossKind::squared, prob.stats, plan);
    double worst = 0.0;
    for (std::size_t s = 1; s < m.checkpoints.size(); ++s) {
      const double prev = m.checkpoints[s - 1].gap, cur = m.checkpoints[s].gap;
      if (cur <= floor) continue;  // objective resolution reached
      worst = std::max(worst, cur / prev);
    }
    decay_ok = decay_ok && m.checkpoints.size() == 11 && worst <= 0.95;
    alpha_ok = alpha_ok && alpha <= 0.9;
    detail << fmt("B=%zu m=%zu worst ratio %.3g alpha %.4f; ", b, sched.m, worst, alpha);
  }
  detail << "decay " << (decay_ok ? "ok" : "FAILED") << ", alpha<=0.9 " << (alpha_ok ? "ok" : "FAILED");
  return {decay_ok && alpha_ok, detail.str()};
}

Outcome criterion6() {
  const auto& prob = convex_problem();
  EvalPlan plan;
  plan.f_star = prob.ref.f_star;
  auto best_gap = [&](MergeRule rule, std::size_t b) {
    double best = INFINITY;
    for (double gamma : power_of_two_grid(-12, 6)) {
      SgdConfig cfg;
      cfg.gamma = gamma;
      cfg.batch = b;
      cfg.rule = rule;
      cfg.sample_budget = 50000;
      cfg.reg = prob.reg;
      cfg.seed = 606;
      try {
        const double gap = train(prob.data, cfg, LossKind::squared, prob.stats, plan).final_checkpoint().gap;
        if (std::isfinite(gap)) best = std::min(best, gap);
      } catch (const DivergenceError&) {
      }
    }
    return best;
  };
  const double ab1 = best_gap(MergeRule::adabatch, 1);
  const double ab50 = best_gap(MergeRule::adabatch, 50);
  const double mb50 = best_gap(MergeRule::minibatch, 50);
  const bool ok = ab50 <= 1.2 * ab1 && ab50 <= mb50;
  return {ok, fmt("best final gap: ab B=1 %.4g, ab B=50 %.4g, mb B=50 %.4g", ab1, ab50, mb50)};
}

Outcome criterion7() {
  SyntheticSpec spec;
  spec.dim = 500;
  spec.examples = 5000;
  spec.p_low = 0.002;
  spec.p_high = 0.3;
  spec.task = TaskKind::logistic;
  spec.noise = 0.05;
  spec.seed = 707;
  const auto data = gen_synthetic(spec).data;
  const auto stats = estimate_feature_probabilities(data);
  std::vector<std::vector<double>> finals;
  for (std::size_t w : {1, 2, 4}) {
    ParallelConfig cfg;
    cfg.workers = w;
    cfg.batch = 50;
    cfg.gamma = 0.5;
    cfg.sample_budget = 10000;
    cfg.seed = 708;
    cfg.reg = {1e-3, L2Metric::diag_p};
    finals.push_back(wild_train(data, cfg, LossKind::logistic, stats).final_weights);
  }
  double worst = 0.0;
  for (std::size_t i = 1; i < finals.size(); ++i) {
    for (std::size_t k = 0; k < spec.dim; ++k) {
      const double a = finals[i][k], b = finals[0][k];
      const double scale = std::max(std::abs(a), std::abs(b));
      if (scale > 0.0) worst = std::max(worst, std::abs(a - b) / scale);
    }
  }
  return {worst <= 1e-6, fmt("W in {1,2,4}, 10^4 samples: max per-coordinate relative difference %.2e", worst)};
}

Outcome criterion8() {
  SyntheticSpec spec;
  spec.dim = 100;
  spec.examples = 40000;
  spec.p_low = 0.01;
  spec.p_high = 0.3;
  spec.noise = 0.05;
  spec.task = TaskKind::logistic;
  spec.seed = 7;
  DataOptions opts;
  opts.test_split = 0.2;
  opts.split_seed = 1;
  const auto data = prepare_data(gen_synthetic(spec).data, opts);
  EvalPlan plan;
  plan.test = &data.test;
  const auto gammas = power_of_two_grid(-8, 4);
  auto tuned = [&](RunSpec& s) {
    const auto grid = grid_search(s, gammas, LossKind::logistic, data, plan);
    if (!grid.best) throw Error("every step size diverged for " + run_file_stem(s));
    s.gamma = grid.rows[*grid.best].gamma;
    return run_spec(s, LossKind::logistic, data, plan);
  };
  RunSpec seq;
  seq.budget = 10 * data.train.size();
  seq.seed = 2;
  RunSpec wild = seq;
  wild.engine = "wild";
  wild.rule = "ab";
  wild.batch = 50;
  wild.workers = 4;
  RunSpec hog = seq;
  hog.engine = "hogwild";
  hog.workers = 4;

  const double e_seq = tuned(seq).final_checkpoint().test_error;
  const auto m_wild = tuned(wild);
  const auto m_hog = tuned(hog);
  const double e_wild = m_wild.final_checkpoint().test_error;
  const double e_hog = m_hog.final_checkpoint().test_error;
  const bool ok = e_wild <= 1.05 * e_seq && e_hog <= 1.05 * e_seq;

  // Throughput, report only.
  auto single = [&](RunSpec s) {
    s.workers = 1;
    return run_spec(s, LossKind::logistic, data, plan).samples_per_second();
  };
  const double wild1 = single(wild);
  const double hog1 = single(hog);
  return {ok, fmt("test error: sequential %.4f, wild W=4 B=50 %.4f, hogwild W=4 %.4f; "
                  "throughput (report only) wild %.3g vs %.3g, hogwild %.3g vs %.3g samples/s at W=4 vs W=1",
                  e_seq, e_wild, e_hog, m_wild.samples_per_second(), wild1, m_hog.samples_per_second(), hog1)};
}

Outcome criterion9() {
  struct Case {
    CurvatureConstants c;
    FeatureStats stats;
    std::size_t batch;
    double mb, ab, invp, dense;
  };
  auto consts = [](double L, double r2) {
    CurvatureConstants c;
    c.L = L;
    c.R2 = r2;
    return c;
  };
  // Values substituted by hand into the table rows.
  const std::vector<Case> cases = {
      {consts(1.0, 1.0), FeatureStats({0.25, 0.5}), 2, 2.0 / 3.0, 1.0 / 3.0, 1.0 / 5.0, 1.0 / 1.5},
      {consts(2.0, 0.5), FeatureStats({0.5, 1.0}), 4, 4.0 / 9.0, 1.0 / 3.0, 0.4, 4.0 / 7.0},
      {consts(4.0, 2.0), FeatureStats({0.125, 0.25}), 1, 0.2, 0.125, 1.0 / 36.0, 0.25},
  };
  double worst = 0.0;
  for (const auto& k : cases) {
    worst = std::max({worst, std::abs(max_stable_step(MergeRule::minibatch, k.c, k.stats, k.batch) - k.mb),
                      std::abs(max_stable_step(MergeRule::adabatch, k.c, k.stats, k.batch) - k.ab),
                      std::abs(max_stable_step(MergeRule::cbp, k.c, k.stats, k.batch) - k.ab),
                      std::abs(max_stable_step(MergeRule::inv_p, k.c, k.stats, k.batch) - k.invp),
                      std::abs(max_stable_step_dense(k.c, k.batch) - k.dense)});
  }
  return {worst <= 1e-15, fmt("3 constant sets x 5 formulas, max abs error %.1e", worst)};
}

Outcome criterion10() {
  std::mt19937_64 rng(1010);
  std::normal_distribution<double> normal;
  double worst = 0.0;
  for (auto task : {TaskKind::squared, TaskKind::logistic}) {
    SyntheticSpec spec;
    spec.dim = 25;
    spec.examples = 200;
    spec.p_low = 0.05;
    spec.p_high = 0.6;
    spec.noise = 0.2;
    spec.task = task;
    spec.seed = 1011;
    const auto data = gen_synthetic(spec).data;
    const auto loss = task == TaskKind::squared ? LossKind::squared : LossKind::logistic;
    const auto stats = estimate_feature_probabilities(data);
    const Regularization reg{0.05, L2Metric::diag_p};
    for (int point = 0; point < 100; ++point) {
      std::vector<double> w(spec.dim);
      for (auto& v : w) v = normal(rng);
      const auto g = full_gradient(data, loss, w, reg, &stats);
      double diff = 0.0, norm = 0.0;
      const double h = 1e-5;
      for (std::size_t k = 0; k < spec.dim; ++k) {
        auto up = w, down = w;
        up[k] += h;
        down[k] -= h;
        const double fd = (full_objective(loss, data, up, reg, &stats) - full_objective(loss, data, down, reg, &stats)) / (2 * h);
        diff += (g[k] - fd) * (g[k] - fd);
        norm += g[k] * g[k];
      }
      worst = std::max(worst, std::sqrt(diff) / std::max(std::sqrt(norm), 1e-12));
    }
  }
  return {worst <= 1e-6, fmt("200 points (100 per loss), max relative gradient error %.2e", worst)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "lemma1-exact-moments", 5.0, criterion1},
      {2, "bound-ordering", 5.0, criterion2},
      {3, "adabatch-expectation-identity", 120.0, criterion3},
      {4, "batch-one-collapse", 1.0, criterion4},
      {5, "svrg-geometric-decay", 60.0, criterion5},
      {6, "adabatch-sample-efficiency", 300.0, criterion6},
      {7, "wild-worker-independence", 30.0, criterion7},
      {8, "parallel-quality-parity", 120.0, criterion8},
      {9, "step-size-formulas", 1.0, criterion9},
      {10, "gradient-correctness", 1.0, criterion10},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.time_limit;
    const bool pass = out.passed && in_time;
    if (!pass) ++failures;
    std::printf("%s criterion %d %s (%.2f s, limit %.0f s%s): %s\n", pass ? "PASS" : "FAIL", c.id, c.name, secs,
                c.time_limit, in_time ? "" : ", exceeded", out.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
