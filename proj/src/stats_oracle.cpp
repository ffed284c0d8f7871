#include "adabatch/stats_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "adabatch/aggregation.hpp"
#include "adabatch/error.hpp"
#include "adabatch/svrg.hpp"

namespace adabatch {

namespace {

// 1 - (1 - p)^N without cancellation for small p.
double active_probability(std::size_t n, double p) {
  if (p >= 1.0) return 1.0;
  return -std::expm1(static_cast<double>(n) * std::log1p(-p));
}

void require_args(const DiscreteLaw& law, std::size_t n) {
  if (n == 0) throw PreconditionError("N must be >= 1");
  if (!(law.p() > 0.0)) throw PreconditionError("P(Z != 0) must be > 0");
}

double deviation(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

DiscreteLaw::DiscreteLaw(std::vector<Atom> atoms) : atoms_(std::move(atoms)) {
  if (atoms_.empty()) throw PreconditionError("law needs at least one atom");
  double total = 0.0;
  double zero = 0.0;
  for (const auto& a : atoms_) {
    if (!std::isfinite(a.value) || !(a.prob >= 0.0)) throw PreconditionError("atoms need finite values and probs >= 0");
    total += a.prob;
    if (a.value == 0.0) zero += a.prob;
    mean_ += a.prob * a.value;
    second_ += a.prob * a.value * a.value;
  }
  if (std::abs(total - 1.0) > 1e-12) throw PreconditionError("atom probabilities must sum to 1");
  p_ = std::max(0.0, 1.0 - zero);
}

std::vector<double> binomial_pmf(std::size_t n, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw PreconditionError("p must lie in [0, 1]");
  std::vector<double> pmf(n + 1, 0.0);
  if (p == 0.0) {
    pmf[0] = 1.0;
    return pmf;
  }
  if (p == 1.0) {
    pmf[n] = 1.0;
    return pmf;
  }
  const double lp = std::log(p);
  const double lq = std::log1p(-p);
  if (n <= 64) {
    double coeff = 1.0;
    for (std::size_t i = 0; i <= n; ++i) {
      pmf[i] = coeff * std::exp(static_cast<double>(i) * lp + static_cast<double>(n - i) * lq);
      coeff = coeff * static_cast<double>(n - i) / static_cast<double>(i + 1);
    }
  } else {
    const double lgn = std::lgamma(static_cast<double>(n) + 1.0);
    for (std::size_t i = 0; i <= n; ++i) {
      const auto di = static_cast<double>(i);
      const auto dn = static_cast<double>(n - i);
      pmf[i] = std::exp(lgn - std::lgamma(di + 1.0) - std::lgamma(dn + 1.0) + di * lp + dn * lq);
    }
  }
  return pmf;
}

double inverse_count_sum(std::size_t n, double p) {
  const auto pmf = binomial_pmf(n, p);
  double s = 0.0;
  for (std::size_t i = 1; i <= n; ++i) s += pmf[i] / static_cast<double>(i);
  return s;
}

double inverse_count_expectation(std::size_t n, double p) {
  if (n == 0 || !(p > 0.0)) throw PreconditionError("need N >= 1 and p > 0");
  return inverse_count_sum(n, p) / active_probability(n, p);
}

double lemma1_mean(const DiscreteLaw& law, std::size_t n) {
  require_args(law, n);
  return active_probability(n, law.p()) / law.p() * law.mean();
}

double lemma1_second_moment(const DiscreteLaw& law, std::size_t n) {
  require_args(law, n);
  const double p = law.p();
  const double m2 = law.mean() * law.mean();
  const double s = inverse_count_sum(n, p);
  return active_probability(n, p) * m2 / (p * p) + s * (law.second_moment() / p - m2 / (p * p));
}

double lemma1_second_moment_bound(const DiscreteLaw& law, std::size_t n) {
  require_args(law, n);
  const double p = law.p();
  const double q = active_probability(n, p);
  return q * q * law.mean() * law.mean() / (p * p) + q * law.second_moment() / p;
}

double lemma2_bound(const DiscreteLaw& law, std::size_t n) {
  require_args(law, n);
  const double p = law.p();
  if (static_cast<double>(n) * p < 5.0) throw PreconditionError("improved bound requires N p >= 5");
  const double q = active_probability(n, p);
  return 5.0 * q * law.second_moment() / (static_cast<double>(n) * p * p) +
         q * law.mean() * law.mean() / (p * p);
}

Moments brute_force_moments(const DiscreteLaw& law, std::size_t n) {
  if (n == 0) throw PreconditionError("N must be >= 1");
  const auto atoms = law.atoms();
  const std::size_t k = atoms.size();
  double outcomes = std::pow(static_cast<double>(k), static_cast<double>(n));
  if (outcomes > 1e7) throw PreconditionError("enumeration exceeds 1e7 outcomes");

  std::vector<std::size_t> digits(n, 0);
  Moments m;
  for (;;) {
    double prob = 1.0, sum = 0.0;
    std::size_t nonzero = 0;
    for (auto d : digits) {
      prob *= atoms[d].prob;
      sum += atoms[d].value;
      if (atoms[d].value != 0.0) ++nonzero;
    }
    if (nonzero > 0) {
      const double a = sum / static_cast<double>(nonzero);
      m.mean += prob * a;
      m.second += prob * a * a;
    }
    std::size_t pos = 0;
    while (pos < n && ++digits[pos] == k) digits[pos++] = 0;
    if (pos == n) break;
  }
  return m;
}

double MonteCarloEstimate::fraction_within(double sigmas) const {
  std::size_t total = 0, inside = 0;
  for (std::size_t k = 0; k < mean.size(); ++k) {
    if (std::isnan(predicted[k])) continue;
    ++total;
    if (std::abs(mean[k] - predicted[k]) <= sigmas * std_error[k]) ++inside;
  }
  return total == 0 ? 1.0 : static_cast<double>(inside) / static_cast<double>(total);
}

MonteCarloEstimate monte_carlo_adabatch_expectation(const Dataset& data, std::span<const double> w,
                                                    std::size_t batch, LossKind loss,
                                                    const FeatureStats& stats, std::size_t trials,
                                                    std::uint64_t seed) {
  if (trials < 10000) throw PreconditionError("Monte Carlo check needs >= 1e4 trials");
  if (batch == 0) throw PreconditionError("batch size must be >= 1");
  if (data.empty()) throw PreconditionError("empty dataset");
  const std::size_t d = data.dim();

  // w is fixed, so each example's derivative is computed once.
  std::vector<double> deriv(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    deriv[i] = loss_derivative(loss, data[i].features.dot(w), data[i].label);
  }

  std::vector<double> sum(d, 0.0), sumsq(d, 0.0);
  BatchGradient bg(d, batch);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  for (std::size_t t = 0; t < trials; ++t) {
    bg.reset();
    for (std::size_t b = 0; b < batch; ++b) {
      const auto i = pick(rng);
      bg.accumulate_example(data[i].features, deriv[i]);
    }
    for (const auto& e : merge_adabatch(bg)) {
      sum[e.index] += e.value;
      sumsq[e.index] += e.value * e.value;
    }
  }

  MonteCarloEstimate est;
  est.trials = trials;
  est.mean.resize(d);
  est.std_error.resize(d);
  est.predicted.resize(d);
  const auto nt = static_cast<double>(trials);
  const auto grad = full_gradient(data, loss, w);
  for (std::size_t k = 0; k < d; ++k) {
    const double mean = sum[k] / nt;
    const double var = std::max(0.0, sumsq[k] / nt - mean * mean) * nt / (nt - 1.0);
    est.mean[k] = mean;
    est.std_error[k] = std::sqrt(var / nt);
    const double p = stats.p(static_cast<Index>(k));
    est.predicted[k] = p > 0.0 ? cbp_scale(p, batch) * grad[k]
                               : std::numeric_limits<double>::quiet_NaN();
  }
  return est;
}

std::vector<LemmaCheck> run_lemma_suite(const LemmaSuiteOptions& opts) {
  std::vector<LemmaCheck> checks;
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> value(-3.0, 3.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<DiscreteLaw> laws;
  for (std::size_t i = 0; i < opts.random_laws; ++i) {
    double a = unit(rng) + 1e-3, b = unit(rng) + 1e-3, c = unit(rng) + 1e-3;
    const double s = a + b + c;
    a /= s;
    b /= s;
    c = 1.0 - a - b;
    // Every fourth law has no zero atom, so p = 1 is covered.
    const double v0 = i % 4 == 3 ? value(rng) : 0.0;
    laws.emplace_back(std::vector<Atom>{{v0, a}, {value(rng), b}, {value(rng), c}});
  }

  LemmaCheck mean{"lemma1-mean-vs-enumeration"}, second{"lemma1-second-moment-vs-enumeration"};
  LemmaCheck simple{"simple-bound-dominates-exact"};
  simple.max_deviation = std::numeric_limits<double>::infinity();
  for (const auto& law : laws) {
    for (std::size_t n = 1; n <= opts.max_n; ++n) {
      const auto bf = brute_force_moments(law, n);
      mean.max_deviation = std::max(mean.max_deviation, deviation(lemma1_mean(law, n), bf.mean));
      second.max_deviation =
          std::max(second.max_deviation, deviation(lemma1_second_moment(law, n), bf.second));
      simple.max_deviation = std::min(
          simple.max_deviation, lemma1_second_moment_bound(law, n) - lemma1_second_moment(law, n));
      ++mean.cases;
      ++second.cases;
      ++simple.cases;
    }
  }
  mean.passed = mean.max_deviation <= 1e-12;
  second.passed = second.max_deviation <= 1e-12;
  simple.passed = simple.max_deviation >= -1e-12;
  checks.push_back(mean);
  checks.push_back(second);
  checks.push_back(simple);

  // Sum of P(M = i) over i >= 1 equals 1 - (1 - p)^N; the 1/i-weighted sum is below it.
  LemmaCheck binom{"binomial-sum-consistency"};
  for (std::size_t n = 1; n <= 128; n += (n < 64 ? 1 : 16)) {
    for (double p = 0.01; p < 1.0; p += 0.07) {
      const auto pmf = binomial_pmf(n, p);
      double tail = 0.0;
      for (std::size_t i = 1; i <= n; ++i) tail += pmf[i];
      const double q = active_probability(n, p);
      double dev = deviation(tail, q);
      if (inverse_count_sum(n, p) > q + 1e-15) dev = std::max(dev, 1.0);
      binom.max_deviation = std::max(binom.max_deviation, dev);
      ++binom.cases;
    }
  }
  binom.passed = binom.max_deviation <= 1e-12;
  checks.push_back(binom);

  const double np_min = std::max(5.0, opts.np_min);
  LemmaCheck improved{"lemma2-bound-dominates-exact"};
  LemmaCheck inverse{"inverse-count-bound"};
  improved.max_deviation = std::numeric_limits<double>::infinity();
  inverse.max_deviation = std::numeric_limits<double>::infinity();
  for (int pi = 1; pi <= 9; ++pi) {
    const double p = 0.1 * pi;
    for (std::size_t n = 1; n <= 64; ++n) {
      if (static_cast<double>(n) * p < np_min) continue;
      inverse.max_deviation = std::min(
          inverse.max_deviation, 5.0 / (static_cast<double>(n) * p) - inverse_count_expectation(n, p));
      ++inverse.cases;
      for (std::size_t li = 0; li < laws.size(); li += 10) {
        // Rescale the law so that P(Z != 0) = p while keeping its nonzero atoms.
        const auto atoms = laws[li].atoms();
        double nz = 0.0;
        for (const auto& a : atoms) nz += a.value != 0.0 ? a.prob : 0.0;
        std::vector<Atom> scaled{{0.0, 1.0 - p}};
        double used = 1.0 - p;
        std::size_t last = 0;
        for (const auto& a : atoms) {
          if (a.value == 0.0) continue;
          scaled.push_back({a.value, p * a.prob / nz});
          used += scaled.back().prob;
          last = scaled.size() - 1;
        }
        scaled[last].prob += 1.0 - used;
        const DiscreteLaw law(std::move(scaled));
        if (static_cast<double>(n) * law.p() < 5.0) continue;
        improved.max_deviation =
            std::min(improved.max_deviation, lemma2_bound(law, n) - lemma1_second_moment(law, n));
        ++improved.cases;
      }
    }
  }
  improved.passed = improved.cases > 0 && improved.max_deviation >= -1e-12;
  inverse.passed = inverse.cases > 0 && inverse.max_deviation >= 0.0;
  checks.push_back(improved);
  checks.push_back(inverse);

  if (opts.mc_trials > 0) {
    SyntheticSpec spec;
    spec.dim = 20;
    spec.examples = 2000;
    spec.p_low = 0.05;
    spec.p_high = 0.6;
    spec.noise = 0.1;
    spec.seed = opts.seed;
    spec.task = TaskKind::squared;
    const auto syn = gen_synthetic(spec);
    const auto stats = estimate_feature_probabilities(syn.data);
    std::normal_distribution<double> normal;
    std::vector<double> w(spec.dim);
    for (auto& v : w) v = normal(rng);
    for (std::size_t b : {2, 10, 50}) {
      const auto est = monte_carlo_adabatch_expectation(syn.data, w, b, LossKind::squared, stats,
                                                        opts.mc_trials, opts.seed + b);
      LemmaCheck mc{"adabatch-expectation-B" + std::to_string(b)};
      mc.cases = spec.dim;
      for (std::size_t k = 0; k < spec.dim; ++k) {
        if (est.std_error[k] > 0.0) {
          mc.max_deviation =
              std::max(mc.max_deviation, std::abs(est.mean[k] - est.predicted[k]) / est.std_error[k]);
        }
      }
      mc.passed = est.fraction_within(4.0) >= 0.99;
      checks.push_back(mc);
    }
  }
  return checks;
}

}  // namespace adabatch
