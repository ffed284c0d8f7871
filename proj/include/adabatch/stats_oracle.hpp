#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adabatch/losses.hpp"
#include "adabatch/sparse.hpp"

namespace adabatch {

struct Atom {
  double value = 0.0;
  double prob = 0.0;
};

/// Finite law of a real random variable Z. The zero atom is listed
/// explicitly; p = P(Z != 0) = 1 - prob(0).
class DiscreteLaw {
 public:
  explicit DiscreteLaw(std::vector<Atom> atoms);

  std::span<const Atom> atoms() const noexcept { return atoms_; }
  double p() const noexcept { return p_; }
  double mean() const noexcept { return mean_; }
  double second_moment() const noexcept { return second_; }

 private:
  std::vector<Atom> atoms_;
  double p_ = 0.0;
  double mean_ = 0.0;
  double second_ = 0.0;
};

/// A = 0 if every Z_i = 0, otherwise the mean of the nonzero Z_i, for N
/// i.i.d. draws. All functions below describe moments of A.

/// P(M = i) for M ~ Binomial(N, p), i = 0..N.
std::vector<double> binomial_pmf(std::size_t n, double p);

/// sum_{i=1..N} P(M = i) / i.
double inverse_count_sum(std::size_t n, double p);

/// E[1/M | M > 0].
double inverse_count_expectation(std::size_t n, double p);

/// (1 - (1 - p)^N) / p * E[Z].
double lemma1_mean(const DiscreteLaw& law, std::size_t n);

/// (1 - (1-p)^N) E[Z]^2 / p^2 + S (E[Z^2] / p - E[Z]^2 / p^2), S = inverse_count_sum.
double lemma1_second_moment(const DiscreteLaw& law, std::size_t n);

/// (1 - (1-p)^N)^2 E[Z]^2 / p^2 + (1 - (1-p)^N) E[Z^2] / p.
double lemma1_second_moment_bound(const DiscreteLaw& law, std::size_t n);

/// 5 (1 - (1-p)^N) E[Z^2] / (N p^2) + (1 - (1-p)^N) E[Z]^2 / p^2. Requires N p >= 5.
double lemma2_bound(const DiscreteLaw& law, std::size_t n);

struct Moments {
  double mean = 0.0;
  double second = 0.0;
};

/// Exact moments of A by enumerating all |atoms|^N outcomes (at most 1e7).
Moments brute_force_moments(const DiscreteLaw& law, std::size_t n);

struct MonteCarloEstimate {
  std::vector<double> mean;        // empirical per-coordinate mean of merge_adabatch
  std::vector<double> std_error;   // standard error of that mean
  std::vector<double> predicted;   // cbp_scale(p(k), B) * F'(w)(k); NaN where p(k) = 0
  std::size_t trials = 0;

  /// Fraction of coordinates with p(k) > 0 whose mean lies within
  /// `sigmas` standard errors of the prediction.
  double fraction_within(double sigmas) const;
};

/// Resamples B i.i.d. examples `trials` times at fixed w and merges each
/// batch with merge_adabatch. Requires trials >= 10^4.
MonteCarloEstimate monte_carlo_adabatch_expectation(const Dataset& data, std::span<const double> w,
                                                    std::size_t batch, LossKind loss,
                                                    const FeatureStats& stats, std::size_t trials,
                                                    std::uint64_t seed = 0);

struct LemmaSuiteOptions {
  std::size_t random_laws = 100;
  std::size_t max_n = 8;
  double np_min = 5.0;
  std::size_t mc_trials = 0;  // 0 skips the Monte Carlo check
  std::uint64_t seed = 1;
};

struct LemmaCheck {
  std::string name;
  std::size_t cases = 0;
  double max_deviation = 0.0;  // or the minimum margin for bound checks
  bool passed = false;
};

std::vector<LemmaCheck> run_lemma_suite(const LemmaSuiteOptions& opts);

}  // namespace adabatch
