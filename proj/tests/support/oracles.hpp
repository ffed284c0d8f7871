#pragma once

// Independent reference computations used by the tests. Nothing here calls
// the library's loss or merge code.

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "adabatch/sparse.hpp"

namespace oracle {

using adabatch::Dataset;
using adabatch::Example;
using adabatch::Index;
using adabatch::SparseEntry;
using adabatch::SparseVector;

inline double dot(const SparseVector& x, const std::vector<double>& w) {
  double s = 0.0;
  for (const auto& e : x.entries()) s += e.value * w[e.index];
  return s;
}

inline double logistic_loss(double z, double y) {
  const double t = -y * z;
  return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

inline double squared_loss(double z, double y) { return 0.5 * (z - y) * (z - y); }

/// Central finite-difference gradient of f at w.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> w, double h = 1e-5) {
  std::vector<double> g(w.size());
  for (std::size_t k = 0; k < w.size(); ++k) {
    const double orig = w[k];
    w[k] = orig + h;
    const double up = f(w);
    w[k] = orig - h;
    const double down = f(w);
    w[k] = orig;
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Per-example gradients as dense vectors, derivative written out by hand.
inline std::vector<std::vector<double>> dense_example_gradients(const Dataset& data, bool logistic,
                                                                const std::vector<double>& w) {
  std::vector<std::vector<double>> out;
  for (const auto& ex : data.examples()) {
    const double z = dot(ex.features, w);
    const double d = logistic ? -ex.label / (1.0 + std::exp(ex.label * z)) : z - ex.label;
    std::vector<double> g(data.dim(), 0.0);
    for (const auto& e : ex.features.entries()) g[e.index] = d * e.value;
    out.push_back(std::move(g));
  }
  return out;
}

inline std::vector<double> dense_mean_gradient(const Dataset& data, bool logistic,
                                               const std::vector<double>& w) {
  std::vector<double> mean(data.dim(), 0.0);
  for (const auto& g : dense_example_gradients(data, logistic, w)) {
    for (std::size_t k = 0; k < g.size(); ++k) mean[k] += g[k];
  }
  for (auto& v : mean) v /= static_cast<double>(data.size());
  return mean;
}

/// Minimizer of (1/2n)||Xw - y||^2 + (l2/2) sum_k weight(k) w(k)^2 via QR on
/// the stacked system [X / sqrt(n); sqrt(l2 weight)] w = [y / sqrt(n); 0].
inline std::vector<double> ridge_qr(const Dataset& data, double l2, const std::vector<double>& weight) {
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto d = static_cast<Eigen::Index>(data.dim());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n + d, d);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n + d);
  const double s = 1.0 / std::sqrt(static_cast<double>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (const auto& e : data[static_cast<std::size_t>(i)].features.entries()) a(i, e.index) = e.value * s;
    b[i] = data[static_cast<std::size_t>(i)].label * s;
  }
  for (Eigen::Index k = 0; k < d; ++k) a(n + k, k) = std::sqrt(l2 * weight[static_cast<std::size_t>(k)]);
  Eigen::VectorXd w = a.colPivHouseholderQr().solve(b);
  return {w.data(), w.data() + w.size()};
}

/// Dense random example with Bernoulli(p) support and N(0,1) values.
inline SparseVector random_sparse(std::size_t dim, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution on(p);
  std::normal_distribution<double> val;
  std::vector<SparseEntry> entries;
  for (std::size_t k = 0; k < dim; ++k) {
    if (on(rng)) {
      double v = val(rng);
      if (v == 0.0) v = 1.0;
      entries.push_back({static_cast<Index>(k), v});
    }
  }
  return SparseVector(std::move(entries), dim);
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1e-12, std::abs(a), std::abs(b)});
}

}  // namespace oracle
