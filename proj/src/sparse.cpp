#include "adabatch/sparse.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <string_view>

#include "adabatch/error.hpp"

namespace adabatch {

SparseVector::SparseVector(std::vector<SparseEntry> entries, std::size_t dim) : dim_(dim) {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].index >= dim) {
      throw PreconditionError("sparse index " + std::to_string(entries[i].index) +
                              " out of range for dimension " + std::to_string(dim));
    }
    if (i > 0 && entries[i].index <= entries[i - 1].index) {
      throw PreconditionError("sparse indices must be strictly increasing");
    }
  }
  std::erase_if(entries, [](const SparseEntry& e) { return e.value == 0.0; });
  entries_ = std::move(entries);
}

double SparseVector::at(Index k) const {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), k,
                             [](const SparseEntry& e, Index key) { return e.index < key; });
  return (it != entries_.end() && it->index == k) ? it->value : 0.0;
}

double SparseVector::dot(std::span<const double> dense) const {
  double acc = 0.0;
  for (const auto& e : entries_) acc += e.value * dense[e.index];
  return acc;
}

double SparseVector::squared_norm() const {
  double acc = 0.0;
  for (const auto& e : entries_) acc += e.value * e.value;
  return acc;
}

SparseVector SparseVector::scaled(double factor) const {
  std::vector<SparseEntry> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back({e.index, e.value * factor});
  return SparseVector(std::move(out), dim_);
}

FeatureStats::FeatureStats(std::vector<double> p) : p_(std::move(p)) {
  bool any = false;
  for (double v : p_) {
    if (!(v >= 0.0 && v <= 1.0)) throw PreconditionError("feature probability outside [0, 1]");
    sum_ += v;
    if (v > 0.0) {
      pmin_ = any ? std::min(pmin_, v) : v;
      pmax_ = any ? std::max(pmax_, v) : v;
      any = true;
    }
  }
}

Dataset::Dataset(std::vector<Example> examples, std::size_t dim)
    : examples_(std::move(examples)), dim_(dim) {
  for (const auto& ex : examples_) {
    if (ex.features.dim() != dim_) throw PreconditionError("example dimension mismatch");
  }
  if (!examples_.empty() && dim_ == 0) throw PreconditionError("dataset dimension must be >= 1");
}

void Dataset::attach_stats(FeatureStats stats) {
  if (stats.dim() != dim_) throw StatsMismatchError("stats dimension differs from dataset");
  stats_ = std::move(stats);
}

Dataset Dataset::subset(std::span<const std::size_t> positions) const {
  std::vector<Example> out;
  out.reserve(positions.size());
  for (auto i : positions) out.push_back(examples_.at(i));
  return Dataset(std::move(out), dim_);
}

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\v' || c == '\f'; }

std::string_view next_token(std::string_view& rest) {
  std::size_t b = 0;
  while (b < rest.size() && is_space(rest[b])) ++b;
  std::size_t e = b;
  while (e < rest.size() && !is_space(rest[e])) ++e;
  auto tok = rest.substr(b, e - b);
  rest.remove_prefix(e);
  return tok;
}

bool parse_real(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

bool parse_index(std::string_view s, std::uint64_t& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

Dataset parse_libsvm(std::istream& in, std::optional<std::size_t> expected_dim) {
  struct Row {
    std::vector<SparseEntry> entries;
    double label;
  };
  std::vector<Row> rows;
  std::size_t dim = expected_dim.value_or(0);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view rest(line);
    if (auto hash = rest.find('#'); hash != std::string_view::npos) rest = rest.substr(0, hash);
    auto label_tok = next_token(rest);
    if (label_tok.empty()) continue;
    Row row;
    if (!parse_real(label_tok, row.label)) {
      throw ParseError(lineno, "bad label '" + std::string(label_tok) + "'");
    }
    std::uint64_t prev = 0;
    for (auto tok = next_token(rest); !tok.empty(); tok = next_token(rest)) {
      auto colon = tok.find(':');
      if (colon == std::string_view::npos) {
        throw ParseError(lineno, "expected idx:val, got '" + std::string(tok) + "'");
      }
      std::uint64_t idx = 0;
      double val = 0.0;
      if (!parse_index(tok.substr(0, colon), idx) || idx == 0 ||
          idx > std::numeric_limits<Index>::max()) {
        throw ParseError(lineno, "bad feature index in '" + std::string(tok) + "'");
      }
      if (!parse_real(tok.substr(colon + 1), val)) {
        throw ParseError(lineno, "bad feature value in '" + std::string(tok) + "'");
      }
      if (idx <= prev) throw ParseError(lineno, "feature indices must be strictly increasing");
      prev = idx;
      dim = std::max<std::size_t>(dim, idx);
      if (val != 0.0) row.entries.push_back({static_cast<Index>(idx - 1), val});
    }
    rows.push_back(std::move(row));
  }
  std::vector<Example> examples;
  examples.reserve(rows.size());
  for (auto& r : rows) examples.push_back({SparseVector(std::move(r.entries), dim), r.label});
  return Dataset(std::move(examples), dim);
}

Dataset load_libsvm(const std::string& path, std::optional<std::size_t> expected_dim) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return parse_libsvm(in, expected_dim);
}

namespace {

void put_real(std::ostream& out, double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.write(buf, ptr - buf);
}

}  // namespace

void write_libsvm(std::ostream& out, const Dataset& data) {
  for (const auto& ex : data.examples()) {
    put_real(out, ex.label);
    for (const auto& e : ex.features) {
      out << ' ' << (static_cast<std::uint64_t>(e.index) + 1) << ':';
      put_real(out, e.value);
    }
    out << '\n';
  }
}

FeatureStats estimate_feature_probabilities(const Dataset& data) {
  if (data.empty()) throw PreconditionError("cannot estimate feature probabilities of an empty dataset");
  std::vector<std::size_t> counts(data.dim(), 0);
  for (const auto& ex : data.examples()) {
    for (const auto& e : ex.features) ++counts[e.index];
  }
  std::vector<double> p(data.dim());
  const auto n = static_cast<double>(data.size());
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = static_cast<double>(counts[k]) / n;
  return FeatureStats(std::move(p));
}

Dataset normalize_rows(const Dataset& data) {
  std::vector<Example> out;
  out.reserve(data.size());
  for (const auto& ex : data.examples()) {
    double norm = std::sqrt(ex.features.squared_norm());
    if (norm == 0.0) {
      out.push_back(ex);
      continue;
    }
    std::vector<SparseEntry> entries(ex.features.begin(), ex.features.end());
    for (auto& e : entries) e.value /= norm;
    out.push_back({SparseVector(std::move(entries), ex.features.dim()), ex.label});
  }
  return Dataset(std::move(out), data.dim());
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& data, double test_fraction,
                                             std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw PreconditionError("test fraction must lie in [0, 1)");
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(data.size())));
  std::span<const std::size_t> all(order);
  return {data.subset(all.subspan(n_test)), data.subset(all.first(n_test))};
}

std::vector<double> target_probabilities(const SyntheticSpec& spec) {
  if (spec.dim == 0 || spec.examples == 0) throw PreconditionError("synthetic data needs d, n >= 1");
  if (!(spec.p_low > 0.0 && spec.p_low <= spec.p_high && spec.p_high <= 1.0)) {
    throw PreconditionError("probability law needs 0 < p_low <= p_high <= 1");
  }
  std::vector<double> p(spec.dim);
  switch (spec.law) {
    case ProbabilityLaw::uniform_range:
      for (std::size_t k = 0; k < spec.dim; ++k) {
        double t = spec.dim == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(spec.dim - 1);
        p[k] = spec.p_low + t * (spec.p_high - spec.p_low);
      }
      break;
    case ProbabilityLaw::power_law:
      if (!(spec.exponent >= 0.0) || !std::isfinite(spec.exponent)) {
        throw PreconditionError("power law exponent must be finite and >= 0");
      }
      for (std::size_t k = 0; k < spec.dim; ++k) {
        p[k] = std::max(spec.p_low, spec.p_high * std::pow(static_cast<double>(k + 1), -spec.exponent));
      }
      break;
  }
  return p;
}

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  auto p = target_probabilities(spec);
  if (spec.task == TaskKind::logistic && !(spec.noise >= 0.0 && spec.noise <= 0.5)) {
    throw PreconditionError("logistic label flip probability must lie in [0, 0.5]");
  }
  if (spec.task == TaskKind::squared && !(spec.noise >= 0.0)) {
    throw PreconditionError("label noise must be >= 0");
  }
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<double> w(spec.dim);
  for (auto& v : w) v = gauss(rng);

  std::vector<Example> examples;
  examples.reserve(spec.examples);
  std::vector<SparseEntry> entries;
  for (std::size_t i = 0; i < spec.examples; ++i) {
    entries.clear();
    for (std::size_t k = 0; k < spec.dim; ++k) {
      if (unif(rng) < p[k]) entries.push_back({static_cast<Index>(k), 1.0});
    }
    SparseVector x(entries, spec.dim);
    double margin = x.dot(w);
    double label = 0.0;
    if (spec.task == TaskKind::squared) {
      label = spec.noise > 0.0 ? margin + spec.noise * gauss(rng) : margin;
    } else {
      label = margin >= 0.0 ? 1.0 : -1.0;
      if (spec.noise > 0.0 && unif(rng) < spec.noise) label = -label;
    }
    examples.push_back({std::move(x), label});
  }
  return {Dataset(std::move(examples), spec.dim), std::move(w), std::move(p)};
}

}  // namespace adabatch
