#include "adabatch/metrics.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <istream>
#include <limits>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>

namespace adabatch {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void put_real(std::ostream& out, double v) {
  if (std::isnan(v)) {
    out << "nan";
    return;
  }
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.write(buf, ptr - buf);
}

nlohmann::json finite_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

}  // namespace

double RunMetrics::samples_per_second() const {
  return train_seconds > 0.0 ? static_cast<double>(samples_processed) / train_seconds : 0.0;
}

CheckpointSchedule::CheckpointSchedule(std::size_t batch, std::size_t budget)
    : next_(std::max<std::size_t>(batch, 1)), budget_(budget) {}

bool CheckpointSchedule::due(std::size_t samples) {
  if (samples >= budget_) return true;
  if (samples < next_) return false;
  while (next_ <= samples) next_ *= 2;
  return true;
}

Evaluator::Evaluator(LossKind loss, const Dataset& train, const Regularization& reg,
                     const FeatureStats& stats, const EvalPlan& plan)
    : loss_(loss), train_(train), reg_(reg), stats_(stats), plan_(plan) {}

void Evaluator::record(RunMetrics& metrics, std::span<const double> w, std::size_t samples,
                       double train_seconds) const {
  auto t0 = std::chrono::steady_clock::now();
  Checkpoint c;
  c.samples = samples;
  c.seconds = train_seconds;
  c.objective = full_objective(loss_, train_, w, reg_, &stats_);
  if (plan_.test != nullptr && !plan_.test->empty()) {
    c.test_error = prediction_error(loss_, *plan_.test, w);
    c.test_loss = mean_loss(loss_, *plan_.test, w);
  } else {
    c.test_error = kNaN;
    c.test_loss = kNaN;
  }
  c.gap = plan_.f_star ? c.objective - *plan_.f_star : kNaN;
  metrics.checkpoints.push_back(c);
  metrics.eval_seconds +=
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool all_finite(std::span<const double> w) {
  for (double v : w) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void write_metrics_csv(std::ostream& out, const RunMetrics& metrics) {
  out << "samples,seconds,objective,test_error\n";
  for (const auto& c : metrics.checkpoints) {
    out << c.samples << ',';
    put_real(out, c.seconds);
    out << ',';
    put_real(out, c.objective);
    out << ',';
    put_real(out, c.test_error);
    out << '\n';
  }
}

std::vector<Checkpoint> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("samples,seconds,objective,test_error", 0) != 0) {
    throw ParseError(1, "missing metrics header");
  }
  std::vector<Checkpoint> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() < 4) throw ParseError(lineno, "expected 4 columns");
    auto real = [&](const std::string& s) {
      if (s == "nan") return kNaN;
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || ptr != s.data() + s.size()) throw ParseError(lineno, "bad number '" + s + "'");
      return v;
    };
    Checkpoint c;
    c.samples = static_cast<std::size_t>(real(cells[0]));
    c.seconds = real(cells[1]);
    c.objective = real(cells[2]);
    c.test_error = real(cells[3]);
    c.test_loss = kNaN;
    c.gap = kNaN;
    out.push_back(c);
  }
  return out;
}

std::string metrics_to_json(const RunMetrics& metrics) {
  nlohmann::json j;
  j["method"] = metrics.method;
  nlohmann::json cfg = nlohmann::json::object();
  for (const auto& [k, v] : metrics.config) cfg[k] = v;
  j["config"] = cfg;
  j["workers"] = metrics.workers;
  j["batch"] = metrics.batch;
  j["samples_processed"] = metrics.samples_processed;
  j["train_seconds"] = metrics.train_seconds;
  j["eval_seconds"] = metrics.eval_seconds;
  j["samples_per_second"] = metrics.samples_per_second();
  j["diverged"] = metrics.diverged;
  j["sigma2"] = metrics.sigma2 ? nlohmann::json(*metrics.sigma2) : nlohmann::json(nullptr);
  auto& rows = j["checkpoints"] = nlohmann::json::array();
  for (const auto& c : metrics.checkpoints) {
    rows.push_back({{"samples", c.samples},
                    {"seconds", c.seconds},
                    {"objective", finite_or_null(c.objective)},
                    {"test_error", finite_or_null(c.test_error)},
                    {"test_loss", finite_or_null(c.test_loss)},
                    {"gap", finite_or_null(c.gap)}});
  }
  return j.dump(2);
}

}  // namespace adabatch
