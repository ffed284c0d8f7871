#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <string>

#include "adabatch/aggregation.hpp"
#include "adabatch/bench.hpp"
#include "adabatch/losses.hpp"
#include "adabatch/sgd.hpp"
#include "adabatch/sparse.hpp"
#include "adabatch/stats_oracle.hpp"
#include "adabatch/svrg.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace adabatch;

namespace {

LossKind parse_loss(const std::string& s) {
  if (s == "logistic") return LossKind::logistic;
  if (s == "squared") return LossKind::squared;
  throw UsageError("loss must be 'logistic' or 'squared'");
}

L2Metric parse_metric(const std::string& s) {
  if (s == "id") return L2Metric::identity;
  if (s == "p") return L2Metric::diag_p;
  throw UsageError("l2_metric must be 'id' or 'p'");
}

MergeRule parse_rule(const std::string& s) {
  if (s == "mb") return MergeRule::minibatch;
  if (s == "ab") return MergeRule::adabatch;
  if (s == "cbp") return MergeRule::cbp;
  if (s == "invp") return MergeRule::inv_p;
  throw UsageError("rule must be one of mb, ab, cbp, invp");
}

py::array_t<double> to_array(std::span<const double> v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<double> from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 1) throw PreconditionError("expected a 1-d array");
  return {a.data(), a.data() + a.size()};
}

DiscreteLaw make_law(const std::vector<std::pair<double, double>>& atoms) {
  std::vector<Atom> out;
  for (const auto& [v, p] : atoms) out.push_back({v, p});
  return DiscreteLaw(std::move(out));
}

py::dict metrics_dict(const RunMetrics& m) {
  py::list rows;
  for (const auto& c : m.checkpoints) {
    rows.append(py::dict("samples"_a = c.samples, "seconds"_a = c.seconds, "objective"_a = c.objective,
                         "test_error"_a = c.test_error, "test_loss"_a = c.test_loss, "gap"_a = c.gap));
  }
  py::dict config;
  for (const auto& [k, v] : m.config) config[py::str(k)] = v;
  return py::dict("method"_a = m.method, "config"_a = config, "checkpoints"_a = rows,
                  "samples_processed"_a = m.samples_processed, "train_seconds"_a = m.train_seconds,
                  "diverged"_a = m.diverged, "final_weights"_a = to_array(m.final_weights));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sparse mini-batch SGD with AdaBatch aggregation";

  auto base = py::register_exception<Error>(m, "AdaBatchError", PyExc_RuntimeError);
  py::register_exception<PreconditionError>(m, "PreconditionError", base.ptr());
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<StatsMismatchError>(m, "StatsMismatchError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());

  py::class_<Dataset>(m, "Dataset")
      .def(py::init([](const std::vector<std::vector<std::pair<Index, double>>>& rows,
                       const std::vector<double>& labels, std::size_t dim) {
             if (rows.size() != labels.size()) throw PreconditionError("rows and labels differ in length");
             std::vector<Example> ex;
             ex.reserve(rows.size());
             for (std::size_t i = 0; i < rows.size(); ++i) {
               std::vector<SparseEntry> e;
               for (const auto& [k, v] : rows[i]) e.push_back({k, v});
               ex.push_back({SparseVector(std::move(e), dim), labels[i]});
             }
             return Dataset(std::move(ex), dim);
           }),
           "rows"_a, "labels"_a, "dim"_a, "rows: list of [(index, value), ...] with sorted 0-based indices")
      .def_property_readonly("dim", &Dataset::dim)
      .def("__len__", &Dataset::size)
      .def("labels", [](const Dataset& d) {
        std::vector<double> y;
        for (const auto& e : d.examples()) y.push_back(e.label);
        return to_array(y);
      })
      .def("row", [](const Dataset& d, std::size_t i) {
        if (i >= d.size()) throw py::index_error();
        std::vector<std::pair<Index, double>> out;
        for (const auto& e : d[i].features) out.emplace_back(e.index, e.value);
        return out;
      });

  py::class_<FeatureStats>(m, "FeatureStats")
      .def(py::init([](const py::array_t<double, py::array::c_style | py::array::forcecast>& p) {
        return FeatureStats(from_array(p));
      }))
      .def_property_readonly("p", [](const FeatureStats& s) { return to_array(s.p()); })
      .def_property_readonly("pmin", &FeatureStats::pmin)
      .def_property_readonly("pmax", &FeatureStats::pmax)
      .def_property_readonly("dim", &FeatureStats::dim);

  m.def("load_libsvm", [](const std::string& path) { return load_libsvm(path); }, "path"_a);
  m.def("estimate_feature_probabilities", &estimate_feature_probabilities, "data"_a);
  m.def("normalize_rows", &normalize_rows, "data"_a);
  m.def(
      "gen_synthetic",
      [](std::size_t dim, std::size_t examples, double p_low, double p_high, double noise,
         const std::string& task, std::uint64_t seed) {
        SyntheticSpec spec;
        spec.dim = dim;
        spec.examples = examples;
        spec.p_low = p_low;
        spec.p_high = p_high;
        spec.noise = noise;
        spec.seed = seed;
        spec.task = task == "logistic" ? TaskKind::logistic : TaskKind::squared;
        auto s = gen_synthetic(spec);
        return py::make_tuple(std::move(s.data), to_array(s.true_weights));
      },
      "dim"_a = 100, "examples"_a = 1000, "p_low"_a = 0.01, "p_high"_a = 0.5, "noise"_a = 0.0,
      "task"_a = "squared", "seed"_a = 0);

  m.def("cbp_scale", &cbp_scale, "p"_a, "batch"_a);
  m.def(
      "full_objective",
      [](const Dataset& d, const py::array_t<double, py::array::c_style | py::array::forcecast>& w,
         const std::string& loss, double l2, const std::string& metric) {
        const auto stats = estimate_feature_probabilities(d);
        return full_objective(parse_loss(loss), d, from_array(w), {l2, parse_metric(metric)}, &stats);
      },
      "data"_a, "w"_a, "loss"_a = "logistic", "l2"_a = 0.0, "l2_metric"_a = "p");
  m.def(
      "full_gradient",
      [](const Dataset& d, const py::array_t<double, py::array::c_style | py::array::forcecast>& w,
         const std::string& loss, double l2, const std::string& metric) {
        const auto stats = estimate_feature_probabilities(d);
        return to_array(full_gradient(d, parse_loss(loss), from_array(w), {l2, parse_metric(metric)}, &stats));
      },
      "data"_a, "w"_a, "loss"_a = "logistic", "l2"_a = 0.0, "l2_metric"_a = "p");

  m.def(
      "train",
      [](const Dataset& train, const std::string& engine, const std::string& rule, double gamma,
         std::size_t batch, std::optional<std::size_t> workers, std::size_t budget, std::uint64_t seed,
         const std::string& loss, double l2, const std::string& metric, std::optional<Dataset> test) {
        RunSpec spec;
        spec.engine = engine;
        spec.rule = rule;
        spec.gamma = gamma;
        spec.batch = batch;
        spec.workers = workers;
        spec.budget = budget;
        spec.seed = seed;
        spec.reg = {l2, parse_metric(metric)};
        PreparedData data;
        data.train = train;
        data.stats = estimate_feature_probabilities(train);
        if (test) data.test = *test;
        EvalPlan plan;
        if (test) plan.test = &data.test;
        RunMetrics out;
        {
          py::gil_scoped_release release;
          out = run_spec(spec, parse_loss(loss), data, plan);
        }
        return metrics_dict(out);
      },
      "data"_a, "engine"_a = "sgd", "rule"_a = "mb", "gamma"_a = 0.1, "batch"_a = 1,
      "workers"_a = py::none(), "budget"_a = 0, "seed"_a = 0, "loss"_a = "logistic", "l2"_a = 0.0,
      "l2_metric"_a = "p", "test"_a = py::none(),
      "Runs one configuration; returns a dict with checkpoints and final weights.");

  m.def(
      "max_stable_step",
      [](const std::string& rule, double L, double R2, const FeatureStats& stats, std::size_t batch) {
        CurvatureConstants c;
        c.L = L;
        c.R2 = R2;
        return max_stable_step(parse_rule(rule), c, stats, batch);
      },
      "rule"_a, "L"_a, "R2"_a, "stats"_a, "batch"_a);

  using Atoms = std::vector<std::pair<double, double>>;
  m.def("lemma1_mean", [](const Atoms& a, std::size_t n) { return lemma1_mean(make_law(a), n); }, "atoms"_a, "n"_a);
  m.def("lemma1_second_moment", [](const Atoms& a, std::size_t n) { return lemma1_second_moment(make_law(a), n); },
        "atoms"_a, "n"_a);
  m.def("lemma1_second_moment_bound",
        [](const Atoms& a, std::size_t n) { return lemma1_second_moment_bound(make_law(a), n); }, "atoms"_a, "n"_a);
  m.def("lemma2_bound", [](const Atoms& a, std::size_t n) { return lemma2_bound(make_law(a), n); }, "atoms"_a,
        "n"_a);
  m.def(
      "brute_force_moments",
      [](const Atoms& a, std::size_t n) {
        auto r = brute_force_moments(make_law(a), n);
        return py::make_tuple(r.mean, r.second);
      },
      "atoms"_a, "n"_a);
  m.def("inverse_count_expectation", &inverse_count_expectation, "n"_a, "p"_a);
  m.def(
      "run_lemma_suite",
      [](std::size_t laws, std::size_t max_n, std::size_t mc_trials, std::uint64_t seed) {
        LemmaSuiteOptions o;
        o.random_laws = laws;
        o.max_n = max_n;
        o.mc_trials = mc_trials;
        o.seed = seed;
        py::list out;
        for (const auto& c : run_lemma_suite(o)) {
          out.append(py::dict("name"_a = c.name, "cases"_a = c.cases, "max_deviation"_a = c.max_deviation,
                              "passed"_a = c.passed));
        }
        return out;
      },
      "laws"_a = 100, "max_n"_a = 8, "mc_trials"_a = 0, "seed"_a = 1);
}
