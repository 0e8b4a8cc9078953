// Python surface: config-driven runs and sweeps, checkpoint sampling,
// curve alignment, preprocessing, and parameter accounting. Arrays cross
// the boundary as numpy float64; everything else is JSON text or plain
// Python scalars.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "scorelab/analysis.hpp"
#include "scorelab/dataio.hpp"
#include "scorelab/errors.hpp"
#include "scorelab/experiment.hpp"
#include "scorelab/models.hpp"

namespace py = pybind11;
using namespace scorelab;

namespace {

Tensor tensor_from_array(const py::array_t<double>& a) {
  py::buffer_info info = a.request();
  std::vector<std::size_t> shape(info.shape.begin(), info.shape.end());
  Tensor t(shape);
  py::array_t<double> contiguous = py::array_t<double>::ensure(a);
  std::memcpy(t.values().data(), contiguous.request().ptr,
              t.size() * sizeof(double));
  return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> a(shape);
  std::memcpy(a.request().ptr, t.values().data(), t.size() * sizeof(double));
  return a;
}

ExperimentConfig config_with_overrides(const std::string& config_text,
                                       const std::optional<std::string>& out,
                                       const std::optional<std::uint64_t>& seed) {
  ExperimentConfig cfg = parse_config_text(config_text);
  if (out) cfg.out_dir = *out;
  if (seed) cfg.seed = *seed;
  return cfg;
}

py::dict run_summary(const ExperimentConfig& cfg, const RunResult& r) {
  py::dict d;
  d["task"] = cfg.task;
  d["metric"] = r.metric;
  d["mean_best"] = r.mean_best;
  d["std_best"] = r.std_best;
  d["fold_best"] = r.fold_best;
  d["diverged"] = r.diverged;
  d["param_total"] = r.params.total;
  d["block_params"] = r.block_params;
  d["block_evals"] = r.block_evals;
  d["out_dir"] = cfg.out_dir;
  return d;
}

}  // namespace

PYBIND11_MODULE(_scorelab, m) {
  m.doc() =
      "Contractive weight-tied recurrent-depth training laboratory: "
      "experiment runner, sweeps, sampling, and curve analysis.";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<DivergedError>(m, "DivergedError",
                                        PyExc_RuntimeError);

  m.def(
      "normalize_config",
      [](const std::string& config_text) {
        return serialize_config(parse_config_text(config_text));
      },
      py::arg("config_text"),
      "Parse a config and re-emit it with every field filled in.");

  m.def(
      "run",
      [](const std::string& config_text, std::optional<std::string> out_dir,
         std::optional<std::uint64_t> seed) {
        ExperimentConfig cfg =
            config_with_overrides(config_text, out_dir, seed);
        RunResult result = run_experiment(cfg);
        write_run_artifacts(cfg, result);
        return run_summary(cfg, result);
      },
      py::arg("config_text"), py::arg("out_dir") = std::nullopt,
      py::arg("seed") = std::nullopt,
      "Train one configuration, write its artifacts, return the summary.");

  m.def(
      "sweep",
      [](const std::string& config_text, std::optional<std::string> out_dir,
         std::optional<std::uint64_t> seed) {
        ExperimentConfig cfg =
            config_with_overrides(config_text, out_dir, seed);
        SweepResult result = sweep_experiment(cfg);
        write_sweep_artifacts(cfg, result);
        return comparison_csv(result);
      },
      py::arg("config_text"), py::arg("out_dir") = std::nullopt,
      py::arg("seed") = std::nullopt,
      "Run every point along the configured sweep axis; returns the "
      "comparison table as CSV text.");

  m.def("generate", &generate_text, py::arg("checkpoint_path"),
        py::arg("prompt"), py::arg("length") = 200,
        py::arg("temperature") = 0.0, py::arg("seed") = 0,
        "Sample text from a saved language-model checkpoint.");

  m.def(
      "analyze",
      [](const std::string& reference_dir, const std::string& compared_dir,
         const std::string& out_path) {
        WarpFit fit = analyze_directories(reference_dir, compared_dir,
                                          out_path);
        py::dict d;
        d["factor"] = fit.factor;
        d["residual"] = fit.residual;
        return d;
      },
      py::arg("reference_dir"), py::arg("compared_dir"),
      py::arg("out_path") = "warp.json",
      "Fit the epoch-axis factor aligning two finished runs.");

  m.def(
      "time_warp",
      [](const std::vector<int>& reference_steps,
         const std::vector<double>& reference_vals,
         const std::vector<int>& compared_steps,
         const std::vector<double>& compared_vals) {
        auto curve = [](const std::vector<int>& s,
                        const std::vector<double>& v) {
          LearningCurve c;
          c.metric = "metric";
          c.steps = s;
          c.train = v;
          c.val = v;
          c.wall_ms.assign(v.size(), 0.0);
          return c;
        };
        WarpFit fit = time_warp_fit(curve(reference_steps, reference_vals),
                                    curve(compared_steps, compared_vals));
        py::dict d;
        d["factor"] = fit.factor;
        d["residual"] = fit.residual;
        d["grid"] = fit.grid;
        return d;
      },
      py::arg("reference_steps"), py::arg("reference_vals"),
      py::arg("compared_steps"), py::arg("compared_vals"),
      "Best epoch-axis compression aligning two validation curves.");

  m.def(
      "preprocess",
      [](const py::array_t<double>& features) {
        Tensor t = tensor_from_array(features);
        if (t.shape().size() != 2) {
          throw ShapeError("preprocess expects a 2-d array");
        }
        FeatureMatrix raw;
        raw.rows = t.extent(0);
        raw.cols = t.extent(1);
        raw.values = std::move(t);
        raw.targets.assign(raw.rows, 0.0);
        auto [clean, stats] = scorelab::preprocess(raw);
        (void)stats;
        return array_from_tensor(clean.values);
      },
      py::arg("features"),
      "Arcsinh-squash and standardize a feature matrix; non-finite cells "
      "become exact zeros.");

  m.def(
      "dirichlet_energy",
      [](const py::array_t<double>& embeddings,
         const std::vector<std::pair<int, int>>& edges)
          -> std::optional<double> {
        EnergyResult r =
            scorelab::dirichlet_energy(tensor_from_array(embeddings), edges);
        if (r.empty) return std::nullopt;
        return r.value;
      },
      py::arg("embeddings"), py::arg("edges"),
      "Mean squared embedding gap over edges; None when there are no "
      "edges.");

  m.def(
      "param_counts",
      [](const std::string& config_text, std::size_t vocab_size,
         std::size_t node_dim, std::size_t descriptor_dim) {
        ExperimentConfig cfg = parse_config_text(config_text);
        Rng rng(cfg.seed);
        py::dict d;
        auto fill = [&](auto& model) {
          d["total"] = count_params(model.param_groups()).total;
          d["block_params"] = model.block_params();
          d["block_evals"] = model.block_evals();
        };
        if (cfg.task == "language_model") {
          CharLM model(vocab_size, cfg.model, cfg.depth, rng);
          fill(model);
        } else if (cfg.task == "regression_graph") {
          GraphModel model(node_dim, descriptor_dim, cfg.model, cfg.depth,
                           rng);
          fill(model);
        } else {
          TabularModel model(cfg.synth.d, cfg.model, cfg.depth, rng);
          fill(model);
        }
        return d;
      },
      py::arg("config_text"), py::arg("vocab_size") = 65,
      py::arg("node_dim") = 5, py::arg("descriptor_dim") = 0,
      "Parameter totals for the configured model without training it. "
      "Input widths that normally come from the dataset (vocabulary size, "
      "node feature width, descriptor width) are taken from the keyword "
      "arguments.");

  m.def("format_dt", &format_dt, py::arg("value"),
        "Render a step size with a three-decimal ceiling, zeros trimmed.");
}
