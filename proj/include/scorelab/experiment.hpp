#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "scorelab/analysis.hpp"
#include "scorelab/dynamics.hpp"
#include "scorelab/models.hpp"
#include "scorelab/training.hpp"

namespace scorelab {

/// Built-in dataset generator selection; `kind` must match the task
/// (regression, graphs, or text).
struct SynthSpec {
  std::string kind;
  std::size_t n = 1000;          // regression rows
  std::size_t d = 20;            // regression columns
  double noise = 0.1;            // regression label noise
  std::size_t count = 500;       // graphs
  int min_nodes = 6;
  int max_nodes = 14;
  std::size_t min_bytes = 120000;  // text
  std::uint64_t seed = 1;
};

/// One experiment fully described: task, model and depth hyperparameters,
/// optimizer budget, data source, seeding, and output location. Parsed from
/// a single JSON document; see the README for the schema.
struct ExperimentConfig {
  std::string task;  // regression_tabular | regression_graph | language_model
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  ModelConfig model;
  DepthConfig depth;
  TrainOptions training;
  int folds = 5;
  std::string data_path;  // empty means synthetic
  SynthSpec synth;
  bool synthetic = false;
  std::string sweep_axis;  // steps | integrator | wiring (sweep runs only)
};

ExperimentConfig parse_config_text(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

/// Normalized JSON for the config: every field emitted, defaults filled in.
/// parse(serialize(parse(x))) equals parse(x) field by field.
std::string serialize_config(const ExperimentConfig& cfg);

/// Outcome of one experiment: per-fold learning curves (a single curve for
/// language models), their best validation values, fold statistics, and
/// bookkeeping for reporting. All values are reproducible from the config.
struct RunResult {
  std::string metric;
  std::vector<LearningCurve> curves;
  std::vector<double> fold_best;
  double mean_best = 0.0;
  double std_best = 0.0;  // sample standard deviation over folds
  bool diverged = false;
  ParamReport params;
  std::size_t block_params = 0;
  long block_evals = 0;
  std::string checkpoint_json;  // language models only
};

RunResult run_experiment(const ExperimentConfig& cfg);

/// Writes config.json, per-fold CSVs (epoch,train_metric,val_metric,wall_ms),
/// params.json, summary.json, plot.svg, and for language models
/// checkpoint.json, all under cfg.out_dir.
void write_run_artifacts(const ExperimentConfig& cfg, const RunResult& result);

/// Reads back a curve CSV produced by write_run_artifacts.
LearningCurve load_curve_csv(const std::string& path,
                             const std::string& metric);

struct SweepPoint {
  std::string label;      // axis value: step count, integrator, or wiring
  double dt = 0.0;        // step size in effect at this point
  RunResult score;        // the run under study
  RunResult native;       // stacked baseline (unused for the wiring axis)
  bool paired = false;    // whether `native` was populated
};

struct SweepResult {
  std::string axis;
  std::vector<SweepPoint> points;
};

/// One run per axis value. The steps axis (2..7) and integrator axis pair
/// every point with a stacked baseline at identical hyperparameters; the
/// wiring axis runs the five configurations unpaired. Concurrency is capped
/// by SCORE_LAB_THREADS (default 1). No artifacts are written.
SweepResult sweep_experiment(const ExperimentConfig& cfg);

/// Writes each point's artifacts under cfg.out_dir/<axis>_<label>[_native]
/// plus comparison.csv at the top level.
void write_sweep_artifacts(const ExperimentConfig& cfg,
                           const SweepResult& result);

/// Comparison table text. Columns: steps|integrator,dt,score,native,diff,
/// improvement for paired axes; wiring,mean,std for the wiring axis.
/// diff = native - score and improvement = diff / native.
std::string comparison_csv(const SweepResult& result);

/// Step sizes rendered with three-decimal ceilings, trailing zeros trimmed
/// (1/3 -> "0.334", 1/2 -> "0.5").
std::string format_dt(double v);

/// Autoregressive sampling from a saved language-model checkpoint. Returns
/// the prompt plus `length` generated characters. Temperatures at or below
/// 1e-6 decode greedily; otherwise sampling is seeded and deterministic.
/// Prompts with out-of-vocabulary characters are rejected, listing them.
std::string generate_text(const std::string& checkpoint_path,
                          const std::string& prompt, int length,
                          double temperature, std::uint64_t seed);

/// Aligns the validation curves of two finished runs (reads each directory's
/// summary.json and first curve CSV) and writes warp.json to out_path.
WarpFit analyze_directories(const std::string& reference_dir,
                            const std::string& compared_dir,
                            const std::string& out_path);

}  // namespace scorelab
