// Command-line front end: run, sweep, generate, analyze, and plot
// subcommands over JSON experiment configs. Exit codes: 0 success,
// 1 bad configuration, 2 training diverged, 3 I/O or data failure.

#include <CLI11.hpp>

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "scorelab/errors.hpp"
#include "scorelab/experiment.hpp"
#include "scorelab/plot.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigFailure = 1;
constexpr int kDiverged = 2;
constexpr int kIoFailure = 3;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON experiment config")
      ->required();
  cmd->add_option("--out", args.out_dir, "override the output directory");
  cmd->add_option("--seed", args.seed, "override the config seed");
}

scorelab::ExperimentConfig load(const CommonArgs& args) {
  scorelab::ExperimentConfig cfg = scorelab::load_config(args.config_path);
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  if (args.seed) cfg.seed = *args.seed;
  return cfg;
}

int cmd_run(const CommonArgs& args) {
  scorelab::ExperimentConfig cfg = load(args);
  scorelab::RunResult result = scorelab::run_experiment(cfg);
  scorelab::write_run_artifacts(cfg, result);
  std::cout << "wrote " << cfg.out_dir << " (" << result.metric
            << " mean best " << result.mean_best << ")\n";
  return result.diverged ? kDiverged : kOk;
}

int cmd_sweep(const CommonArgs& args) {
  scorelab::ExperimentConfig cfg = load(args);
  scorelab::SweepResult result = scorelab::sweep_experiment(cfg);
  scorelab::write_sweep_artifacts(cfg, result);
  bool diverged = false;
  for (const scorelab::SweepPoint& p : result.points) {
    diverged = diverged || p.score.diverged ||
               (p.paired && p.native.diverged);
  }
  std::cout << "wrote " << cfg.out_dir << "/comparison.csv ("
            << result.points.size() << " points on axis " << result.axis
            << ")\n";
  return diverged ? kDiverged : kOk;
}

int cmd_generate(const std::string& checkpoint, const std::string& prompt,
                 int length, double temperature, std::uint64_t seed) {
  std::cout << scorelab::generate_text(checkpoint, prompt, length, temperature,
                                       seed)
            << "\n";
  return kOk;
}

int cmd_analyze(const std::string& reference, const std::string& compared,
                const std::string& out) {
  scorelab::WarpFit fit = scorelab::analyze_directories(reference, compared,
                                                        out);
  std::cout << "wrote " << out << " (factor " << fit.factor << ", residual "
            << fit.residual << ")\n";
  return kOk;
}

int cmd_plot(const std::vector<std::string>& csvs, const std::string& out,
             const std::string& metric) {
  if (csvs.empty()) {
    throw scorelab::ConfigError("plot: need at least one curve csv");
  }
  std::vector<scorelab::PlotSeries> series;
  for (const std::string& path : csvs) {
    scorelab::LearningCurve c = scorelab::load_curve_csv(path, metric);
    scorelab::PlotSeries s;
    s.label = std::filesystem::path(path).stem().string();
    for (std::size_t i = 0; i < c.steps.size(); ++i) {
      s.x.push_back(c.steps[i]);
      s.y.push_back(c.val[i]);
    }
    series.push_back(std::move(s));
  }
  scorelab::write_svg_plot(series, "epoch", metric, "validation curves", out);
  std::cout << "wrote " << out << " (" << series.size() << " series)\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"score-lab: contractive recurrent-depth experiments"};
  app.require_subcommand(1);

  CommonArgs run_args;
  CLI::App* run = app.add_subcommand("run", "train one configuration");
  add_common(run, run_args);

  CommonArgs sweep_args;
  CLI::App* sweep =
      app.add_subcommand("sweep", "train every point along a sweep axis");
  add_common(sweep, sweep_args);

  std::string gen_checkpoint, gen_prompt = " ";
  int gen_length = 200;
  double gen_temperature = 0.0;
  std::uint64_t gen_seed = 0;
  CLI::App* generate =
      app.add_subcommand("generate", "sample text from a saved checkpoint");
  generate->add_option("--config", gen_checkpoint, "checkpoint.json path")
      ->required();
  generate->add_option("--prompt", gen_prompt, "prompt text");
  generate->add_option("--length", gen_length, "characters to generate");
  generate->add_option("--temperature", gen_temperature,
                       "0 decodes greedily");
  generate->add_option("--seed", gen_seed, "sampling seed");

  std::string ana_reference, ana_compared, ana_out = "warp.json";
  CLI::App* analyze = app.add_subcommand(
      "analyze", "fit an effort-scaling factor between two run directories");
  analyze->add_option("--config", ana_reference,
                      "reference run directory")
      ->required();
  analyze->add_option("--compared", ana_compared, "compared run directory")
      ->required();
  analyze->add_option("--out", ana_out, "output JSON path");

  std::vector<std::string> plot_csvs;
  std::string plot_out = "plot.svg", plot_metric = "metric";
  CLI::App* plot =
      app.add_subcommand("plot", "render curve CSVs as an SVG chart");
  plot->add_option("--config", plot_csvs, "curve csv paths")->required();
  plot->add_option("--out", plot_out, "output SVG path");
  plot->add_option("--metric", plot_metric, "y-axis label");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(run_args);
    if (sweep->parsed()) return cmd_sweep(sweep_args);
    if (generate->parsed()) {
      return cmd_generate(gen_checkpoint, gen_prompt, gen_length,
                          gen_temperature, gen_seed);
    }
    if (analyze->parsed()) return cmd_analyze(ana_reference, ana_compared,
                                              ana_out);
    if (plot->parsed()) return cmd_plot(plot_csvs, plot_out, plot_metric);
  } catch (const scorelab::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigFailure;
  } catch (const scorelab::DivergedError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDiverged;
  } catch (const scorelab::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIoFailure;
  } catch (const scorelab::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIoFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigFailure;
  }
  return kConfigFailure;
}
