#include "scorelab/experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "scorelab/dataio.hpp"
#include "scorelab/errors.hpp"
#include "scorelab/plot.hpp"

namespace scorelab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void config_fail(const std::string& msg) {
  throw ConfigError("config: " + msg);
}

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      config_fail("unknown field '" + where + it.key() + "'");
    }
  }
}

const json* section(const json& j, const std::string& key) {
  if (!j.contains(key)) return nullptr;
  if (!j.at(key).is_object()) config_fail("'" + key + "' must be an object");
  return &j.at(key);
}

template <typename T>
T field_or(const json& j, const std::string& key, T fallback,
           const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    config_fail("field '" + where + key + "' has the wrong type");
  }
}

std::string string_field(const json& j, const std::string& key,
                         const std::string& fallback,
                         const std::string& where) {
  return field_or<std::string>(j, key, fallback, where);
}

void require_positive(long v, const std::string& name) {
  if (v <= 0) config_fail("'" + name + "' must be positive");
}

ModelConfig parse_model(const json* j) {
  ModelConfig mc;
  if (!j) return mc;
  check_keys(*j,
             {"embed_dim", "n_heads", "context", "activation", "aggregation",
              "readout_rounds", "use_graph_features", "head"},
             "model.");
  mc.embed_dim = field_or<std::size_t>(*j, "embed_dim", mc.embed_dim, "model.");
  mc.n_heads = field_or<std::size_t>(*j, "n_heads", mc.n_heads, "model.");
  mc.context = field_or<std::size_t>(*j, "context", mc.context, "model.");
  mc.activation = activation_from_string(
      string_field(*j, "activation", to_string(mc.activation), "model."));
  mc.aggregation = aggregation_from_string(
      string_field(*j, "aggregation", to_string(mc.aggregation), "model."));
  mc.readout_rounds =
      field_or<int>(*j, "readout_rounds", mc.readout_rounds, "model.");
  mc.use_graph_features = field_or<bool>(*j, "use_graph_features",
                                         mc.use_graph_features, "model.");
  if (const json* h = section(*j, "head")) {
    check_keys(*h, {"kind", "steps"}, "model.head.");
    mc.head = string_field(*h, "kind", mc.head, "model.head.");
    mc.head_steps = field_or<int>(*h, "steps", mc.head_steps, "model.head.");
  }
  require_positive(static_cast<long>(mc.embed_dim), "model.embed_dim");
  require_positive(static_cast<long>(mc.n_heads), "model.n_heads");
  require_positive(static_cast<long>(mc.context), "model.context");
  if (mc.readout_rounds < 0) config_fail("'model.readout_rounds' must be >= 0");
  if (mc.head != "linear" && mc.head != "stacked_mlp" &&
      mc.head != "score_mlp") {
    config_fail("unknown head kind '" + mc.head + "'");
  }
  require_positive(mc.head_steps, "model.head.steps");
  return mc;
}

DepthConfig parse_depth(const json* j) {
  DepthConfig dc;
  if (!j) return dc;
  check_keys(*j, {"wiring", "steps", "integrator", "schedule"}, "depth.");
  dc.wiring =
      wiring_from_string(string_field(*j, "wiring", to_string(dc.wiring),
                                      "depth."));
  dc.steps = field_or<int>(*j, "steps", dc.steps, "depth.");
  dc.integrator = integrator_from_string(
      string_field(*j, "integrator", to_string(dc.integrator), "depth."));
  if (const json* s = section(*j, "schedule")) {
    check_keys(*s, {"kind", "value"}, "depth.schedule.");
    dc.schedule.kind = schedule_from_string(
        string_field(*s, "kind", to_string(dc.schedule.kind),
                     "depth.schedule."));
    dc.schedule.fixed_value = field_or<double>(*s, "value",
                                               dc.schedule.fixed_value,
                                               "depth.schedule.");
  }
  require_positive(dc.steps, "depth.steps");
  if (dc.schedule.fixed_value < 0.0 || dc.schedule.fixed_value > 1.0) {
    config_fail("'depth.schedule.value' must lie in [0, 1]");
  }
  return dc;
}

std::string default_synth_kind(const std::string& task) {
  if (task == "regression_tabular") return "regression";
  if (task == "regression_graph") return "graphs";
  return "text";
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    config_fail(std::string("invalid JSON (") + e.what() + ")");
  }
  if (!j.is_object()) config_fail("document must be a JSON object");
  check_keys(j,
             {"task", "seed", "out_dir", "model", "depth", "optimizer",
              "training", "data", "sweep"},
             "");

  ExperimentConfig cfg;
  cfg.task = string_field(j, "task", "", "");
  if (cfg.task != "regression_tabular" && cfg.task != "regression_graph" &&
      cfg.task != "language_model") {
    config_fail("unknown task '" + cfg.task + "'");
  }
  cfg.seed = field_or<std::uint64_t>(j, "seed", 0, "");
  cfg.out_dir = string_field(j, "out_dir", "out", "");
  cfg.model = parse_model(section(j, "model"));
  cfg.depth = parse_depth(section(j, "depth"));

  if (const json* o = section(j, "optimizer")) {
    check_keys(*o, {"kind", "lr", "weight_decay"}, "optimizer.");
    cfg.training.optimizer = optimizer_from_string(
        string_field(*o, "kind", to_string(cfg.training.optimizer),
                     "optimizer."));
    cfg.training.lr = field_or<double>(*o, "lr", cfg.training.lr, "optimizer.");
    cfg.training.weight_decay = field_or<double>(
        *o, "weight_decay", cfg.training.weight_decay, "optimizer.");
    if (cfg.training.lr <= 0.0) config_fail("'optimizer.lr' must be positive");
    if (cfg.training.weight_decay < 0.0) {
      config_fail("'optimizer.weight_decay' must be >= 0");
    }
  }

  if (const json* t = section(j, "training")) {
    check_keys(*t,
               {"epochs", "iterations", "batch_size", "folds", "eval_every",
                "grad_clip"},
               "training.");
    cfg.training.epochs =
        field_or<int>(*t, "epochs", cfg.training.epochs, "training.");
    cfg.training.iterations =
        field_or<int>(*t, "iterations", cfg.training.iterations, "training.");
    cfg.training.batch_size =
        field_or<int>(*t, "batch_size", cfg.training.batch_size, "training.");
    cfg.folds = field_or<int>(*t, "folds", cfg.folds, "training.");
    cfg.training.eval_every =
        field_or<int>(*t, "eval_every", cfg.training.eval_every, "training.");
    cfg.training.grad_clip = field_or<double>(*t, "grad_clip",
                                              cfg.training.grad_clip,
                                              "training.");
    require_positive(cfg.training.epochs, "training.epochs");
    require_positive(cfg.training.iterations, "training.iterations");
    require_positive(cfg.training.batch_size, "training.batch_size");
    require_positive(cfg.training.eval_every, "training.eval_every");
    if (cfg.training.grad_clip < 0.0) {
      config_fail("'training.grad_clip' must be >= 0");
    }
  }
  if (cfg.task != "language_model" && cfg.folds < 2) {
    config_fail("'training.folds' must be at least 2 for regression tasks");
  }

  cfg.synth.kind = default_synth_kind(cfg.task);
  cfg.synthetic = true;
  if (const json* d = section(j, "data")) {
    check_keys(*d, {"path", "synthetic"}, "data.");
    bool has_path = d->contains("path");
    bool has_synth = d->contains("synthetic");
    if (has_path == has_synth) {
      config_fail("'data' needs exactly one of 'path' or 'synthetic'");
    }
    if (has_path) {
      cfg.data_path = string_field(*d, "path", "", "data.");
      cfg.synthetic = false;
      if (cfg.data_path.empty()) config_fail("'data.path' is empty");
    } else {
      const json& s = d->at("synthetic");
      if (!s.is_object()) config_fail("'data.synthetic' must be an object");
      check_keys(s,
                 {"kind", "n", "d", "noise", "count", "min_nodes", "max_nodes",
                  "min_bytes", "seed"},
                 "data.synthetic.");
      cfg.synth.kind = string_field(s, "kind", cfg.synth.kind,
                                    "data.synthetic.");
      cfg.synth.n = field_or<std::size_t>(s, "n", cfg.synth.n,
                                          "data.synthetic.");
      cfg.synth.d = field_or<std::size_t>(s, "d", cfg.synth.d,
                                          "data.synthetic.");
      cfg.synth.noise = field_or<double>(s, "noise", cfg.synth.noise,
                                         "data.synthetic.");
      cfg.synth.count = field_or<std::size_t>(s, "count", cfg.synth.count,
                                              "data.synthetic.");
      cfg.synth.min_nodes = field_or<int>(s, "min_nodes", cfg.synth.min_nodes,
                                          "data.synthetic.");
      cfg.synth.max_nodes = field_or<int>(s, "max_nodes", cfg.synth.max_nodes,
                                          "data.synthetic.");
      cfg.synth.min_bytes = field_or<std::size_t>(s, "min_bytes",
                                                  cfg.synth.min_bytes,
                                                  "data.synthetic.");
      cfg.synth.seed = field_or<std::uint64_t>(s, "seed", cfg.synth.seed,
                                               "data.synthetic.");
      if (cfg.synth.kind != default_synth_kind(cfg.task)) {
        config_fail("synthetic kind '" + cfg.synth.kind +
                    "' does not match task '" + cfg.task + "'");
      }
    }
  }

  if (const json* s = section(j, "sweep")) {
    check_keys(*s, {"axis"}, "sweep.");
    cfg.sweep_axis = string_field(*s, "axis", "", "sweep.");
    if (cfg.sweep_axis != "steps" && cfg.sweep_axis != "integrator" &&
        cfg.sweep_axis != "wiring") {
      config_fail("unknown sweep axis '" + cfg.sweep_axis + "'");
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  return parse_config_text(read_text_file(path));
}

namespace {

json model_to_json(const ModelConfig& mc) {
  json h{{"kind", mc.head}, {"steps", mc.head_steps}};
  return json{{"embed_dim", mc.embed_dim},
              {"n_heads", mc.n_heads},
              {"context", mc.context},
              {"activation", to_string(mc.activation)},
              {"aggregation", to_string(mc.aggregation)},
              {"readout_rounds", mc.readout_rounds},
              {"use_graph_features", mc.use_graph_features},
              {"head", h}};
}

json depth_to_json(const DepthConfig& dc) {
  json s{{"kind", to_string(dc.schedule.kind)},
         {"value", dc.schedule.fixed_value}};
  return json{{"wiring", to_string(dc.wiring)},
              {"steps", dc.steps},
              {"integrator", to_string(dc.integrator)},
              {"schedule", s}};
}

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["task"] = cfg.task;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["model"] = model_to_json(cfg.model);
  j["depth"] = depth_to_json(cfg.depth);
  j["optimizer"] = {{"kind", to_string(cfg.training.optimizer)},
                    {"lr", cfg.training.lr},
                    {"weight_decay", cfg.training.weight_decay}};
  j["training"] = {{"epochs", cfg.training.epochs},
                   {"iterations", cfg.training.iterations},
                   {"batch_size", cfg.training.batch_size},
                   {"folds", cfg.folds},
                   {"eval_every", cfg.training.eval_every},
                   {"grad_clip", cfg.training.grad_clip}};
  if (cfg.synthetic) {
    json s{{"kind", cfg.synth.kind}, {"seed", cfg.synth.seed}};
    if (cfg.synth.kind == "regression") {
      s["n"] = cfg.synth.n;
      s["d"] = cfg.synth.d;
      s["noise"] = cfg.synth.noise;
    } else if (cfg.synth.kind == "graphs") {
      s["count"] = cfg.synth.count;
      s["min_nodes"] = cfg.synth.min_nodes;
      s["max_nodes"] = cfg.synth.max_nodes;
    } else {
      s["min_bytes"] = cfg.synth.min_bytes;
    }
    j["data"] = {{"synthetic", s}};
  } else {
    j["data"] = {{"path", cfg.data_path}};
  }
  if (!cfg.sweep_axis.empty()) j["sweep"] = {{"axis", cfg.sweep_axis}};
  return j;
}

}  // namespace

std::string serialize_config(const ExperimentConfig& cfg) {
  return config_to_json(cfg).dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// shared run helpers
// ---------------------------------------------------------------------------

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void finalize_stats(RunResult& rr) {
  std::size_t n = rr.fold_best.size();
  if (n == 0) return;
  double sum = 0.0;
  for (double v : rr.fold_best) sum += v;
  rr.mean_best = sum / static_cast<double>(n);
  if (n > 1) {
    double sq = 0.0;
    for (double v : rr.fold_best) sq += (v - rr.mean_best) * (v - rr.mean_best);
    rr.std_best = std::sqrt(sq / static_cast<double>(n - 1));
  }
}

FeatureMatrix subset_rows(const FeatureMatrix& m,
                          const std::vector<std::size_t>& idx) {
  FeatureMatrix out;
  out.rows = idx.size();
  out.cols = m.cols;
  out.values = Tensor({idx.size(), m.cols});
  out.targets.resize(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) out.at(r, c) = m.at(idx[r], c);
    out.targets[r] = m.targets[idx[r]];
  }
  return out;
}

RunResult run_tabular(const ExperimentConfig& cfg) {
  FeatureMatrix raw = cfg.synthetic
                          ? synth_regression(cfg.synth.n, cfg.synth.d,
                                             cfg.synth.noise, cfg.synth.seed)
                          : load_feature_csv(cfg.data_path);

  RunResult rr;
  rr.metric = "rmse";
  FoldSpec spec = kfold_split(raw.rows, cfg.folds, cfg.seed);
  for (int f = 0; f < cfg.folds; ++f) {
    std::vector<std::size_t> train_idx = spec.train_indices(f);
    const std::vector<std::size_t>& val_idx = spec.test_indices(f);
    auto [train_clean, stats] = preprocess(subset_rows(raw, train_idx));
    (void)train_clean;
    FeatureMatrix clean = apply_preprocess(raw, stats);

    Rng model_rng(cfg.seed + static_cast<std::uint64_t>(f));
    TabularModel model(raw.cols, cfg.model, cfg.depth, model_rng);
    std::vector<Parameter*> params = model.parameters();
    Rng eval_rng(0);

    auto features_of = [&](const std::vector<std::size_t>& idx) {
      Tensor x({idx.size(), clean.cols});
      for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t c = 0; c < clean.cols; ++c) {
          x.at(r, c) = clean.at(idx[r], c);
        }
      }
      return x;
    };
    auto targets_of = [&](const std::vector<std::size_t>& idx) {
      Tensor y({idx.size(), 1});
      for (std::size_t r = 0; r < idx.size(); ++r) {
        y[r] = clean.targets[idx[r]];
      }
      return y;
    };

    BatchLoss loss = [&](Tape& t, const std::vector<std::size_t>& batch,
                         bool train_mode, Rng& rng) {
      Var pred = model.forward(t, t.constant(features_of(batch)), train_mode,
                               rng);
      return mse_loss(t, pred, t.constant(targets_of(batch)));
    };
    SplitMetric metric = [&](const std::vector<std::size_t>& idx) {
      double se = 0.0;
      constexpr std::size_t kChunk = 512;
      for (std::size_t start = 0; start < idx.size(); start += kChunk) {
        std::vector<std::size_t> sub(
            idx.begin() + static_cast<std::ptrdiff_t>(start),
            idx.begin() + static_cast<std::ptrdiff_t>(
                              std::min(start + kChunk, idx.size())));
        Tape t;
        Var pred = model.forward(t, t.constant(features_of(sub)), false,
                                 eval_rng);
        for (std::size_t i = 0; i < sub.size(); ++i) {
          double d = pred.value()[i] - clean.targets[sub[i]];
          se += d * d;
        }
      }
      return std::sqrt(se / static_cast<double>(idx.size()));
    };

    TrainOptions opt = cfg.training;
    opt.seed = cfg.seed + static_cast<std::uint64_t>(f);
    LearningCurve curve =
        train_epochs(train_idx, val_idx, loss, metric, params, opt, rr.metric);
    rr.diverged = rr.diverged || curve.diverged;
    rr.fold_best.push_back(curve.best());
    rr.curves.push_back(std::move(curve));
    if (f == 0) {
      rr.params = count_params(model.param_groups());
      rr.block_params = model.block_params();
      rr.block_evals = model.block_evals();
    }
  }
  finalize_stats(rr);
  return rr;
}

RunResult run_graph(const ExperimentConfig& cfg) {
  GraphDataset ds =
      cfg.synthetic
          ? synth_graphs(cfg.synth.count,
                         {cfg.synth.min_nodes, cfg.synth.max_nodes},
                         cfg.synth.seed)
          : load_graph_dataset(cfg.data_path);
  if (ds.size() == 0) throw DataError("graph dataset is empty");
  if (cfg.model.use_graph_features && !ds.has_descriptors()) {
    config_fail(
        "'model.use_graph_features' set but the dataset has no descriptor "
        "rows");
  }
  std::size_t node_dim = ds.graphs[0].node_features.extent(1);
  std::size_t desc_dim = ds.has_descriptors() ? ds.descriptors.cols : 0;

  RunResult rr;
  rr.metric = "rmse";
  FoldSpec spec = kfold_split(ds.size(), cfg.folds, cfg.seed);
  for (int f = 0; f < cfg.folds; ++f) {
    std::vector<std::size_t> train_idx = spec.train_indices(f);
    const std::vector<std::size_t>& val_idx = spec.test_indices(f);

    FeatureMatrix clean_desc;
    if (cfg.model.use_graph_features) {
      auto [train_clean, stats] =
          preprocess(subset_rows(ds.descriptors, train_idx));
      (void)train_clean;
      clean_desc = apply_preprocess(ds.descriptors, stats);
    }

    Rng model_rng(cfg.seed + static_cast<std::uint64_t>(f));
    GraphModel model(node_dim, desc_dim, cfg.model, cfg.depth, model_rng);
    std::vector<Parameter*> params = model.parameters();
    Rng eval_rng(0);

    auto batch_of = [&](const std::vector<std::size_t>& idx) {
      std::vector<const Graph*> graphs;
      graphs.reserve(idx.size());
      for (std::size_t i : idx) graphs.push_back(&ds.graphs[i]);
      return graphs;
    };
    auto descriptors_of = [&](const std::vector<std::size_t>& idx) {
      Tensor d({idx.size(), clean_desc.cols});
      for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t c = 0; c < clean_desc.cols; ++c) {
          d.at(r, c) = clean_desc.at(idx[r], c);
        }
      }
      return d;
    };
    auto targets_of = [&](const std::vector<std::size_t>& idx) {
      Tensor y({idx.size(), 1});
      for (std::size_t r = 0; r < idx.size(); ++r) y[r] = ds.targets[idx[r]];
      return y;
    };
    auto predict = [&](Tape& t, const std::vector<std::size_t>& idx,
                       bool train_mode, Rng& rng) {
      if (cfg.model.use_graph_features) {
        Tensor d = descriptors_of(idx);
        return model.forward(t, batch_of(idx), &d, train_mode, rng);
      }
      return model.forward(t, batch_of(idx), nullptr, train_mode, rng);
    };

    BatchLoss loss = [&](Tape& t, const std::vector<std::size_t>& batch,
                         bool train_mode, Rng& rng) {
      Var pred = predict(t, batch, train_mode, rng);
      return mse_loss(t, pred, t.constant(targets_of(batch)));
    };
    SplitMetric metric = [&](const std::vector<std::size_t>& idx) {
      double se = 0.0;
      constexpr std::size_t kChunk = 128;
      for (std::size_t start = 0; start < idx.size(); start += kChunk) {
        std::vector<std::size_t> sub(
            idx.begin() + static_cast<std::ptrdiff_t>(start),
            idx.begin() + static_cast<std::ptrdiff_t>(
                              std::min(start + kChunk, idx.size())));
        Tape t;
        Var pred = predict(t, sub, false, eval_rng);
        for (std::size_t i = 0; i < sub.size(); ++i) {
          double d = pred.value()[i] - ds.targets[sub[i]];
          se += d * d;
        }
      }
      return std::sqrt(se / static_cast<double>(idx.size()));
    };

    TrainOptions opt = cfg.training;
    opt.seed = cfg.seed + static_cast<std::uint64_t>(f);
    LearningCurve curve =
        train_epochs(train_idx, val_idx, loss, metric, params, opt, rr.metric);
    rr.diverged = rr.diverged || curve.diverged;
    rr.fold_best.push_back(curve.best());
    rr.curves.push_back(std::move(curve));
    if (f == 0) {
      rr.params = count_params(model.param_groups());
      rr.block_params = model.block_params();
      rr.block_evals = model.block_evals();
    }
  }
  finalize_stats(rr);
  return rr;
}

std::string checkpoint_text(const ExperimentConfig& cfg,
                            const std::vector<char>& vocab, CharLM& model) {
  json ck;
  ck["format"] = "scorelab-checkpoint-v1";
  ck["task"] = "language_model";
  ck["vocab"] = std::string(vocab.begin(), vocab.end());
  ck["model"] = model_to_json(cfg.model);
  ck["depth"] = depth_to_json(cfg.depth);
  json params = json::array();
  for (Parameter* p : model.parameters()) {
    params.push_back({{"name", p->name},
                      {"shape", p->value.shape()},
                      {"values", p->value.values()}});
  }
  ck["params"] = std::move(params);
  return ck.dump() + "\n";
}

RunResult run_lm(const ExperimentConfig& cfg) {
  std::string text = cfg.synthetic
                         ? synth_text(cfg.synth.min_bytes, cfg.synth.seed)
                         : read_text_file(cfg.data_path);
  TextCorpus corpus = tokenize_chars(text);
  std::size_t T = cfg.model.context;
  if (corpus.train_boundary <= T + 1 ||
      corpus.tokens.size() - corpus.train_boundary <= T + 1) {
    throw DataError("language model: corpus of " +
                    std::to_string(corpus.tokens.size()) +
                    " tokens is too short for context " + std::to_string(T));
  }
  std::size_t train_positions = corpus.train_boundary - T;

  Rng model_rng(cfg.seed);
  CharLM model(corpus.vocab_size(), cfg.model, cfg.depth, model_rng);
  std::vector<Parameter*> params = model.parameters();

  auto window_at = [&](std::size_t s) {
    return std::vector<int>(corpus.tokens.begin() +
                                static_cast<std::ptrdiff_t>(s),
                            corpus.tokens.begin() +
                                static_cast<std::ptrdiff_t>(s + T + 1));
  };

  // Fixed, evenly spaced validation windows so the metric is deterministic.
  std::vector<std::size_t> val_starts;
  {
    constexpr std::size_t kValWindows = 32;
    std::size_t lo = corpus.train_boundary;
    std::size_t hi = corpus.tokens.size() - T - 1;
    std::size_t stride = std::max<std::size_t>(1, (hi - lo) / kValWindows);
    for (std::size_t s = lo; s <= hi && val_starts.size() < kValWindows;
         s += stride) {
      val_starts.push_back(s);
    }
  }

  BatchLoss loss = [&](Tape& t, const std::vector<std::size_t>& batch, bool,
                       Rng&) {
    Var acc = model.window_loss(t, window_at(batch[0]));
    for (std::size_t i = 1; i < batch.size(); ++i) {
      acc = t.add(acc, model.window_loss(t, window_at(batch[i])));
    }
    return t.scale(acc, 1.0 / static_cast<double>(batch.size()));
  };
  SplitMetric metric = [&](const std::vector<std::size_t>&) {
    double sum = 0.0;
    for (std::size_t s : val_starts) {
      Tape t;
      sum += model.window_loss(t, window_at(s)).value()[0];
    }
    return sum / static_cast<double>(val_starts.size());
  };

  TrainOptions opt = cfg.training;
  opt.seed = cfg.seed;
  RunResult rr;
  rr.metric = "ce";
  LearningCurve curve = train_iterations(train_positions, loss, metric, params,
                                         opt, rr.metric);
  rr.diverged = curve.diverged;
  rr.fold_best.push_back(curve.best());
  rr.curves.push_back(std::move(curve));
  rr.params = count_params(model.param_groups());
  rr.block_params = model.block_params();
  rr.block_evals = model.block_evals();
  rr.checkpoint_json = checkpoint_text(cfg, corpus.vocab, model);
  finalize_stats(rr);
  return rr;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg) {
  if (cfg.task == "regression_tabular") return run_tabular(cfg);
  if (cfg.task == "regression_graph") return run_graph(cfg);
  if (cfg.task == "language_model") return run_lm(cfg);
  config_fail("unknown task '" + cfg.task + "'");
}

// ---------------------------------------------------------------------------
// artifacts
// ---------------------------------------------------------------------------

namespace {

void make_dirs(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

std::string curve_file_name(const ExperimentConfig& cfg, std::size_t fold) {
  if (cfg.task == "language_model") return "curve.csv";
  return "fold_" + std::to_string(fold) + ".csv";
}

std::string curve_csv_text(const LearningCurve& c) {
  std::ostringstream out;
  out << "epoch,train_metric,val_metric,wall_ms\n";
  for (std::size_t i = 0; i < c.steps.size(); ++i) {
    out << c.steps[i] << ',' << g17(c.train[i]) << ',' << g17(c.val[i]) << ','
        << g17(c.wall_ms[i]) << '\n';
  }
  return out.str();
}

json summary_json(const ExperimentConfig& cfg, const RunResult& r) {
  json j;
  j["task"] = cfg.task;
  j["metric"] = r.metric;
  j["wiring"] = to_string(cfg.depth.wiring);
  j["steps"] = cfg.depth.steps;
  j["integrator"] = to_string(cfg.depth.integrator);
  j["schedule"] = to_string(cfg.depth.schedule.kind);
  j["dt"] = schedule_value(cfg.depth.schedule, cfg.depth.steps);
  j["seed"] = cfg.seed;
  j["folds"] = r.curves.size();
  j["fold_best"] = r.fold_best;
  j["mean_best_val"] = r.mean_best;
  j["std_best_val"] = r.std_best;
  j["diverged"] = r.diverged;
  j["param_total"] = r.params.total;
  j["block_params"] = r.block_params;
  j["block_evals"] = r.block_evals;
  json files = json::array();
  for (std::size_t f = 0; f < r.curves.size(); ++f) {
    files.push_back(curve_file_name(cfg, f));
  }
  j["curve_files"] = std::move(files);
  return j;
}

}  // namespace

void write_run_artifacts(const ExperimentConfig& cfg,
                         const RunResult& result) {
  make_dirs(cfg.out_dir);
  fs::path dir(cfg.out_dir);
  write_text_file((dir / "config.json").string(), serialize_config(cfg));

  std::vector<PlotSeries> series;
  for (std::size_t f = 0; f < result.curves.size(); ++f) {
    const LearningCurve& c = result.curves[f];
    write_text_file((dir / curve_file_name(cfg, f)).string(),
                    curve_csv_text(c));
    PlotSeries s;
    s.label = result.curves.size() == 1 ? "val"
                                        : "fold " + std::to_string(f);
    for (std::size_t i = 0; i < c.steps.size(); ++i) {
      s.x.push_back(c.steps[i]);
      s.y.push_back(c.val[i]);
    }
    series.push_back(std::move(s));
  }

  json params;
  json components = json::array();
  for (const ParamComponent& c : result.params.components) {
    components.push_back({{"name", c.name}, {"count", c.count}});
  }
  params["components"] = std::move(components);
  params["total"] = result.params.total;
  params["block_params"] = result.block_params;
  params["block_evals"] = result.block_evals;
  write_text_file((dir / "params.json").string(), params.dump(2) + "\n");

  write_text_file((dir / "summary.json").string(),
                  summary_json(cfg, result).dump(2) + "\n");

  if (!result.curves.empty() && !result.curves[0].steps.empty()) {
    std::string x_axis = cfg.task == "language_model" ? "iteration" : "epoch";
    write_svg_plot(series, x_axis, result.metric,
                   cfg.task + " (" + to_string(cfg.depth.wiring) + ")",
                   (dir / "plot.svg").string());
  }
  if (!result.checkpoint_json.empty()) {
    write_text_file((dir / "checkpoint.json").string(),
                    result.checkpoint_json);
  }
}

LearningCurve load_curve_csv(const std::string& path,
                             const std::string& metric) {
  std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) ||
      line != "epoch,train_metric,val_metric,wall_ms") {
    throw DataError("curve csv: unexpected header in " + path);
  }
  LearningCurve c;
  c.metric = metric;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    int epoch = 0;
    double train = 0.0, val = 0.0, wall = 0.0;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &epoch, &train, &val,
                    &wall) != 4) {
      throw DataError("curve csv: cannot parse line " +
                      std::to_string(line_no) + " of " + path);
    }
    c.steps.push_back(epoch);
    c.train.push_back(train);
    c.val.push_back(val);
    c.wall_ms.push_back(wall);
  }
  if (c.steps.empty()) throw DataError("curve csv: no rows in " + path);
  return c;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

std::string format_dt(double v) {
  double scaled = std::ceil(v * 1000.0 - 1e-9) / 1000.0;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", scaled);
  std::string s = buf;
  while (!s.empty() && s.back() == '0') s.pop_back();
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

namespace {

struct PointPlan {
  std::string label;
  double dt = 0.0;
  ExperimentConfig score;
  ExperimentConfig native;
  bool paired = false;
  bool write_native = false;
};

double wiring_dt(const DepthConfig& dc) {
  switch (dc.wiring) {
    case Wiring::kBase:
    case Wiring::kClassic:
      return 1.0;
    case Wiring::kSkip05:
    case Wiring::kScoreSkip05:
      return 0.5;
    case Wiring::kScore:
      return schedule_value(dc.schedule, dc.steps);
  }
  return 0.0;
}

std::vector<PointPlan> plan_sweep(const ExperimentConfig& base) {
  if (base.sweep_axis.empty()) {
    config_fail("sweep needs an axis ('steps', 'integrator' or 'wiring')");
  }
  std::vector<PointPlan> plans;
  fs::path root(base.out_dir);

  if (base.sweep_axis == "steps") {
    for (int k = 2; k <= 7; ++k) {
      PointPlan p;
      p.label = std::to_string(k);
      p.dt = schedule_value(base.depth.schedule, k);
      p.paired = true;
      p.write_native = true;
      p.score = base;
      p.score.sweep_axis.clear();
      p.score.depth.wiring = Wiring::kScore;
      p.score.depth.steps = k;
      p.score.out_dir = (root / ("steps_" + p.label + "_score")).string();
      p.native = p.score;
      p.native.depth.wiring = Wiring::kClassic;
      p.native.out_dir = (root / ("steps_" + p.label + "_native")).string();
      plans.push_back(std::move(p));
    }
  } else if (base.sweep_axis == "integrator") {
    bool first = true;
    for (IntegratorKind kind :
         {IntegratorKind::kEuler, IntegratorKind::kHeun,
          IntegratorKind::kMidpoint, IntegratorKind::kRk4}) {
      PointPlan p;
      p.label = to_string(kind);
      p.dt = schedule_value(base.depth.schedule, base.depth.steps);
      p.paired = true;
      p.write_native = first;
      p.score = base;
      p.score.sweep_axis.clear();
      p.score.depth.wiring = Wiring::kScore;
      p.score.depth.integrator = kind;
      p.score.out_dir =
          (root / ("integrator_" + p.label + "_score")).string();
      p.native = base;
      p.native.sweep_axis.clear();
      p.native.depth.wiring = Wiring::kClassic;
      p.native.out_dir = (root / "integrator_native").string();
      plans.push_back(std::move(p));
      first = false;
    }
  } else if (base.sweep_axis == "wiring") {
    for (Wiring w : {Wiring::kBase, Wiring::kClassic, Wiring::kSkip05,
                     Wiring::kScore, Wiring::kScoreSkip05}) {
      PointPlan p;
      p.label = to_string(w);
      p.score = base;
      p.score.sweep_axis.clear();
      p.score.depth.wiring = w;
      p.dt = wiring_dt(p.score.depth);
      p.score.out_dir = (root / ("wiring_" + p.label)).string();
      plans.push_back(std::move(p));
    }
  } else {
    config_fail("unknown sweep axis '" + base.sweep_axis + "'");
  }
  return plans;
}

int sweep_thread_cap() {
  const char* env = std::getenv("SCORE_LAB_THREADS");
  if (!env) return 1;
  int n = std::atoi(env);
  return n > 0 ? n : 1;
}

void run_jobs(std::vector<std::function<void()>> jobs) {
  int threads = std::min<int>(sweep_thread_cap(),
                              static_cast<int>(jobs.size()));
  if (threads <= 1) {
    for (auto& job : jobs) job();
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs.size());
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= jobs.size()) return;
        try {
          jobs[i]();
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

SweepResult sweep_experiment(const ExperimentConfig& cfg) {
  std::vector<PointPlan> plans = plan_sweep(cfg);
  SweepResult result;
  result.axis = cfg.sweep_axis;
  result.points.resize(plans.size());

  std::vector<std::function<void()>> jobs;
  RunResult shared_native;
  bool shared_native_used = cfg.sweep_axis == "integrator";
  for (std::size_t i = 0; i < plans.size(); ++i) {
    SweepPoint& point = result.points[i];
    point.label = plans[i].label;
    point.dt = plans[i].dt;
    point.paired = plans[i].paired;
    jobs.push_back([&plans, &result, i] {
      result.points[i].score = run_experiment(plans[i].score);
    });
    if (plans[i].paired && plans[i].write_native) {
      RunResult* slot = shared_native_used ? &shared_native
                                           : &result.points[i].native;
      jobs.push_back([&plans, slot, i] {
        *slot = run_experiment(plans[i].native);
      });
    }
  }
  run_jobs(std::move(jobs));

  if (shared_native_used) {
    for (SweepPoint& point : result.points) point.native = shared_native;
  }
  return result;
}

std::string comparison_csv(const SweepResult& result) {
  std::ostringstream out;
  auto f6 = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  if (result.axis == "wiring") {
    out << "wiring,mean,std\n";
    for (const SweepPoint& p : result.points) {
      out << p.label << ',' << f6(p.score.mean_best) << ','
          << f6(p.score.std_best) << '\n';
    }
    return out.str();
  }
  out << (result.axis == "steps" ? "steps" : "integrator")
      << ",dt,score,native,diff,improvement\n";
  for (const SweepPoint& p : result.points) {
    double diff = p.native.mean_best - p.score.mean_best;
    double improvement =
        p.native.mean_best != 0.0 ? diff / p.native.mean_best : 0.0;
    out << p.label << ',' << format_dt(p.dt) << ',' << f6(p.score.mean_best)
        << ',' << f6(p.native.mean_best) << ',' << f6(diff) << ','
        << f6(improvement) << '\n';
  }
  return out.str();
}

void write_sweep_artifacts(const ExperimentConfig& cfg,
                           const SweepResult& result) {
  std::vector<PointPlan> plans = plan_sweep(cfg);
  if (plans.size() != result.points.size()) {
    throw ConfigError("sweep: result does not match the configured axis");
  }
  make_dirs(cfg.out_dir);
  for (std::size_t i = 0; i < plans.size(); ++i) {
    write_run_artifacts(plans[i].score, result.points[i].score);
    if (plans[i].paired && plans[i].write_native) {
      write_run_artifacts(plans[i].native, result.points[i].native);
    }
  }
  write_text_file((fs::path(cfg.out_dir) / "comparison.csv").string(),
                  comparison_csv(result));
}

// ---------------------------------------------------------------------------
// generation
// ---------------------------------------------------------------------------

std::string generate_text(const std::string& checkpoint_path,
                          const std::string& prompt, int length,
                          double temperature, std::uint64_t seed) {
  if (length < 1) config_fail("'length' must be at least 1");
  if (temperature < 0.0) config_fail("'temperature' must be >= 0");
  if (prompt.empty()) config_fail("'prompt' must not be empty");

  json ck;
  try {
    ck = json::parse(read_text_file(checkpoint_path));
  } catch (const json::exception& e) {
    throw DataError("checkpoint: invalid JSON in " + checkpoint_path + " (" +
                    e.what() + ")");
  }
  if (ck.value("format", "") != "scorelab-checkpoint-v1") {
    throw DataError("checkpoint: unrecognized format in " + checkpoint_path);
  }
  std::string vocab_text = ck.value("vocab", "");
  std::vector<char> vocab(vocab_text.begin(), vocab_text.end());
  if (vocab.size() < 2) throw DataError("checkpoint: vocabulary too small");
  if (!ck.contains("model") || !ck.contains("depth")) {
    throw DataError("checkpoint: missing model or depth section");
  }

  ModelConfig mc = parse_model(section(ck, "model"));
  DepthConfig dc = parse_depth(section(ck, "depth"));
  Rng init_rng(0);
  CharLM model(vocab.size(), mc, dc, init_rng);

  std::map<std::string, Parameter*> by_name;
  for (Parameter* p : model.parameters()) by_name[p->name] = p;
  if (!ck.contains("params") || !ck.at("params").is_array()) {
    throw DataError("checkpoint: missing params array");
  }
  std::size_t loaded = 0;
  for (const json& entry : ck.at("params")) {
    std::string name = entry.value("name", "");
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw DataError("checkpoint: unknown parameter '" + name + "'");
    }
    std::vector<double> values =
        entry.value("values", std::vector<double>{});
    if (values.size() != it->second->size()) {
      throw DataError("checkpoint: parameter '" + name + "' holds " +
                      std::to_string(values.size()) + " values, expected " +
                      std::to_string(it->second->size()));
    }
    it->second->value.values() = std::move(values);
    ++loaded;
  }
  if (loaded != by_name.size()) {
    throw DataError("checkpoint: loaded " + std::to_string(loaded) +
                    " parameters, model has " +
                    std::to_string(by_name.size()));
  }

  // Encode the prompt, rejecting characters outside the vocabulary.
  std::vector<int> ids;
  std::string unknown;
  for (char ch : prompt) {
    auto it = std::lower_bound(vocab.begin(), vocab.end(), ch);
    if (it == vocab.end() || *it != ch) {
      if (unknown.find(ch) == std::string::npos) unknown.push_back(ch);
      continue;
    }
    ids.push_back(static_cast<int>(it - vocab.begin()));
  }
  if (!unknown.empty()) {
    throw DataError("generate: prompt characters outside the vocabulary: '" +
                    unknown + "'");
  }

  constexpr double kGreedyBelow = 1e-6;
  Rng rng(seed);
  for (int step = 0; step < length; ++step) {
    std::size_t window = std::min(ids.size(), model.context());
    std::vector<int> context(ids.end() - static_cast<std::ptrdiff_t>(window),
                             ids.end());
    Tape tape;
    Var lg = model.logits(tape, context);
    const Tensor& v = lg.value();
    std::size_t row = window - 1;

    int pick = 0;
    if (temperature <= kGreedyBelow) {
      double best = v.at(row, 0);
      for (std::size_t c = 1; c < vocab.size(); ++c) {
        if (v.at(row, c) > best) {
          best = v.at(row, c);
          pick = static_cast<int>(c);
        }
      }
    } else {
      double max_logit = v.at(row, 0);
      for (std::size_t c = 1; c < vocab.size(); ++c) {
        max_logit = std::max(max_logit, v.at(row, c));
      }
      std::vector<double> p(vocab.size());
      double z = 0.0;
      for (std::size_t c = 0; c < vocab.size(); ++c) {
        p[c] = std::exp((v.at(row, c) - max_logit) / temperature);
        z += p[c];
      }
      double u = rng.uniform() * z;
      double acc = 0.0;
      pick = static_cast<int>(vocab.size()) - 1;
      for (std::size_t c = 0; c < vocab.size(); ++c) {
        acc += p[c];
        if (u <= acc) {
          pick = static_cast<int>(c);
          break;
        }
      }
    }
    ids.push_back(pick);
  }

  std::string out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(vocab[static_cast<std::size_t>(id)]);
  return out;
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

namespace {

LearningCurve first_curve_of(const std::string& dir, std::string* metric_out) {
  fs::path root(dir);
  json summary;
  try {
    summary = json::parse(read_text_file((root / "summary.json").string()));
  } catch (const json::exception& e) {
    throw DataError("analyze: invalid summary.json in " + dir + " (" +
                    e.what() + ")");
  }
  std::string metric = summary.value("metric", "");
  auto files = summary.value("curve_files", std::vector<std::string>{});
  if (metric.empty() || files.empty()) {
    throw DataError("analyze: summary.json in " + dir +
                    " lacks metric or curve files");
  }
  if (metric_out) *metric_out = metric;
  return load_curve_csv((root / files[0]).string(), metric);
}

}  // namespace

WarpFit analyze_directories(const std::string& reference_dir,
                            const std::string& compared_dir,
                            const std::string& out_path) {
  std::string ref_metric, cmp_metric;
  LearningCurve reference = first_curve_of(reference_dir, &ref_metric);
  LearningCurve compared = first_curve_of(compared_dir, &cmp_metric);
  WarpFit fit = time_warp_fit(reference, compared);

  json j;
  j["reference"] = reference_dir;
  j["compared"] = compared_dir;
  j["metric"] = ref_metric;
  j["factor"] = fit.factor;
  j["residual"] = fit.residual;
  j["grid"] = fit.grid;
  json residuals = json::array();
  for (double r : fit.residuals) {
    if (std::isfinite(r)) {
      residuals.push_back(r);
    } else {
      residuals.push_back(nullptr);
    }
  }
  j["residuals"] = std::move(residuals);

  fs::path out(out_path);
  if (out.has_parent_path()) make_dirs(out.parent_path().string());
  write_text_file(out_path, j.dump(2) + "\n");
  return fit;
}

}  // namespace scorelab
