#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "scorelab/blocks.hpp"
#include "scorelab/tensor.hpp"

namespace scorelab {

/// Raw tabular dataset. Feature values may contain NaN or infinities; targets
/// are always finite.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Tensor values;                 // rows x cols
  std::vector<double> targets;   // length rows

  double at(std::size_t r, std::size_t c) const {
    return values[r * cols + c];
  }
  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
};

/// Per-column scaling statistics computed over finite entries only.
struct PreprocessStats {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<std::size_t> finite_count;
};

/// Three-step cleanup: (1) infinities become NaN and finite entries pass
/// through arcsinh, (2) each column is standardized by its finite-only mean
/// and standard deviation (floored at 1e-12), (3) remaining NaN become 0.
/// The returned stats let held-out data reuse the training-fold scaling.
std::pair<FeatureMatrix, PreprocessStats> preprocess(const FeatureMatrix& m);

/// Applies previously computed stats to new data (same three steps, no
/// re-estimation).
FeatureMatrix apply_preprocess(const FeatureMatrix& m,
                               const PreprocessStats& stats);

/// Character-level corpus with a 90/10 train/validation boundary.
struct TextCorpus {
  std::string text;
  std::vector<char> vocab;        // sorted unique characters
  std::vector<int> tokens;
  std::size_t train_boundary = 0;

  std::size_t vocab_size() const { return vocab.size(); }
  std::vector<int> encode(const std::string& s) const;
  std::string decode(const std::vector<int>& ids) const;
};

TextCorpus tokenize_chars(const std::string& text);

/// Graphs with scalar targets and optional per-graph descriptor rows
/// (descriptors.rows == graphs.size() when non-empty).
struct GraphDataset {
  std::vector<Graph> graphs;
  std::vector<double> targets;
  FeatureMatrix descriptors;

  std::size_t size() const { return graphs.size(); }
  bool has_descriptors() const { return descriptors.cols > 0; }
};

/// Line-delimited JSON, one object per graph:
///   {"nodes":[[...],...], "edges":[[u,v],...], "target":x,
///    "features":[...]}          (features optional)
GraphDataset load_graph_dataset(const std::string& path);
void save_graph_dataset(const GraphDataset& ds, const std::string& path);

/// CSV with a header row; the `target` column is required. Empty cells and
/// the literals inf/-inf/nan parse as non-finite values.
FeatureMatrix load_feature_csv(const std::string& path);
void save_feature_csv(const FeatureMatrix& m, const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

/// Seeded tabular generator: standard-normal features; the target is
/// sum(sin(x_0..x_3)) + 0.5*x_4*x_5 (terms dropped when d is smaller),
/// computed before 2% of feature entries are replaced by NaN or infinities.
FeatureMatrix synth_regression(std::size_t n, std::size_t d,
                               double noise_sigma, std::uint64_t seed);

/// Seeded graph generator: connected graphs (random spanning tree plus extra
/// edges), node features = degree plus a one-hot tag, target = global
/// clustering coefficient + 0.5 * mean degree.
GraphDataset synth_graphs(std::size_t count, std::pair<int, int> nodes_range,
                          std::uint64_t seed);

/// Seeded generator of structured pseudo-prose (word soup with sentence and
/// paragraph structure) of at least min_bytes characters, for char-level
/// language-model runs without external downloads.
std::string synth_text(std::size_t min_bytes, std::uint64_t seed);

}  // namespace scorelab
