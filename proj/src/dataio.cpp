#include "scorelab/dataio.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

#include "scorelab/errors.hpp"
#include "scorelab/rng.hpp"

namespace scorelab {

namespace {

constexpr double kStdFloor = 1e-12;
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

double squash(double v) {
  if (std::isinf(v)) return kNan;
  if (std::isnan(v)) return kNan;
  return std::asinh(v);
}

}  // namespace

std::pair<FeatureMatrix, PreprocessStats> preprocess(const FeatureMatrix& m) {
  if (m.rows < 2) {
    throw DataError("preprocess: need at least 2 rows, got " +
                    std::to_string(m.rows));
  }
  FeatureMatrix out = m;
  for (double& v : out.values.values()) v = squash(v);

  PreprocessStats stats;
  stats.mean.assign(m.cols, 0.0);
  stats.stddev.assign(m.cols, 1.0);
  stats.finite_count.assign(m.cols, 0);
  for (std::size_t c = 0; c < m.cols; ++c) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t r = 0; r < m.rows; ++r) {
      double v = out.at(r, c);
      if (std::isfinite(v)) {
        sum += v;
        ++count;
      }
    }
    stats.finite_count[c] = count;
    if (count == 0) {
      std::cerr << "preprocess: column " << c
                << " has no finite entries; emitting zeros\n";
      continue;
    }
    double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (std::size_t r = 0; r < m.rows; ++r) {
      double v = out.at(r, c);
      if (std::isfinite(v)) sq += (v - mean) * (v - mean);
    }
    stats.mean[c] = mean;
    stats.stddev[c] = std::max(std::sqrt(sq / static_cast<double>(count)),
                               kStdFloor);
  }

  for (std::size_t c = 0; c < m.cols; ++c) {
    for (std::size_t r = 0; r < m.rows; ++r) {
      double v = out.at(r, c);
      out.at(r, c) = std::isfinite(v)
                         ? (v - stats.mean[c]) / stats.stddev[c]
                         : 0.0;
    }
  }
  return {std::move(out), std::move(stats)};
}

FeatureMatrix apply_preprocess(const FeatureMatrix& m,
                               const PreprocessStats& stats) {
  if (stats.mean.size() != m.cols) {
    throw ShapeError("preprocess: stats for " +
                     std::to_string(stats.mean.size()) +
                     " columns applied to " + std::to_string(m.cols));
  }
  FeatureMatrix out = m;
  for (std::size_t c = 0; c < m.cols; ++c) {
    for (std::size_t r = 0; r < m.rows; ++r) {
      double v = squash(out.at(r, c));
      out.at(r, c) = std::isfinite(v)
                         ? (v - stats.mean[c]) / stats.stddev[c]
                         : 0.0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// text
// ---------------------------------------------------------------------------

TextCorpus tokenize_chars(const std::string& text) {
  if (text.empty()) throw DataError("tokenizer: empty text");
  TextCorpus corpus;
  corpus.text = text;
  std::set<char> chars(text.begin(), text.end());
  corpus.vocab.assign(chars.begin(), chars.end());
  corpus.tokens = corpus.encode(text);
  corpus.train_boundary = corpus.tokens.size() * 9 / 10;
  return corpus;
}

std::vector<int> TextCorpus::encode(const std::string& s) const {
  std::vector<int> ids;
  ids.reserve(s.size());
  std::string unknown;
  for (char ch : s) {
    auto it = std::lower_bound(vocab.begin(), vocab.end(), ch);
    if (it == vocab.end() || *it != ch) {
      if (unknown.find(ch) == std::string::npos) unknown.push_back(ch);
      continue;
    }
    ids.push_back(static_cast<int>(it - vocab.begin()));
  }
  if (!unknown.empty()) {
    throw DataError("tokenizer: characters outside the vocabulary: '" +
                    unknown + "'");
  }
  return ids;
}

std::string TextCorpus::decode(const std::vector<int>& ids) const {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
      throw DataError("tokenizer: token id " + std::to_string(id) +
                      " outside vocabulary of " + std::to_string(vocab.size()));
    }
    out.push_back(vocab[static_cast<std::size_t>(id)]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// graph dataset files
// ---------------------------------------------------------------------------

GraphDataset load_graph_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open graph dataset: " + path);
  GraphDataset ds;
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::vector<double>> descriptor_rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fail = [&](const std::string& what) -> DataError {
      return DataError("graph dataset: " + what + ", line " +
                       std::to_string(line_no));
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw fail(std::string("invalid JSON (") + e.what() + ")");
    }
    if (!j.contains("nodes") || !j.contains("edges") || !j.contains("target")) {
      throw fail("missing nodes, edges or target field");
    }
    const auto& nodes = j["nodes"];
    if (!nodes.is_array() || nodes.empty()) throw fail("nodes must be a non-empty array");
    std::size_t width = nodes[0].is_array() ? nodes[0].size() : 0;
    if (width == 0) throw fail("node features must be non-empty arrays");
    Graph g;
    g.node_features = Tensor({nodes.size(), width});
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (!nodes[i].is_array() || nodes[i].size() != width) {
        throw fail("ragged node feature arrays");
      }
      for (std::size_t c = 0; c < width; ++c)
        g.node_features.at(i, c) = nodes[i][c].get<double>();
    }
    for (const auto& e : j["edges"]) {
      if (!e.is_array() || e.size() != 2) throw fail("edges must be [u,v] pairs");
      int u = e[0].get<int>();
      int v = e[1].get<int>();
      if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= nodes.size() ||
          static_cast<std::size_t>(v) >= nodes.size()) {
        throw fail("edge index out of range");
      }
      g.edges.emplace_back(u, v);
    }
    double target = j["target"].get<double>();
    if (!std::isfinite(target)) throw fail("target must be finite");
    if (j.contains("features")) {
      descriptor_rows.push_back(j["features"].get<std::vector<double>>());
    } else if (!descriptor_rows.empty()) {
      throw fail("features present on some lines but not all");
    }
    ds.graphs.push_back(std::move(g));
    ds.targets.push_back(target);
  }
  if (ds.graphs.empty()) throw DataError("graph dataset: no records in " + path);
  if (!descriptor_rows.empty()) {
    if (descriptor_rows.size() != ds.graphs.size()) {
      throw DataError("graph dataset: features present on some lines but not all");
    }
    std::size_t cols = descriptor_rows[0].size();
    ds.descriptors.rows = descriptor_rows.size();
    ds.descriptors.cols = cols;
    ds.descriptors.values = Tensor({descriptor_rows.size(), cols});
    for (std::size_t r = 0; r < descriptor_rows.size(); ++r) {
      if (descriptor_rows[r].size() != cols) {
        throw DataError("graph dataset: ragged features arrays");
      }
      for (std::size_t c = 0; c < cols; ++c)
        ds.descriptors.values.at(r, c) = descriptor_rows[r][c];
    }
    ds.descriptors.targets = ds.targets;
  }
  return ds;
}

void save_graph_dataset(const GraphDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write graph dataset: " + path);
  for (std::size_t i = 0; i < ds.graphs.size(); ++i) {
    const Graph& g = ds.graphs[i];
    nlohmann::json j;
    std::size_t n = g.num_nodes();
    std::size_t width = n ? g.node_features.extent(1) : 0;
    auto nodes = nlohmann::json::array();
    for (std::size_t r = 0; r < n; ++r) {
      auto row = nlohmann::json::array();
      for (std::size_t c = 0; c < width; ++c) row.push_back(g.node_features.at(r, c));
      nodes.push_back(std::move(row));
    }
    j["nodes"] = std::move(nodes);
    auto edges = nlohmann::json::array();
    for (auto [u, v] : g.edges) edges.push_back({u, v});
    j["edges"] = std::move(edges);
    j["target"] = ds.targets[i];
    if (ds.has_descriptors()) {
      std::vector<double> row(ds.descriptors.cols);
      for (std::size_t c = 0; c < ds.descriptors.cols; ++c)
        row[c] = ds.descriptors.at(i, c);
      j["features"] = row;
    }
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing graph dataset: " + path);
}

// ---------------------------------------------------------------------------
// feature CSV
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  cells.push_back(cur);
  return cells;
}

double parse_cell(const std::string& cell, std::size_t line_no) {
  std::string s = cell;
  s.erase(std::remove_if(s.begin(), s.end(),
                         [](unsigned char c) { return std::isspace(c); }),
          s.end());
  if (s.empty() || s == "nan" || s == "NaN") return kNan;
  if (s == "inf" || s == "Inf" || s == "+inf")
    return std::numeric_limits<double>::infinity();
  if (s == "-inf" || s == "-Inf")
    return -std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("csv: cannot parse cell '" + cell + "', line " +
                    std::to_string(line_no));
  }
}

}  // namespace

FeatureMatrix load_feature_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open csv: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("csv: empty file " + path);
  std::vector<std::string> header = split_csv_line(line);
  std::ptrdiff_t target_col = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "target") target_col = static_cast<std::ptrdiff_t>(i);
  }
  if (target_col < 0) throw DataError("csv: no 'target' column in " + path);
  std::size_t cols = header.size() - 1;

  std::vector<double> flat;
  std::vector<double> targets;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw DataError("csv: expected " + std::to_string(header.size()) +
                      " cells, got " + std::to_string(cells.size()) +
                      ", line " + std::to_string(line_no));
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      double v = parse_cell(cells[i], line_no);
      if (static_cast<std::ptrdiff_t>(i) == target_col) {
        if (!std::isfinite(v)) {
          throw DataError("csv: non-finite target, line " +
                          std::to_string(line_no));
        }
        targets.push_back(v);
      } else {
        flat.push_back(v);
      }
    }
  }
  if (targets.empty()) throw DataError("csv: no data rows in " + path);
  FeatureMatrix m;
  m.rows = targets.size();
  m.cols = cols;
  m.values = Tensor({m.rows, cols}, std::move(flat));
  m.targets = std::move(targets);
  return m;
}

void save_feature_csv(const FeatureMatrix& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write csv: " + path);
  for (std::size_t c = 0; c < m.cols; ++c) out << 'f' << c << ',';
  out << "target\n";
  out.precision(17);
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      double v = m.at(r, c);
      if (std::isnan(v)) out << "nan";
      else if (std::isinf(v)) out << (v > 0 ? "inf" : "-inf");
      else out << v;
      out << ',';
    }
    out << m.targets[r] << '\n';
  }
  if (!out) throw IoError("failed writing csv: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write file: " + path);
  out << content;
  if (!out) throw IoError("failed writing file: " + path);
}

// ---------------------------------------------------------------------------
// synthetic generators
// ---------------------------------------------------------------------------

FeatureMatrix synth_regression(std::size_t n, std::size_t d,
                               double noise_sigma, std::uint64_t seed) {
  if (n < 1 || d < 1) throw ConfigError("synth_regression: n and d must be >= 1");
  Rng rng(seed);
  FeatureMatrix m;
  m.rows = n;
  m.cols = d;
  m.values = Tensor({n, d});
  for (double& v : m.values.values()) v = rng.normal();

  m.targets.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    double t = 0.0;
    for (std::size_t c = 0; c < std::min<std::size_t>(4, d); ++c)
      t += std::sin(m.at(r, c));
    if (d >= 6) t += 0.5 * m.at(r, 4) * m.at(r, 5);
    if (noise_sigma > 0.0) t += rng.normal(0.0, noise_sigma);
    m.targets[r] = t;
  }

  constexpr double kCorruptRate = 0.02;
  const double bad[] = {kNan, std::numeric_limits<double>::infinity(),
                        -std::numeric_limits<double>::infinity()};
  for (double& v : m.values.values()) {
    if (rng.uniform() < kCorruptRate) v = bad[rng.uniform_int(3)];
  }
  return m;
}

namespace {

double graph_target(const Graph& g) {
  std::size_t n = g.num_nodes();
  std::vector<std::set<int>> adj(n);
  for (auto [u, v] : g.edges) {
    if (u != v) adj[static_cast<std::size_t>(u)].insert(v);
  }
  double closed = 0.0, triples = 0.0, degree_sum = 0.0;
  for (std::size_t v = 0; v < n; ++v) {
    double deg = static_cast<double>(adj[v].size());
    degree_sum += deg;
    triples += deg * (deg - 1.0) / 2.0;
    for (int a : adj[v])
      for (int b : adj[v])
        if (a < b && adj[static_cast<std::size_t>(a)].count(b)) closed += 1.0;
  }
  double clustering = triples > 0.0 ? closed / triples : 0.0;
  double mean_degree = n > 0 ? degree_sum / static_cast<double>(n) : 0.0;
  return clustering + 0.5 * mean_degree;
}

}  // namespace

GraphDataset synth_graphs(std::size_t count, std::pair<int, int> nodes_range,
                          std::uint64_t seed) {
  if (count < 1) throw ConfigError("synth_graphs: count must be >= 1");
  if (nodes_range.first < 1 || nodes_range.second < nodes_range.first) {
    throw ConfigError("synth_graphs: invalid node range [" +
                      std::to_string(nodes_range.first) + "," +
                      std::to_string(nodes_range.second) + "]");
  }
  constexpr std::size_t kTags = 4;
  Rng rng(seed);
  GraphDataset ds;
  for (std::size_t gi = 0; gi < count; ++gi) {
    std::size_t n = static_cast<std::size_t>(nodes_range.first) +
                    rng.uniform_int(static_cast<std::uint64_t>(
                        nodes_range.second - nodes_range.first + 1));
    Graph g;
    std::set<std::pair<int, int>> seen;
    auto add_edge = [&](int u, int v) {
      if (u == v || seen.count({u, v})) return false;
      seen.insert({u, v});
      seen.insert({v, u});
      g.edges.emplace_back(u, v);
      g.edges.emplace_back(v, u);
      return true;
    };
    for (std::size_t i = 1; i < n; ++i) {
      add_edge(static_cast<int>(rng.uniform_int(i)), static_cast<int>(i));
    }
    std::size_t extra = n > 2 ? rng.uniform_int(n) : 0;
    for (std::size_t e = 0; e < extra; ++e) {
      add_edge(static_cast<int>(rng.uniform_int(n)),
               static_cast<int>(rng.uniform_int(n)));
    }

    std::vector<std::size_t> degree(n, 0);
    for (auto [u, v] : g.edges) degree[static_cast<std::size_t>(v)]++;
    g.node_features = Tensor({n, 1 + kTags});
    for (std::size_t i = 0; i < n; ++i) {
      g.node_features.at(i, 0) = static_cast<double>(degree[i]);
      g.node_features.at(i, 1 + rng.uniform_int(kTags)) = 1.0;
    }
    ds.targets.push_back(graph_target(g));
    ds.graphs.push_back(std::move(g));
  }
  return ds;
}

std::string synth_text(std::size_t min_bytes, std::uint64_t seed) {
  Rng rng(seed);
  const std::string letters = "abcdefghijklmnopqrstuvwxyz";
  std::vector<std::string> words;
  for (int w = 0; w < 40; ++w) {
    std::size_t len = 2 + rng.uniform_int(6);
    std::string word;
    for (std::size_t i = 0; i < len; ++i)
      word.push_back(letters[rng.uniform_int(letters.size())]);
    words.push_back(std::move(word));
  }

  std::string out;
  out.reserve(min_bytes + 256);
  while (out.size() < min_bytes) {
    std::size_t sentences = 3 + rng.uniform_int(4);
    for (std::size_t s = 0; s < sentences; ++s) {
      std::size_t count = 4 + rng.uniform_int(6);
      for (std::size_t w = 0; w < count; ++w) {
        double u = rng.uniform();
        std::size_t idx = static_cast<std::size_t>(u * u *
                                                   static_cast<double>(words.size()));
        if (idx >= words.size()) idx = words.size() - 1;
        std::string word = words[idx];
        if (w == 0) word[0] = static_cast<char>(std::toupper(word[0]));
        out += word;
        out.push_back(w + 1 == count ? '.' : ' ');
      }
      out.push_back(s + 1 == sentences ? '\n' : ' ');
    }
    out.push_back('\n');
  }
  return out;
}

}  // namespace scorelab
