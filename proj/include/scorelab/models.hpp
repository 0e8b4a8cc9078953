#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "scorelab/analysis.hpp"
#include "scorelab/blocks.hpp"
#include "scorelab/dynamics.hpp"
#include "scorelab/rng.hpp"
#include "scorelab/tape.hpp"

namespace scorelab {

/// Model-side hyperparameters shared by the three task families. Fields not
/// relevant to a task are ignored by its model.
struct ModelConfig {
  std::size_t embed_dim = 32;
  std::size_t n_heads = 4;        // language model
  std::size_t context = 32;       // language model
  Activation activation = Activation::kTanh;
  Aggregation aggregation = Aggregation::kMean;  // graph trunk
  int readout_rounds = 1;                        // graph pooling
  bool use_graph_features = false;  // append per-graph descriptors to pooling
  std::string head = "linear";      // linear | stacked_mlp | score_mlp
  int head_steps = 4;               // recurrence depth of the score_mlp head
};

/// Dispatch over the three regression head families; pooled input is [B, w],
/// output is [B, 1].
class RegressionHead {
 public:
  RegressionHead(const std::string& kind, std::size_t in_width, int steps,
                 Rng& rng, const std::string& name);

  Var forward(Tape& tape, Var pooled, bool train_mode, Rng& rng);
  std::vector<Parameter*> parameters();
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
  std::optional<LinearHead> linear_;
  std::optional<StackedMlpHead> stacked_;
  std::optional<ScoreMlpHead> score_;
};

/// Row regression: linear lift of feature rows to embed_dim, the configured
/// depth wiring over dense blocks, then a regression head.
class TabularModel {
 public:
  TabularModel(std::size_t in_dim, const ModelConfig& mc,
               const DepthConfig& dc, Rng& rng);

  // rows is [B, in_dim]; returns predictions [B, 1].
  Var forward(Tape& tape, Var rows, bool train_mode, Rng& rng);

  std::vector<Parameter*> parameters();
  std::vector<NamedParamGroup> param_groups();
  std::size_t block_params();
  long block_evals() const;
  DepthConfig& depth() { return depth_; }
  std::vector<DenseBlock>& blocks() { return blocks_; }

 private:
  DepthConfig depth_;
  Parameter proj_w, proj_b;
  std::vector<DenseBlock> blocks_;  // one if shared wiring, else K
  RegressionHead head_;
};

/// Graph regression: the minibatch is embedded as one disjoint union, the
/// depth wiring runs message blocks over the union edge list, each graph is
/// pooled by the virtual readout, and a regression head maps pooled rows
/// (optionally concatenated with per-graph descriptors) to predictions.
class GraphModel {
 public:
  GraphModel(std::size_t node_dim, std::size_t descriptor_dim,
             const ModelConfig& mc, const DepthConfig& dc, Rng& rng);

  // descriptors may be null when the model was built without them; otherwise
  // it is [B, descriptor_dim] aligned with `graphs`.
  Var forward(Tape& tape, const std::vector<const Graph*>& graphs,
              const Tensor* descriptors, bool train_mode, Rng& rng);

  // Runs only the trunk, exposing the recurrence states and the union edge
  // list for smoothness inspection.
  Trajectory trunk_trajectory(Tape& tape,
                              const std::vector<const Graph*>& graphs,
                              std::vector<std::pair<int, int>>* edges_out);

  std::vector<Parameter*> parameters();
  std::vector<NamedParamGroup> param_groups();
  std::size_t block_params();
  long block_evals() const;
  DepthConfig& depth() { return depth_; }
  std::vector<MessageBlock>& blocks() { return blocks_; }

 private:
  DepthConfig depth_;
  std::size_t descriptor_dim_;
  Parameter proj_w, proj_b;
  std::vector<MessageBlock> blocks_;
  VirtualReadout readout_;
  RegressionHead head_;
};

/// Character-level decoder: token plus positional embeddings, the depth
/// wiring over causal attention blocks, a final layer norm, and a linear map
/// to vocabulary logits.
class CharLM {
 public:
  CharLM(std::size_t vocab_size, const ModelConfig& mc, const DepthConfig& dc,
         Rng& rng);

  // ids has length T <= context; returns logits [T, vocab].
  Var logits(Tape& tape, const std::vector<int>& ids);
  // window holds T+1 token ids; the loss is mean cross-entropy of positions
  // 1..T given 0..T-1.
  Var window_loss(Tape& tape, const std::vector<int>& window);

  std::vector<Parameter*> parameters();
  std::vector<NamedParamGroup> param_groups();
  std::size_t block_params();
  long block_evals() const;
  std::size_t vocab_size() const { return vocab_; }
  std::size_t context() const { return context_; }
  DepthConfig& depth() { return depth_; }
  std::vector<AttentionBlock>& blocks() { return blocks_; }

 private:
  DepthConfig depth_;
  std::size_t vocab_;
  std::size_t context_;
  Parameter tok_emb, pos_emb;
  std::vector<AttentionBlock> blocks_;
  Parameter final_gain, final_bias;
  Parameter out_w;
};

}  // namespace scorelab
