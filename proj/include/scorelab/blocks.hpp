#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "scorelab/rng.hpp"
#include "scorelab/tape.hpp"

namespace scorelab {

enum class Activation { kLeakyRelu, kRelu, kTanh };
enum class Aggregation { kMean, kSum };

Activation activation_from_string(const std::string& s);
Aggregation aggregation_from_string(const std::string& s);
std::string to_string(Activation a);
std::string to_string(Aggregation a);

Var apply_activation(Tape& tape, Activation act, Var x);

/// Weight initialization used by every block: zero-mean normal with standard
/// deviation sqrt(2/fan_in), resampled beyond two standard deviations.
Tensor init_weight(std::vector<std::size_t> shape, std::size_t fan_in,
                   Rng& rng);

/// Node-and-edge container. Undirected graphs carry both edge directions.
struct Graph {
  Tensor node_features;                       // N x d_in
  std::vector<std::pair<int, int>> edges;     // ordered (u, v)
  Tensor edge_features;                       // optional, E x d_e

  std::size_t num_nodes() const {
    return node_features.rank() == 2 ? node_features.extent(0) : 0;
  }
  void validate() const;  // endpoint range check
};

/// Width-preserving dense layer: activation(h W + b).
class DenseBlock {
 public:
  DenseBlock(std::size_t width, Activation act, Rng& rng,
             const std::string& name);

  Var forward(Tape& tape, Var h);
  std::vector<Parameter*> parameters();
  std::size_t width() const { return width_; }
  int evals() const { return evals_; }

  Parameter weight;
  Parameter bias;
  Activation activation;

 private:
  std::size_t width_;
  int evals_ = 0;
};

/// Width-preserving message-passing layer:
/// activation(h W_self + agg(neighbors) W_neigh + b). Nodes without incoming
/// edges receive a zero aggregation term.
class MessageBlock {
 public:
  MessageBlock(std::size_t width, Activation act, Aggregation agg, Rng& rng,
               const std::string& name);

  Var forward(Tape& tape, Var h, const std::vector<std::pair<int, int>>& edges);
  std::vector<Parameter*> parameters();
  std::size_t width() const { return width_; }
  int evals() const { return evals_; }

  Parameter weight_self;
  Parameter weight_neigh;
  Parameter bias;
  Activation activation;
  Aggregation aggregation;

 private:
  std::size_t width_;
  int evals_ = 0;
};

/// Pre-norm decoder block: x + Attn(LN(x)), then + FFN(LN(.)).
/// Multi-head scaled dot-product attention with optional causal masking and a
/// GELU feed-forward of hidden width 4*d_model. Shape-preserving on [T, d].
class AttentionBlock {
 public:
  AttentionBlock(std::size_t d_model, std::size_t n_heads, std::size_t context,
                 bool causal, Rng& rng, const std::string& name);

  Var forward(Tape& tape, Var x);
  std::vector<Parameter*> parameters();
  std::size_t width() const { return d_model_; }
  std::size_t context() const { return context_; }
  int evals() const { return evals_; }

  Parameter wq, wk, wv, wo;
  Parameter ffn1_w, ffn1_b, ffn2_w, ffn2_b;
  Parameter ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  bool causal;

 private:
  std::size_t d_model_;
  std::size_t n_heads_;
  std::size_t context_;
  int evals_ = 0;
};

/// Attention-gated pooling of node embeddings into one graph embedding.
/// A virtual state starts at the node mean; each round re-weights nodes by
/// scaled dot-product against the state and applies a tanh-gated update with
/// a per-round projection. Zero rounds reduce to plain mean pooling.
class VirtualReadout {
 public:
  VirtualReadout(std::size_t width, int rounds, Rng& rng,
                 const std::string& name);

  // h is [N, d]; returns the graph embedding as [1, d].
  Var forward(Tape& tape, Var h);
  std::vector<Parameter*> parameters();
  int rounds() const { return rounds_; }

  std::vector<Parameter> round_weights;

 private:
  std::size_t width_;
  int rounds_;
};

/// Regression head: dropout(0.10) then 128 -> 64 -> 32 with leaky ReLU, then
/// a linear map to one output.
class StackedMlpHead {
 public:
  StackedMlpHead(std::size_t in_width, Rng& rng, const std::string& name);

  // pooled is [B, in_width]; returns [B, 1]. Dropout is sampled from rng in
  // train mode and skipped entirely in eval mode.
  Var forward(Tape& tape, Var pooled, bool train_mode, Rng& rng);
  std::vector<Parameter*> parameters();

  static constexpr double kDropoutRate = 0.10;

  std::vector<Parameter> weights;
  std::vector<Parameter> biases;
};

/// Regression head built from the same relaxed recurrence as the trunk: a
/// linear lift to width 128, a shared dense block applied for `steps` rounds
/// with dt = 1/steps, then a linear map to one output.
class ScoreMlpHead {
 public:
  ScoreMlpHead(std::size_t in_width, int steps, Rng& rng,
               const std::string& name);

  Var forward(Tape& tape, Var pooled);
  std::vector<Parameter*> parameters();
  int steps() const { return steps_; }

  static constexpr std::size_t kWidth = 128;

  Parameter proj_w, proj_b;
  DenseBlock block;
  Parameter out_w, out_b;

 private:
  int steps_;
};

/// Plain affine map to one output, for tabular baselines.
class LinearHead {
 public:
  LinearHead(std::size_t in_width, Rng& rng, const std::string& name);

  Var forward(Tape& tape, Var x);
  std::vector<Parameter*> parameters();

  Parameter weight, bias;
};

}  // namespace scorelab
