#include "scorelab/blocks.hpp"

#include <cmath>

#include "scorelab/dynamics.hpp"
#include "scorelab/errors.hpp"

namespace scorelab {

Activation activation_from_string(const std::string& s) {
  if (s == "leaky_relu") return Activation::kLeakyRelu;
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation '" + s +
                    "' (expected leaky_relu, relu or tanh)");
}

Aggregation aggregation_from_string(const std::string& s) {
  if (s == "mean") return Aggregation::kMean;
  if (s == "sum") return Aggregation::kSum;
  throw ConfigError("unknown aggregation '" + s + "' (expected mean or sum)");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kLeakyRelu: return "leaky_relu";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
  }
  return "leaky_relu";
}

std::string to_string(Aggregation a) {
  return a == Aggregation::kMean ? "mean" : "sum";
}

Var apply_activation(Tape& tape, Activation act, Var x) {
  switch (act) {
    case Activation::kLeakyRelu: return tape.leaky_relu(x, 0.01);
    case Activation::kRelu: return tape.relu(x);
    case Activation::kTanh: return tape.tanh(x);
  }
  return x;
}

Tensor init_weight(std::vector<std::size_t> shape, std::size_t fan_in,
                   Rng& rng) {
  double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.truncated_normal(stddev);
  return t;
}

void Graph::validate() const {
  const auto n = static_cast<int>(num_nodes());
  for (const auto& [u, v] : edges) {
    if (u < 0 || v < 0 || u >= n || v >= n) {
      throw DataError("graph: edge (" + std::to_string(u) + "," +
                      std::to_string(v) + ") out of range for " +
                      std::to_string(n) + " nodes");
    }
  }
}

namespace {

void check_width(const Var& h, std::size_t width, const char* who) {
  const Tensor& t = h.value();
  if (t.rank() == 0 || t.shape().back() != width) {
    throw ShapeError(std::string(who) + ": input " + t.shape_str() +
                     " does not end in width " + std::to_string(width));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// DenseBlock
// ---------------------------------------------------------------------------

DenseBlock::DenseBlock(std::size_t width, Activation act, Rng& rng,
                       const std::string& name)
    : weight(name + ".weight", init_weight({width, width}, width, rng)),
      bias(name + ".bias", Tensor({width})),
      activation(act),
      width_(width) {}

Var DenseBlock::forward(Tape& tape, Var h) {
  check_width(h, width_, "dense block");
  ++evals_;
  bool vector_in = h.value().rank() == 1;
  Var x = vector_in ? tape.reshape(h, {1, width_}) : h;
  Var out = apply_activation(
      tape, activation,
      tape.add(tape.matmul(x, tape.param(weight)), tape.param(bias)));
  return vector_in ? tape.reshape(out, {width_}) : out;
}

std::vector<Parameter*> DenseBlock::parameters() { return {&weight, &bias}; }

// ---------------------------------------------------------------------------
// MessageBlock
// ---------------------------------------------------------------------------

MessageBlock::MessageBlock(std::size_t width, Activation act, Aggregation agg,
                           Rng& rng, const std::string& name)
    : weight_self(name + ".weight_self", init_weight({width, width}, width, rng)),
      weight_neigh(name + ".weight_neigh",
                   init_weight({width, width}, width, rng)),
      bias(name + ".bias", Tensor({width})),
      activation(act),
      aggregation(agg),
      width_(width) {}

Var MessageBlock::forward(Tape& tape, Var h,
                          const std::vector<std::pair<int, int>>& edges) {
  check_width(h, width_, "message block");
  if (h.value().rank() != 2) {
    throw ShapeError("message block: node embeddings must be [N,d], got " +
                     h.value().shape_str());
  }
  ++evals_;
  Var self_term = tape.matmul(h, tape.param(weight_self));
  Var agg = tape.edge_aggregate(h, edges, aggregation == Aggregation::kMean);
  Var neigh_term = tape.matmul(agg, tape.param(weight_neigh));
  return apply_activation(
      tape, activation,
      tape.add(tape.add(self_term, neigh_term), tape.param(bias)));
}

std::vector<Parameter*> MessageBlock::parameters() {
  return {&weight_self, &weight_neigh, &bias};
}

// ---------------------------------------------------------------------------
// AttentionBlock
// ---------------------------------------------------------------------------

AttentionBlock::AttentionBlock(std::size_t d_model, std::size_t n_heads,
                               std::size_t context, bool causal_, Rng& rng,
                               const std::string& name)
    : wq(name + ".wq", init_weight({d_model, d_model}, d_model, rng)),
      wk(name + ".wk", init_weight({d_model, d_model}, d_model, rng)),
      wv(name + ".wv", init_weight({d_model, d_model}, d_model, rng)),
      wo(name + ".wo", init_weight({d_model, d_model}, d_model, rng)),
      ffn1_w(name + ".ffn1.weight",
             init_weight({d_model, 4 * d_model}, d_model, rng)),
      ffn1_b(name + ".ffn1.bias", Tensor({4 * d_model})),
      ffn2_w(name + ".ffn2.weight",
             init_weight({4 * d_model, d_model}, 4 * d_model, rng)),
      ffn2_b(name + ".ffn2.bias", Tensor({d_model})),
      ln1_gain(name + ".ln1.gain", Tensor::ones({d_model})),
      ln1_bias(name + ".ln1.bias", Tensor({d_model})),
      ln2_gain(name + ".ln2.gain", Tensor::ones({d_model})),
      ln2_bias(name + ".ln2.bias", Tensor({d_model})),
      causal(causal_),
      d_model_(d_model),
      n_heads_(n_heads),
      context_(context) {
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("attention block: " + std::to_string(n_heads) +
                      " heads do not divide width " + std::to_string(d_model));
  }
}

Var AttentionBlock::forward(Tape& tape, Var x) {
  check_width(x, d_model_, "attention block");
  if (x.value().rank() != 2) {
    throw ShapeError("attention block: input must be [T,d], got " +
                     x.value().shape_str());
  }
  std::size_t t_len = x.value().extent(0);
  if (t_len > context_) {
    throw ShapeError("attention block: sequence length " +
                     std::to_string(t_len) + " exceeds context " +
                     std::to_string(context_));
  }
  ++evals_;
  std::size_t dh = d_model_ / n_heads_;

  auto layer_norm = [&](Var in, Parameter& gain, Parameter& bias_p) {
    return tape.add(tape.mul(tape.layernorm_last(in), tape.param(gain)),
                    tape.param(bias_p));
  };
  auto split_heads = [&](Var m) {
    return tape.transpose(tape.reshape(m, {t_len, n_heads_, dh}), {1, 0, 2});
  };

  Var n1 = layer_norm(x, ln1_gain, ln1_bias);
  Var q = split_heads(tape.matmul(n1, tape.param(wq)));
  Var k = split_heads(tape.matmul(n1, tape.param(wk)));
  Var v = split_heads(tape.matmul(n1, tape.param(wv)));

  Var scores = tape.scale(tape.bmm(q, tape.transpose(k, {0, 2, 1})),
                          1.0 / std::sqrt(static_cast<double>(dh)));
  if (causal) scores = tape.causal_mask(scores);
  Var attn = tape.softmax_last(scores);
  Var ctx = tape.reshape(tape.transpose(tape.bmm(attn, v), {1, 0, 2}),
                         {t_len, d_model_});
  Var x1 = tape.add(x, tape.matmul(ctx, tape.param(wo)));

  Var n2 = layer_norm(x1, ln2_gain, ln2_bias);
  Var hidden = tape.gelu(
      tape.add(tape.matmul(n2, tape.param(ffn1_w)), tape.param(ffn1_b)));
  Var ffn = tape.add(tape.matmul(hidden, tape.param(ffn2_w)),
                     tape.param(ffn2_b));
  return tape.add(x1, ffn);
}

std::vector<Parameter*> AttentionBlock::parameters() {
  return {&wq,      &wk,      &wv,      &wo,      &ffn1_w,   &ffn1_b,
          &ffn2_w,  &ffn2_b,  &ln1_gain, &ln1_bias, &ln2_gain, &ln2_bias};
}

// ---------------------------------------------------------------------------
// VirtualReadout
// ---------------------------------------------------------------------------

VirtualReadout::VirtualReadout(std::size_t width, int rounds, Rng& rng,
                               const std::string& name)
    : width_(width), rounds_(rounds) {
  if (rounds < 0) {
    throw ConfigError("readout: rounds must be non-negative, got " +
                      std::to_string(rounds));
  }
  round_weights.reserve(static_cast<std::size_t>(rounds));
  for (int r = 0; r < rounds; ++r) {
    round_weights.emplace_back(
        name + ".round" + std::to_string(r) + ".weight",
        init_weight({width, width}, width, rng));
  }
}

Var VirtualReadout::forward(Tape& tape, Var h) {
  check_width(h, width_, "readout");
  if (h.value().rank() != 2) {
    throw ShapeError("readout: node embeddings must be [N,d], got " +
                     h.value().shape_str());
  }
  std::size_t n = h.value().extent(0);
  if (n == 0) throw DataError("readout: graph has no nodes");

  Var mean_row = tape.constant(
      Tensor::full({1, n}, 1.0 / static_cast<double>(n)));
  Var state = tape.matmul(mean_row, h);
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(width_));
  for (Parameter& w : round_weights) {
    Var scores = tape.reshape(
        tape.scale(tape.matmul(h, tape.transpose(state)), inv_sqrt_d), {1, n});
    Var attn = tape.softmax_last(scores);
    Var pooled = tape.matmul(attn, h);
    state = tape.add(state, tape.tanh(tape.matmul(pooled, tape.param(w))));
  }
  return state;
}

std::vector<Parameter*> VirtualReadout::parameters() {
  std::vector<Parameter*> out;
  out.reserve(round_weights.size());
  for (Parameter& w : round_weights) out.push_back(&w);
  return out;
}

// ---------------------------------------------------------------------------
// Heads
// ---------------------------------------------------------------------------

StackedMlpHead::StackedMlpHead(std::size_t in_width, Rng& rng,
                               const std::string& name) {
  const std::size_t widths[] = {in_width, 128, 64, 32, 1};
  for (std::size_t i = 0; i + 1 < 5; ++i) {
    weights.emplace_back(name + ".fc" + std::to_string(i) + ".weight",
                         init_weight({widths[i], widths[i + 1]}, widths[i], rng));
    biases.emplace_back(name + ".fc" + std::to_string(i) + ".bias",
                        Tensor({widths[i + 1]}));
  }
}

Var StackedMlpHead::forward(Tape& tape, Var pooled, bool train_mode,
                            Rng& rng) {
  Var x = pooled;
  if (train_mode) {
    Tensor mask(x.value().shape());
    for (double& m : mask.values()) {
      m = rng.uniform() < kDropoutRate ? 0.0 : 1.0 / (1.0 - kDropoutRate);
    }
    x = tape.dropout(x, std::move(mask));
  }
  for (std::size_t i = 0; i < weights.size(); ++i) {
    x = tape.add(tape.matmul(x, tape.param(weights[i])),
                 tape.param(biases[i]));
    if (i + 1 < weights.size()) x = tape.leaky_relu(x, 0.01);
  }
  return x;
}

std::vector<Parameter*> StackedMlpHead::parameters() {
  std::vector<Parameter*> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(&weights[i]);
    out.push_back(&biases[i]);
  }
  return out;
}

ScoreMlpHead::ScoreMlpHead(std::size_t in_width, int steps, Rng& rng,
                           const std::string& name)
    : proj_w(name + ".proj.weight", init_weight({in_width, kWidth}, in_width, rng)),
      proj_b(name + ".proj.bias", Tensor({kWidth})),
      block(kWidth, Activation::kLeakyRelu, rng, name + ".block"),
      out_w(name + ".out.weight", init_weight({kWidth, 1}, kWidth, rng)),
      out_b(name + ".out.bias", Tensor({1})),
      steps_(steps) {
  if (steps < 1) {
    throw ConfigError("head: recurrence steps must be positive, got " +
                      std::to_string(steps));
  }
}

Var ScoreMlpHead::forward(Tape& tape, Var pooled) {
  Var h = tape.add(tape.matmul(pooled, tape.param(proj_w)),
                   tape.param(proj_b));
  double dt = 1.0 / static_cast<double>(steps_);
  BlockFn f = [this](Tape& t, Var v) { return block.forward(t, v); };
  for (int k = 0; k < steps_; ++k) h = euler_step(tape, f, h, dt);
  return tape.add(tape.matmul(h, tape.param(out_w)), tape.param(out_b));
}

std::vector<Parameter*> ScoreMlpHead::parameters() {
  std::vector<Parameter*> out{&proj_w, &proj_b};
  for (Parameter* p : block.parameters()) out.push_back(p);
  out.push_back(&out_w);
  out.push_back(&out_b);
  return out;
}

LinearHead::LinearHead(std::size_t in_width, Rng& rng,
                       const std::string& name)
    : weight(name + ".weight", init_weight({in_width, 1}, in_width, rng)),
      bias(name + ".bias", Tensor({1})) {}

Var LinearHead::forward(Tape& tape, Var x) {
  return tape.add(tape.matmul(x, tape.param(weight)), tape.param(bias));
}

std::vector<Parameter*> LinearHead::parameters() { return {&weight, &bias}; }

}  // namespace scorelab
