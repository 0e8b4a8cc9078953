#include "scorelab/models.hpp"

#include <numeric>

#include "scorelab/errors.hpp"

namespace scorelab {

namespace {

std::size_t block_slots(const DepthConfig& dc) {
  return is_shared_wiring(dc.wiring) ? 1 : static_cast<std::size_t>(dc.steps);
}

template <typename Block>
std::vector<Parameter*> collect(std::vector<Block>& blocks) {
  std::vector<Parameter*> out;
  for (Block& b : blocks) {
    for (Parameter* p : b.parameters()) out.push_back(p);
  }
  return out;
}

template <typename Block>
long total_evals(const std::vector<Block>& blocks) {
  long n = 0;
  for (const Block& b : blocks) n += b.evals();
  return n;
}

bool has_learnable_dt(const DepthConfig& dc) {
  return dc.wiring == Wiring::kScore &&
         dc.schedule.kind == ScheduleKind::kLearnable;
}

}  // namespace

RegressionHead::RegressionHead(const std::string& kind, std::size_t in_width,
                               int steps, Rng& rng, const std::string& name)
    : kind_(kind) {
  if (kind == "linear") {
    linear_.emplace(in_width, rng, name);
  } else if (kind == "stacked_mlp") {
    stacked_.emplace(in_width, rng, name);
  } else if (kind == "score_mlp") {
    score_.emplace(in_width, steps, rng, name);
  } else {
    throw ConfigError("head: unknown kind '" + kind + "'");
  }
}

Var RegressionHead::forward(Tape& tape, Var pooled, bool train_mode,
                            Rng& rng) {
  if (linear_) return linear_->forward(tape, pooled);
  if (stacked_) return stacked_->forward(tape, pooled, train_mode, rng);
  return score_->forward(tape, pooled);
}

std::vector<Parameter*> RegressionHead::parameters() {
  if (linear_) return linear_->parameters();
  if (stacked_) return stacked_->parameters();
  return score_->parameters();
}

// ---------------------------------------------------------------------------
// tabular
// ---------------------------------------------------------------------------

namespace {

std::vector<DenseBlock> make_dense_blocks(const ModelConfig& mc,
                                          const DepthConfig& dc, Rng& rng) {
  std::vector<DenseBlock> out;
  std::size_t n = block_slots(dc);
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.emplace_back(mc.embed_dim, mc.activation, rng,
                     "block" + std::to_string(i));
  }
  return out;
}

}  // namespace

TabularModel::TabularModel(std::size_t in_dim, const ModelConfig& mc,
                           const DepthConfig& dc, Rng& rng)
    : depth_(dc),
      proj_w("embed.proj_w", init_weight({in_dim, mc.embed_dim}, in_dim, rng)),
      proj_b("embed.proj_b", Tensor({mc.embed_dim})),
      blocks_(make_dense_blocks(mc, dc, rng)),
      head_(mc.head, mc.embed_dim, mc.head_steps, rng, "head") {
  if (in_dim == 0) throw ConfigError("tabular model: zero input width");
}

Var TabularModel::forward(Tape& tape, Var rows, bool train_mode, Rng& rng) {
  Var h = tape.add(tape.matmul(rows, tape.param(proj_w)), tape.param(proj_b));
  std::vector<BlockFn> fns;
  fns.reserve(blocks_.size());
  for (DenseBlock& b : blocks_) {
    fns.push_back([&b](Tape& t, Var x) { return b.forward(t, x); });
  }
  Trajectory traj = run_recurrence(tape, depth_, fns, h);
  return head_.forward(tape, traj.states.back(), train_mode, rng);
}

std::vector<Parameter*> TabularModel::parameters() {
  std::vector<Parameter*> out{&proj_w, &proj_b};
  for (Parameter* p : collect(blocks_)) out.push_back(p);
  for (Parameter* p : head_.parameters()) out.push_back(p);
  if (has_learnable_dt(depth_)) out.push_back(&depth_.schedule.alpha);
  return out;
}

std::vector<NamedParamGroup> TabularModel::param_groups() {
  std::vector<NamedParamGroup> groups{
      {"embedding", {&proj_w, &proj_b}},
      {"blocks", collect(blocks_)},
      {"head", head_.parameters()}};
  if (has_learnable_dt(depth_)) {
    groups.push_back({"depth", {&depth_.schedule.alpha}});
  }
  return groups;
}

std::size_t TabularModel::block_params() {
  return count_params({{"blocks", collect(blocks_)}}).total;
}

long TabularModel::block_evals() const { return total_evals(blocks_); }

// ---------------------------------------------------------------------------
// graph
// ---------------------------------------------------------------------------

namespace {

std::vector<MessageBlock> make_message_blocks(const ModelConfig& mc,
                                              const DepthConfig& dc,
                                              Rng& rng) {
  std::vector<MessageBlock> out;
  std::size_t n = block_slots(dc);
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.emplace_back(mc.embed_dim, mc.activation, mc.aggregation, rng,
                     "block" + std::to_string(i));
  }
  return out;
}

}  // namespace

GraphModel::GraphModel(std::size_t node_dim, std::size_t descriptor_dim,
                       const ModelConfig& mc, const DepthConfig& dc, Rng& rng)
    : depth_(dc),
      descriptor_dim_(mc.use_graph_features ? descriptor_dim : 0),
      proj_w("embed.proj_w",
             init_weight({node_dim, mc.embed_dim}, node_dim, rng)),
      proj_b("embed.proj_b", Tensor({mc.embed_dim})),
      blocks_(make_message_blocks(mc, dc, rng)),
      readout_(mc.embed_dim, mc.readout_rounds, rng, "readout"),
      head_(mc.head, mc.embed_dim + descriptor_dim_, mc.head_steps, rng,
            "head") {
  if (node_dim == 0) throw ConfigError("graph model: zero node feature width");
  if (mc.use_graph_features && descriptor_dim == 0) {
    throw ConfigError(
        "graph model: use_graph_features set but the dataset has no "
        "descriptors");
  }
}

Trajectory GraphModel::trunk_trajectory(
    Tape& tape, const std::vector<const Graph*>& graphs,
    std::vector<std::pair<int, int>>* edges_out) {
  if (graphs.empty()) throw DataError("graph model: empty batch");
  std::size_t d_in = proj_w.value.extent(0);
  std::size_t total = 0;
  for (const Graph* g : graphs) {
    g->validate();
    if (g->node_features.extent(1) != d_in) {
      throw ShapeError("graph model: node features " +
                       g->node_features.shape_str() + " do not match width " +
                       std::to_string(d_in));
    }
    total += g->num_nodes();
  }

  Tensor features({total, d_in});
  std::vector<std::pair<int, int>> edges;
  std::size_t offset = 0;
  for (const Graph* g : graphs) {
    std::size_t n = g->num_nodes();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < d_in; ++c) {
        features.at(offset + r, c) = g->node_features.at(r, c);
      }
    }
    for (auto [u, v] : g->edges) {
      edges.emplace_back(u + static_cast<int>(offset),
                         v + static_cast<int>(offset));
    }
    offset += n;
  }
  if (edges_out) *edges_out = edges;

  Var h = tape.add(tape.matmul(tape.constant(std::move(features)),
                               tape.param(proj_w)),
                   tape.param(proj_b));
  std::vector<BlockFn> fns;
  fns.reserve(blocks_.size());
  for (MessageBlock& b : blocks_) {
    fns.push_back(
        [&b, &edges](Tape& t, Var x) { return b.forward(t, x, edges); });
  }
  return run_recurrence(tape, depth_, fns, h);
}

Var GraphModel::forward(Tape& tape, const std::vector<const Graph*>& graphs,
                        const Tensor* descriptors, bool train_mode, Rng& rng) {
  Trajectory traj = trunk_trajectory(tape, graphs, nullptr);
  Var h = traj.states.back();

  std::vector<Var> pooled_rows;
  pooled_rows.reserve(graphs.size());
  int offset = 0;
  for (const Graph* g : graphs) {
    int n = static_cast<int>(g->num_nodes());
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), offset);
    pooled_rows.push_back(readout_.forward(tape, tape.gather_rows(h, idx)));
    offset += n;
  }
  Var pooled = pooled_rows.size() == 1 ? pooled_rows[0]
                                       : tape.concat(pooled_rows, 0);

  if (descriptor_dim_ > 0) {
    if (!descriptors) {
      throw DataError("graph model: descriptor rows required but missing");
    }
    if (descriptors->rank() != 2 ||
        descriptors->extent(0) != graphs.size() ||
        descriptors->extent(1) != descriptor_dim_) {
      throw ShapeError("graph model: descriptor rows " +
                       descriptors->shape_str() + " do not match batch " +
                       std::to_string(graphs.size()) + " x " +
                       std::to_string(descriptor_dim_));
    }
    pooled = tape.concat({pooled, tape.constant(*descriptors)}, 1);
  }
  return head_.forward(tape, pooled, train_mode, rng);
}

std::vector<Parameter*> GraphModel::parameters() {
  std::vector<Parameter*> out{&proj_w, &proj_b};
  for (Parameter* p : collect(blocks_)) out.push_back(p);
  for (Parameter* p : readout_.parameters()) out.push_back(p);
  for (Parameter* p : head_.parameters()) out.push_back(p);
  if (has_learnable_dt(depth_)) out.push_back(&depth_.schedule.alpha);
  return out;
}

std::vector<NamedParamGroup> GraphModel::param_groups() {
  std::vector<NamedParamGroup> groups{
      {"embedding", {&proj_w, &proj_b}},
      {"blocks", collect(blocks_)},
      {"readout", readout_.parameters()},
      {"head", head_.parameters()}};
  if (has_learnable_dt(depth_)) {
    groups.push_back({"depth", {&depth_.schedule.alpha}});
  }
  return groups;
}

std::size_t GraphModel::block_params() {
  return count_params({{"blocks", collect(blocks_)}}).total;
}

long GraphModel::block_evals() const { return total_evals(blocks_); }

// ---------------------------------------------------------------------------
// language model
// ---------------------------------------------------------------------------

namespace {

std::vector<AttentionBlock> make_attention_blocks(const ModelConfig& mc,
                                                  const DepthConfig& dc,
                                                  Rng& rng) {
  std::vector<AttentionBlock> out;
  std::size_t n = block_slots(dc);
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.emplace_back(mc.embed_dim, mc.n_heads, mc.context, true, rng,
                     "block" + std::to_string(i));
  }
  return out;
}

}  // namespace

CharLM::CharLM(std::size_t vocab_size, const ModelConfig& mc,
               const DepthConfig& dc, Rng& rng)
    : depth_(dc),
      vocab_(vocab_size),
      context_(mc.context),
      tok_emb("embed.tok",
              init_weight({vocab_size, mc.embed_dim}, mc.embed_dim, rng)),
      pos_emb("embed.pos",
              init_weight({mc.context, mc.embed_dim}, mc.embed_dim, rng)),
      blocks_(make_attention_blocks(mc, dc, rng)),
      final_gain("final.gain", Tensor::ones({mc.embed_dim})),
      final_bias("final.bias", Tensor({mc.embed_dim})),
      out_w("head.out_w",
            init_weight({mc.embed_dim, vocab_size}, mc.embed_dim, rng)) {
  if (vocab_size < 2) {
    throw ConfigError("language model: vocabulary needs at least 2 symbols");
  }
}

Var CharLM::logits(Tape& tape, const std::vector<int>& ids) {
  if (ids.empty()) throw DataError("language model: empty window");
  if (ids.size() > context_) {
    throw ShapeError("language model: window of " +
                     std::to_string(ids.size()) + " exceeds context " +
                     std::to_string(context_));
  }
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_) {
      throw DataError("language model: token id " + std::to_string(id) +
                      " outside vocabulary of " + std::to_string(vocab_));
    }
  }
  std::vector<int> positions(ids.size());
  std::iota(positions.begin(), positions.end(), 0);
  Var x = tape.add(tape.gather_rows(tape.param(tok_emb), ids),
                   tape.gather_rows(tape.param(pos_emb), positions));

  std::vector<BlockFn> fns;
  fns.reserve(blocks_.size());
  for (AttentionBlock& b : blocks_) {
    fns.push_back([&b](Tape& t, Var v) { return b.forward(t, v); });
  }
  Trajectory traj = run_recurrence(tape, depth_, fns, x);

  Var normed = tape.add(tape.mul(tape.layernorm_last(traj.states.back()),
                                 tape.param(final_gain)),
                        tape.param(final_bias));
  return tape.matmul(normed, tape.param(out_w));
}

Var CharLM::window_loss(Tape& tape, const std::vector<int>& window) {
  if (window.size() < 2) {
    throw DataError("language model: window needs at least 2 tokens");
  }
  std::vector<int> input(window.begin(), window.end() - 1);
  std::vector<int> targets(window.begin() + 1, window.end());
  return tape.cross_entropy(logits(tape, input), targets);
}

std::vector<Parameter*> CharLM::parameters() {
  std::vector<Parameter*> out{&tok_emb, &pos_emb};
  for (Parameter* p : collect(blocks_)) out.push_back(p);
  out.push_back(&final_gain);
  out.push_back(&final_bias);
  out.push_back(&out_w);
  if (has_learnable_dt(depth_)) out.push_back(&depth_.schedule.alpha);
  return out;
}

std::vector<NamedParamGroup> CharLM::param_groups() {
  std::vector<NamedParamGroup> groups{
      {"embedding", {&tok_emb, &pos_emb}},
      {"blocks", collect(blocks_)},
      {"head", {&final_gain, &final_bias, &out_w}}};
  if (has_learnable_dt(depth_)) {
    groups.push_back({"depth", {&depth_.schedule.alpha}});
  }
  return groups;
}

std::size_t CharLM::block_params() {
  return count_params({{"blocks", collect(blocks_)}}).total;
}

long CharLM::block_evals() const { return total_evals(blocks_); }

}  // namespace scorelab
