#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "scorelab/tensor.hpp"

namespace scorelab {

/// Named trainable value with an accumulating gradient of identical shape.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string name_, Tensor value_)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

  std::size_t size() const { return value.size(); }
  void zero_grad();
};

class Tape;

/// Handle to one node of a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const std::vector<std::size_t>& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Record of one forward pass: an append-only list of primitive operations in
/// topological order, each with a local adjoint rule. backward() replays the
/// adjoints in reverse and accumulates into every mounted Parameter's grad.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ---- leaves ----
  Var constant(Tensor v);
  // Mounts a parameter; mounting the same Parameter twice returns the same node.
  Var param(Parameter& p);

  // ---- primitives ----
  // add: identical shapes, or row broadcast [..,d] + [d].
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  // mul: identical shapes, scalar * tensor, or row broadcast [..,d] * [d].
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var neg(Var a) { return scale(a, -1.0); }
  Var matmul(Var a, Var b);             // [m,k] x [k,n]
  Var bmm(Var a, Var b);                // [g,m,k] x [g,k,n]
  Var relu(Var a);
  Var leaky_relu(Var a, double slope = 0.01);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var gelu(Var a);
  Var sqrt(Var a);                      // elementwise, inputs must be >= 0
  Var softmax_last(Var a);
  Var layernorm_last(Var a, double eps = 1e-5);
  Var sum(Var a);                       // scalar
  Var mean(Var a);                      // scalar
  Var transpose(Var a, std::vector<std::size_t> perm = {});
  Var reshape(Var a, std::vector<std::size_t> shape);
  Var concat(const std::vector<Var>& parts, std::size_t axis);
  // Row gather; the embedding-lookup primitive. table is [n, ...].
  Var gather_rows(Var table, std::vector<int> indices);
  // Elementwise product with a pre-sampled constant mask recorded on the tape.
  Var dropout(Var a, Tensor mask);
  // For every directed edge (u,v) accumulate row u into output row v.
  // mean=true divides each output row by the in-degree of v.
  Var edge_aggregate(Var h, const std::vector<std::pair<int, int>>& edges,
                     bool mean_agg);
  // Sets strictly-upper-triangular entries of the trailing [t,t] block to a
  // large negative value so softmax ignores future positions.
  Var causal_mask(Var scores);
  // Mean negative log-softmax of the target class per row. logits [n, v].
  Var cross_entropy(Var logits, std::vector<int> targets);

  // ---- reverse pass ----
  // loss must be a scalar node of this tape. Replays adjoints newest-first and
  // adds each mounted Parameter's node gradient into Parameter::grad.
  // A tape can be consumed only once.
  void backward(Var loss);

  const Tensor& value(Var v) const;
  // Gradient of the loss w.r.t. any node; valid after backward().
  const Tensor& grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void()> pull;  // adjoint rule; empty for leaves
    Parameter* p = nullptr;
  };

  int push(Tensor value);
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  Var wrap(int id) { return Var(this, id); }
  void check_same_tape(Var v, const char* op) const;

  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, int> mounted_;
  bool consumed_ = false;
};

// Convenience operators; both operands must live on the same tape.
inline Var operator+(Var a, Var b) { return a.tape()->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape()->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape()->mul(a, b); }

/// Max over coordinates of |analytic - central difference| /
/// max(1, |analytic|, |central|) for a scalar-valued function built on a tape.
/// f receives a fresh tape and the mounted input on every evaluation.
double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x,
                  double eps = 1e-5);

}  // namespace scorelab
