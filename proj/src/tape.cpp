#include "scorelab/tape.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "scorelab/errors.hpp"

namespace scorelab {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

constexpr double kMaskedLogit = -1e30;

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": shapes " + a.shape_str() + " vs " +
                   b.shape_str() + " do not conform");
}

[[noreturn]] void shape_fail(const char* op, const Tensor& a) {
  throw ShapeError(std::string(op) + ": shape " + a.shape_str() +
                   " not supported");
}

// True when b is a row vector matching the last axis of a (and a has rank >= 2
// or equals b exactly, which callers treat as the identical-shape case).
bool row_broadcastable(const Tensor& a, const Tensor& b) {
  return a.rank() >= 2 && b.rank() == 1 &&
         a.shape().back() == b.shape().front();
}

bool is_scalar_shape(const Tensor& t) { return t.size() == 1 && t.rank() <= 1; }

}  // namespace

void Parameter::zero_grad() {
  std::fill(grad.values().begin(), grad.values().end(), 0.0);
}

const Tensor& Var::value() const { return tape_->value(*this); }

const Tensor& Tape::value(Var v) const {
  return nodes_[static_cast<std::size_t>(v.id())].value;
}

const Tensor& Tape::grad(Var v) const {
  return nodes_[static_cast<std::size_t>(v.id())].grad;
}

int Tape::push(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, {}, nullptr});
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::check_same_tape(Var v, const char* op) const {
  if (v.tape() != this || v.id() < 0 ||
      v.id() >= static_cast<int>(nodes_.size())) {
    throw Error(std::string(op) + ": operand does not belong to this tape");
  }
}

Var Tape::constant(Tensor v) { return wrap(push(std::move(v))); }

Var Tape::param(Parameter& p) {
  auto it = mounted_.find(&p);
  if (it != mounted_.end()) return wrap(it->second);
  int id = push(p.value);
  node(id).p = &p;
  mounted_.emplace(&p, id);
  return wrap(id);
}

// ---------------------------------------------------------------------------
// elementwise and broadcast arithmetic
// ---------------------------------------------------------------------------

Var Tape::add(Var a, Var b) {
  check_same_tape(a, "add");
  check_same_tape(b, "add");
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.same_shape(tb)) {
    Tensor out = ta;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += tb[i];
    int id = push(std::move(out));
    node(id).pull = [this, id, ia = a.id(), ib = b.id()] {
      const Tensor& g = node(id).grad;
      Tensor& ga = node(ia).grad;
      Tensor& gb = node(ib).grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
        gb[i] += g[i];
      }
    };
    return wrap(id);
  }
  if (row_broadcastable(ta, tb)) {
    std::size_t d = tb.size();
    std::size_t rows = ta.size() / d;
    Tensor out = ta;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < d; ++j) out[r * d + j] += tb[j];
    int id = push(std::move(out));
    node(id).pull = [this, id, ia = a.id(), ib = b.id(), rows, d] {
      const Tensor& g = node(id).grad;
      Tensor& ga = node(ia).grad;
      Tensor& gb = node(ib).grad;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) {
          ga[r * d + j] += g[r * d + j];
          gb[j] += g[r * d + j];
        }
    };
    return wrap(id);
  }
  shape_fail("add", ta, tb);
}

Var Tape::sub(Var a, Var b) {
  check_same_tape(a, "sub");
  check_same_tape(b, "sub");
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb)) shape_fail("sub", ta, tb);
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= tb[i];
  int id = push(std::move(out));
  node(id).pull = [this, id, ia = a.id(), ib = b.id()] {
    const Tensor& g = node(id).grad;
    Tensor& ga = node(ia).grad;
    Tensor& gb = node(ib).grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] -= g[i];
    }
  };
  return wrap(id);
}

Var Tape::mul(Var a, Var b) {
  check_same_tape(a, "mul");
  check_same_tape(b, "mul");
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.same_shape(tb)) {
    Tensor out = ta;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= tb[i];
    int id = push(std::move(out));
    node(id).pull = [this, id, ia = a.id(), ib = b.id()] {
      const Tensor& g = node(id).grad;
      const Tensor& va = node(ia).value;
      const Tensor& vb = node(ib).value;
      Tensor& ga = node(ia).grad;
      Tensor& gb = node(ib).grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * vb[i];
        gb[i] += g[i] * va[i];
      }
    };
    return wrap(id);
  }
  // scalar * tensor (either side)
  if (is_scalar_shape(ta) || is_scalar_shape(tb)) {
    Var s = is_scalar_shape(ta) ? a : b;
    Var t = is_scalar_shape(ta) ? b : a;
    double sv = value(s)[0];
    Tensor out = value(t);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= sv;
    int id = push(std::move(out));
    node(id).pull = [this, id, is = s.id(), it = t.id()] {
      const Tensor& g = node(id).grad;
      const Tensor& vt = node(it).value;
      double sv2 = node(is).value[0];
      Tensor& gs = node(is).grad;
      Tensor& gt = node(it).grad;
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        acc += g[i] * vt[i];
        gt[i] += g[i] * sv2;
      }
      gs[0] += acc;
    };
    return wrap(id);
  }
  // row broadcast [..,d] * [d]
  if (row_broadcastable(ta, tb) || row_broadcastable(tb, ta)) {
    Var big = row_broadcastable(ta, tb) ? a : b;
    Var vec = row_broadcastable(ta, tb) ? b : a;
    const Tensor& tbig = value(big);
    const Tensor& tvec = value(vec);
    std::size_t d = tvec.size();
    std::size_t rows = tbig.size() / d;
    Tensor out = tbig;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < d; ++j) out[r * d + j] *= tvec[j];
    int id = push(std::move(out));
    node(id).pull = [this, id, ibig = big.id(), ivec = vec.id(), rows, d] {
      const Tensor& g = node(id).grad;
      const Tensor& vbig = node(ibig).value;
      const Tensor& vvec = node(ivec).value;
      Tensor& gbig = node(ibig).grad;
      Tensor& gvec = node(ivec).grad;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) {
          gbig[r * d + j] += g[r * d + j] * vvec[j];
          gvec[j] += g[r * d + j] * vbig[r * d + j];
        }
    };
    return wrap(id);
  }
  shape_fail("mul", ta, tb);
}

Var Tape::scale(Var a, double c) {
  check_same_tape(a, "scale");
  Tensor out = value(a);
  for (double& v : out.values()) v *= c;
  int id = push(std::move(out));
  node(id).pull = [this, id, ia = a.id(), c] {
    const Tensor& g = node(id).grad;
    Tensor& ga = node(ia).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  };
  return wrap(id);
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

Var Tape::matmul(Var a, Var b) {
  check_same_tape(a, "matmul");
  check_same_tape(b, "matmul");
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0]) {
    shape_fail("matmul", ta, tb);
  }
  const auto m = static_cast<Eigen::Index>(ta.shape()[0]);
  const auto k = static_cast<Eigen::Index>(ta.shape()[1]);
  const auto n = static_cast<Eigen::Index>(tb.shape()[1]);
  Tensor out({ta.shape()[0], tb.shape()[1]});
  MapMat(out.data(), m, n).noalias() =
      MapConstMat(ta.data(), m, k) * MapConstMat(tb.data(), k, n);
  int id = push(std::move(out));
  node(id).pull = [this, id, ia = a.id(), ib = b.id(), m, k, n] {
    MapConstMat g(node(id).grad.data(), m, n);
    MapConstMat va(node(ia).value.data(), m, k);
    MapConstMat vb(node(ib).value.data(), k, n);
    MapMat(node(ia).grad.data(), m, k).noalias() += g * vb.transpose();
    MapMat(node(ib).grad.data(), k, n).noalias() += va.transpose() * g;
  };
  return wrap(id);
}

Var Tape::bmm(Var a, Var b) {
  check_same_tape(a, "bmm");
  check_same_tape(b, "bmm");
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.rank() != 3 || tb.rank() != 3 || ta.shape()[0] != tb.shape()[0] ||
      ta.shape()[2] != tb.shape()[1]) {
    shape_fail("bmm", ta, tb);
  }
  const std::size_t groups = ta.shape()[0];
  const auto m = static_cast<Eigen::Index>(ta.shape()[1]);
  const auto k = static_cast<Eigen::Index>(ta.shape()[2]);
  const auto n = static_cast<Eigen::Index>(tb.shape()[2]);
  Tensor out({groups, ta.shape()[1], tb.shape()[2]});
  for (std::size_t gi = 0; gi < groups; ++gi) {
    MapMat(out.data() + gi * m * n, m, n).noalias() =
        MapConstMat(ta.data() + gi * m * k, m, k) *
        MapConstMat(tb.data() + gi * k * n, k, n);
  }
  int id = push(std::move(out));
  node(id).pull = [this, id, ia = a.id(), ib = b.id(), groups, m, k, n] {
    for (std::size_t gi = 0; gi < groups; ++gi) {
      MapConstMat g(node(id).grad.data() + gi * m * n, m, n);
      MapConstMat va(node(ia).value.data() + gi * m * k, m, k);
      MapConstMat vb(node(ib).value.data() + gi * k * n, k, n);
      MapMat(node(ia).grad.data() + gi * m * k, m, k).noalias() +=
          g * vb.transpose();
      MapMat(node(ib).grad.data() + gi * k * n, k, n).noalias() +=
          va.transpose() * g;
    }
  };
  return wrap(id);
}

// ---------------------------------------------------------------------------
// elementwise nonlinearities
// ---------------------------------------------------------------------------

Var Tape::relu(Var a) { return leaky_relu(a, 0.0); }

Var Tape::leaky_relu(Var a, double slope) {
  check_same_tape(a, "leaky_relu");
  Tensor out = value(a);
  for (double& v : out.values()) v = v > 0.0 ? v : slope * v;
  int id = push(std::move(out));
  node(id).pull = [this, id, ia = a.id(), slope] {
    const Tensor& g = node(id).grad;
    const Tensor& x = node(ia).value;
    Tensor& ga = node(ia).grad;
    for (std::size_t i = 0; i < g.size(); ++i)
      ga[i] += g[i] * (x[i] > 0.0 ? 1.0 : slope);
  };
  return wrap(id);
}

Var Tape::tanh(Var a) {
  check_same_tape(a, "tanh");
  Tensor out = value(a);
  for (double& v : out.values()) v = std::tanh(v);
  int id = push(std::move(out));
  node(id).pull = [this, id, ia = a.id()] {
    const Tensor& g = node(id).grad;
    const Tensor& y = node(id).value;
    Tensor& ga = node(ia).grad;
    for (std::size_t i = 0; i < g.size(); ++i)
      ga[i] += g[i] * (1.0 - y[i] * y[i]);
  };
  return wrap(id);
}

Var Tape::sigmoid(Var a) {
  check_same_tape(a, "sigmoid");
  Tensor out = value(a);
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  int id = push(std::move(out));
  node(id).pull = [this, id, ia = a.id()] {
    const Tensor& g = node(id).grad;
    const Tensor& y = node(id).value;
    Tensor& ga = node(ia).grad;
    for (std::size_t i = 0; i < g.size(); ++i)
      ga[i] += g[i] * y[i] * (1.0 - y[i]);
  };
  return wrap(id);
}

Var Tape::gelu(Var a) {
  check_same_tape(a, "gelu");
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k3 = 0.044715;
  Tensor out = value(a);
  for (double& v : out.values()) {
    double u = c * (v + k3 * v * v * v);
    v = 0.5 * v * (1.0 + std::tanh(u));
  }
  int id = push(std::move(out));
  node(id).pull = [this, id, ia = a.id()] {
    const Tensor& g = node(id).grad;
    const Tensor& x = node(ia).value;
    Tensor& ga = node(ia).grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      double v = x[i];
      double u = c * (v + k3 * v * v * v);
      double t = std::tanh(u);
      double du = c * (1.0 + 3.0 * k3 * v * v);
      ga[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
    }
  };
  return wrap(id);
}

Var Tape::sqrt(Var a) {
  check_same_tape(a, "sqrt");
  Tensor out = value(a);
  for (double& v : out.values()) {
    if (v < 0.0) throw Error("sqrt: negative input");
    v = std::sqrt(v);
  }
  int id = push(std::move(out));
  node(id).pull = [this, id, ia = a.id()] {
    const Tensor& g = node(id).grad;
    const Tensor& y = node(id).value;
    Tensor& ga = node(ia).grad;
    for (std::size_t i = 0; i < g.size(); ++i)
      ga[i] += g[i] * 0.5 / std::max(y[i], 1e-300);
  };
  return wrap(id);
}

// ---------------------------------------------------------------------------
// row-wise reductions over the last axis
// ---------------------------------------------------------------------------

Var Tape::softmax_last(Var a) {
  check_same_tape(a, "softmax-last-axis");
  const Tensor& ta = value(a);
  if (ta.rank() < 1) shape_fail("softmax-last-axis", ta);
  std::size_t d = ta.shape().back();
  if (d == 0) shape_fail("softmax-last-axis", ta);
  std::size_t rows = ta.size() / d;
  Tensor out = ta;
  for (std::size_t r = 0; r < rows; ++r) {
    double* p = out.data() + r * d;
    double mx = *std::max_element(p, p + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      p[j] = std::exp(p[j] - mx);
      z += p[j];
    }
    for (std::size_t j = 0; j < d; ++j) p[j] /= z;
  }
  int id = push(std::move(out));
  node(id).pull = [this, id, ia = a.id(), rows, d] {
    const Tensor& g = node(id).grad;
    const Tensor& y = node(id).value;
    Tensor& ga = node(ia).grad;
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
      for (std::size_t j = 0; j < d; ++j)
        ga[r * d + j] += y[r * d + j] * (g[r * d + j] - dot);
    }
  };
  return wrap(id);
}

Var Tape::layernorm_last(Var a, double eps) {
  check_same_tape(a, "layernorm-last-axis");
  const Tensor& ta = value(a);
  if (ta.rank() < 1) shape_fail("layernorm-last-axis", ta);
  std::size_t d = ta.shape().back();
  if (d == 0) shape_fail("layernorm-last-axis", ta);
  std::size_t rows = ta.size() / d;
  Tensor out = ta;
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double* p = out.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += p[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      p[j] -= mu;
      var += p[j] * p[j];
    }
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) p[j] *= inv_std[r];
  }
  int id = push(std::move(out));
  node(id).pull = [this, id, ia = a.id(), rows, d,
                   istd = std::move(inv_std)] {
    const Tensor& g = node(id).grad;
    const Tensor& y = node(id).value;
    Tensor& ga = node(ia).grad;
    double dn = static_cast<double>(d);
    for (std::size_t r = 0; r < rows; ++r) {
      double gsum = 0.0, gy = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        gsum += g[r * d + j];
        gy += g[r * d + j] * y[r * d + j];
      }
      for (std::size_t j = 0; j < d; ++j) {
        ga[r * d + j] +=
            istd[r] * (g[r * d + j] - gsum / dn - y[r * d + j] * gy / dn);
      }
    }
  };
  return wrap(id);
}

// ---------------------------------------------------------------------------
// full reductions
// ---------------------------------------------------------------------------

Var Tape::sum(Var a) {
  check_same_tape(a, "sum");
  double acc = 0.0;
  for (double v : value(a).values()) acc += v;
  int id = push(Tensor::scalar(acc));
  node(id).pull = [this, id, ia = a.id()] {
    double g = node(id).grad[0];
    Tensor& ga = node(ia).grad;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  };
  return wrap(id);
}

Var Tape::mean(Var a) {
  check_same_tape(a, "mean");
  const Tensor& ta = value(a);
  if (ta.size() == 0) shape_fail("mean", ta);
  double acc = 0.0;
  for (double v : ta.values()) acc += v;
  double inv = 1.0 / static_cast<double>(ta.size());
  int id = push(Tensor::scalar(acc * inv));
  node(id).pull = [this, id, ia = a.id(), inv] {
    double g = node(id).grad[0] * inv;
    Tensor& ga = node(ia).grad;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  };
  return wrap(id);
}

// ---------------------------------------------------------------------------
// layout ops
// ---------------------------------------------------------------------------

namespace {

std::vector<std::size_t> strides_of(const std::vector<std::size_t>& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
    s[static_cast<std::size_t>(i)] =
        s[static_cast<std::size_t>(i) + 1] * shape[static_cast<std::size_t>(i) + 1];
  return s;
}

// dst[i] = src[perm_map(i)] for a permutation of axes.
void permute_copy(const std::vector<std::size_t>& in_shape,
                  const std::vector<std::size_t>& perm, const double* src,
                  double* dst, bool inverse) {
  std::size_t rank = in_shape.size();
  std::vector<std::size_t> out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[perm[i]];
  auto in_strides = strides_of(in_shape);
  auto out_strides = strides_of(out_shape);
  std::size_t total = Tensor::count(in_shape);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rem = flat;
    std::size_t src_off = 0;
    for (std::size_t a = 0; a < rank; ++a) {
      std::size_t coord = rem / out_strides[a];
      rem %= out_strides[a];
      src_off += coord * in_strides[perm[a]];
    }
    if (inverse) {
      dst[src_off] += src[flat];
    } else {
      dst[flat] = src[src_off];
    }
  }
}

}  // namespace

Var Tape::transpose(Var a, std::vector<std::size_t> perm) {
  check_same_tape(a, "transpose");
  const Tensor& ta = value(a);
  if (perm.empty()) {
    if (ta.rank() != 2) shape_fail("transpose", ta);
    perm = {1, 0};
  }
  if (perm.size() != ta.rank()) shape_fail("transpose", ta);
  std::vector<bool> seen(perm.size(), false);
  for (std::size_t p : perm) {
    if (p >= perm.size() || seen[p]) shape_fail("transpose", ta);
    seen[p] = true;
  }
  std::vector<std::size_t> out_shape(ta.rank());
  for (std::size_t i = 0; i < ta.rank(); ++i) out_shape[i] = ta.shape()[perm[i]];
  Tensor out(out_shape);
  permute_copy(ta.shape(), perm, ta.data(), out.data(), false);
  int id = push(std::move(out));
  node(id).pull = [this, id, ia = a.id(), perm] {
    permute_copy(node(ia).value.shape(), perm, node(id).grad.data(),
                 node(ia).grad.data(), true);
  };
  return wrap(id);
}

Var Tape::reshape(Var a, std::vector<std::size_t> shape) {
  check_same_tape(a, "reshape");
  const Tensor& ta = value(a);
  if (Tensor::count(shape) != ta.size()) {
    throw ShapeError("reshape: " + ta.shape_str() + " to " +
                     Tensor::shape_str(shape) + " changes element count");
  }
  int id = push(Tensor(std::move(shape), ta.values()));
  node(id).pull = [this, id, ia = a.id()] {
    const Tensor& g = node(id).grad;
    Tensor& ga = node(ia).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  };
  return wrap(id);
}

Var Tape::concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  for (Var p : parts) check_same_tape(p, "concat");
  const Tensor& first = value(parts[0]);
  std::size_t rank = first.rank();
  if (axis >= rank) shape_fail("concat", first);
  std::vector<std::size_t> out_shape = first.shape();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const Tensor& t = value(parts[i]);
    if (t.rank() != rank) shape_fail("concat", first, t);
    for (std::size_t a = 0; a < rank; ++a) {
      if (a != axis && t.shape()[a] != first.shape()[a])
        shape_fail("concat", first, t);
    }
    out_shape[axis] += t.shape()[axis];
  }
  // View each input as [outer, axis_len * inner] stripes.
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= first.shape()[a];
  for (std::size_t a = axis + 1; a < rank; ++a) inner *= first.shape()[a];
  Tensor out(out_shape);
  std::size_t out_stripe = out_shape[axis] * inner;
  std::size_t offset = 0;
  std::vector<int> ids;
  std::vector<std::size_t> stripes, offsets;
  for (Var p : parts) {
    const Tensor& t = value(p);
    std::size_t stripe = t.shape()[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::memcpy(out.data() + o * out_stripe + offset,
                  t.data() + o * stripe, stripe * sizeof(double));
    }
    ids.push_back(p.id());
    stripes.push_back(stripe);
    offsets.push_back(offset);
    offset += stripe;
  }
  int id = push(std::move(out));
  node(id).pull = [this, id, ids, stripes, offsets, outer, out_stripe] {
    const Tensor& g = node(id).grad;
    for (std::size_t pi = 0; pi < ids.size(); ++pi) {
      Tensor& gp = node(ids[pi]).grad;
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = g.data() + o * out_stripe + offsets[pi];
        double* dst = gp.data() + o * stripes[pi];
        for (std::size_t i = 0; i < stripes[pi]; ++i) dst[i] += src[i];
      }
    }
  };
  return wrap(id);
}

Var Tape::gather_rows(Var table, std::vector<int> indices) {
  check_same_tape(table, "embedding-lookup");
  const Tensor& tt = value(table);
  if (tt.rank() < 2) shape_fail("embedding-lookup", tt);
  std::size_t n = tt.shape()[0];
  std::size_t row = tt.size() / std::max<std::size_t>(n, 1);
  for (int ix : indices) {
    if (ix < 0 || static_cast<std::size_t>(ix) >= n) {
      throw ShapeError("embedding-lookup: index " + std::to_string(ix) +
                       " out of range for table " + tt.shape_str());
    }
  }
  std::vector<std::size_t> out_shape = tt.shape();
  out_shape[0] = indices.size();
  Tensor out(out_shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::memcpy(out.data() + i * row,
                tt.data() + static_cast<std::size_t>(indices[i]) * row,
                row * sizeof(double));
  }
  int id = push(std::move(out));
  node(id).pull = [this, id, it = table.id(), idx = std::move(indices), row] {
    const Tensor& g = node(id).grad;
    Tensor& gt = node(it).grad;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const double* src = g.data() + i * row;
      double* dst = gt.data() + static_cast<std::size_t>(idx[i]) * row;
      for (std::size_t j = 0; j < row; ++j) dst[j] += src[j];
    }
  };
  return wrap(id);
}

Var Tape::dropout(Var a, Tensor mask) {
  check_same_tape(a, "dropout");
  if (!value(a).same_shape(mask)) shape_fail("dropout", value(a), mask);
  return mul(a, constant(std::move(mask)));
}

Var Tape::edge_aggregate(Var h, const std::vector<std::pair<int, int>>& edges,
                         bool mean_agg) {
  check_same_tape(h, "edge-aggregate");
  const Tensor& th = value(h);
  if (th.rank() != 2) shape_fail("edge-aggregate", th);
  std::size_t n = th.shape()[0];
  std::size_t d = th.shape()[1];
  std::vector<double> weight(n, 1.0);
  if (mean_agg) {
    std::vector<std::size_t> indeg(n, 0);
    for (const auto& [u, v] : edges) {
      if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= n ||
          static_cast<std::size_t>(v) >= n) {
        throw ShapeError("edge-aggregate: edge (" + std::to_string(u) + "," +
                         std::to_string(v) + ") out of range for " +
                         th.shape_str());
      }
      indeg[static_cast<std::size_t>(v)]++;
    }
    for (std::size_t i = 0; i < n; ++i)
      weight[i] = indeg[i] ? 1.0 / static_cast<double>(indeg[i]) : 0.0;
  } else {
    for (const auto& [u, v] : edges) {
      if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= n ||
          static_cast<std::size_t>(v) >= n) {
        throw ShapeError("edge-aggregate: edge (" + std::to_string(u) + "," +
                         std::to_string(v) + ") out of range for " +
                         th.shape_str());
      }
    }
  }
  Tensor out({n, d});
  for (const auto& [u, v] : edges) {
    const double* src = th.data() + static_cast<std::size_t>(u) * d;
    double* dst = out.data() + static_cast<std::size_t>(v) * d;
    double w = weight[static_cast<std::size_t>(v)];
    for (std::size_t j = 0; j < d; ++j) dst[j] += w * src[j];
  }
  int id = push(std::move(out));
  node(id).pull = [this, id, ih = h.id(), edges, w = std::move(weight), d] {
    const Tensor& g = node(id).grad;
    Tensor& gh = node(ih).grad;
    for (const auto& [u, v] : edges) {
      const double* src = g.data() + static_cast<std::size_t>(v) * d;
      double* dst = gh.data() + static_cast<std::size_t>(u) * d;
      double wv = w[static_cast<std::size_t>(v)];
      for (std::size_t j = 0; j < d; ++j) dst[j] += wv * src[j];
    }
  };
  return wrap(id);
}

Var Tape::causal_mask(Var scores) {
  check_same_tape(scores, "causal-mask");
  const Tensor& ts = value(scores);
  if (ts.rank() < 2 || ts.shape()[ts.rank() - 1] != ts.shape()[ts.rank() - 2]) {
    shape_fail("causal-mask", ts);
  }
  std::size_t t = ts.shape().back();
  std::size_t groups = ts.size() / (t * t);
  Tensor out = ts;
  for (std::size_t gi = 0; gi < groups; ++gi) {
    double* p = out.data() + gi * t * t;
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = i + 1; j < t; ++j) p[i * t + j] = kMaskedLogit;
  }
  int id = push(std::move(out));
  node(id).pull = [this, id, is = scores.id(), groups, t] {
    const Tensor& g = node(id).grad;
    Tensor& gs = node(is).grad;
    for (std::size_t gi = 0; gi < groups; ++gi) {
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j <= i; ++j)
          gs[gi * t * t + i * t + j] += g[gi * t * t + i * t + j];
    }
  };
  return wrap(id);
}

Var Tape::cross_entropy(Var logits, std::vector<int> targets) {
  check_same_tape(logits, "cross-entropy");
  const Tensor& tl = value(logits);
  if (tl.rank() != 2) shape_fail("cross-entropy", tl);
  std::size_t n = tl.shape()[0];
  std::size_t v = tl.shape()[1];
  if (n == 0) throw ShapeError("cross-entropy: empty batch");
  if (targets.size() != n) {
    throw ShapeError("cross-entropy: " + std::to_string(targets.size()) +
                     " targets for logits " + tl.shape_str());
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw ShapeError("cross-entropy: target class " + std::to_string(t) +
                       " outside vocab of " + std::to_string(v));
    }
  }
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* p = tl.data() + r * v;
    double mx = *std::max_element(p, p + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(p[j] - mx);
    loss += std::log(z) + mx - p[static_cast<std::size_t>(targets[r])];
  }
  loss /= static_cast<double>(n);
  int id = push(Tensor::scalar(loss));
  node(id).pull = [this, id, il = logits.id(), tg = std::move(targets), n, v] {
    double g = node(id).grad[0] / static_cast<double>(n);
    const Tensor& tl2 = node(il).value;
    Tensor& gl = node(il).grad;
    for (std::size_t r = 0; r < n; ++r) {
      const double* p = tl2.data() + r * v;
      double mx = *std::max_element(p, p + v);
      double z = 0.0;
      for (std::size_t j = 0; j < v; ++j) z += std::exp(p[j] - mx);
      for (std::size_t j = 0; j < v; ++j) {
        double soft = std::exp(p[j] - mx) / z;
        gl[r * v + j] += g * (soft - (static_cast<std::size_t>(tg[r]) == j));
      }
    }
  };
  return wrap(id);
}

// ---------------------------------------------------------------------------
// reverse pass
// ---------------------------------------------------------------------------

void Tape::backward(Var loss) {
  check_same_tape(loss, "backward");
  if (consumed_) throw Error("backward: record already consumed");
  const Tensor& lv = value(loss);
  if (!lv.is_scalar()) {
    throw ShapeError("backward: loss must be scalar, got " + lv.shape_str());
  }
  consumed_ = true;
  for (Node& nd : nodes_) nd.grad = Tensor(nd.value.shape());
  node(loss.id()).grad[0] = 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    if (node(id).pull) node(id).pull();
  }
  for (auto& [p, id] : mounted_) {
    const Tensor& g = node(id).grad;
    for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
  }
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x,
                  double eps) {
  Tensor analytic;
  {
    Tape tape;
    Var vx = tape.constant(x);
    Var loss = f(tape, vx);
    if (!loss.value().is_scalar()) {
      throw ShapeError("grad_check: f must return a scalar");
    }
    tape.backward(loss);
    analytic = tape.grad(vx);
  }
  auto eval = [&](const Tensor& pt) {
    Tape tape;
    Var vx = tape.constant(pt);
    return f(tape, vx).value().scalar_value();
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double orig = probe[i];
    probe[i] = orig + eps;
    double fp = eval(probe);
    probe[i] = orig - eps;
    double fm = eval(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw Error("grad_check: non-finite value at coordinate " +
                  std::to_string(i));
    }
    double numeric = (fp - fm) / (2.0 * eps);
    double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace scorelab
