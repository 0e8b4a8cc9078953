#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "scorelab/errors.hpp"
#include "scorelab/rng.hpp"
#include "scorelab/tape.hpp"

using namespace scorelab;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("add is elementwise") {
  Tape t;
  Var c = t.add(t.constant(Tensor::row({1, 2})), t.constant(Tensor::row({3, 4})));
  CHECK(c.value()[0] == 4.0);
  CHECK(c.value()[1] == 6.0);
}

TEST_CASE("add broadcasts a row vector across rows") {
  Tape t;
  Var m = t.constant(Tensor({2, 3}, {0, 1, 2, 3, 4, 5}));
  Var b = t.constant(Tensor::row({10, 20, 30}));
  Var c = t.add(m, b);
  CHECK(c.value().values() == std::vector<double>{10, 21, 32, 13, 24, 35});
}

TEST_CASE("matmul with the identity returns the operand") {
  Tape t;
  Var i2 = t.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  Var m = t.constant(Tensor({2, 2}, {5, 6, 7, 8}));
  Var c = t.matmul(i2, m);
  CHECK(c.value().values() == std::vector<double>{5, 6, 7, 8});
}

TEST_CASE("softmax of equal logits is uniform") {
  Tape t;
  Var s = t.softmax_last(t.constant(Tensor::row({0, 0, 0})));
  for (int i = 0; i < 3; ++i) {
    CHECK(s.value()[static_cast<std::size_t>(i)] ==
          doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("shape mismatch diagnostics name the op and both shapes") {
  Tape t;
  Var a = t.constant(Tensor::row({1, 2}));
  Var b = t.constant(Tensor::row({1, 2, 3}));
  CHECK_THROWS_AS(t.add(a, b), ShapeError);
  try {
    t.matmul(a, b);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2]") != std::string::npos);
    CHECK(msg.find("[3]") != std::string::npos);
  }
}

TEST_CASE("gradient of a plain sum is all ones") {
  Parameter p("p", Tensor::row({4, 5, 6}));
  Tape t;
  t.backward(t.sum(t.param(p)));
  CHECK(p.grad.values() == std::vector<double>{1, 1, 1});
}

TEST_CASE("gradient of sum of squares is twice the value") {
  Parameter p("p", Tensor::row({1, 2}));
  Tape t;
  Var v = t.param(p);
  t.backward(t.sum(t.mul(v, v)));
  CHECK(p.grad[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(p.grad[1] == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("a shared weight used twice gets the sum of both contributions") {
  Tensor w0({2, 2}, {0.5, -0.3, 0.8, 0.1});
  Tensor x0({2, 1}, {1.0, 2.0});

  Parameter tied("W", w0);
  {
    Tape t;
    Var w = t.param(tied);
    Var h = t.matmul(w, t.matmul(w, t.constant(x0)));
    t.backward(t.sum(h));
  }

  Parameter first("W1", w0);
  Parameter second("W2", w0);
  {
    Tape t;
    Var h = t.matmul(t.param(second), t.matmul(t.param(first), t.constant(x0)));
    t.backward(t.sum(h));
  }

  for (std::size_t i = 0; i < 4; ++i) {
    double untied = first.grad[i] + second.grad[i];
    CHECK(std::abs(tied.grad[i] - untied) <= 1e-10);
  }
}

TEST_CASE("mounting the same parameter twice reuses one node") {
  Parameter p("p", Tensor::row({1, 2}));
  Tape t;
  Var a = t.param(p);
  Var b = t.param(p);
  CHECK(a.id() == b.id());
  t.backward(t.sum(t.add(a, b)));
  CHECK(p.grad.values() == std::vector<double>{2, 2});
}

TEST_CASE("parameter gradients accumulate until zeroed") {
  Parameter p("p", Tensor::row({3}));
  {
    Tape t;
    t.backward(t.sum(t.param(p)));
  }
  {
    Tape t;
    t.backward(t.sum(t.param(p)));
  }
  CHECK(p.grad[0] == 2.0);
  p.zero_grad();
  CHECK(p.grad[0] == 0.0);
}

TEST_CASE("backward rejects non-scalar losses and reuse") {
  Tape t;
  Var v = t.constant(Tensor::row({1, 2}));
  CHECK_THROWS_AS(t.backward(v), ShapeError);
  Var s = t.sum(v);
  t.backward(s);
  CHECK(t.consumed());
  CHECK_THROWS_AS(t.backward(s), Error);
}

TEST_CASE("gradient check is tight on a quadratic") {
  double err = grad_check(
      [](Tape& t, Var x) { return t.sum(t.mul(x, x)); },
      Tensor::row({1, -2}));
  CHECK(err < 1e-6);
}

TEST_CASE("gradient check is near-exact on a linear map") {
  double err = grad_check([](Tape& t, Var x) { return t.sum(x); },
                          Tensor::row({0.3, -0.7, 2.0}));
  CHECK(err < 1e-9);
}

TEST_CASE("adjoints of smooth scalar nonlinearities") {
  Rng rng(11);
  Tensor x = random_tensor({2, 3}, rng);
  CHECK(grad_check([](Tape& t, Var v) { return t.sum(t.tanh(v)); }, x) < 1e-7);
  CHECK(grad_check([](Tape& t, Var v) { return t.sum(t.sigmoid(v)); }, x) < 1e-7);
  CHECK(grad_check([](Tape& t, Var v) { return t.sum(t.gelu(v)); }, x) < 1e-7);
}

TEST_CASE("adjoint of sqrt on positive inputs") {
  CHECK(grad_check([](Tape& t, Var v) { return t.sum(t.sqrt(v)); },
                   Tensor::row({0.5, 2.0, 9.0})) < 1e-7);
}

TEST_CASE("adjoint of leaky relu away from the kink") {
  Tensor x = Tensor::row({0.7, -0.4, 1.3, -2.0});
  CHECK(grad_check([](Tape& t, Var v) { return t.sum(t.leaky_relu(v)); }, x) <
        1e-7);
  Tape t;
  Var y = t.leaky_relu(t.constant(x));
  CHECK(y.value()[1] == doctest::Approx(-0.004));
  Var r = t.relu(t.constant(x));
  CHECK(r.value()[1] == 0.0);
  CHECK(r.value()[0] == doctest::Approx(0.7));
}

TEST_CASE("adjoint of matmul") {
  Rng rng(3);
  Tensor x = random_tensor({2, 3}, rng);
  Tensor c = random_tensor({3, 2}, rng);
  CHECK(grad_check(
            [&](Tape& t, Var v) {
              return t.sum(t.tanh(t.matmul(v, t.constant(c))));
            },
            x) < 1e-6);
  CHECK(grad_check(
            [&](Tape& t, Var v) {
              return t.sum(t.tanh(t.matmul(t.constant(c), v)));
            },
            x) < 1e-6);
}

TEST_CASE("adjoint of batched matmul") {
  Rng rng(5);
  Tensor x = random_tensor({2, 2, 3}, rng);
  Tensor c = random_tensor({2, 3, 2}, rng);
  CHECK(grad_check(
            [&](Tape& t, Var v) { return t.sum(t.bmm(v, t.constant(c))); },
            x) < 1e-6);
  CHECK(grad_check(
            [&](Tape& t, Var v) { return t.sum(t.bmm(t.constant(c), v)); },
            x) < 1e-6);
}

TEST_CASE("adjoints of broadcast arithmetic") {
  Rng rng(7);
  Tensor m = random_tensor({3, 4}, rng);
  Tensor bias = random_tensor({4}, rng);
  Tensor w = random_tensor({3, 4}, rng);
  CHECK(grad_check(
            [&](Tape& t, Var v) {
              return t.sum(t.mul(t.add(v, t.constant(bias)), t.constant(w)));
            },
            m) < 1e-6);
  CHECK(grad_check(
            [&](Tape& t, Var v) {
              return t.sum(t.mul(t.add(t.constant(m), v), t.constant(w)));
            },
            bias) < 1e-6);
  CHECK(grad_check(
            [&](Tape& t, Var v) {
              return t.sum(t.mul(t.mul(t.constant(m), v), t.constant(w)));
            },
            bias) < 1e-6);
  CHECK(grad_check(
            [&](Tape& t, Var v) {
              return t.sum(t.mul(v, t.constant(Tensor::scalar(2.5))));
            },
            m) < 1e-9);
  CHECK(grad_check(
            [&](Tape& t, Var v) { return t.sum(t.scale(t.sub(v, t.constant(w)), -3.0)); },
            m) < 1e-9);
}

TEST_CASE("adjoint of softmax and layernorm") {
  Rng rng(13);
  Tensor x = random_tensor({2, 4}, rng);
  Tensor w = random_tensor({2, 4}, rng);
  CHECK(grad_check(
            [&](Tape& t, Var v) {
              return t.sum(t.mul(t.softmax_last(v), t.constant(w)));
            },
            x) < 1e-6);
  CHECK(grad_check(
            [&](Tape& t, Var v) {
              return t.sum(t.mul(t.layernorm_last(v), t.constant(w)));
            },
            x) < 1e-6);
}

TEST_CASE("layernorm output has zero mean and unit variance per row") {
  Rng rng(17);
  Tensor x = random_tensor({3, 8}, rng);
  Tape t;
  const Tensor& y = t.layernorm_last(t.constant(x)).value();
  for (std::size_t r = 0; r < 3; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 8; ++j) mu += y[r * 8 + j];
    mu /= 8.0;
    for (std::size_t j = 0; j < 8; ++j) {
      double d = y[r * 8 + j] - mu;
      var += d * d;
    }
    var /= 8.0;
    CHECK(std::abs(mu) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("adjoint of mean") {
  CHECK(grad_check([](Tape& t, Var v) { return t.mean(t.mul(v, v)); },
                   Tensor::row({1, 2, 3, 4})) < 1e-7);
}

TEST_CASE("adjoints of layout ops") {
  Rng rng(19);
  Tensor x = random_tensor({2, 3, 4}, rng);
  Tensor w = random_tensor({4, 2, 3}, rng);
  CHECK(grad_check(
            [&](Tape& t, Var v) {
              return t.sum(t.mul(t.transpose(v, {2, 0, 1}), t.constant(w)));
            },
            x) < 1e-6);
  Tensor m = random_tensor({2, 3}, rng);
  Tensor wt = random_tensor({3, 2}, rng);
  CHECK(grad_check(
            [&](Tape& t, Var v) {
              return t.sum(t.mul(t.transpose(v), t.constant(wt)));
            },
            m) < 1e-6);
  Tensor wr = random_tensor({6}, rng);
  CHECK(grad_check(
            [&](Tape& t, Var v) {
              return t.sum(t.mul(t.reshape(v, {6}), t.constant(wr)));
            },
            m) < 1e-6);
}

TEST_CASE("transpose default swaps the two axes") {
  Tape t;
  Var y = t.transpose(t.constant(Tensor({2, 3}, {0, 1, 2, 3, 4, 5})));
  CHECK(y.value().shape() == std::vector<std::size_t>{3, 2});
  CHECK(y.value().values() == std::vector<double>{0, 3, 1, 4, 2, 5});
}

TEST_CASE("concat stitches along the requested axis") {
  Tape t;
  Var a = t.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  Var b = t.constant(Tensor({2, 1}, {9, 8}));
  Var c = t.concat({a, b}, 1);
  CHECK(c.value().shape() == std::vector<std::size_t>{2, 3});
  CHECK(c.value().values() == std::vector<double>{1, 2, 9, 3, 4, 8});
  Var d = t.concat({a, a}, 0);
  CHECK(d.value().shape() == std::vector<std::size_t>{4, 2});

  Rng rng(23);
  Tensor x = random_tensor({2, 3}, rng);
  Tensor other = random_tensor({1, 3}, rng);
  Tensor w = random_tensor({3, 3}, rng);
  CHECK(grad_check(
            [&](Tape& tp, Var v) {
              return tp.sum(tp.mul(
                  tp.concat({v, tp.constant(other)}, 0), tp.constant(w)));
            },
            x) < 1e-6);
}

TEST_CASE("row gather repeats and accumulates") {
  Tape t;
  Var table = t.constant(Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
  Var g = t.gather_rows(table, {2, 0, 2});
  CHECK(g.value().values() == std::vector<double>{5, 6, 1, 2, 5, 6});

  Parameter emb("emb", Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
  Tape t2;
  t2.backward(t2.sum(t2.gather_rows(t2.param(emb), {2, 0, 2})));
  CHECK(emb.grad.values() == std::vector<double>{1, 1, 0, 0, 2, 2});

  Tape t3;
  CHECK_THROWS_AS(t3.gather_rows(t3.constant(Tensor({2, 2})), {5}), ShapeError);
}

TEST_CASE("dropout mask zeroes activations and their gradients") {
  Parameter p("p", Tensor::row({2, 3, 4}));
  Tape t;
  Var d = t.dropout(t.param(p), Tensor::row({0.0, 1.25, 0.0}));
  CHECK(d.value().values() == std::vector<double>{0.0, 3.75, 0.0});
  t.backward(t.sum(d));
  CHECK(p.grad.values() == std::vector<double>{0.0, 1.25, 0.0});
}

TEST_CASE("edge aggregation matches a dense adjacency product") {
  // Directed edges (u,v): rows of h flow from u into v.
  std::vector<std::pair<int, int>> edges{{0, 1}, {2, 1}, {1, 0}};
  Tensor h({3, 2}, {1, 2, 3, 4, 5, 6});
  Tape t;
  Var out_sum = t.edge_aggregate(t.constant(h), edges, false);
  CHECK(out_sum.value().values() ==
        std::vector<double>{3, 4, 6, 8, 0, 0});
  Tape t2;
  Var out_mean = t2.edge_aggregate(t2.constant(h), edges, true);
  CHECK(out_mean.value().values() ==
        std::vector<double>{3, 4, 3, 4, 0, 0});

  Rng rng(29);
  Tensor x = random_tensor({3, 2}, rng);
  Tensor w = random_tensor({3, 2}, rng);
  for (bool mean_agg : {false, true}) {
    CHECK(grad_check(
              [&](Tape& tp, Var v) {
                return tp.sum(
                    tp.mul(tp.edge_aggregate(v, edges, mean_agg), tp.constant(w)));
              },
              x) < 1e-6);
  }
}

TEST_CASE("causal mask hides future positions from softmax") {
  Tape t;
  Var s = t.softmax_last(t.causal_mask(t.constant(Tensor({3, 3}))));
  const Tensor& y = s.value();
  CHECK(y.at(0, 0) == doctest::Approx(1.0));
  CHECK(y.at(0, 1) == doctest::Approx(0.0));
  CHECK(y.at(1, 0) == doctest::Approx(0.5));
  CHECK(y.at(2, 2) == doctest::Approx(1.0 / 3.0));

  Rng rng(31);
  Tensor x = random_tensor({3, 3}, rng);
  Tensor w = random_tensor({3, 3}, rng);
  CHECK(grad_check(
            [&](Tape& tp, Var v) {
              return tp.sum(tp.mul(tp.softmax_last(tp.causal_mask(v)),
                                   tp.constant(w)));
            },
            x) < 1e-6);
}

TEST_CASE("cross entropy of uniform logits is log vocab size") {
  Tape t;
  Var loss = t.cross_entropy(t.constant(Tensor({2, 5})), {3, 0});
  CHECK(loss.value().scalar_value() ==
        doctest::Approx(std::log(5.0)).epsilon(1e-12));

  Rng rng(37);
  Tensor x = random_tensor({2, 4}, rng);
  CHECK(grad_check(
            [&](Tape& tp, Var v) { return tp.cross_entropy(v, {1, 3}); }, x) <
        1e-6);

  Tape t2;
  CHECK_THROWS_AS(t2.cross_entropy(t2.constant(Tensor({2, 3})), {0, 7}),
                  ShapeError);
}

TEST_CASE("a four-step relaxed unroll of a dense block differentiates cleanly") {
  Rng rng(41);
  Tensor w = random_tensor({3, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  Tensor x = random_tensor({1, 3}, rng);
  double err = grad_check(
      [&](Tape& t, Var v) {
        Var wv = t.constant(w);
        Var bv = t.constant(b);
        Var h = v;
        for (int step = 0; step < 4; ++step) {
          Var f = t.tanh(t.add(t.matmul(h, wv), bv));
          h = t.add(t.scale(h, 0.5), t.scale(f, 0.5));
        }
        return t.sum(h);
      },
      x);
  CHECK(err < 1e-5);
}

TEST_CASE("identical seeds give bitwise identical gradients") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Parameter w("w", random_tensor({4, 4}, rng));
    Parameter b("b", random_tensor({4}, rng));
    Tensor x = random_tensor({2, 4}, rng);
    Tape t;
    Var h = t.constant(x);
    for (int step = 0; step < 3; ++step) {
      h = t.tanh(t.add(t.matmul(h, t.param(w)), t.param(b)));
    }
    t.backward(t.mean(t.mul(h, h)));
    std::vector<double> out = w.grad.values();
    out.insert(out.end(), b.grad.values().begin(), b.grad.values().end());
    return out;
  };
  std::vector<double> a = run(99);
  std::vector<double> b = run(99);
  REQUIRE(a.size() == b.size());
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("vars from different tapes are rejected") {
  Tape t1, t2;
  Var a = t1.constant(Tensor::row({1}));
  Var b = t2.constant(Tensor::row({1}));
  CHECK_THROWS_AS(t1.add(a, b), Error);
}
