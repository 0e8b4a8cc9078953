#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "scorelab/errors.hpp"
#include "scorelab/training.hpp"

using namespace scorelab;

TEST_CASE("plain gradient step moves against the gradient") {
  Parameter p("p", Tensor::row({0.0}));
  Optimizer opt(OptimizerKind::kSgd, {&p}, 0.1);
  p.grad[0] = 1.0;
  opt.step();
  CHECK(p.value[0] == doctest::Approx(-0.1).epsilon(1e-14));
  CHECK(p.grad[0] == 0.0);
}

TEST_CASE("adaptive step with zero gradient leaves parameters unchanged") {
  Parameter p("p", Tensor::row({1.5, -2.5}));
  Optimizer opt(OptimizerKind::kAdam, {&p});
  opt.step();
  CHECK(p.value[0] == 1.5);
  CHECK(p.value[1] == -2.5);
}

TEST_CASE("first adaptive step has magnitude close to the learning rate") {
  Parameter p("p", Tensor::row({0.0}));
  Optimizer opt(OptimizerKind::kAdam, {&p}, 1e-3);
  p.grad[0] = 1.0;
  opt.step();
  CHECK(std::abs(p.value[0] + 1e-3) < 1e-9);
}

TEST_CASE("decoupled weight decay shrinks weights independently of gradients") {
  Parameter p("p", Tensor::row({1.0}));
  Optimizer opt(OptimizerKind::kAdamW, {&p}, 1e-3, 0.01);
  opt.step();
  CHECK(p.value[0] == doctest::Approx(1.0 - 1e-3 * 0.01).epsilon(1e-14));

  Parameter q("q", Tensor::row({1.0}));
  Parameter q2("q2", Tensor::row({1.0}));
  Optimizer adamw0(OptimizerKind::kAdamW, {&q}, 1e-3, 0.0);
  Optimizer adam(OptimizerKind::kAdam, {&q2}, 1e-3);
  q.grad[0] = 0.7;
  q2.grad[0] = 0.7;
  adamw0.step();
  adam.step();
  CHECK(q.value[0] == q2.value[0]);
}

TEST_CASE("non-finite gradients stop the optimizer and name the culprit") {
  Parameter p("trunk.weight", Tensor::row({0.0}));
  Optimizer opt(OptimizerKind::kSgd, {&p}, 0.1);
  p.grad[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    opt.step();
    FAIL("expected divergence");
  } catch (const DivergedError& e) {
    CHECK(std::string(e.what()).find("trunk.weight") != std::string::npos);
  }
}

TEST_CASE("mean squared error matches the hand-computed value") {
  Tape t;
  Var loss = mse_loss(t, t.constant(Tensor::row({1, 3})),
                      t.constant(Tensor::row({0, 0})));
  CHECK(loss.value().scalar_value() == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(std::sqrt(loss.value().scalar_value()) ==
        doctest::Approx(2.2360679).epsilon(1e-6));

  Tape t2;
  Var zero = mse_loss(t2, t2.constant(Tensor::row({1, 2})),
                      t2.constant(Tensor::row({1, 2})));
  CHECK(zero.value().scalar_value() == 0.0);

  Tape t3;
  CHECK_THROWS_AS(
      mse_loss(t3, t3.constant(Tensor({0})), t3.constant(Tensor({0}))),
      DataError);
}

TEST_CASE("gradient clipping rescales to the requested norm") {
  Parameter p("p", Tensor::row({0, 0, 0}));
  p.grad = Tensor::row({3, 4, 0});
  double before = clip_gradients({&p}, 1.0);
  CHECK(before == doctest::Approx(5.0));
  double after = std::sqrt(p.grad[0] * p.grad[0] + p.grad[1] * p.grad[1]);
  CHECK(after == doctest::Approx(1.0).epsilon(1e-12));

  p.grad = Tensor::row({0.3, 0.4, 0});
  CHECK(clip_gradients({&p}, 1.0) == doctest::Approx(0.5));
  CHECK(p.grad[1] == doctest::Approx(0.4));
}

TEST_CASE("every optimizer descends a convex quadratic after warmup") {
  for (auto kind :
       {OptimizerKind::kSgd, OptimizerKind::kAdam, OptimizerKind::kAdamW}) {
    Parameter p("p", Tensor::row({2.0, -1.0, 0.5}));
    Tensor target = Tensor::row({0.3, 0.1, -0.2});
    Optimizer opt(kind, {&p}, 1e-3);
    std::vector<double> losses;
    for (int step = 0; step < 60; ++step) {
      Tape t;
      Var loss = mse_loss(t, t.param(p), t.constant(target));
      losses.push_back(loss.value().scalar_value());
      t.backward(loss);
      opt.step();
    }
    for (std::size_t i = 10; i + 1 < losses.size(); ++i)
      CHECK(losses[i + 1] <= losses[i] + 1e-15);
  }
}

TEST_CASE("five folds of ten samples partition them two by two") {
  FoldSpec spec = kfold_split(10, 5, 42);
  std::set<std::size_t> seen;
  for (int f = 0; f < 5; ++f) {
    CHECK(spec.test_indices(f).size() == 2);
    for (std::size_t i : spec.test_indices(f)) seen.insert(i);
    std::vector<std::size_t> train = spec.train_indices(f);
    CHECK(train.size() == 8);
    for (std::size_t i : spec.test_indices(f))
      CHECK(std::find(train.begin(), train.end(), i) == train.end());
  }
  CHECK(seen.size() == 10);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 9);
}

TEST_CASE("splitting is deterministic in the seed") {
  FoldSpec a = kfold_split(23, 5, 7);
  FoldSpec b = kfold_split(23, 5, 7);
  CHECK(a.test_folds == b.test_folds);
  FoldSpec c = kfold_split(23, 5, 8);
  CHECK(a.test_folds != c.test_folds);
}

TEST_CASE("underfilled folds are rejected") {
  CHECK_THROWS_AS(kfold_split(3, 5, 0), ConfigError);
  CHECK_THROWS_AS(kfold_split(10, 1, 0), ConfigError);
}

TEST_CASE("uneven fold sizes stay within one of each other") {
  FoldSpec spec = kfold_split(23, 5, 3);
  std::size_t total = 0;
  for (int f = 0; f < 5; ++f) {
    std::size_t sz = spec.test_indices(f).size();
    CHECK(sz >= 4);
    CHECK(sz <= 5);
    total += sz;
  }
  CHECK(total == 23);
}

namespace {

// y = 2x regression with a single trainable slope.
struct ToyTask {
  std::vector<double> xs, ys;
  Parameter w{"w", Tensor::row({0.0})};

  ToyTask() {
    for (int i = 0; i < 32; ++i) {
      double x = -1.0 + 2.0 * i / 31.0;
      xs.push_back(x);
      ys.push_back(2.0 * x);
    }
  }

  double mse_on(const std::vector<std::size_t>& idx) {
    double acc = 0.0;
    for (std::size_t i : idx) {
      double r = w.value[0] * xs[i] - ys[i];
      acc += r * r;
    }
    return acc / static_cast<double>(idx.size());
  }

  LearningCurve run(const TrainOptions& opt) {
    BatchLoss loss = [this](Tape& t, const std::vector<std::size_t>& batch,
                            bool, Rng&) {
      Tensor x({batch.size(), 1});
      Tensor y({batch.size(), 1});
      for (std::size_t i = 0; i < batch.size(); ++i) {
        x[i] = xs[batch[i]];
        y[i] = ys[batch[i]];
      }
      Var pred = t.matmul(t.constant(x), t.reshape(t.param(w), {1, 1}));
      return mse_loss(t, pred, t.constant(y));
    };
    SplitMetric metric = [this](const std::vector<std::size_t>& idx) {
      return mse_on(idx);
    };
    std::vector<std::size_t> train_idx, val_idx;
    for (std::size_t i = 0; i < xs.size(); ++i)
      (i % 4 == 3 ? val_idx : train_idx).push_back(i);
    return train_epochs(train_idx, val_idx, loss, metric, {&w}, opt, "mse");
  }
};

}  // namespace

TEST_CASE("toy linear regression converges under the fixed-epoch loop") {
  ToyTask task;
  TrainOptions opt;
  opt.optimizer = OptimizerKind::kSgd;
  opt.lr = 0.05;
  opt.epochs = 200;
  opt.batch_size = 8;
  LearningCurve curve = task.run(opt);
  REQUIRE(curve.steps.size() == 200);
  CHECK_FALSE(curve.diverged);
  CHECK(curve.val.back() < 1e-3);
  CHECK(task.w.value[0] == doctest::Approx(2.0).epsilon(1e-2));
}

TEST_CASE("curve bookkeeping matches the epoch budget") {
  ToyTask task;
  TrainOptions opt;
  opt.epochs = 3;
  LearningCurve curve = task.run(opt);
  CHECK(curve.steps == std::vector<int>{1, 2, 3});
  CHECK(curve.train.size() == 3);
  CHECK(curve.val.size() == 3);
  CHECK(curve.wall_ms.size() == 3);
  CHECK(curve.metric == "mse");
}

TEST_CASE("identical seeds reproduce the learning curve exactly") {
  TrainOptions opt;
  opt.optimizer = OptimizerKind::kAdam;
  opt.epochs = 20;
  opt.batch_size = 4;
  opt.seed = 13;
  ToyTask a;
  LearningCurve ca = a.run(opt);
  ToyTask b;
  LearningCurve cb = b.run(opt);
  CHECK(ca.train == cb.train);
  CHECK(ca.val == cb.val);
  CHECK(a.w.value[0] == b.w.value[0]);
}

TEST_CASE("best-value bookkeeping picks the minimum of the series") {
  LearningCurve c;
  c.steps = {1, 2, 3, 4};
  c.val = {0.9, 0.2, 0.4, 0.3};
  c.train = {1, 1, 1, 1};
  CHECK(c.best_index() == 1);
  CHECK(c.best() == doctest::Approx(0.2));
  CHECK(c.steps_to_best() == 2);
}

TEST_CASE("divergent losses truncate and flag the curve") {
  Parameter w("w", Tensor::row({0.0}));
  int calls = 0;
  BatchLoss loss = [&](Tape& t, const std::vector<std::size_t>&, bool, Rng&) {
    ++calls;
    double v = calls > 3 ? std::numeric_limits<double>::quiet_NaN() : 1.0;
    return t.mean(t.add(t.param(w), t.constant(Tensor::row({v}))));
  };
  SplitMetric metric = [](const std::vector<std::size_t>&) { return 1.0; };
  TrainOptions opt;
  opt.epochs = 10;
  opt.batch_size = 1;
  std::vector<std::size_t> idx{0};
  LearningCurve curve = train_epochs(idx, idx, loss, metric, {&w}, opt, "mse");
  CHECK(curve.diverged);
  CHECK(curve.steps.size() < 10);
}

TEST_CASE("iteration-budgeted loop logs on the evaluation cadence") {
  Parameter w("w", Tensor::row({5.0}));
  BatchLoss loss = [&](Tape& t, const std::vector<std::size_t>& batch, bool,
                       Rng&) {
    CHECK(batch.size() == 2);
    Var p = t.param(w);
    return t.mean(t.mul(p, p));
  };
  SplitMetric metric = [&](const std::vector<std::size_t>&) {
    return w.value[0] * w.value[0];
  };
  TrainOptions opt;
  opt.iterations = 25;
  opt.eval_every = 10;
  opt.batch_size = 2;
  opt.lr = 1e-2;
  LearningCurve curve =
      train_iterations(100, loss, metric, {&w}, opt, "loss");
  CHECK(curve.steps == std::vector<int>{0, 10, 20, 25});
  CHECK(curve.val.size() == 4);
  CHECK(curve.val.front() == 25.0);
  CHECK(curve.train.front() == 25.0);
  CHECK(curve.val.back() < curve.val.front());
}
