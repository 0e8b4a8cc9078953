#include "scorelab/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "scorelab/errors.hpp"

namespace scorelab {

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "adamw") return OptimizerKind::kAdamW;
  throw ConfigError("unknown optimizer '" + s +
                    "' (expected sgd, adam or adamw)");
}

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::kSgd: return "sgd";
    case OptimizerKind::kAdam: return "adam";
    case OptimizerKind::kAdamW: return "adamw";
  }
  return "adam";
}

Optimizer::Optimizer(OptimizerKind kind, std::vector<Parameter*> params,
                     double lr_, double weight_decay_)
    : lr(lr_), weight_decay(weight_decay_), kind_(kind),
      params_(std::move(params)) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Optimizer::step() {
  for (Parameter* p : params_) {
    if (!p->grad.all_finite()) {
      throw DivergedError("optimizer: non-finite gradient in parameter '" +
                          p->name + "'");
    }
  }
  ++t_;
  double bc1 = 1.0 - std::pow(beta1, t_);
  double bc2 = 1.0 - std::pow(beta2, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    switch (kind_) {
      case OptimizerKind::kSgd:
        for (std::size_t j = 0; j < p.size(); ++j)
          p.value[j] -= lr * p.grad[j];
        break;
      case OptimizerKind::kAdamW:
        for (std::size_t j = 0; j < p.size(); ++j)
          p.value[j] -= lr * weight_decay * p.value[j];
        [[fallthrough]];
      case OptimizerKind::kAdam:
        for (std::size_t j = 0; j < p.size(); ++j) {
          double g = p.grad[j];
          m_[i][j] = beta1 * m_[i][j] + (1.0 - beta1) * g;
          v_[i][j] = beta2 * v_[i][j] + (1.0 - beta2) * g * g;
          double mhat = m_[i][j] / bc1;
          double vhat = v_[i][j] / bc2;
          p.value[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
        break;
    }
  }
  zero_grad();
}

void Optimizer::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

Var mse_loss(Tape& tape, Var pred, Var target) {
  if (pred.value().size() == 0) throw DataError("loss: empty batch");
  if (!pred.value().same_shape(target.value())) {
    throw ShapeError("loss: prediction " + pred.value().shape_str() +
                     " vs target " + target.value().shape_str());
  }
  Var d = tape.sub(pred, target);
  return tape.mean(tape.mul(d, d));
}

double clip_gradients(const std::vector<Parameter*>& params, double max_norm) {
  double total = 0.0;
  for (Parameter* p : params)
    for (std::size_t j = 0; j < p->size(); ++j) total += p->grad[j] * p->grad[j];
  double norm = std::sqrt(total);
  if (max_norm > 0.0 && norm > max_norm) {
    double s = max_norm / norm;
    for (Parameter* p : params)
      for (std::size_t j = 0; j < p->size(); ++j) p->grad[j] *= s;
  }
  return norm;
}

const std::vector<std::size_t>& FoldSpec::test_indices(int fold) const {
  return test_folds.at(static_cast<std::size_t>(fold));
}

std::vector<std::size_t> FoldSpec::train_indices(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f < test_folds.size(); ++f) {
    if (f == static_cast<std::size_t>(fold)) continue;
    out.insert(out.end(), test_folds[f].begin(), test_folds[f].end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

FoldSpec kfold_split(std::size_t n, int fold_count, std::uint64_t seed) {
  if (fold_count < 2) {
    throw ConfigError("kfold: need at least 2 folds, got " +
                      std::to_string(fold_count));
  }
  if (n < static_cast<std::size_t>(fold_count)) {
    throw ConfigError("kfold: " + std::to_string(n) + " samples cannot fill " +
                      std::to_string(fold_count) + " folds");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);

  FoldSpec spec;
  spec.fold_count = fold_count;
  spec.seed = seed;
  spec.test_folds.resize(static_cast<std::size_t>(fold_count));
  for (int f = 0; f < fold_count; ++f) {
    std::size_t lo = n * static_cast<std::size_t>(f) /
                     static_cast<std::size_t>(fold_count);
    std::size_t hi = n * (static_cast<std::size_t>(f) + 1) /
                     static_cast<std::size_t>(fold_count);
    auto& fold = spec.test_folds[static_cast<std::size_t>(f)];
    fold.assign(order.begin() + static_cast<std::ptrdiff_t>(lo),
                order.begin() + static_cast<std::ptrdiff_t>(hi));
    std::sort(fold.begin(), fold.end());
  }
  return spec;
}

std::size_t LearningCurve::best_index() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < val.size(); ++i)
    if (val[i] < val[best]) best = i;
  return best;
}

double LearningCurve::best() const {
  if (val.empty()) return std::numeric_limits<double>::quiet_NaN();
  return val[best_index()];
}

int LearningCurve::steps_to_best() const {
  if (val.empty()) return 0;
  return steps[best_index()];
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start)
      .count();
}

// Runs one optimization step from a freshly built loss. Returns false when
// the loss or a gradient is non-finite (the caller stops and flags the run).
bool optimize_batch(const BatchLoss& loss_fn,
                    const std::vector<std::size_t>& batch, Rng& rng,
                    const std::vector<Parameter*>& params, Optimizer& optimizer,
                    double grad_clip, double* loss_out) {
  Tape tape;
  Var loss = loss_fn(tape, batch, true, rng);
  double value = loss.value().scalar_value();
  if (loss_out != nullptr) *loss_out = value;
  if (!std::isfinite(value)) return false;
  tape.backward(loss);
  if (grad_clip > 0.0) clip_gradients(params, grad_clip);
  try {
    optimizer.step();
  } catch (const DivergedError&) {
    return false;
  }
  return true;
}

}  // namespace

LearningCurve train_epochs(const std::vector<std::size_t>& train_idx,
                           const std::vector<std::size_t>& val_idx,
                           const BatchLoss& loss_fn,
                           const SplitMetric& metric_fn,
                           const std::vector<Parameter*>& params,
                           const TrainOptions& opt, std::string metric_name) {
  if (opt.epochs < 1) {
    throw ConfigError("training: epochs must be positive, got " +
                      std::to_string(opt.epochs));
  }
  if (opt.batch_size < 1) {
    throw ConfigError("training: batch size must be positive, got " +
                      std::to_string(opt.batch_size));
  }
  LearningCurve curve;
  curve.metric = std::move(metric_name);
  Optimizer optimizer(opt.optimizer, {params.begin(), params.end()}, opt.lr,
                      opt.weight_decay);
  optimizer.zero_grad();
  Rng rng(opt.seed);
  std::vector<std::size_t> order = train_idx;

  auto start = Clock::now();
  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    rng.shuffle(order);
    bool ok = true;
    for (std::size_t lo = 0; lo < order.size();
         lo += static_cast<std::size_t>(opt.batch_size)) {
      std::size_t hi = std::min(
          order.size(), lo + static_cast<std::size_t>(opt.batch_size));
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                     order.begin() + static_cast<std::ptrdiff_t>(hi));
      if (!optimize_batch(loss_fn, batch, rng, params, optimizer,
                          opt.grad_clip, nullptr)) {
        ok = false;
        break;
      }
    }
    if (!ok) {
      curve.diverged = true;
      break;
    }
    curve.steps.push_back(epoch);
    curve.train.push_back(metric_fn(train_idx));
    curve.val.push_back(metric_fn(val_idx));
    curve.wall_ms.push_back(ms_since(start));
  }
  return curve;
}

LearningCurve train_iterations(std::size_t train_positions,
                               const BatchLoss& loss_fn,
                               const SplitMetric& metric_fn,
                               const std::vector<Parameter*>& params,
                               const TrainOptions& opt,
                               std::string metric_name) {
  if (opt.iterations < 1 || opt.eval_every < 1) {
    throw ConfigError("training: iterations and eval cadence must be positive");
  }
  if (train_positions == 0) throw DataError("training: no training positions");

  LearningCurve curve;
  curve.metric = std::move(metric_name);
  Optimizer optimizer(opt.optimizer, {params.begin(), params.end()}, opt.lr,
                      opt.weight_decay);
  optimizer.zero_grad();
  Rng rng(opt.seed);

  auto start = Clock::now();
  double initial = metric_fn({});
  curve.steps.push_back(0);
  curve.train.push_back(initial);
  curve.val.push_back(initial);
  curve.wall_ms.push_back(ms_since(start));

  double window_loss = 0.0;
  int window_count = 0;
  for (int it = 1; it <= opt.iterations; ++it) {
    std::vector<std::size_t> batch(static_cast<std::size_t>(opt.batch_size));
    for (std::size_t& b : batch)
      b = static_cast<std::size_t>(rng.uniform_int(train_positions));
    double batch_loss = 0.0;
    if (!optimize_batch(loss_fn, batch, rng, params, optimizer, opt.grad_clip,
                        &batch_loss)) {
      curve.diverged = true;
      break;
    }
    window_loss += batch_loss;
    ++window_count;
    if (it % opt.eval_every == 0 || it == opt.iterations) {
      curve.steps.push_back(it);
      curve.train.push_back(window_loss / window_count);
      curve.val.push_back(metric_fn({}));
      curve.wall_ms.push_back(ms_since(start));
      window_loss = 0.0;
      window_count = 0;
    }
  }
  return curve;
}

}  // namespace scorelab
