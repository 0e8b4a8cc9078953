#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scorelab/rng.hpp"
#include "scorelab/tape.hpp"

namespace scorelab {

enum class OptimizerKind { kSgd, kAdam, kAdamW };

OptimizerKind optimizer_from_string(const std::string& s);
std::string to_string(OptimizerKind k);

/// First-order optimizer over a fixed parameter list. step() applies one
/// update from the accumulated gradients and then zeroes them. Adam uses
/// bias-corrected moments; AdamW adds decoupled weight decay applied before
/// the adaptive update.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, std::vector<Parameter*> params,
            double lr = 1e-3, double weight_decay = 0.01);

  void step();
  void zero_grad();
  int steps_taken() const { return t_; }

  double lr;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay;

 private:
  OptimizerKind kind_;
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  int t_ = 0;
};

/// Mean squared error between same-shaped prediction and target nodes.
Var mse_loss(Tape& tape, Var pred, Var target);

/// Scales all gradients so their global norm is at most max_norm.
/// Returns the pre-clip norm. max_norm <= 0 disables clipping.
double clip_gradients(const std::vector<Parameter*>& params, double max_norm);

/// Seeded k-fold partition: indices are shuffled once, then cut into
/// fold_count contiguous chunks used as test folds.
struct FoldSpec {
  int fold_count = 5;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> test_folds;

  const std::vector<std::size_t>& test_indices(int fold) const;
  std::vector<std::size_t> train_indices(int fold) const;
};

FoldSpec kfold_split(std::size_t n, int fold_count, std::uint64_t seed);

/// Per-epoch (or per-evaluation-point) history of one training run.
struct LearningCurve {
  std::string metric;
  std::vector<int> steps;
  std::vector<double> train;
  std::vector<double> val;
  std::vector<double> wall_ms;
  bool diverged = false;

  std::size_t best_index() const;  // argmin over val
  double best() const;
  int steps_to_best() const;
};

struct TrainOptions {
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double lr = 1e-3;
  double weight_decay = 0.01;
  int epochs = 150;
  int batch_size = 32;
  int iterations = 10000;   // iteration-budgeted runs only
  int eval_every = 100;     // iteration-budgeted runs only
  double grad_clip = 0.0;   // 0 disables
  std::uint64_t seed = 0;
};

/// Builds the training loss for one minibatch on a fresh tape. The rng is the
/// run's own stream (dropout masks, sampling); train_mode distinguishes the
/// optimization pass from metric evaluation.
using BatchLoss =
    std::function<Var(Tape& tape, const std::vector<std::size_t>& batch,
                      bool train_mode, Rng& rng)>;

/// Metric of the current model over a dataset split, in eval mode.
using SplitMetric = std::function<double(const std::vector<std::size_t>&)>;

/// Fixed-epoch loop: shuffles the training indices each epoch, steps the
/// optimizer per minibatch, and logs train/validation metrics once per epoch.
/// No early stopping and no learning-rate schedule. A non-finite loss or
/// gradient marks the curve diverged and stops the run.
LearningCurve train_epochs(const std::vector<std::size_t>& train_idx,
                           const std::vector<std::size_t>& val_idx,
                           const BatchLoss& loss_fn,
                           const SplitMetric& metric_fn,
                           const std::vector<Parameter*>& params,
                           const TrainOptions& opt, std::string metric_name);

/// Iteration-budgeted loop for language modeling: each iteration samples
/// batch_size window starts from [0, train_positions), and every eval_every
/// iterations logs the mean training loss since the last log plus the
/// validation metric. A step-0 entry records the untrained metric in both
/// series before any update.
LearningCurve train_iterations(std::size_t train_positions,
                               const BatchLoss& loss_fn,
                               const SplitMetric& metric_fn,
                               const std::vector<Parameter*>& params,
                               const TrainOptions& opt,
                               std::string metric_name);

}  // namespace scorelab
