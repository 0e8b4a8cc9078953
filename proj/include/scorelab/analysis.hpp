#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "scorelab/dynamics.hpp"
#include "scorelab/tape.hpp"
#include "scorelab/tensor.hpp"
#include "scorelab/training.hpp"

namespace scorelab {

/// Result of aligning two validation curves by compressing the epoch axis of
/// the reference curve.
struct WarpFit {
  double factor = 1.0;    // best compression factor
  double residual = 0.0;  // mean squared gap at that factor
  std::vector<double> grid;       // candidate factors, ascending
  std::vector<double> residuals;  // gap per candidate (NaN when no overlap)
};

/// Searches compression factors over a 64-point log grid on [1, 16]. For each
/// candidate c the reference curve is evaluated at c times the compared
/// curve's epochs by linear interpolation, restricted to the overlapping
/// epoch range, and the mean squared gap between validation values is
/// recorded. Returns the arg-min candidate.
///
/// Both curves need at least 10 points and the same metric name; curves whose
/// domains never overlap are rejected.
WarpFit time_warp_fit(const LearningCurve& reference,
                      const LearningCurve& compared);

struct ParamComponent {
  std::string name;
  std::size_t count = 0;
};

/// Exact trainable-parameter counts grouped by model component. Parameters
/// shared across components are attributed to the first group that lists
/// them, so the total counts every distinct tensor once.
struct ParamReport {
  std::vector<ParamComponent> components;
  std::size_t total = 0;

  std::size_t component(const std::string& name) const;
};

using NamedParamGroup = std::pair<std::string, std::vector<Parameter*>>;

ParamReport count_params(const std::vector<NamedParamGroup>& groups);

/// Mean over edges of the squared distance between endpoint embeddings.
/// An empty edge list yields value 0 with `empty` set.
struct EnergyResult {
  double value = 0.0;
  bool empty = false;
};

EnergyResult dirichlet_energy(const Tensor& h,
                              const std::vector<std::pair<int, int>>& edges);

/// Edge-wise embedding spread at every state of a recurrence trajectory;
/// flat profiles indicate oversmoothing.
struct SmoothnessReport {
  std::vector<double> energy;  // one entry per trajectory state
};

SmoothnessReport smoothness_profile(
    const Trajectory& trajectory,
    const std::vector<std::pair<int, int>>& edges);

using StepFn = std::function<Tensor(const Tensor&)>;

/// Empirical lower bound on the Lipschitz constant of `step`: the max over
/// seeded random pairs (x, y) of the output distance ratio. Coincident pairs
/// are resampled. Requires at least 100 trials.
double contraction_estimate(const StepFn& step, std::size_t dim,
                            std::size_t trials, std::uint64_t seed);

}  // namespace scorelab
