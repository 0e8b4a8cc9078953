#include "scorelab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "scorelab/errors.hpp"
#include "scorelab/rng.hpp"

namespace scorelab {

namespace {

constexpr int kGridPoints = 64;
constexpr double kGridLo = 1.0;
constexpr double kGridHi = 16.0;

double interpolate(const std::vector<int>& xs, const std::vector<double>& ys,
                   double x) {
  auto it = std::lower_bound(xs.begin(), xs.end(), x);
  if (it == xs.end()) return ys.back();
  std::size_t hi = static_cast<std::size_t>(it - xs.begin());
  if (hi == 0 || static_cast<double>(xs[hi]) == x) return ys[hi];
  std::size_t lo = hi - 1;
  double t = (x - xs[lo]) / static_cast<double>(xs[hi] - xs[lo]);
  return ys[lo] + t * (ys[hi] - ys[lo]);
}

}  // namespace

WarpFit time_warp_fit(const LearningCurve& reference,
                      const LearningCurve& compared) {
  if (reference.steps.size() < 10 || compared.steps.size() < 10) {
    throw DataError("time_warp: need at least 10 points per curve, got " +
                    std::to_string(reference.steps.size()) + " and " +
                    std::to_string(compared.steps.size()));
  }
  if (reference.metric != compared.metric) {
    throw DataError("time_warp: metric mismatch ('" + reference.metric +
                    "' vs '" + compared.metric + "')");
  }
  if (!std::is_sorted(reference.steps.begin(), reference.steps.end()) ||
      !std::is_sorted(compared.steps.begin(), compared.steps.end())) {
    throw DataError("time_warp: epoch axes must be increasing");
  }

  double ref_lo = reference.steps.front();
  double ref_hi = reference.steps.back();

  WarpFit fit;
  fit.residual = std::numeric_limits<double>::infinity();
  double log_lo = std::log(kGridLo), log_hi = std::log(kGridHi);
  bool any_overlap = false;
  for (int i = 0; i < kGridPoints; ++i) {
    double c = std::exp(log_lo + (log_hi - log_lo) * i / (kGridPoints - 1));
    double gap = 0.0;
    std::size_t n = 0;
    for (std::size_t j = 0; j < compared.steps.size(); ++j) {
      double warped = c * compared.steps[j];
      if (warped < ref_lo || warped > ref_hi) continue;
      double d = interpolate(reference.steps, reference.val, warped) -
                 compared.val[j];
      gap += d * d;
      ++n;
    }
    fit.grid.push_back(c);
    if (n < 2) {
      fit.residuals.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    any_overlap = true;
    double mse = gap / static_cast<double>(n);
    fit.residuals.push_back(mse);
    if (mse < fit.residual) {
      fit.residual = mse;
      fit.factor = c;
    }
  }
  if (!any_overlap) {
    throw DataError("time_warp: curve domains do not overlap at any factor");
  }
  return fit;
}

std::size_t ParamReport::component(const std::string& name) const {
  for (const ParamComponent& c : components) {
    if (c.name == name) return c.count;
  }
  return 0;
}

ParamReport count_params(const std::vector<NamedParamGroup>& groups) {
  ParamReport report;
  std::unordered_set<const Parameter*> seen;
  for (const auto& [name, params] : groups) {
    std::size_t count = 0;
    for (Parameter* p : params) {
      if (!p || !seen.insert(p).second) continue;
      count += p->size();
    }
    report.components.push_back({name, count});
    report.total += count;
  }
  return report;
}

EnergyResult dirichlet_energy(const Tensor& h,
                              const std::vector<std::pair<int, int>>& edges) {
  if (h.rank() != 2) {
    throw ShapeError("dirichlet_energy: embeddings must be rank 2, got " +
                     h.shape_str());
  }
  if (edges.empty()) return {0.0, true};
  std::size_t n = h.extent(0), d = h.extent(1);
  double sum = 0.0;
  for (auto [u, v] : edges) {
    if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= n ||
        static_cast<std::size_t>(v) >= n) {
      throw DataError("dirichlet_energy: edge (" + std::to_string(u) + "," +
                      std::to_string(v) + ") out of range for " +
                      std::to_string(n) + " nodes");
    }
    for (std::size_t c = 0; c < d; ++c) {
      double diff = h.at(static_cast<std::size_t>(u), c) -
                    h.at(static_cast<std::size_t>(v), c);
      sum += diff * diff;
    }
  }
  return {sum / static_cast<double>(edges.size()), false};
}

SmoothnessReport smoothness_profile(
    const Trajectory& trajectory,
    const std::vector<std::pair<int, int>>& edges) {
  SmoothnessReport report;
  report.energy.reserve(trajectory.states.size());
  for (const Var& state : trajectory.states) {
    report.energy.push_back(dirichlet_energy(state.value(), edges).value);
  }
  return report;
}

double contraction_estimate(const StepFn& step, std::size_t dim,
                            std::size_t trials, std::uint64_t seed) {
  if (trials < 100) {
    throw ConfigError("contraction_estimate: need at least 100 trials, got " +
                      std::to_string(trials));
  }
  if (dim < 1) throw ConfigError("contraction_estimate: dim must be >= 1");
  Rng rng(seed);
  auto sample = [&] {
    Tensor t({dim});
    for (double& v : t.values()) v = rng.normal();
    return t;
  };
  auto dist = [](const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      double d = a[i] - b[i];
      s += d * d;
    }
    return std::sqrt(s);
  };

  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    Tensor x = sample(), y = sample();
    while (dist(x, y) == 0.0) y = sample();
    double ratio = dist(step(x), step(y)) / dist(x, y);
    worst = std::max(worst, ratio);
  }
  return worst;
}

}  // namespace scorelab
