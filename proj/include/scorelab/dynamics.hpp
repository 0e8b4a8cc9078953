#pragma once

#include <functional>
#include <string>
#include <vector>

#include "scorelab/tape.hpp"

namespace scorelab {

/// One application of a width-preserving operator F, recorded on the tape.
/// Any required context (graph topology, masks) is bound into the callable.
using BlockFn = std::function<Var(Tape&, Var)>;

enum class IntegratorKind { kEuler, kHeun, kMidpoint, kRk4 };
enum class Wiring { kBase, kClassic, kSkip05, kScore, kScoreSkip05 };
enum class ScheduleKind { kFixed, kInverseK, kLearnable };

IntegratorKind integrator_from_string(const std::string& s);
Wiring wiring_from_string(const std::string& s);
ScheduleKind schedule_from_string(const std::string& s);
std::string to_string(IntegratorKind k);
std::string to_string(Wiring w);
std::string to_string(ScheduleKind k);

/// Whether the wiring reuses one shared block for all steps (as opposed to a
/// stack of distinct blocks).
bool is_shared_wiring(Wiring w);

/// Step-size policy for the relaxed recurrence.
///   fixed:     dt = fixed_value for every depth
///   inverse_k: dt = 1/K
///   learnable: dt = 0.1 + 0.4 * sigmoid(alpha), trained end to end
struct StepSchedule {
  ScheduleKind kind = ScheduleKind::kFixed;
  double fixed_value = 0.5;
  Parameter alpha{"dt_alpha", Tensor::scalar(0.0)};
};

/// Current numeric step size, off the tape.
double schedule_value(const StepSchedule& s, int steps);

/// Step size as a tape node. Learnable schedules mount alpha so gradients
/// reach it; fixed and inverse_k produce a constant.
Var schedule_var(Tape& tape, StepSchedule& s, int steps);

/// Depth configuration: how many times the operator is applied and how
/// consecutive states are combined.
struct DepthConfig {
  Wiring wiring = Wiring::kScore;
  int steps = 4;
  IntegratorKind integrator = IntegratorKind::kEuler;
  StepSchedule schedule;
};

/// F(h) - h, the displacement a single application induces.
Var velocity(Tape& tape, const BlockFn& f, Var h);

/// (1-dt)*h + dt*F(h). One evaluation of F.
Var euler_step(Tape& tape, const BlockFn& f, Var h, Var dt);
Var euler_step(Tape& tape, const BlockFn& f, Var h, double dt);

/// Two-stage second-order step on the velocity field. Two evaluations of F.
Var heun_step(Tape& tape, const BlockFn& f, Var h, Var dt);
Var heun_step(Tape& tape, const BlockFn& f, Var h, double dt);

/// Midpoint second-order step on the velocity field. Two evaluations of F.
Var midpoint_step(Tape& tape, const BlockFn& f, Var h, Var dt);
Var midpoint_step(Tape& tape, const BlockFn& f, Var h, double dt);

/// Classic four-stage fourth-order step on the velocity field. Four
/// evaluations of F.
Var rk4_step(Tape& tape, const BlockFn& f, Var h, Var dt);
Var rk4_step(Tape& tape, const BlockFn& f, Var h, double dt);

/// One integrator step of the configured kind.
Var integrator_step(Tape& tape, IntegratorKind kind, const BlockFn& f, Var h,
                    Var dt);

/// The full sequence of embeddings [h_0 ... h_K] plus the step size used at
/// each depth (the residual mixing weight for stacked wirings).
struct Trajectory {
  std::vector<Var> states;
  std::vector<double> dt_used;
};

/// Applies the configured depth wiring:
///   base:         h <- F_i(h)
///   classic:      h <- LayerNorm(h + F_i(h))
///   skip05:       h <- 0.5*h + 0.5*F_i(h)
///   score:        shared-F integrator step with the scheduled dt
///   score_skip05: shared-F integrator step with dt pinned to 0.5
/// Shared wirings expect exactly one block; stacked wirings expect K blocks.
Trajectory run_recurrence(Tape& tape, DepthConfig& cfg,
                          const std::vector<BlockFn>& blocks, Var h0);

}  // namespace scorelab
