#include "scorelab/dynamics.hpp"

#include <cmath>

#include "scorelab/errors.hpp"

namespace scorelab {

IntegratorKind integrator_from_string(const std::string& s) {
  if (s == "euler") return IntegratorKind::kEuler;
  if (s == "heun") return IntegratorKind::kHeun;
  if (s == "midpoint") return IntegratorKind::kMidpoint;
  if (s == "rk4") return IntegratorKind::kRk4;
  throw ConfigError("unknown integrator '" + s +
                    "' (expected euler, heun, midpoint or rk4)");
}

Wiring wiring_from_string(const std::string& s) {
  if (s == "base") return Wiring::kBase;
  if (s == "classic") return Wiring::kClassic;
  if (s == "skip05") return Wiring::kSkip05;
  if (s == "score") return Wiring::kScore;
  if (s == "score_skip05") return Wiring::kScoreSkip05;
  throw ConfigError("unknown wiring '" + s +
                    "' (expected base, classic, skip05, score or score_skip05)");
}

ScheduleKind schedule_from_string(const std::string& s) {
  if (s == "fixed") return ScheduleKind::kFixed;
  if (s == "inverse_k") return ScheduleKind::kInverseK;
  if (s == "learnable") return ScheduleKind::kLearnable;
  throw ConfigError("unknown step schedule '" + s +
                    "' (expected fixed, inverse_k or learnable)");
}

std::string to_string(IntegratorKind k) {
  switch (k) {
    case IntegratorKind::kEuler: return "euler";
    case IntegratorKind::kHeun: return "heun";
    case IntegratorKind::kMidpoint: return "midpoint";
    case IntegratorKind::kRk4: return "rk4";
  }
  return "euler";
}

std::string to_string(Wiring w) {
  switch (w) {
    case Wiring::kBase: return "base";
    case Wiring::kClassic: return "classic";
    case Wiring::kSkip05: return "skip05";
    case Wiring::kScore: return "score";
    case Wiring::kScoreSkip05: return "score_skip05";
  }
  return "score";
}

std::string to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::kFixed: return "fixed";
    case ScheduleKind::kInverseK: return "inverse_k";
    case ScheduleKind::kLearnable: return "learnable";
  }
  return "fixed";
}

bool is_shared_wiring(Wiring w) {
  return w == Wiring::kScore || w == Wiring::kScoreSkip05;
}

double schedule_value(const StepSchedule& s, int steps) {
  switch (s.kind) {
    case ScheduleKind::kFixed:
      return s.fixed_value;
    case ScheduleKind::kInverseK:
      return 1.0 / static_cast<double>(steps);
    case ScheduleKind::kLearnable: {
      double a = s.alpha.value.scalar_value();
      return 0.1 + 0.4 / (1.0 + std::exp(-a));
    }
  }
  return s.fixed_value;
}

Var schedule_var(Tape& tape, StepSchedule& s, int steps) {
  if (s.kind == ScheduleKind::kLearnable) {
    Var a = tape.param(s.alpha);
    return tape.add(tape.constant(Tensor::scalar(0.1)),
                    tape.scale(tape.sigmoid(a), 0.4));
  }
  return tape.constant(Tensor::scalar(schedule_value(s, steps)));
}

namespace {

void check_dt(Var dt) {
  double v = dt.value().scalar_value();
  if (!(v >= 0.0 && v <= 1.0)) {
    throw ConfigError("step size " + std::to_string(v) + " outside [0,1]");
  }
}

Var apply_block(Tape& tape, const BlockFn& f, Var h) {
  Var out = f(tape, h);
  if (!out.value().same_shape(h.value())) {
    throw ShapeError("velocity: block changed embedding shape " +
                     h.value().shape_str() + " to " + out.value().shape_str());
  }
  return out;
}

}  // namespace

Var velocity(Tape& tape, const BlockFn& f, Var h) {
  return tape.sub(apply_block(tape, f, h), h);
}

Var euler_step(Tape& tape, const BlockFn& f, Var h, Var dt) {
  check_dt(dt);
  Var keep = tape.sub(tape.constant(Tensor::scalar(1.0)), dt);
  Var fh = apply_block(tape, f, h);
  return tape.add(tape.mul(keep, h), tape.mul(dt, fh));
}

Var heun_step(Tape& tape, const BlockFn& f, Var h, Var dt) {
  check_dt(dt);
  Var k1 = velocity(tape, f, h);
  Var k2 = velocity(tape, f, tape.add(h, tape.mul(dt, k1)));
  Var half_dt = tape.scale(dt, 0.5);
  return tape.add(h, tape.mul(half_dt, tape.add(k1, k2)));
}

Var midpoint_step(Tape& tape, const BlockFn& f, Var h, Var dt) {
  check_dt(dt);
  Var k1 = velocity(tape, f, h);
  Var half_dt = tape.scale(dt, 0.5);
  Var k2 = velocity(tape, f, tape.add(h, tape.mul(half_dt, k1)));
  return tape.add(h, tape.mul(dt, k2));
}

Var rk4_step(Tape& tape, const BlockFn& f, Var h, Var dt) {
  check_dt(dt);
  Var half_dt = tape.scale(dt, 0.5);
  Var k1 = velocity(tape, f, h);
  Var k2 = velocity(tape, f, tape.add(h, tape.mul(half_dt, k1)));
  Var k3 = velocity(tape, f, tape.add(h, tape.mul(half_dt, k2)));
  Var k4 = velocity(tape, f, tape.add(h, tape.mul(dt, k3)));
  Var sum = tape.add(tape.add(k1, tape.scale(k2, 2.0)),
                     tape.add(tape.scale(k3, 2.0), k4));
  return tape.add(h, tape.mul(tape.scale(dt, 1.0 / 6.0), sum));
}

Var euler_step(Tape& tape, const BlockFn& f, Var h, double dt) {
  return euler_step(tape, f, h, tape.constant(Tensor::scalar(dt)));
}
Var heun_step(Tape& tape, const BlockFn& f, Var h, double dt) {
  return heun_step(tape, f, h, tape.constant(Tensor::scalar(dt)));
}
Var midpoint_step(Tape& tape, const BlockFn& f, Var h, double dt) {
  return midpoint_step(tape, f, h, tape.constant(Tensor::scalar(dt)));
}
Var rk4_step(Tape& tape, const BlockFn& f, Var h, double dt) {
  return rk4_step(tape, f, h, tape.constant(Tensor::scalar(dt)));
}

Var integrator_step(Tape& tape, IntegratorKind kind, const BlockFn& f, Var h,
                    Var dt) {
  switch (kind) {
    case IntegratorKind::kEuler: return euler_step(tape, f, h, dt);
    case IntegratorKind::kHeun: return heun_step(tape, f, h, dt);
    case IntegratorKind::kMidpoint: return midpoint_step(tape, f, h, dt);
    case IntegratorKind::kRk4: return rk4_step(tape, f, h, dt);
  }
  return euler_step(tape, f, h, dt);
}

Trajectory run_recurrence(Tape& tape, DepthConfig& cfg,
                          const std::vector<BlockFn>& blocks, Var h0) {
  if (cfg.steps < 1) {
    throw ConfigError("depth must be at least 1, got " +
                      std::to_string(cfg.steps));
  }
  bool shared = is_shared_wiring(cfg.wiring);
  std::size_t expected = shared ? 1 : static_cast<std::size_t>(cfg.steps);
  if (blocks.size() != expected) {
    throw ConfigError("wiring " + to_string(cfg.wiring) + " needs " +
                      std::to_string(expected) + " block(s), got " +
                      std::to_string(blocks.size()));
  }

  Trajectory traj;
  traj.states.reserve(static_cast<std::size_t>(cfg.steps) + 1);
  traj.states.push_back(h0);
  traj.dt_used.reserve(static_cast<std::size_t>(cfg.steps));

  Var dt;
  double dt_num = 0.0;
  if (cfg.wiring == Wiring::kScore) {
    dt = schedule_var(tape, cfg.schedule, cfg.steps);
    dt_num = schedule_value(cfg.schedule, cfg.steps);
  } else if (cfg.wiring == Wiring::kScoreSkip05) {
    dt = tape.constant(Tensor::scalar(0.5));
    dt_num = 0.5;
  }

  Var h = h0;
  for (int k = 0; k < cfg.steps; ++k) {
    const BlockFn& f = shared ? blocks[0] : blocks[static_cast<std::size_t>(k)];
    switch (cfg.wiring) {
      case Wiring::kBase:
        h = apply_block(tape, f, h);
        traj.dt_used.push_back(1.0);
        break;
      case Wiring::kClassic:
        h = tape.layernorm_last(tape.add(h, apply_block(tape, f, h)));
        traj.dt_used.push_back(1.0);
        break;
      case Wiring::kSkip05:
        h = tape.add(tape.scale(h, 0.5),
                     tape.scale(apply_block(tape, f, h), 0.5));
        traj.dt_used.push_back(0.5);
        break;
      case Wiring::kScore:
      case Wiring::kScoreSkip05:
        h = integrator_step(tape, cfg.integrator, f, h, dt);
        traj.dt_used.push_back(dt_num);
        break;
    }
    traj.states.push_back(h);
  }
  return traj;
}

}  // namespace scorelab
