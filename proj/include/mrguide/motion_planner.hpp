#pragma once

// Sequential moving strategy: the compressor can drive one pneumatic motor at
// a time, so the four axes are moved one after another in steps of at most
// 5 mm. Iterations alternate between the x class (axes 1 and 3) and the y
// class (axes 2 and 4); within a class the axis with the larger error moves.
//
// On top of the literal strategy an optional incline guard truncates any step
// whose settled pose would tilt the guide past the incline limit.

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <stop_token>
#include <string>
#include <vector>

#include "mrguide/axis_sim.hpp"
#include "mrguide/errors.hpp"
#include "mrguide/kinematics.hpp"

namespace mrguide {

constexpr double kMaxStepMm = 5.0;

/// Loop state of the strategy: which class moves next plus the current errors.
struct PlanState {
  int parity = 0;                       // 0: axes 1/3, 1: axes 2/4
  std::array<double, 4> errors{};       // target - observed position, per axis
  std::array<double, 4> tolerances{};   // "at target" when |error| <= tolerance
};

struct PlanStep {
  AxisId axis = AxisId::UpperX;
  double delta_mm = 0.0;  // zero for a no-op iteration
  int parity = 0;         // class that was served
};

inline bool all_within_tolerance(const PlanState& s) {
  for (std::size_t i = 0; i < 4; ++i) {
    if (!(std::abs(s.errors[i]) <= s.tolerances[i])) return false;
  }
  return true;
}

inline double signum(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Step proposed for one axis: min(|e|, 5 mm) toward its target.
inline double strategy_delta(double error) { return std::min(std::abs(error), kMaxStepMm) * signum(error); }

/// One iteration of the strategy. Returns nullopt when every axis is at
/// target; otherwise the axis to move (possibly by zero) and flips parity.
inline std::optional<PlanStep> plan_step(PlanState& state) {
  if (all_within_tolerance(state)) return std::nullopt;
  const AxisId first = state.parity == 0 ? AxisId::UpperX : AxisId::UpperY;
  const AxisId second = state.parity == 0 ? AxisId::LowerX : AxisId::LowerY;
  const double e_first = state.errors[axis_index(first)];
  const double e_second = state.errors[axis_index(second)];
  const double d = std::min(std::max(std::abs(e_first), std::abs(e_second)), kMaxStepMm);
  PlanStep step;
  step.parity = state.parity;
  if (std::abs(e_first) > std::abs(e_second)) {
    step.axis = first;
    step.delta_mm = d * signum(e_first);
  } else {
    step.axis = second;
    step.delta_mm = d * signum(e_second);
  }
  state.parity = 1 - state.parity;
  return step;
}

/// The other axis in the same class.
inline AxisId sibling_axis(AxisId a) {
  switch (a) {
    case AxisId::UpperX: return AxisId::LowerX;
    case AxisId::LowerX: return AxisId::UpperX;
    case AxisId::UpperY: return AxisId::LowerY;
    case AxisId::LowerY: return AxisId::UpperY;
  }
  return a;
}

/// Four simulated axes plus the geometry they drive.
struct RobotSim {
  RobotParams params;
  std::array<AxisParams, 4> axes;
  std::array<AxisState, 4> states;

  CarriagePose true_pose() const {
    CarriagePose p;
    for (AxisId a : kAllAxes) p[a] = states[axis_index(a)].position_mm;
    return p;
  }
  CarriagePose observed_pose() const {
    CarriagePose p;
    for (AxisId a : kAllAxes) p[a] = states[axis_index(a)].encoder_mm;
    return p;
  }
};

/// Default per-axis parameters: symmetric 0.5 mm/s x stages with a 0.3 mm
/// deadband; y stages at 0.5 mm/s forward and 30/35 mm/s reverse with 0.6 mm.
inline std::array<AxisParams, 4> default_axis_params(const RobotParams& params) {
  AxisParams x;
  x.speed_pos_mm_s = 0.5;
  x.speed_neg_mm_s = 0.5;
  x.stop_threshold_mm = 0.3;
  x.travel_min_mm = params.x_min_mm;
  x.travel_max_mm = params.x_max_mm();
  AxisParams y;
  y.speed_pos_mm_s = 0.5;
  y.speed_neg_mm_s = 30.0 / 35.0;
  y.stop_threshold_mm = 0.6;
  y.travel_min_mm = params.y_min_mm;
  y.travel_max_mm = params.y_max_mm();
  return {x, y, x, y};
}

inline std::array<AxisParams, 4> ideal_axis_params(const RobotParams& params) {
  return {AxisParams::ideal(params.x_min_mm, params.x_max_mm()), AxisParams::ideal(params.y_min_mm, params.y_max_mm()),
          AxisParams::ideal(params.x_min_mm, params.x_max_mm()), AxisParams::ideal(params.y_min_mm, params.y_max_mm())};
}

inline RobotSim make_robot_sim(const RobotParams& params, const std::array<AxisParams, 4>& axes,
                               const CarriagePose& start) {
  RobotSim r{params, axes, {}};
  for (AxisId a : kAllAxes) r.states[axis_index(a)] = make_axis_state(axes[axis_index(a)], start[a]);
  return r;
}

struct StepRecord {
  double t_s = 0.0;  // simulated time at which the step settled
  int iteration = 0;
  int parity = 0;
  AxisId axis = AxisId::UpperX;
  double delta_mm = 0.0;      // commanded (after any guard truncation)
  double proposed_mm = 0.0;   // what the strategy asked for
  double incline_deg = 0.0;   // settled incline, true pose
  bool truncated = false;
};

struct TickEvent {
  double t_s;
  AxisId axis;
  const RobotSim& robot;
};

struct PlannerOptions {
  bool guard = true;
  double dt_s = 0.01;
  int max_iterations = 1000;
  double axis_timeout_s = 300.0;
  std::stop_token stop;
  std::function<void(const TickEvent&)> on_tick;
  std::function<void(const StepRecord&)> on_step;
};

struct MoveResult {
  bool reached = false;
  bool cancelled = false;
  std::vector<StepRecord> steps;
  int iterations = 0;
  double max_transient_incline_deg = 0.0;
  double elapsed_sim_time_s = 0.0;
  CarriagePose final_pose;     // ground truth
  CarriagePose observed_pose;  // encoders
};

/// Tolerance used for the "robot is at target" test on one axis.
inline double at_target_tolerance(const AxisParams& p) {
  return p.stop_threshold_mm + 1e-9;
}

namespace detail {

// Largest step of `axis` toward `delta` that keeps the carriage offset inside
// a disk of radius `limit`. Offsets are computed from encoder positions.
inline double guard_step(const CarriagePose& observed, AxisId axis, double delta, double limit) {
  const double rx = observed.upper_x - observed.lower_x;
  const double ry = observed.upper_y - observed.lower_y;
  const double along = is_x_axis(axis) ? rx : ry;
  const double across = is_x_axis(axis) ? ry : rx;
  const double k = is_upper(axis) ? 1.0 : -1.0;  // d(offset)/d(axis)
  const double w2 = limit * limit - across * across;
  const double proposed = along + k * delta;
  if (w2 >= 0.0) {
    const double w = std::sqrt(w2);
    if (std::abs(proposed) <= w) return delta;
    const double clamped = std::clamp(proposed, -w, w);
    const double t = (clamped - along) * k;
    return signum(t) == signum(delta) ? t : 0.0;
  }
  // Already outside: only allow moves that shrink the offset component.
  if (std::abs(proposed) < std::abs(along) && signum(proposed) == signum(along)) return delta;
  return 0.0;
}

}  // namespace detail

/// Drives `robot` to `target` one axis at a time. Honors cancellation at step
/// boundaries. Throws Stalled when the guard blocks every axis for two full
/// parity cycles and Timeout when the iteration budget runs out.
///
/// Guarded mode only commands a step that the axis can execute (larger than
/// its stop threshold); otherwise the sibling axis goes first.
inline MoveResult execute_plan(const CarriagePose& target, RobotSim& robot, const PlannerOptions& opts = {}) {
  require_feasible(target, robot.params);
  MoveResult result;
  PlanState plan;
  for (AxisId a : kAllAxes) plan.tolerances[axis_index(a)] = at_target_tolerance(robot.axes[axis_index(a)]);

  // Guard envelope: keep a margin for encoder quantization, but never demand
  // less than the target itself needs.
  double quantum = 0.0;
  for (const auto& ap : robot.axes) quantum = std::max(quantum, ap.encoder_quantum_mm());
  const double rho = robot.params.max_relative_displacement_mm();
  const double guard_limit = std::max(rho - 2.0 * quantum, std::min(rho, relative_displacement_mm(target)));

  double t = 0.0;
  for (AxisId a : kAllAxes) t = std::max(t, robot.states[axis_index(a)].time_s);
  const double t0 = t;
  result.max_transient_incline_deg = incline_angle_deg(robot.true_pose(), robot.params);
  int idle_iterations = 0;

  auto refresh_errors = [&]() {
    const CarriagePose obs = robot.observed_pose();
    for (AxisId a : kAllAxes) plan.errors[axis_index(a)] = target[a] - obs[a];
  };

  while (true) {
    refresh_errors();
    if (all_within_tolerance(plan)) {
      result.reached = true;
      break;
    }
    if (opts.stop.stop_requested()) {
      result.cancelled = true;
      break;
    }
    if (result.iterations >= opts.max_iterations) {
      throw Error(ErrorCode::Timeout, "sequential move did not converge within " +
                                          std::to_string(opts.max_iterations) + " iterations");
    }
    const std::optional<PlanStep> proposed = plan_step(plan);
    ++result.iterations;
    if (!proposed) break;  // unreachable: checked above

    AxisId axis = proposed->axis;
    double delta = proposed->delta_mm;
    bool truncated = false;
    if (opts.guard && delta != 0.0) {
      const CarriagePose obs = robot.observed_pose();
      // A truncated step inside the axis deadband would not move it at all.
      auto executable = [&](AxisId a, double d) {
        const double g = detail::guard_step(obs, a, d, guard_limit);
        return std::abs(g) > robot.axes[axis_index(a)].stop_threshold_mm ? g : 0.0;
      };
      double allowed = executable(axis, delta);
      if (allowed == 0.0) {
        // Blocked: let the other axis of the same class take its turn.
        const AxisId other = sibling_axis(axis);
        const double other_delta = strategy_delta(plan.errors[axis_index(other)]);
        const double other_allowed = other_delta != 0.0 ? executable(other, other_delta) : 0.0;
        if (other_allowed != 0.0) {
          axis = other;
          allowed = other_allowed;
          delta = other_delta;
        }
      }
      truncated = allowed != delta;
      delta = allowed;

      // Two idle iterations in a row: residuals inside the deadbands can leave
      // the remaining move outside the disk. Nudge an axis of this class toward
      // its own target, just past its stop threshold, if that shrinks the offset.
      if (delta == 0.0 && idle_iterations > 0) {
        for (AxisId cand : {proposed->axis, sibling_axis(proposed->axis)}) {
          const double e = plan.errors[axis_index(cand)];
          if (e == 0.0) continue;
          const AxisParams& cp = robot.axes[axis_index(cand)];
          const double dir = signum(e);
          const double nudge = dir * (cp.stop_threshold_mm + cp.encoder_quantum_mm());
          const double reach = nudge + dir * cp.coast_distance_mm(dir > 0 ? Valve::Forward : Valve::Reverse);
          const double along = is_x_axis(cand) ? obs.upper_x - obs.lower_x : obs.upper_y - obs.lower_y;
          const double k = is_upper(cand) ? 1.0 : -1.0;
          const bool shrinks = std::abs(along + k * reach) < std::abs(along);
          if (shrinks && detail::guard_step(obs, cand, reach, guard_limit) == reach) {
            axis = cand;
            delta = nudge;
            truncated = true;
            break;
          }
        }
      }
    }

    const std::size_t ai = axis_index(axis);
    const AxisParams& ap = robot.axes[ai];
    const double before = robot.states[ai].position_mm;
    if (delta != 0.0) {
      const double setpoint = std::clamp(robot.states[ai].encoder_mm + delta, ap.travel_min_mm, ap.travel_max_mm);
      AxisState s = command_setpoint(ap, robot.states[ai], setpoint);
      double elapsed = 0.0;
      while (!s.stationary()) {
        if (elapsed >= opts.axis_timeout_s) {
          throw Error(ErrorCode::Timeout, std::string(axis_name(axis)) + " did not settle");
        }
        s = tick(ap, s, opts.dt_s);
        elapsed += opts.dt_s;
        t += opts.dt_s;
        robot.states[ai] = s;
        result.max_transient_incline_deg =
            std::max(result.max_transient_incline_deg, incline_angle_deg(robot.true_pose(), robot.params));
        if (opts.on_tick) opts.on_tick(TickEvent{t, axis, robot});
      }
      robot.states[ai] = s;
      for (auto& st : robot.states) st.time_s = t;
    }
    const bool moved = robot.states[ai].position_mm != before;

    if (moved) {
      StepRecord rec;
      rec.t_s = t;
      rec.iteration = result.iterations;
      rec.parity = proposed->parity;
      rec.axis = axis;
      rec.delta_mm = delta;
      rec.proposed_mm = proposed->delta_mm;
      rec.incline_deg = incline_angle_deg(robot.true_pose(), robot.params);
      rec.truncated = truncated;
      result.steps.push_back(rec);
      if (opts.on_step) opts.on_step(rec);
      idle_iterations = 0;
    } else if (++idle_iterations >= 4) {
      throw Error(ErrorCode::Stalled, "incline guard blocked every axis for two parity cycles");
    }
  }
  result.elapsed_sim_time_s = t - t0;
  result.final_pose = robot.true_pose();
  result.observed_pose = robot.observed_pose();
  return result;
}

/// One JSON object per line: {"t": s, "axis": n, "delta_mm": d, "incline_deg": deg}.
inline void write_step_log_jsonl(std::ostream& out, const std::vector<StepRecord>& steps) {
  const auto old_precision = out.precision(10);
  for (const auto& s : steps) {
    out << "{\"t\": " << s.t_s << ", \"axis\": " << axis_number(s.axis) << ", \"delta_mm\": " << s.delta_mm
        << ", \"incline_deg\": " << s.incline_deg << "}\n";
  }
  out.precision(old_precision);
}

}  // namespace mrguide
