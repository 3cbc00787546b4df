#pragma once

// One pneumatic-motor-driven lead-screw axis under bang-bang control.
//
// The valve drives the carriage at a fixed, direction-dependent speed until
// the encoder-observed error enters the deadband [-threshold, threshold]. The
// valve then closes and the carriage coasts a further speed * coast_time in
// the same direction (inertia plus residual line pressure). Limit switches at
// both travel ends stop the carriage and force the valve off.
//
// The bang-bang decision runs in continuous time: within a tick the stop is
// placed exactly where the encoder reading first enters the deadband, so the
// result does not depend on the tick length.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mrguide/errors.hpp"

namespace mrguide {

enum class Valve { Off, Forward, Reverse };

inline const char* valve_name(Valve v) {
  switch (v) {
    case Valve::Off: return "off";
    case Valve::Forward: return "forward";
    case Valve::Reverse: return "reverse";
  }
  return "?";
}

struct AxisParams {
  double speed_pos_mm_s = 0.5;
  double speed_neg_mm_s = 0.5;
  double stop_threshold_mm = 0.3;
  double travel_min_mm = -27.5;
  double travel_max_mm = 27.5;
  /// Encoder resolution; 0 means the controller observes the exact position.
  double encoder_counts_per_mm = 100.0;
  double coast_time_s = 0.3;
  /// Pure pneumatic transport delay applied to valve openings and closings.
  double transport_delay_s = 0.0;

  double speed(Valve dir) const { return dir == Valve::Reverse ? speed_neg_mm_s : speed_pos_mm_s; }

  /// Overshoot after the valve closes: the carriage keeps moving for the
  /// transport delay and then coasts.
  double coast_distance_mm(Valve dir) const { return speed(dir) * (coast_time_s + transport_delay_s); }

  double encoder_quantum_mm() const { return encoder_counts_per_mm > 0.0 ? 1.0 / encoder_counts_per_mm : 0.0; }

  void validate() const {
    auto bad = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
    if (!(speed_pos_mm_s > 0.0 && speed_pos_mm_s <= 5.0) || !(speed_neg_mm_s > 0.0 && speed_neg_mm_s <= 5.0)) {
      bad("axis speeds must lie in (0, 5] mm/s");
    }
    if (!(stop_threshold_mm >= 0.0)) bad("stop threshold must be non-negative");
    if (!(travel_max_mm > travel_min_mm)) bad("axis travel must be a non-empty interval");
    if (!(encoder_counts_per_mm >= 0.0)) bad("encoder resolution must be non-negative");
    if (!(coast_time_s >= 0.0) || !(transport_delay_s >= 0.0)) bad("coast time and transport delay must be >= 0");
  }

  /// Exact axis: zero deadband, no overshoot, no quantization.
  static AxisParams ideal(double lo, double hi, double speed = 0.5) {
    AxisParams p;
    p.speed_pos_mm_s = speed;
    p.speed_neg_mm_s = speed;
    p.stop_threshold_mm = 0.0;
    p.travel_min_mm = lo;
    p.travel_max_mm = hi;
    p.encoder_counts_per_mm = 0.0;
    p.coast_time_s = 0.0;
    return p;
  }
};

enum class AxisPhase { Idle, DeadTime, Driving, Coasting };

struct AxisState {
  double position_mm = 0.0;  // ground truth
  double encoder_mm = 0.0;   // what the controller observes
  std::optional<double> setpoint_mm;
  Valve valve = Valve::Off;
  AxisPhase phase = AxisPhase::Idle;
  Valve motion = Valve::Off;  // direction of the current drive or coast
  double dead_time_remaining_s = 0.0;
  double coast_remaining_mm = 0.0;
  bool at_home_limit = false;
  bool at_far_limit = false;
  double time_s = 0.0;

  bool stationary() const { return phase == AxisPhase::Idle; }
};

namespace detail {

inline double quantize_forward(double p, double cpm) {
  return cpm > 0.0 ? std::floor(p * cpm + 0.5 + 1e-9) / cpm : p;
}
inline double quantize_reverse(double p, double cpm) {
  return cpm > 0.0 ? std::ceil(p * cpm - 0.5 - 1e-9) / cpm : p;
}
inline double quantize_nearest(double p, double cpm) { return cpm > 0.0 ? std::round(p * cpm) / cpm : p; }

inline void update_limits(const AxisParams& params, AxisState& s) {
  s.at_home_limit = s.position_mm <= params.travel_min_mm;
  s.at_far_limit = s.position_mm >= params.travel_max_mm;
}

// Position at which the encoder reading first lies inside the deadband when
// driving in `dir` toward `target`.
inline double deadband_entry(const AxisParams& params, double target, Valve dir) {
  const double cpm = params.encoder_counts_per_mm;
  const double th = params.stop_threshold_mm;
  if (dir == Valve::Forward) {
    if (cpm <= 0.0) return target - th;
    const double k = std::ceil((target - th) * cpm - 1e-9);
    return (k - 0.5) / cpm;
  }
  if (cpm <= 0.0) return target + th;
  const double k = std::floor((target + th) * cpm + 1e-9);
  return (k + 0.5) / cpm;
}

}  // namespace detail

inline AxisState make_axis_state(const AxisParams& params, double position_mm) {
  params.validate();
  if (position_mm < params.travel_min_mm || position_mm > params.travel_max_mm) {
    throw Error(ErrorCode::TargetOutOfTravel, "initial position outside axis travel");
  }
  AxisState s;
  s.position_mm = position_mm;
  s.encoder_mm = detail::quantize_nearest(position_mm, params.encoder_counts_per_mm);
  detail::update_limits(params, s);
  return s;
}

/// Bang-bang decision on a new setpoint from the encoder-observed error.
inline AxisState command_setpoint(const AxisParams& params, AxisState state, double target_mm) {
  if (!std::isfinite(target_mm) || target_mm < params.travel_min_mm || target_mm > params.travel_max_mm) {
    throw Error(ErrorCode::TargetOutOfTravel, "setpoint " + std::to_string(target_mm) + " mm outside axis travel [" +
                                                  std::to_string(params.travel_min_mm) + ", " +
                                                  std::to_string(params.travel_max_mm) + "]");
  }
  state.setpoint_mm = target_mm;
  const double err = target_mm - state.encoder_mm;
  Valve v = Valve::Off;
  if (err > params.stop_threshold_mm) v = Valve::Forward;
  if (err < -params.stop_threshold_mm) v = Valve::Reverse;

  if (v == Valve::Off) {
    // A coast already under way cannot be cancelled.
    state.valve = Valve::Off;
    if (state.phase != AxisPhase::Coasting) state.phase = AxisPhase::Idle;
    return state;
  }
  if (state.valve == v) return state;  // already driving that way
  state.valve = v;
  state.motion = v;
  state.coast_remaining_mm = 0.0;
  if (params.transport_delay_s > 0.0) {
    state.phase = AxisPhase::DeadTime;
    state.dead_time_remaining_s = params.transport_delay_s;
  } else {
    state.phase = AxisPhase::Driving;
  }
  return state;
}

constexpr double kMaxTick = 0.1;

/// Advances the axis by dt seconds (0 < dt <= 0.1).
inline AxisState tick(const AxisParams& params, AxisState s, double dt) {
  if (!(dt > 0.0) || dt > kMaxTick) throw Error(ErrorCode::InvalidArgument, "tick dt must lie in (0, 0.1] s");
  double remaining = dt;
  const double cpm = params.encoder_counts_per_mm;

  auto move_to = [&](double p) {
    s.position_mm = std::clamp(p, params.travel_min_mm, params.travel_max_mm);
    s.encoder_mm = s.motion == Valve::Reverse ? detail::quantize_reverse(s.position_mm, cpm)
                                              : detail::quantize_forward(s.position_mm, cpm);
  };
  auto stop_at_limit = [&]() {
    s.valve = Valve::Off;
    s.phase = AxisPhase::Idle;
    s.coast_remaining_mm = 0.0;
  };

  while (remaining > 0.0 && s.phase != AxisPhase::Idle) {
    const double sign = s.motion == Valve::Reverse ? -1.0 : 1.0;
    const double v = params.speed(s.motion);
    const double bound = sign > 0 ? params.travel_max_mm : params.travel_min_mm;
    const double to_limit = std::max(0.0, sign * (bound - s.position_mm));

    if (s.phase == AxisPhase::DeadTime) {
      const double used = std::min(remaining, s.dead_time_remaining_s);
      s.dead_time_remaining_s -= used;
      remaining -= used;
      if (s.dead_time_remaining_s <= 0.0) s.phase = AxisPhase::Driving;
      continue;
    }

    if (s.phase == AxisPhase::Driving) {
      const double entry = detail::deadband_entry(params, *s.setpoint_mm, s.motion);
      const double to_entry = std::max(0.0, sign * (entry - s.position_mm));
      const double reach = v * remaining;
      if (to_limit <= to_entry && to_limit <= reach) {
        move_to(bound);
        remaining -= to_limit / v;
        stop_at_limit();
        break;
      }
      if (to_entry <= reach) {
        if (to_entry > 0.0) move_to(entry);
        remaining -= to_entry / v;
        s.valve = Valve::Off;
        s.coast_remaining_mm = params.coast_distance_mm(s.motion);
        s.phase = s.coast_remaining_mm > 0.0 ? AxisPhase::Coasting : AxisPhase::Idle;
        continue;
      }
      move_to(s.position_mm + sign * reach);
      remaining = 0.0;
      break;
    }

    // Coasting
    const bool hits_limit = to_limit < s.coast_remaining_mm && to_limit <= v * remaining;
    const double step = std::min({s.coast_remaining_mm, v * remaining, to_limit});
    move_to(s.position_mm + sign * step);
    s.coast_remaining_mm -= step;
    remaining -= step / v;
    if (hits_limit) {
      stop_at_limit();
      break;
    }
    if (s.coast_remaining_mm <= 1e-12) {
      s.coast_remaining_mm = 0.0;
      s.phase = AxisPhase::Idle;
    }
  }
  s.time_s += dt;
  detail::update_limits(params, s);
  return s;
}

struct AxisTracePoint {
  double t_s;
  double position_mm;
  double encoder_mm;
  Valve valve;
};

struct SettleResult {
  AxisState state;
  double elapsed_s = 0.0;
};

/// Commands a setpoint and ticks until the valve is off and the carriage is
/// stationary. Throws Timeout after `timeout_s` of simulated time.
inline SettleResult settle(const AxisParams& params, AxisState state, double target_mm, double dt,
                           double timeout_s = 300.0,
                           const std::function<void(const AxisState&)>& on_tick = {}) {
  SettleResult r;
  r.state = command_setpoint(params, state, target_mm);
  long long ticks = 0;
  while (!r.state.stationary()) {
    if (r.elapsed_s >= timeout_s) {
      throw Error(ErrorCode::Timeout, "axis did not settle within " + std::to_string(timeout_s) + " s");
    }
    r.state = tick(params, r.state, dt);
    ++ticks;
    r.elapsed_s = static_cast<double>(ticks) * dt;
    if (on_tick) on_tick(r.state);
  }
  return r;
}

inline std::vector<AxisTracePoint> trace_settle(const AxisParams& params, const AxisState& start, double target_mm,
                                                double dt, double timeout_s = 300.0) {
  std::vector<AxisTracePoint> trace;
  trace.push_back({start.time_s, start.position_mm, start.encoder_mm, start.valve});
  settle(params, start, target_mm, dt, timeout_s, [&](const AxisState& s) {
    trace.push_back({s.time_s, s.position_mm, s.encoder_mm, s.valve});
  });
  return trace;
}

/// CSV with columns t,position,encoder,valve.
inline void write_trace_csv(std::ostream& out, const std::vector<AxisTracePoint>& trace) {
  const auto old_precision = out.precision(10);
  out << "t,position,encoder,valve\n";
  for (const auto& p : trace) {
    out << p.t_s << ',' << p.position_mm << ',' << p.encoder_mm << ',' << valve_name(p.valve) << '\n';
  }
  out.precision(old_precision);
}

}  // namespace mrguide
