#pragma once

// JSON (de)serialization for robot configs, fiducial sets, poses and
// experiment specs. All lengths are mm and all angles degrees.

#include <array>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrguide/axis_sim.hpp"
#include "mrguide/errors.hpp"
#include "mrguide/eval_harness.hpp"
#include "mrguide/geometry.hpp"
#include "mrguide/kinematics.hpp"
#include "mrguide/motion_planner.hpp"

namespace mrguide {

using Json = nlohmann::json;

struct RobotConfig {
  RobotParams params;
  std::array<AxisParams, 4> axes = default_axis_params(RobotParams{});
};

namespace detail {

inline double get_num(const Json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw Error(ErrorCode::InvalidConfig, std::string("'") + key + "' must be a number");
  return j.at(key).get<double>();
}

inline void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) throw Error(ErrorCode::InvalidConfig, "unknown key '" + it.key() + "' in " + where);
  }
}

inline void read_axis(const Json& j, AxisParams& a, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, where + " must be an object");
  check_keys(j,
             {"speed_pos_mm_s", "speed_neg_mm_s", "stop_threshold_mm", "coast_time_s", "encoder_counts_per_mm",
              "transport_delay_s"},
             where);
  a.speed_pos_mm_s = get_num(j, "speed_pos_mm_s", a.speed_pos_mm_s);
  a.speed_neg_mm_s = get_num(j, "speed_neg_mm_s", a.speed_neg_mm_s);
  a.stop_threshold_mm = get_num(j, "stop_threshold_mm", a.stop_threshold_mm);
  a.coast_time_s = get_num(j, "coast_time_s", a.coast_time_s);
  a.encoder_counts_per_mm = get_num(j, "encoder_counts_per_mm", a.encoder_counts_per_mm);
  a.transport_delay_s = get_num(j, "transport_delay_s", a.transport_delay_s);
}

inline Json axis_to_json(const AxisParams& a) {
  return Json{{"speed_pos_mm_s", a.speed_pos_mm_s},       {"speed_neg_mm_s", a.speed_neg_mm_s},
              {"stop_threshold_mm", a.stop_threshold_mm}, {"coast_time_s", a.coast_time_s},
              {"encoder_counts_per_mm", a.encoder_counts_per_mm}, {"transport_delay_s", a.transport_delay_s}};
}

}  // namespace detail

/// Parses a robot config. Missing keys keep their defaults; "origin" is either
/// "centered" (default) or "corner", and x_min_mm / y_min_mm override it.
/// "axes" may hold "x" and "y" defaults plus per-axis "upper_x" ... "lower_y".
inline RobotConfig robot_config_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "robot config must be a JSON object");
  detail::check_keys(j,
                     {"z_u_mm", "z_l_mm", "travel_x_mm", "travel_y_mm", "max_incline_deg", "origin", "x_min_mm",
                      "y_min_mm", "axes"},
                     "robot config");
  RobotConfig c;
  RobotParams& p = c.params;
  p.z_upper_mm = detail::get_num(j, "z_u_mm", p.z_upper_mm);
  p.z_lower_mm = detail::get_num(j, "z_l_mm", p.z_lower_mm);
  p.travel_x_mm = detail::get_num(j, "travel_x_mm", p.travel_x_mm);
  p.travel_y_mm = detail::get_num(j, "travel_y_mm", p.travel_y_mm);
  p.max_incline_deg = detail::get_num(j, "max_incline_deg", p.max_incline_deg);
  const std::string origin = j.value("origin", std::string("centered"));
  if (origin == "centered") {
    p.x_min_mm = -0.5 * p.travel_x_mm;
    p.y_min_mm = -0.5 * p.travel_y_mm;
  } else if (origin == "corner") {
    p.x_min_mm = 0.0;
    p.y_min_mm = 0.0;
  } else {
    throw Error(ErrorCode::InvalidConfig, "origin must be 'centered' or 'corner'");
  }
  p.x_min_mm = detail::get_num(j, "x_min_mm", p.x_min_mm);
  p.y_min_mm = detail::get_num(j, "y_min_mm", p.y_min_mm);
  p.validate();

  c.axes = default_axis_params(p);
  if (j.contains("axes")) {
    const Json& a = j.at("axes");
    if (!a.is_object()) throw Error(ErrorCode::InvalidConfig, "'axes' must be an object");
    detail::check_keys(a, {"x", "y", "upper_x", "upper_y", "lower_x", "lower_y"}, "axes");
    for (AxisId id : kAllAxes) {
      AxisParams& ap = c.axes[axis_index(id)];
      const char* cls = is_x_axis(id) ? "x" : "y";
      if (a.contains(cls)) detail::read_axis(a.at(cls), ap, std::string("axes.") + cls);
      if (a.contains(axis_name(id))) detail::read_axis(a.at(axis_name(id)), ap, std::string("axes.") + axis_name(id));
    }
  }
  for (const auto& ap : c.axes) ap.validate();
  return c;
}

inline Json robot_config_to_json(const RobotConfig& c) {
  Json axes = Json::object();
  for (AxisId id : kAllAxes) axes[axis_name(id)] = detail::axis_to_json(c.axes[axis_index(id)]);
  return Json{{"z_u_mm", c.params.z_upper_mm},
              {"z_l_mm", c.params.z_lower_mm},
              {"travel_x_mm", c.params.travel_x_mm},
              {"travel_y_mm", c.params.travel_y_mm},
              {"max_incline_deg", c.params.max_incline_deg},
              {"x_min_mm", c.params.x_min_mm},
              {"y_min_mm", c.params.y_min_mm},
              {"axes", axes}};
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::InvalidConfig, path + ": " + e.what());
  }
}

inline RobotConfig load_robot_config(const std::string& path) { return robot_config_from_json(read_json_file(path)); }

inline Vec3 vec3_from_json(const Json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::InvalidArgument, what + " must be a 3-element array");
  Vec3 v;
  for (int k = 0; k < 3; ++k) {
    if (!j[static_cast<std::size_t>(k)].is_number()) throw Error(ErrorCode::InvalidArgument, what + " must be numeric");
    v[k] = j[static_cast<std::size_t>(k)].get<double>();
  }
  return v;
}

inline Json vec3_to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

/// {"pairs": [{"mr": [x, y, z], "robot": [x, y, z]}, ...]}
inline FiducialSet fiducials_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("pairs") || !j.at("pairs").is_array()) {
    throw Error(ErrorCode::InvalidArgument, "fiducial set must be an object with a 'pairs' array");
  }
  FiducialSet set;
  for (const auto& p : j.at("pairs")) {
    if (!p.is_object() || !p.contains("mr") || !p.contains("robot")) {
      throw Error(ErrorCode::InvalidArgument, "each pair needs 'mr' and 'robot' points");
    }
    set.push_back({vec3_from_json(p.at("mr"), "mr"), vec3_from_json(p.at("robot"), "robot")});
  }
  return set;
}

inline Json pose_to_json(const CarriagePose& p) {
  return Json{{"upper_x", p.upper_x}, {"upper_y", p.upper_y}, {"lower_x", p.lower_x}, {"lower_y", p.lower_y}};
}

inline CarriagePose pose_from_json(const Json& j) {
  if (j.is_array() && j.size() == 4) {
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  }
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "pose must be an object or a 4-element array");
  detail::check_keys(j, {"upper_x", "upper_y", "lower_x", "lower_y"}, "pose");
  CarriagePose p;
  p.upper_x = detail::get_num(j, "upper_x", 0.0);
  p.upper_y = detail::get_num(j, "upper_y", 0.0);
  p.lower_x = detail::get_num(j, "lower_x", 0.0);
  p.lower_y = detail::get_num(j, "lower_y", 0.0);
  return p;
}

inline Json transform_to_json(const RigidTransform& t) {
  const Eigen::Quaterniond q = t.quaternion();
  return Json{{"quaternion_wxyz", Json::array({q.w(), q.x(), q.y(), q.z()})},
              {"translation_mm", vec3_to_json(t.translation())},
              {"from", t.from().str()},
              {"to", t.to().str()}};
}

inline Json line_to_json(const NeedleLine& line) {
  return Json{{"origin", vec3_to_json(line.origin.xyz)}, {"direction", vec3_to_json(line.direction)},
              {"frame", line.frame().str()}};
}

inline Json stat_to_json(const Stat& s) {
  auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  return Json{{"mean", num(s.mean)}, {"sd", num(s.sd)}, {"count", s.count}};
}

/// Error model keys: axis_sigma_mm ([4] or scalar), axis_mean_mm, tracker_sigma_mm,
/// registration {tilt_deg, yaw_deg, translation_mm, pivot}, upper/lower_bearing_offset_mm.
inline ErrorModel error_model_from_json(const Json& j, std::uint64_t seed) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (name == "perfect") return ErrorModel::perfect(seed);
    if (name == "calibrated") return ErrorModel::calibrated(seed);
    throw Error(ErrorCode::InvalidConfig, "unknown error model preset '" + name + "'");
  }
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "error model must be a preset name or an object");
  detail::check_keys(j,
                     {"preset", "axis_sigma_mm", "axis_mean_mm", "tracker_sigma_mm", "registration",
                      "upper_bearing_offset_mm", "lower_bearing_offset_mm"},
                     "error model");
  ErrorModel m = j.contains("preset") ? error_model_from_json(j.at("preset"), seed) : ErrorModel::perfect(seed);
  auto per_axis = [&](const char* key, auto member) {
    if (!j.contains(key)) return;
    const Json& v = j.at(key);
    for (std::size_t i = 0; i < 4; ++i) {
      const Json& e = v.is_array() ? v.at(i) : v;
      if (!e.is_number()) throw Error(ErrorCode::InvalidConfig, std::string(key) + " must be numeric");
      m.axis_noise[i].*member = e.get<double>();
    }
  };
  per_axis("axis_sigma_mm", &NoiseSpec::sigma_mm);
  per_axis("axis_mean_mm", &NoiseSpec::mean_mm);
  m.tracker_sigma_mm = detail::get_num(j, "tracker_sigma_mm", m.tracker_sigma_mm);
  m.upper_bearing_offset_mm = detail::get_num(j, "upper_bearing_offset_mm", m.upper_bearing_offset_mm);
  m.lower_bearing_offset_mm = detail::get_num(j, "lower_bearing_offset_mm", m.lower_bearing_offset_mm);
  if (j.contains("registration")) {
    const Json& r = j.at("registration");
    detail::check_keys(r, {"tilt_deg", "yaw_deg", "translation_mm", "pivot"}, "registration");
    m.registration.tilt_deg = detail::get_num(r, "tilt_deg", m.registration.tilt_deg);
    m.registration.yaw_deg = detail::get_num(r, "yaw_deg", m.registration.yaw_deg);
    m.registration.translation_mm = detail::get_num(r, "translation_mm", m.registration.translation_mm);
    if (r.contains("pivot")) {
      const auto pv = r.at("pivot").get<std::string>();
      if (pv == "target_plane") m.registration.pivot = PivotMode::TargetPlane;
      else if (pv == "robot_origin") m.registration.pivot = PivotMode::RobotOrigin;
      else throw Error(ErrorCode::InvalidConfig, "pivot must be 'target_plane' or 'robot_origin'");
    }
  }
  for (const auto& n : m.axis_noise) {
    if (!(n.sigma_mm >= 0.0)) throw Error(ErrorCode::InvalidConfig, "axis sigma must be >= 0");
  }
  if (!(m.tracker_sigma_mm >= 0.0)) throw Error(ErrorCode::InvalidConfig, "tracker sigma must be >= 0");
  return m;
}

/// Experiment spec: either a preset name ("default"/"free_space", "phantom",
/// "zero_noise") or an object with optional "preset" and overrides.
inline ExperimentSpec experiment_spec_from_json(const Json& j, std::uint64_t seed) {
  auto preset = [&](const std::string& name) {
    if (name == "default" || name == "free_space") return ExperimentSpec::free_space(seed);
    if (name == "phantom") return ExperimentSpec::phantom(seed);
    if (name == "zero_noise") {
      ExperimentSpec s = ExperimentSpec::free_space(seed);
      s.name = "zero_noise";
      s.ideal_axes = true;
      s.model = ErrorModel::perfect(seed);
      return s;
    }
    throw Error(ErrorCode::InvalidConfig, "unknown experiment preset '" + name + "'");
  };
  if (j.is_string()) return preset(j.get<std::string>());
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "experiment spec must be a preset name or an object");
  detail::check_keys(j,
                     {"preset", "name", "grid", "poses", "random_poses", "depth_mm", "depth_reference", "ideal_axes",
                      "guard", "dt_s", "home", "error_model"},
                     "experiment spec");
  ExperimentSpec s = preset(j.value("preset", std::string("default")));
  s.name = j.value("name", s.name);
  if (j.contains("grid")) {
    const Json& g = j.at("grid");
    detail::check_keys(g,
                       {"upper_cols", "upper_rows", "drop_corners", "upper_margin_x_mm", "upper_margin_y_mm",
                        "lower_cols", "lower_rows", "lower_pitch_mm", "adaptive_pitch"},
                       "grid");
    s.grid.upper_cols = g.value("upper_cols", s.grid.upper_cols);
    s.grid.upper_rows = g.value("upper_rows", s.grid.upper_rows);
    s.grid.drop_corners = g.value("drop_corners", s.grid.drop_corners);
    s.grid.upper_margin_x_mm = detail::get_num(g, "upper_margin_x_mm", s.grid.upper_margin_x_mm);
    s.grid.upper_margin_y_mm = detail::get_num(g, "upper_margin_y_mm", s.grid.upper_margin_y_mm);
    s.grid.lower_cols = g.value("lower_cols", s.grid.lower_cols);
    s.grid.lower_rows = g.value("lower_rows", s.grid.lower_rows);
    s.grid.lower_pitch_mm = detail::get_num(g, "lower_pitch_mm", s.grid.lower_pitch_mm);
    s.grid.adaptive_pitch = g.value("adaptive_pitch", s.grid.adaptive_pitch);
  }
  if (j.contains("poses")) {
    s.poses.clear();
    for (const auto& p : j.at("poses")) s.poses.push_back(pose_from_json(p));
  }
  s.random_poses = j.value("random_poses", s.random_poses);
  s.depth_mm = detail::get_num(j, "depth_mm", s.depth_mm);
  if (j.contains("depth_reference")) {
    const auto ref = j.at("depth_reference").get<std::string>();
    if (ref == "lower_bearing") s.depth_reference = DepthReference::LowerBearing;
    else if (ref == "robot_origin") s.depth_reference = DepthReference::RobotOrigin;
    else throw Error(ErrorCode::InvalidConfig, "depth_reference must be 'lower_bearing' or 'robot_origin'");
  }
  s.ideal_axes = j.value("ideal_axes", s.ideal_axes);
  s.guard = j.value("guard", s.guard);
  s.dt_s = detail::get_num(j, "dt_s", s.dt_s);
  if (j.contains("home")) s.home = pose_from_json(j.at("home"));
  if (j.contains("error_model")) s.model = error_model_from_json(j.at("error_model"), seed);
  s.model.seed = seed;
  if (!(s.dt_s > 0.0 && s.dt_s <= kMaxTick)) throw Error(ErrorCode::InvalidConfig, "dt_s must lie in (0, 0.1]");
  return s;
}

inline Json report_to_json(const EvalReport& r) {
  Json bins = Json::array();
  for (const auto& b : r.bins) {
    bins.push_back(Json{{"lo_deg", b.lo_deg},
                        {"hi_deg", b.hi_deg},
                        {"position_error_mm", stat_to_json(b.position_mm)},
                        {"orientation_error_deg", stat_to_json(b.orientation_deg)}});
  }
  return Json{{"name", r.name},
              {"seed", r.seed},
              {"depth_mm", r.depth_mm},
              {"plane_z_mm", r.plane_z_mm},
              {"trials", r.records.size()},
              {"failed_trials", r.failed_trials},
              {"position_error_mm", stat_to_json(r.position_mm)},
              {"orientation_error_deg", stat_to_json(r.orientation_deg)},
              {"incline_bins", bins}};
}

}  // namespace mrguide
