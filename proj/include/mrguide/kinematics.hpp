#pragma once

// Kinematics of the stacked-Cartesian needle guide. Two carriages, each on an
// XY stage, hold spherical bearings at fixed heights z_upper and z_lower; the
// needle guide is the line through both bearing centers.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "mrguide/errors.hpp"
#include "mrguide/geometry.hpp"

namespace mrguide {

/// The four actuated axes, numbered as in the sequential moving strategy.
enum class AxisId : int { UpperX = 1, UpperY = 2, LowerX = 3, LowerY = 4 };

inline constexpr std::array<AxisId, 4> kAllAxes = {AxisId::UpperX, AxisId::UpperY, AxisId::LowerX,
                                                   AxisId::LowerY};

inline constexpr std::size_t axis_index(AxisId a) { return static_cast<std::size_t>(a) - 1; }
inline constexpr int axis_number(AxisId a) { return static_cast<int>(a); }
inline constexpr bool is_x_axis(AxisId a) { return a == AxisId::UpperX || a == AxisId::LowerX; }
inline constexpr bool is_upper(AxisId a) { return a == AxisId::UpperX || a == AxisId::UpperY; }

inline AxisId axis_from_number(int n) {
  if (n < 1 || n > 4) throw Error(ErrorCode::InvalidArgument, "axis number must be 1..4");
  return static_cast<AxisId>(n);
}

inline const char* axis_name(AxisId a) {
  switch (a) {
    case AxisId::UpperX: return "upper_x";
    case AxisId::UpperY: return "upper_y";
    case AxisId::LowerX: return "lower_x";
    case AxisId::LowerY: return "lower_y";
  }
  return "?";
}

struct RobotParams {
  double z_upper_mm = -36.5;
  double z_lower_mm = -82.2;
  double travel_x_mm = 55.0;
  double travel_y_mm = 30.0;
  // Lower-left corner of both carriage travel rectangles. The default centers
  // the rectangles on the robot z-axis.
  double x_min_mm = -27.5;
  double y_min_mm = -15.0;
  double max_incline_deg = 30.0;

  double x_max_mm() const { return x_min_mm + travel_x_mm; }
  double y_max_mm() const { return y_min_mm + travel_y_mm; }
  double bearing_spacing_mm() const { return z_upper_mm - z_lower_mm; }

  /// Largest in-plane separation of the carriages allowed by the incline limit.
  double max_relative_displacement_mm() const {
    return bearing_spacing_mm() * std::tan(deg_to_rad(max_incline_deg));
  }

  void validate() const {
    auto bad = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
    if (!std::isfinite(z_upper_mm) || !std::isfinite(z_lower_mm) || !(z_upper_mm > z_lower_mm)) {
      bad("upper bearing must lie above the lower bearing (z_u > z_l)");
    }
    if (!(travel_x_mm > 0.0) || !(travel_y_mm > 0.0)) bad("travel spans must be positive");
    if (!std::isfinite(x_min_mm) || !std::isfinite(y_min_mm)) bad("travel origin must be finite");
    if (!(max_incline_deg > 0.0 && max_incline_deg < 90.0)) bad("max incline must be in (0, 90) degrees");
  }
};

struct CarriagePose {
  double upper_x = 0.0;
  double upper_y = 0.0;
  double lower_x = 0.0;
  double lower_y = 0.0;

  double& operator[](AxisId a) {
    switch (a) {
      case AxisId::UpperX: return upper_x;
      case AxisId::UpperY: return upper_y;
      case AxisId::LowerX: return lower_x;
      case AxisId::LowerY: return lower_y;
    }
    return upper_x;
  }
  double operator[](AxisId a) const { return const_cast<CarriagePose&>(*this)[a]; }

  Vec3 upper_bearing(const RobotParams& p) const { return {upper_x, upper_y, p.z_upper_mm}; }
  Vec3 lower_bearing(const RobotParams& p) const { return {lower_x, lower_y, p.z_lower_mm}; }

  friend bool operator==(const CarriagePose&, const CarriagePose&) = default;
};

/// Planned insertion: skin entry point above an in-tissue target.
struct TargetPlan {
  Point3 entry;
  Point3 target;
};

/// In-plane carriage separation (upper minus lower), mm.
inline double relative_displacement_mm(const CarriagePose& pose) {
  return std::hypot(pose.upper_x - pose.lower_x, pose.upper_y - pose.lower_y);
}

/// Angle between the needle guide and the robot z-axis, degrees.
inline double incline_angle_deg(const CarriagePose& pose, const RobotParams& params) {
  return rad_to_deg(std::atan2(relative_displacement_mm(pose), params.bearing_spacing_mm()));
}

/// Tolerance by which a pose may exceed a limit before it is a hard error.
constexpr double kLimitSlack = 1e-6;

struct PoseCheck {
  bool within_travel = true;
  bool within_incline = true;
  double incline_deg = 0.0;
  /// Largest travel violation over the four coordinates, mm (0 when inside).
  double travel_excess_mm = 0.0;
  AxisId worst_axis = AxisId::UpperX;

  bool feasible() const { return within_travel && within_incline; }
};

inline PoseCheck check_pose(const CarriagePose& pose, const RobotParams& params, double slack = kLimitSlack) {
  PoseCheck c;
  for (AxisId a : kAllAxes) {
    const double lo = is_x_axis(a) ? params.x_min_mm : params.y_min_mm;
    const double hi = is_x_axis(a) ? params.x_max_mm() : params.y_max_mm();
    const double v = pose[a];
    const double excess = std::max({lo - v, v - hi, 0.0});
    if (!std::isfinite(v) || excess > c.travel_excess_mm) {
      c.travel_excess_mm = std::isfinite(v) ? excess : INFINITY;
      c.worst_axis = a;
    }
  }
  c.within_travel = c.travel_excess_mm <= slack;
  c.incline_deg = incline_angle_deg(pose, params);
  // Compare displacements rather than angles so the slack is a length.
  c.within_incline = relative_displacement_mm(pose) <= params.max_relative_displacement_mm() + slack;
  return c;
}

struct IkSolution {
  CarriagePose pose;
  PoseCheck check;
};

/// Carriage positions placing both bearings on the entry-target line. Does not
/// enforce limits; the returned check reports violations.
inline IkSolution inverse_kinematics(const TargetPlan& plan, const RobotParams& params) {
  require_same_frame(plan.entry.frame, FrameId::robot(), "inverse_kinematics entry");
  require_same_frame(plan.target.frame, FrameId::robot(), "inverse_kinematics target");
  const Vec3& e = plan.entry.xyz;
  const Vec3& t = plan.target.xyz;
  if (!e.allFinite() || !t.allFinite()) throw Error(ErrorCode::InvalidArgument, "plan points must be finite");
  const double dz = e.z() - t.z();
  if (std::abs(dz) < kParallelTol) {
    throw Error(ErrorCode::DegeneratePlan, "entry and target lie at the same depth");
  }
  if (dz < 0.0) throw Error(ErrorCode::DegeneratePlan, "entry point must lie above the target point");

  const double su = (params.z_upper_mm - t.z()) / dz;
  const double sl = (params.z_lower_mm - t.z()) / dz;
  IkSolution sol;
  sol.pose.upper_x = su * (e.x() - t.x()) + t.x();
  sol.pose.upper_y = su * (e.y() - t.y()) + t.y();
  sol.pose.lower_x = sl * (e.x() - t.x()) + t.x();
  sol.pose.lower_y = sl * (e.y() - t.y()) + t.y();
  sol.check = check_pose(sol.pose, params);
  return sol;
}

inline void require_feasible(const CarriagePose& pose, const RobotParams& params) {
  const PoseCheck c = check_pose(pose, params);
  if (!c.within_travel) {
    throw Error(ErrorCode::OutOfTravel, std::string(axis_name(c.worst_axis)) + " exceeds travel by " +
                                            std::to_string(c.travel_excess_mm) + " mm");
  }
  if (!c.within_incline) {
    throw Error(ErrorCode::InclineExceeded, "incline " + std::to_string(c.incline_deg) +
                                                " deg exceeds limit " + std::to_string(params.max_incline_deg));
  }
}

/// Inverse kinematics with hard limits: throws OutOfTravel or InclineExceeded.
inline CarriagePose solve_inverse_kinematics(const TargetPlan& plan, const RobotParams& params) {
  const IkSolution sol = inverse_kinematics(plan, params);
  require_feasible(sol.pose, params);
  return sol.pose;
}

/// Needle line through both bearing centers, anchored at the upper bearing and
/// pointing downward. Limits are not enforced.
inline NeedleLine forward_kinematics(const CarriagePose& pose, const RobotParams& params) {
  const Vec3 upper = pose.upper_bearing(params);
  const Vec3 lower = pose.lower_bearing(params);
  return NeedleLine{Point3(upper, FrameId::robot()), (lower - upper).normalized()};
}

/// Where the needle line crosses the horizontal plane z = plane_z.
inline Point3 project_to_plane(const NeedleLine& line, double plane_z) {
  require_same_frame(line.frame(), FrameId::robot(), "project_to_plane");
  return line_plane_intersection(line, plane_z);
}

}  // namespace mrguide
