#pragma once

// Targeting experiments on the simulated robot.
//
// A trial commands a carriage pose through the sequential planner, perturbs
// the settled pose with the error model, "measures" the needle guide with a
// tracked probe at both bearings and extends the measured line to a target
// plane. Position error is the in-plane distance between the planned and
// measured plane crossings; orientation error is the angle between the planned
// and measured guide directions.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mrguide/errors.hpp"
#include "mrguide/geometry.hpp"
#include "mrguide/kinematics.hpp"
#include "mrguide/motion_planner.hpp"
#include "mrguide/random.hpp"

namespace mrguide {

struct NoiseSpec {
  double mean_mm = 0.0;
  double sigma_mm = 0.0;
};

enum class PivotMode { TargetPlane, RobotOrigin };

/// Registration error between the tracker and the robot frame. The rotation
/// axis is horizontal with a seed-drawn azimuth (tilt) plus a rotation about
/// the vertical (yaw) of seed-drawn sign; the translation has a seed-drawn
/// direction. Magnitudes are fixed so every seed sees the same error budget.
struct RegistrationPerturbation {
  double tilt_deg = 0.0;
  double yaw_deg = 0.0;
  double translation_mm = 0.0;
  PivotMode pivot = PivotMode::TargetPlane;
};

struct ErrorModel {
  std::array<NoiseSpec, 4> axis_noise{};
  /// Tracker noise per coordinate, mm.
  double tracker_sigma_mm = 0.0;
  RegistrationPerturbation registration;
  /// Actual minus nominal bearing heights (fabrication error), mm.
  double upper_bearing_offset_mm = 0.0;
  double lower_bearing_offset_mm = 0.0;
  std::uint64_t seed = 0;

  static ErrorModel perfect(std::uint64_t seed = 0) {
    ErrorModel m;
    m.seed = seed;
    return m;
  }

  /// Error budget tuned to the free-space bench results.
  ///  - axis noise: zero mean, sigma chosen so E|e| equals the measured mean
  ///    absolute axis errors (0.19 mm x, 0.17 mm y);
  ///  - tracker: 0.5 mm device error spread over three coordinates;
  ///  - registration error accounts for the angular error seen on the bench;
  ///  - a lower-bearing height error (assembly) makes position error grow
  ///    with incline.
  static ErrorModel calibrated(std::uint64_t seed = 0) {
    ErrorModel m;
    const double sx = 0.19 * std::sqrt(kPi / 2.0);
    const double sy = 0.17 * std::sqrt(kPi / 2.0);
    m.axis_noise = {NoiseSpec{0.0, sx}, NoiseSpec{0.0, sy}, NoiseSpec{0.0, sx}, NoiseSpec{0.0, sy}};
    m.tracker_sigma_mm = 0.5 / std::sqrt(3.0);
    m.registration.tilt_deg = 3.5;
    m.registration.yaw_deg = 0.5;
    m.registration.translation_mm = 1.0;
    m.registration.pivot = PivotMode::TargetPlane;
    m.upper_bearing_offset_mm = 0.0;
    m.lower_bearing_offset_mm = 4.0;
    m.seed = seed;
    return m;
  }
};

enum class DepthReference { LowerBearing, RobotOrigin };

inline double plane_z_for_depth(const RobotParams& params, double depth_mm, DepthReference ref) {
  return ref == DepthReference::LowerBearing ? params.z_lower_mm - depth_mm : -depth_mm;
}

/// Target layout: a lattice of upper-carriage points (optionally without its
/// four corners), each paired with a grid of lower-carriage points centered
/// under it.
struct TargetGridSpec {
  int upper_cols = 6;
  int upper_rows = 5;
  bool drop_corners = true;
  double upper_margin_x_mm = 5.0;
  double upper_margin_y_mm = 3.0;
  int lower_cols = 3;
  int lower_rows = 3;
  double lower_pitch_mm = 15.0;
  /// Shrink the lower pitch per upper point so its grid fits travel and incline.
  bool adaptive_pitch = true;

  int upper_count() const {
    int n = upper_cols * upper_rows;
    if (drop_corners && upper_cols > 1 && upper_rows > 1) n -= 4;
    return n;
  }
  int trial_count() const { return upper_count() * lower_cols * lower_rows; }
};

inline std::vector<CarriagePose> generate_target_grid(const TargetGridSpec& spec, const RobotParams& params) {
  params.validate();
  if (spec.upper_cols < 1 || spec.upper_rows < 1 || spec.lower_cols < 1 || spec.lower_rows < 1) {
    throw Error(ErrorCode::InfeasibleSpec, "grid dimensions must be positive");
  }
  if (!(spec.lower_pitch_mm >= 0.0)) throw Error(ErrorCode::InfeasibleSpec, "lower pitch must be >= 0");

  auto lattice = [](double lo, double hi, int n) {
    std::vector<double> v;
    if (n == 1) {
      v.push_back(0.5 * (lo + hi));
    } else {
      for (int i = 0; i < n; ++i) v.push_back(lo + (hi - lo) * i / (n - 1));
    }
    return v;
  };
  const auto ux = lattice(params.x_min_mm + spec.upper_margin_x_mm, params.x_max_mm() - spec.upper_margin_x_mm,
                          spec.upper_cols);
  const auto uy = lattice(params.y_min_mm + spec.upper_margin_y_mm, params.y_max_mm() - spec.upper_margin_y_mm,
                          spec.upper_rows);
  const double hx = 0.5 * (spec.lower_cols - 1);
  const double hy = 0.5 * (spec.lower_rows - 1);
  const double rho = params.max_relative_displacement_mm();

  std::vector<CarriagePose> poses;
  for (int r = 0; r < spec.upper_rows; ++r) {
    for (int c = 0; c < spec.upper_cols; ++c) {
      const bool corner = (r == 0 || r == spec.upper_rows - 1) && (c == 0 || c == spec.upper_cols - 1);
      if (spec.drop_corners && corner && spec.upper_cols > 1 && spec.upper_rows > 1) continue;
      const double x = ux[static_cast<std::size_t>(c)];
      const double y = uy[static_cast<std::size_t>(r)];
      double pitch = spec.lower_pitch_mm;
      if (spec.adaptive_pitch) {
        if (hx > 0) pitch = std::min(pitch, std::min(x - params.x_min_mm, params.x_max_mm() - x) / hx);
        if (hy > 0) pitch = std::min(pitch, std::min(y - params.y_min_mm, params.y_max_mm() - y) / hy);
        if (hx > 0 || hy > 0) pitch = std::min(pitch, rho / std::hypot(hx, hy));
        pitch = std::max(pitch, 0.0);
      }
      for (int i = 0; i < spec.lower_rows; ++i) {
        for (int j = 0; j < spec.lower_cols; ++j) {
          CarriagePose p{x, y, x + (j - hx) * pitch, y + (i - hy) * pitch};
          const PoseCheck chk = check_pose(p, params, 1e-9);
          if (!chk.feasible()) {
            throw Error(ErrorCode::InfeasibleSpec, "grid pose violates " +
                                                       std::string(chk.within_travel ? "the incline limit" : "travel"));
          }
          poses.push_back(p);
        }
      }
    }
  }
  return poses;
}

/// Euclidean distance between two points on the same target plane.
inline double position_error(const Point3& target, const Point3& achieved) {
  require_same_frame(target.frame, achieved.frame, "position_error");
  if (std::abs(target.z() - achieved.z()) > 1e-9) {
    throw Error(ErrorCode::PlaneMismatch, "points do not lie on the same target plane");
  }
  return (target.xyz - achieved.xyz).norm();
}

/// Angle between the desired and measured insertion directions, degrees.
inline double orientation_error(const NeedleLine& desired, const NeedleLine& measured) {
  return angle_between_deg(desired.direction, measured.direction);
}

struct EvalRecord {
  int trial = 0;
  std::string status = "ok";  // or the planner's error code
  CarriagePose commanded;
  CarriagePose achieved;
  Vec3 target = Vec3::Zero();
  Vec3 intersection = Vec3::Zero();
  double position_error_mm = 0.0;
  double orientation_error_deg = 0.0;
  double incline_deg = 0.0;
  int planner_steps = 0;
};

struct Stat {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double sd = std::numeric_limits<double>::quiet_NaN();
  int count = 0;
};

inline Stat summarize(const std::vector<double>& v) {
  Stat s;
  s.count = static_cast<int>(v.size());
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return s;
}

struct InclineBin {
  double lo_deg = 0.0;
  double hi_deg = 0.0;
  Stat position_mm;
  Stat orientation_deg;
};

constexpr int kInclineBins = 7;

struct EvalReport {
  std::string name;
  std::uint64_t seed = 0;
  double depth_mm = 0.0;
  double plane_z_mm = 0.0;
  std::vector<EvalRecord> records;
  Stat position_mm;
  Stat orientation_deg;
  std::vector<InclineBin> bins;
  int failed_trials = 0;
};

/// Equal-width incline bins over the observed [min, max] incline of the
/// successful trials; the last bin is closed on the right.
inline std::vector<InclineBin> bin_by_incline(const std::vector<EvalRecord>& records, int nbins = kInclineBins) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& r : records) {
    if (r.status != "ok") continue;
    lo = std::min(lo, r.incline_deg);
    hi = std::max(hi, r.incline_deg);
  }
  std::vector<InclineBin> bins(static_cast<std::size_t>(nbins));
  if (!(hi >= lo)) return bins;
  const double width = (hi - lo) / nbins;
  std::vector<std::vector<double>> pos(bins.size()), ori(bins.size());
  for (int b = 0; b < nbins; ++b) {
    bins[static_cast<std::size_t>(b)].lo_deg = lo + b * width;
    bins[static_cast<std::size_t>(b)].hi_deg = b + 1 == nbins ? hi : lo + (b + 1) * width;
  }
  for (const auto& r : records) {
    if (r.status != "ok") continue;
    int b = width > 0.0 ? static_cast<int>(std::floor((r.incline_deg - lo) / width)) : 0;
    b = std::clamp(b, 0, nbins - 1);
    pos[static_cast<std::size_t>(b)].push_back(r.position_error_mm);
    ori[static_cast<std::size_t>(b)].push_back(r.orientation_error_deg);
  }
  for (std::size_t b = 0; b < bins.size(); ++b) {
    bins[b].position_mm = summarize(pos[b]);
    bins[b].orientation_deg = summarize(ori[b]);
  }
  return bins;
}

struct ExperimentSpec {
  std::string name = "free_space";
  TargetGridSpec grid;
  /// When non-empty these poses replace the grid.
  std::vector<CarriagePose> poses;
  /// When > 0, this many random feasible poses (seeded) replace the grid.
  int random_poses = 0;
  double depth_mm = 80.0;
  DepthReference depth_reference = DepthReference::LowerBearing;
  bool ideal_axes = false;
  bool guard = true;
  double dt_s = 0.05;
  CarriagePose home{};
  ErrorModel model;

  /// Free-space bench protocol: 26 x 9 grid, 80 mm below the lower bearing.
  static ExperimentSpec free_space(std::uint64_t seed = 0) {
    ExperimentSpec s;
    s.model = ErrorModel::calibrated(seed);
    return s;
  }

  /// Phantom protocol: three random poses, target plane 105 mm below the robot base.
  static ExperimentSpec phantom(std::uint64_t seed = 0) {
    ExperimentSpec s;
    s.name = "phantom";
    s.random_poses = 3;
    s.depth_mm = 105.0;
    s.depth_reference = DepthReference::RobotOrigin;
    s.model = ErrorModel::calibrated(seed);
    return s;
  }
};

/// Uniformly random pose within travel and incline limits (rejection sampling).
inline CarriagePose random_feasible_pose(Rng& rng, const RobotParams& params, double incline_margin_mm = 0.0) {
  std::uniform_real_distribution<double> ux(params.x_min_mm, params.x_max_mm());
  std::uniform_real_distribution<double> uy(params.y_min_mm, params.y_max_mm());
  const double limit = params.max_relative_displacement_mm() - incline_margin_mm;
  while (true) {
    CarriagePose p{ux(rng), uy(rng), ux(rng), uy(rng)};
    if (relative_displacement_mm(p) <= limit) return p;
  }
}

/// Rigid error applied to tracker measurements, drawn once per experiment.
inline RigidTransform draw_registration_error(const RegistrationPerturbation& reg, std::uint64_t seed,
                                              const Vec3& plane_pivot) {
  Rng rng(derive_seed(seed, 0xfeedULL));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double azimuth = 2.0 * kPi * unit(rng);
  const double yaw_sign = unit(rng) < 0.5 ? -1.0 : 1.0;
  const double cz = 2.0 * unit(rng) - 1.0;
  const double phi = 2.0 * kPi * unit(rng);
  const double sz = std::sqrt(std::max(0.0, 1.0 - cz * cz));
  const Vec3 t_dir(sz * std::cos(phi), sz * std::sin(phi), cz);

  const Eigen::AngleAxisd tilt(deg_to_rad(reg.tilt_deg), Vec3(std::cos(azimuth), std::sin(azimuth), 0.0));
  const Eigen::AngleAxisd yaw(yaw_sign * deg_to_rad(reg.yaw_deg), Vec3::UnitZ());
  Mat3 r = (yaw * tilt).toRotationMatrix();
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  r = svd.matrixU() * svd.matrixV().transpose();
  const Vec3 pivot = reg.pivot == PivotMode::TargetPlane ? plane_pivot : Vec3::Zero();
  const Vec3 t = pivot - r * pivot + reg.translation_mm * t_dir;
  return RigidTransform(r, t, FrameId::robot(), FrameId::robot());
}

inline std::vector<CarriagePose> experiment_poses(const ExperimentSpec& spec, const RobotParams& params) {
  if (!spec.poses.empty()) {
    for (const auto& p : spec.poses) {
      if (!check_pose(p, params, 1e-9).feasible()) throw Error(ErrorCode::InfeasibleSpec, "explicit pose is infeasible");
    }
    return spec.poses;
  }
  if (spec.random_poses > 0) {
    Rng rng(derive_seed(spec.model.seed, 0xbeefULL));
    std::vector<CarriagePose> v;
    for (int i = 0; i < spec.random_poses; ++i) v.push_back(random_feasible_pose(rng, params));
    return v;
  }
  return generate_target_grid(spec.grid, params);
}

inline EvalRecord run_trial(int index, const CarriagePose& commanded, const ExperimentSpec& spec,
                            const RobotParams& params, const std::array<AxisParams, 4>& axes,
                            const RigidTransform& registration_error, double plane_z) {
  EvalRecord rec;
  rec.trial = index;
  rec.commanded = commanded;
  rec.incline_deg = incline_angle_deg(commanded, params);
  const NeedleLine desired = forward_kinematics(commanded, params);
  rec.target = project_to_plane(desired, plane_z).xyz;

  RobotSim sim = make_robot_sim(params, axes, spec.home);
  PlannerOptions opts;
  opts.guard = spec.guard;
  opts.dt_s = spec.dt_s;
  MoveResult move;
  try {
    move = execute_plan(commanded, sim, opts);
  } catch (const Error& e) {
    rec.status = to_string(e.code());
    rec.position_error_mm = rec.orientation_error_deg = std::numeric_limits<double>::quiet_NaN();
    return rec;
  }
  rec.planner_steps = static_cast<int>(move.steps.size());

  Rng rng(derive_seed(spec.model.seed, static_cast<std::uint64_t>(index) + 1));
  std::normal_distribution<double> gauss(0.0, 1.0);
  rec.achieved = move.final_pose;
  for (AxisId a : kAllAxes) {
    const NoiseSpec& n = spec.model.axis_noise[axis_index(a)];
    const double draw = gauss(rng);
    rec.achieved[a] += n.mean_mm + n.sigma_mm * draw;
  }

  // Actual bearing centers, then tracked probe tips at both ends of the guide.
  const Vec3 upper(rec.achieved.upper_x, rec.achieved.upper_y, params.z_upper_mm + spec.model.upper_bearing_offset_mm);
  const Vec3 lower(rec.achieved.lower_x, rec.achieved.lower_y, params.z_lower_mm + spec.model.lower_bearing_offset_mm);
  Vec3 probe_upper = upper;
  Vec3 probe_lower = lower;
  for (int k = 0; k < 3; ++k) probe_upper[k] += spec.model.tracker_sigma_mm * gauss(rng);
  for (int k = 0; k < 3; ++k) probe_lower[k] += spec.model.tracker_sigma_mm * gauss(rng);
  probe_upper = registration_error.rotation() * probe_upper + registration_error.translation();
  probe_lower = registration_error.rotation() * probe_lower + registration_error.translation();

  const NeedleLine measured{Point3(probe_upper), (probe_lower - probe_upper).normalized()};
  try {
    rec.intersection = project_to_plane(measured, plane_z).xyz;
  } catch (const Error& e) {
    rec.status = to_string(e.code());
    rec.position_error_mm = rec.orientation_error_deg = std::numeric_limits<double>::quiet_NaN();
    return rec;
  }
  rec.position_error_mm = position_error(Point3(rec.target), Point3(rec.intersection));
  rec.orientation_error_deg = orientation_error(desired, measured);
  return rec;
}

/// Runs every trial of the experiment. Trials use per-trial derived seeds, so
/// the report is identical for any `jobs`.
inline EvalReport run_experiment(const ExperimentSpec& spec, const RobotParams& params,
                                 const std::array<AxisParams, 4>& configured_axes, unsigned jobs = 1) {
  params.validate();
  const std::vector<CarriagePose> poses = experiment_poses(spec, params);
  const auto axes = spec.ideal_axes ? ideal_axis_params(params) : configured_axes;
  for (const auto& a : axes) a.validate();
  require_feasible(spec.home, params);

  EvalReport report;
  report.name = spec.name;
  report.seed = spec.model.seed;
  report.depth_mm = spec.depth_mm;
  report.plane_z_mm = plane_z_for_depth(params, spec.depth_mm, spec.depth_reference);
  const Vec3 pivot(0.5 * (params.x_min_mm + params.x_max_mm()), 0.5 * (params.y_min_mm + params.y_max_mm()),
                   report.plane_z_mm);
  const RigidTransform reg = draw_registration_error(spec.model.registration, spec.model.seed, pivot);

  report.records.resize(poses.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < poses.size(); i += step) {
      report.records[i] = run_trial(static_cast<int>(i), poses[i], spec, params, axes, reg, report.plane_z_mm);
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(1, poses.size()))));
  if (jobs == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(work, j, jobs);
  }

  std::vector<double> pos, ori;
  for (const auto& r : report.records) {
    if (r.status != "ok") {
      ++report.failed_trials;
      continue;
    }
    pos.push_back(r.position_error_mm);
    ori.push_back(r.orientation_error_deg);
  }
  report.position_mm = summarize(pos);
  report.orientation_deg = summarize(ori);
  report.bins = bin_by_incline(report.records);
  return report;
}

namespace detail {

inline std::string fmt_num(double v, int digits = 9) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace detail

/// One row per trial.
inline std::string report_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "trial,status,cmd_upper_x,cmd_upper_y,cmd_lower_x,cmd_lower_y,ach_upper_x,ach_upper_y,ach_lower_x,"
         "ach_lower_y,target_x,target_y,target_z,hit_x,hit_y,hit_z,position_error_mm,orientation_error_deg,"
         "incline_deg,planner_steps\n";
  using detail::fmt_num;
  for (const auto& r : report.records) {
    out << r.trial << ',' << r.status;
    for (double v : {r.commanded.upper_x, r.commanded.upper_y, r.commanded.lower_x, r.commanded.lower_y,
                     r.achieved.upper_x, r.achieved.upper_y, r.achieved.lower_x, r.achieved.lower_y, r.target.x(),
                     r.target.y(), r.target.z(), r.intersection.x(), r.intersection.y(), r.intersection.z(),
                     r.position_error_mm, r.orientation_error_deg, r.incline_deg}) {
      out << ',' << fmt_num(v);
    }
    out << ',' << r.planner_steps << '\n';
  }
  return out.str();
}

}  // namespace mrguide
