#pragma once

// Reachable workspace of the needle guide and its volumetric overlap with an
// organ mesh.
//
// Depth d is measured downward from the lower bearing plane. With s = d / h
// (h = bearing spacing) and r = lower - upper carriage offset, the needle
// crosses depth d at q = lower + s * r. A point q at depth d is reachable iff
// some r with |r| <= h tan(max_incline) keeps both carriages in travel:
//   lower = q - s r      in the travel rectangle,
//   upper = q - (1+s) r  in the travel rectangle.
// Each rectangle condition bounds r to an axis-aligned box, so membership
// reduces to "does a disk touch a box".

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "mrguide/errors.hpp"
#include "mrguide/geometry.hpp"
#include "mrguide/kinematics.hpp"
#include "mrguide/mesh.hpp"

namespace mrguide {

/// Depths below the lower bearing plane, mm. The far end models needle length.
struct DepthRange {
  double min_mm = 0.0;
  double max_mm = 150.0;
};

struct WorkspaceSample {
  Vec3 point;
  double depth_mm = 0.0;
  CarriagePose pose;
};

struct WorkspaceCloud {
  RobotParams params;
  DepthRange depths;
  double resolution_mm = 5.0;
  /// Pose of the robot frame in the world frame the organ mesh lives in.
  RigidTransform placement = RigidTransform::identity();
  std::vector<WorkspaceSample> samples;
};

/// Analytic frustum membership for a robot-frame point.
inline bool frustum_contains(const RobotParams& params, const Vec3& q, const DepthRange& depths) {
  const double depth = params.z_lower_mm - q.z();
  if (depth < depths.min_mm || depth > depths.max_mm || depth < 0.0) return false;
  const double s = depth / params.bearing_spacing_mm();
  const double rho = params.max_relative_displacement_mm();

  double dist2 = 0.0;
  const double lo_bounds[2] = {params.x_min_mm, params.y_min_mm};
  const double hi_bounds[2] = {params.x_max_mm(), params.y_max_mm()};
  for (int k = 0; k < 2; ++k) {
    const double qk = q[k];
    // Upper carriage: q - (1+s) r in [lo, hi]
    double r_lo = (qk - hi_bounds[k]) / (1.0 + s);
    double r_hi = (qk - lo_bounds[k]) / (1.0 + s);
    if (s > 0.0) {
      r_lo = std::max(r_lo, (qk - hi_bounds[k]) / s);
      r_hi = std::min(r_hi, (qk - lo_bounds[k]) / s);
    } else if (qk < lo_bounds[k] || qk > hi_bounds[k]) {
      return false;  // at the bearing plane the lower carriage sits at q
    }
    if (r_lo > r_hi) return false;
    const double nearest = std::clamp(0.0, r_lo, r_hi);
    dist2 += nearest * nearest;
  }
  return dist2 <= rho * rho * (1.0 + 1e-12);
}

/// Grid-samples carriage pose space (lower carriage on a travel grid, carriage
/// offset on a disk grid), keeps incline-feasible poses and projects each onto
/// the depth planes min, min + resolution, ..., max.
inline WorkspaceCloud sample_workspace(const RobotParams& params, const DepthRange& depths, double resolution_mm,
                                       unsigned jobs = 1) {
  params.validate();
  if (!(resolution_mm > 0.0)) throw Error(ErrorCode::InvalidArgument, "resolution must be positive");
  if (!(depths.min_mm >= 0.0) || !(depths.max_mm >= depths.min_mm)) {
    throw Error(ErrorCode::InvalidArgument, "depth range must satisfy 0 <= min <= max");
  }

  auto grid = [&](double lo, double hi) {
    std::vector<double> v;
    const int n = static_cast<int>(std::floor((hi - lo) / resolution_mm + 1e-9));
    for (int i = 0; i <= n; ++i) v.push_back(lo + i * resolution_mm);
    if (hi - v.back() > 1e-9) v.push_back(hi);
    return v;
  };
  const auto xs = grid(params.x_min_mm, params.x_max_mm());
  const auto ys = grid(params.y_min_mm, params.y_max_mm());
  const double rho = params.max_relative_displacement_mm();
  const auto rs = grid(-rho, rho);

  std::vector<CarriagePose> poses;
  for (double lx : xs) {
    for (double ly : ys) {
      for (double rx : rs) {
        for (double ry : rs) {
          CarriagePose p{lx - rx, ly - ry, lx, ly};
          if (check_pose(p, params, 1e-9).feasible()) poses.push_back(p);
        }
      }
    }
  }
  if (poses.empty()) throw Error(ErrorCode::EmptyWorkspace, "no carriage pose satisfies travel and incline limits");

  const auto ds = grid(depths.min_mm, depths.max_mm);
  std::vector<std::vector<WorkspaceSample>> per_depth(ds.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t k = begin; k < ds.size(); k += step) {
      const double s = ds[k] / params.bearing_spacing_mm();
      auto& out = per_depth[k];
      out.reserve(poses.size());
      for (const auto& p : poses) {
        const double x = p.lower_x + s * (p.lower_x - p.upper_x);
        const double y = p.lower_y + s * (p.lower_y - p.upper_y);
        out.push_back({Vec3(x, y, params.z_lower_mm - ds[k]), ds[k], p});
      }
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(ds.size())));
  if (jobs == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(work, j, jobs);
  }

  WorkspaceCloud cloud;
  cloud.params = params;
  cloud.depths = depths;
  cloud.resolution_mm = resolution_mm;
  for (auto& v : per_depth) cloud.samples.insert(cloud.samples.end(), v.begin(), v.end());
  return cloud;
}

/// Largest |x| reached at depth d; used to check the frustum's flare.
inline double frustum_half_extent_x(const RobotParams& params, double depth_mm) {
  const double s = depth_mm / params.bearing_spacing_mm();
  const double half = 0.5 * params.travel_x_mm;
  return half + s * std::min(params.max_relative_displacement_mm(), params.travel_x_mm);
}

struct CoverageResult {
  double ratio = 0.0;
  long long organ_voxels = 0;
  long long reachable_voxels = 0;
  double pitch_mm = 0.0;
};

/// Fraction of the organ volume the needle can reach. The mesh is shifted down
/// by `standoff_mm` (abdominal wall) along the robot z-axis, voxelized on a
/// world-anchored lattice with centers at (i + 1/2) * pitch, and each voxel
/// center is tested against the frustum.
inline CoverageResult coverage_ratio(const WorkspaceCloud& cloud, TriMesh organ, double standoff_mm,
                                     double pitch_mm = 2.0, unsigned jobs = 1) {
  if (cloud.samples.empty()) throw Error(ErrorCode::EmptyWorkspace, "workspace cloud is empty");
  if (!(pitch_mm > 0.0)) throw Error(ErrorCode::InvalidArgument, "voxel pitch must be positive");
  require_closed_mesh(organ);
  organ.translate(cloud.placement.apply_direction(Vec3(0, 0, -standoff_mm)));

  const RigidTransform to_robot = cloud.placement.inverse();
  const Vec3 lo = organ.bbox_min();
  const Vec3 hi = organ.bbox_max();
  const auto i0 = static_cast<long long>(std::floor(lo.x() / pitch_mm));
  const auto i1 = static_cast<long long>(std::ceil(hi.x() / pitch_mm));
  const auto j0 = static_cast<long long>(std::floor(lo.y() / pitch_mm));
  const auto j1 = static_cast<long long>(std::ceil(hi.y() / pitch_mm));
  const auto k0 = static_cast<long long>(std::floor(lo.z() / pitch_mm));
  const auto k1 = static_cast<long long>(std::ceil(hi.z() / pitch_mm));
  const long long ni = i1 - i0;

  std::vector<long long> inside(static_cast<std::size_t>(std::max(0LL, ni)), 0);
  std::vector<long long> reach(inside.size(), 0);
  auto work = [&](long long begin, long long step) {
    for (long long ii = begin; ii < ni; ii += step) {
      const double x = (static_cast<double>(i0 + ii) + 0.5) * pitch_mm;
      for (long long j = j0; j < j1; ++j) {
        const double y = (static_cast<double>(j) + 0.5) * pitch_mm;
        const auto crossings = column_crossings(organ, x, y);
        if (crossings.empty()) continue;
        std::size_t next = 0;
        int winding = 0;
        for (const auto& c : crossings) winding += c.facing;
        // Sweep upward: winding counts crossings strictly above the voxel center.
        for (long long k = k0; k < k1; ++k) {
          const double z = (static_cast<double>(k) + 0.5) * pitch_mm;
          while (next < crossings.size() && crossings[next].z <= z) winding -= crossings[next++].facing;
          if (winding == 0) continue;
          ++inside[static_cast<std::size_t>(ii)];
          const Vec3 q = to_robot.rotation() * Vec3(x, y, z) + to_robot.translation();
          if (frustum_contains(cloud.params, q, cloud.depths)) ++reach[static_cast<std::size_t>(ii)];
        }
      }
    }
  };
  jobs = std::max(1u, jobs);
  if (jobs == 1 || ni <= 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(work, static_cast<long long>(j), static_cast<long long>(jobs));
  }

  CoverageResult r;
  r.pitch_mm = pitch_mm;
  for (std::size_t k = 0; k < inside.size(); ++k) {
    r.organ_voxels += inside[k];
    r.reachable_voxels += reach[k];
  }
  if (r.organ_voxels == 0) throw Error(ErrorCode::ZeroVolume, "mesh contains no voxel centers at this pitch");
  r.ratio = static_cast<double>(r.reachable_voxels) / static_cast<double>(r.organ_voxels);
  return r;
}

inline void write_cloud_csv(const WorkspaceCloud& cloud, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  out.precision(10);
  out << "x,y,z\n";
  for (const auto& s : cloud.samples) out << s.point.x() << ',' << s.point.y() << ',' << s.point.z() << '\n';
}

}  // namespace mrguide
