#pragma once

// Frame-tagged 3D primitives and least-squares rigid registration between
// the MR scanner frame and the robot frame. All lengths are millimeters.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mrguide/errors.hpp"

namespace mrguide {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

/// Tag naming the coordinate frame a quantity is expressed in.
class FrameId {
 public:
  enum class Kind { Robot, MR, Plane };

  static FrameId robot() { return FrameId(Kind::Robot, 0.0); }
  static FrameId mr() { return FrameId(Kind::MR, 0.0); }
  /// Horizontal target plane at the given z (robot frame), mm.
  static FrameId plane(double z_mm) { return FrameId(Kind::Plane, z_mm); }

  Kind kind() const { return kind_; }
  double plane_z() const { return plane_z_; }

  friend bool operator==(const FrameId& a, const FrameId& b) {
    return a.kind_ == b.kind_ && (a.kind_ != Kind::Plane || a.plane_z_ == b.plane_z_);
  }

  std::string str() const {
    switch (kind_) {
      case Kind::Robot: return "robot";
      case Kind::MR: return "mr";
      case Kind::Plane: {
        std::ostringstream os;
        os << "plane(" << plane_z_ << ")";
        return os.str();
      }
    }
    return "?";
  }

 private:
  FrameId(Kind kind, double z) : kind_(kind), plane_z_(z) {}
  Kind kind_;
  double plane_z_;
};

inline FrameId frame_from_string(const std::string& name) {
  if (name == "robot") return FrameId::robot();
  if (name == "mr" || name == "MR") return FrameId::mr();
  throw Error(ErrorCode::InvalidArgument, "unknown frame '" + name + "'");
}

struct Point3 {
  Vec3 xyz = Vec3::Zero();
  FrameId frame = FrameId::robot();

  Point3() = default;
  Point3(double x, double y, double z, FrameId f = FrameId::robot()) : xyz(x, y, z), frame(f) {}
  Point3(const Vec3& v, FrameId f = FrameId::robot()) : xyz(v), frame(f) {}

  double x() const { return xyz.x(); }
  double y() const { return xyz.y(); }
  double z() const { return xyz.z(); }
};

inline void require_same_frame(const FrameId& a, const FrameId& b, const char* what) {
  if (!(a == b)) {
    throw Error(ErrorCode::FrameMismatch,
                std::string(what) + ": frame " + a.str() + " does not match " + b.str());
  }
}

/// Infinite line with a unit direction. Needle lines are additionally oriented
/// downward (direction.z < 0); see kinematics.hpp.
struct NeedleLine {
  Point3 origin;
  Vec3 direction = Vec3(0, 0, -1);

  FrameId frame() const { return origin.frame; }
  Point3 at(double s) const { return Point3(origin.xyz + s * direction, origin.frame); }
};

/// Proper rigid motion p -> R p + t from one frame to another.
class RigidTransform {
 public:
  static constexpr double kOrthoTol = 1e-9;

  RigidTransform() = default;

  RigidTransform(const Mat3& rotation, const Vec3& translation, FrameId from, FrameId to)
      : rotation_(rotation), translation_(translation), from_(from), to_(to) {
    const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
    const double det = rotation.determinant();
    if (!std::isfinite(ortho) || ortho > kOrthoTol || std::abs(det - 1.0) > kOrthoTol ||
        !translation.allFinite()) {
      throw Error(ErrorCode::InvalidTransform, "rotation is not proper orthogonal");
    }
  }

  static RigidTransform identity(FrameId from = FrameId::robot(), FrameId to = FrameId::robot()) {
    return RigidTransform(Mat3::Identity(), Vec3::Zero(), from, to);
  }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  FrameId from() const { return from_; }
  FrameId to() const { return to_; }

  Point3 apply(const Point3& p) const {
    require_same_frame(p.frame, from_, "apply_transform");
    return Point3(rotation_ * p.xyz + translation_, to_);
  }

  Vec3 apply_direction(const Vec3& v) const { return rotation_ * v; }

  NeedleLine apply(const NeedleLine& line) const {
    return NeedleLine{apply(line.origin), apply_direction(line.direction)};
  }

  /// Returns the transform equivalent to applying `first`, then `*this`.
  RigidTransform after(const RigidTransform& first) const {
    require_same_frame(first.to_, from_, "compose");
    return RigidTransform(rotation_ * first.rotation_, rotation_ * first.translation_ + translation_,
                          first.from_, to_);
  }

  RigidTransform inverse() const {
    const Mat3 rt = rotation_.transpose();
    return RigidTransform(rt, -(rt * translation_), to_, from_);
  }

  Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(rotation_).normalized(); }

 private:
  Mat3 rotation_ = Mat3::Identity();
  Vec3 translation_ = Vec3::Zero();
  FrameId from_ = FrameId::robot();
  FrameId to_ = FrameId::robot();
};

inline Point3 apply_transform(const RigidTransform& t, const Point3& p) { return t.apply(p); }

struct FiducialPair {
  Vec3 mr;
  Vec3 robot;
};

using FiducialSet = std::vector<FiducialPair>;

namespace detail {

// Singular values of the centered n x 3 coordinate matrix, descending.
inline Vec3 spread_singular_values(std::span<const FiducialPair> pairs, bool use_mr) {
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : pairs) centroid += use_mr ? p.mr : p.robot;
  centroid /= static_cast<double>(pairs.size());
  Eigen::MatrixXd centered(pairs.size(), 3);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    centered.row(static_cast<Eigen::Index>(i)) = ((use_mr ? pairs[i].mr : pairs[i].robot) - centroid).transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
  Vec3 sv = Vec3::Zero();
  const auto& s = svd.singularValues();
  for (Eigen::Index i = 0; i < s.size() && i < 3; ++i) sv[i] = s[i];
  return sv;
}

}  // namespace detail

/// Relative collinearity tolerance on the second singular value of the
/// centered fiducial coordinates.
constexpr double kCollinearityTol = 1e-6;

/// Least-squares rigid fit (Kabsch): the proper rotation and translation
/// minimizing sum |R p_mr + t - p_robot|^2. Reflections are excluded by
/// flipping the least significant singular direction.
inline RigidTransform fit_rigid_transform(std::span<const FiducialPair> pairs) {
  if (pairs.size() < 3) {
    throw Error(ErrorCode::InsufficientPairs,
                "registration needs at least 3 fiducial pairs, got " + std::to_string(pairs.size()));
  }
  for (const auto& p : pairs) {
    if (!p.mr.allFinite() || !p.robot.allFinite()) {
      throw Error(ErrorCode::InvalidArgument, "fiducial coordinates must be finite");
    }
  }
  // A planar set has a zero third singular value, so rank >= 2 is what we need.
  for (bool use_mr : {true, false}) {
    const Vec3 sv = detail::spread_singular_values(pairs, use_mr);
    if (sv[0] <= 0.0 || sv[1] <= kCollinearityTol * sv[0]) {
      throw Error(ErrorCode::DegenerateFiducials,
                  std::string(use_mr ? "MR" : "robot") + " fiducials are collinear or coincident");
    }
  }

  Vec3 c_mr = Vec3::Zero();
  Vec3 c_robot = Vec3::Zero();
  for (const auto& p : pairs) {
    c_mr += p.mr;
    c_robot += p.robot;
  }
  c_mr /= static_cast<double>(pairs.size());
  c_robot /= static_cast<double>(pairs.size());

  Mat3 cross = Mat3::Zero();
  for (const auto& p : pairs) cross += (p.mr - c_mr) * (p.robot - c_robot).transpose();

  Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  d(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  Mat3 r = v * d * u.transpose();

  // Re-orthonormalize away accumulated rounding before the strict constructor check.
  Eigen::JacobiSVD<Mat3> polish(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  r = polish.matrixU() * polish.matrixV().transpose();

  const Vec3 t = c_robot - r * c_mr;
  return RigidTransform(r, t, FrameId::mr(), FrameId::robot());
}

/// Root-mean-square fiducial registration error, mm.
inline double rms_residual(const RigidTransform& t, std::span<const FiducialPair> pairs) {
  if (pairs.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : pairs) {
    sum += (t.rotation() * p.mr + t.translation() - p.robot).squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(pairs.size()));
}

inline double max_residual(const RigidTransform& t, std::span<const FiducialPair> pairs) {
  double worst = 0.0;
  for (const auto& p : pairs) {
    worst = std::max(worst, (t.rotation() * p.mr + t.translation() - p.robot).norm());
  }
  return worst;
}

constexpr double kParallelTol = 1e-12;

inline double point_to_plane_distance(const Point3& p, double plane_z) { return std::abs(p.z() - plane_z); }

/// Intersection of a line with the horizontal plane z = plane_z.
inline Point3 line_plane_intersection(const NeedleLine& line, double plane_z) {
  const double dz = line.direction.z();
  if (std::abs(dz) < kParallelTol) {
    throw Error(ErrorCode::ParallelToPlane, "line is parallel to the plane z = " + std::to_string(plane_z));
  }
  const double s = (plane_z - line.origin.z()) / dz;
  Point3 hit = line.at(s);
  hit.xyz.z() = plane_z;
  return hit;
}

/// Angle between two directions in degrees. Same value as acos of the
/// clamped dot product, but keeps full precision for nearly parallel vectors.
inline double angle_between_deg(const Vec3& a, const Vec3& b) {
  const Vec3 ua = a.normalized();
  const Vec3 ub = b.normalized();
  return rad_to_deg(std::atan2(ua.cross(ub).norm(), ua.dot(ub)));
}

}  // namespace mrguide
