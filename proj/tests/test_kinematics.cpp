#include <gtest/gtest.h>

#include <random>

#include "mrguide/kinematics.hpp"
#include "oracles.hpp"

using namespace mrguide;

namespace {

// Random feasible pose and an entry/target pair on its needle line, built
// directly from the bearing geometry.
struct Case {
  CarriagePose pose;
  Vec3 entry, target;
};

Case random_case(std::mt19937_64& rng, const RobotParams& p) {
  std::uniform_real_distribution<double> ux(p.x_min_mm, p.x_max_mm()), uy(p.y_min_mm, p.y_max_mm());
  std::uniform_real_distribution<double> ze(-30.0, 40.0), zt(-250.0, -90.0);
  CarriagePose pose;
  do {
    pose = {ux(rng), uy(rng), ux(rng), uy(rng)};
  } while (std::hypot(pose.upper_x - pose.lower_x, pose.upper_y - pose.lower_y) >
           p.max_relative_displacement_mm() * 0.999);
  const Vec3 u(pose.upper_x, pose.upper_y, p.z_upper_mm);
  const Vec3 l(pose.lower_x, pose.lower_y, p.z_lower_mm);
  return {pose, oracle::line_at_z(u, l, ze(rng)), oracle::line_at_z(u, l, zt(rng))};
}

}  // namespace

TEST(InverseKinematics, WorkedExample) {
  const RobotParams p;
  const auto sol = solve_inverse_kinematics({Point3(20, 10, 0), Point3(-20, -10, -100)}, p);
  const auto ref = oracle::ik({20, 10, 0}, {-20, -10, -100}, p.z_upper_mm, p.z_lower_mm);
  EXPECT_NEAR(sol.upper_x, 5.4, 1e-9);
  EXPECT_NEAR(sol.upper_y, 2.7, 1e-9);
  EXPECT_NEAR(sol.lower_x, -12.88, 1e-9);
  EXPECT_NEAR(sol.lower_y, -6.44, 1e-9);
  EXPECT_NEAR(sol.upper_x, ref[0], 1e-12);
  EXPECT_NEAR(sol.lower_y, ref[3], 1e-12);
}

TEST(InverseKinematics, VerticalLine) {
  const RobotParams p;
  const auto sol = solve_inverse_kinematics({Point3(10, 5, 0), Point3(10, 5, -120)}, p);
  EXPECT_EQ(sol, (CarriagePose{10, 5, 10, 5}));
  EXPECT_EQ(incline_angle_deg(sol, p), 0.0);
}

TEST(InverseKinematics, MatchesOracleAndRoundTripsThroughForwardKinematics) {
  const RobotParams p;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10000; ++i) {
    const Case c = random_case(rng, p);
    const IkSolution sol = inverse_kinematics({Point3(c.entry), Point3(c.target)}, p);
    const auto ref = oracle::ik(c.entry, c.target, p.z_upper_mm, p.z_lower_mm);
    ASSERT_NEAR(sol.pose.upper_x, ref[0], 1e-9);
    ASSERT_NEAR(sol.pose.upper_y, ref[1], 1e-9);
    ASSERT_NEAR(sol.pose.lower_x, ref[2], 1e-9);
    ASSERT_NEAR(sol.pose.lower_y, ref[3], 1e-9);
    ASSERT_TRUE(sol.check.feasible());

    const NeedleLine line = forward_kinematics(sol.pose, p);
    const Vec3 a = line.origin.xyz, b = line.at(1.0).xyz;
    ASSERT_LT(oracle::point_line_distance(c.entry, a, b), 1e-9);
    ASSERT_LT(oracle::point_line_distance(c.target, a, b), 1e-9);
    ASSERT_LT(line.direction.z(), 0.0);
  }
}

TEST(InverseKinematics, DegeneratePlans) {
  const RobotParams p;
  for (auto [e, t] : {std::pair{Point3(0, 0, -50), Point3(5, 0, -50)}, std::pair{Point3(0, 0, -100), Point3(0, 0, 0)}}) {
    try {
      inverse_kinematics({e, t}, p);
      FAIL();
    } catch (const Error& err) {
      EXPECT_EQ(err.code(), ErrorCode::DegeneratePlan);
    }
  }
}

TEST(InverseKinematics, LimitViolationsAreFlaggedThenRejected) {
  const RobotParams p;
  // Steep line: 40 mm lateral over 45.7 mm of bearing spacing.
  const TargetPlan steep{Point3(20, 0, p.z_upper_mm), Point3(-20, 0, p.z_lower_mm)};
  const IkSolution s = inverse_kinematics(steep, p);
  EXPECT_TRUE(s.check.within_travel);
  EXPECT_FALSE(s.check.within_incline);
  EXPECT_NEAR(s.check.incline_deg, rad_to_deg(std::atan2(40.0, 45.7)), 1e-12);
  try {
    solve_inverse_kinematics(steep, p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InclineExceeded);
  }

  const TargetPlan wide{Point3(40, 0, 0), Point3(40, 0, -100)};
  EXPECT_FALSE(inverse_kinematics(wide, p).check.within_travel);
  try {
    solve_inverse_kinematics(wide, p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutOfTravel);
  }
}

TEST(InverseKinematics, BoundaryWithinSlackIsAccepted) {
  const RobotParams p;
  const double x = p.x_max_mm() + 0.5e-6;
  EXPECT_NO_THROW(solve_inverse_kinematics({Point3(x, 0, 0), Point3(x, 0, -100)}, p));
  const double x2 = p.x_max_mm() + 2e-6;
  EXPECT_THROW(solve_inverse_kinematics({Point3(x2, 0, 0), Point3(x2, 0, -100)}, p), Error);
}

TEST(InverseKinematics, RejectsNonRobotFrame) {
  const RobotParams p;
  EXPECT_THROW(inverse_kinematics({Point3(0, 0, 0, FrameId::mr()), Point3(0, 0, -100, FrameId::mr())}, p), Error);
}

TEST(Incline, SymmetricInCarriageLabels) {
  const RobotParams p;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-15.0, 15.0);
  for (int i = 0; i < 1000; ++i) {
    const CarriagePose a{u(rng), u(rng), u(rng), u(rng)};
    const CarriagePose b{a.lower_x, a.lower_y, a.upper_x, a.upper_y};
    EXPECT_DOUBLE_EQ(incline_angle_deg(a, p), incline_angle_deg(b, p));
    const Vec3 d = a.lower_bearing(p) - a.upper_bearing(p);
    EXPECT_NEAR(incline_angle_deg(a, p), std::acos(-d.z() / d.norm()) * 180.0 / M_PI, 1e-9);
  }
}

TEST(Incline, LimitMatchesRelativeDisplacement) {
  const RobotParams p;
  const double rho = p.max_relative_displacement_mm();
  EXPECT_NEAR(rho, 45.7 * std::tan(M_PI / 6), 1e-12);
  EXPECT_NEAR(incline_angle_deg(CarriagePose{rho, 0, 0, 0}, p), 30.0, 1e-12);
}

TEST(ForwardKinematics, WorstCaseDeviationBound) {
  const RobotParams p;
  // Upper carriage off by (+0.5, +0.5), lower by (-0.5, -0.5), from a vertical guide.
  const CarriagePose dev{0.5, 0.5, -0.5, -0.5};
  const double plane = p.z_lower_mm - 100.0;
  const Point3 hit = project_to_plane(forward_kinematics(dev, p), plane);
  const double tip = std::hypot(hit.x(), hit.y());
  const double ang = angle_between_deg(forward_kinematics(dev, p).direction, Vec3(0, 0, -1));
  const auto ref = oracle::deviation_bound({0.5, 0.5, 0}, {-0.5, -0.5, 0}, p.z_upper_mm, p.z_lower_mm, 100.0);
  EXPECT_NEAR(tip, ref.tip_mm, 1e-9);
  EXPECT_NEAR(ang, ref.angle_deg, 1e-9);
  EXPECT_NEAR(tip, 3.80, 0.02);
  EXPECT_NEAR(ang, 1.772, 0.005);
}

TEST(ForwardKinematics, ProjectionRejectsOtherFrames) {
  const NeedleLine mr_line{Point3(0, 0, 0, FrameId::mr()), Vec3(0, 0, -1)};
  EXPECT_THROW(project_to_plane(mr_line, -100), Error);
}

TEST(RobotParamsTest, Validation) {
  RobotParams p;
  p.z_upper_mm = -90;
  EXPECT_THROW(p.validate(), Error);
  p = RobotParams{};
  p.max_incline_deg = 90;
  EXPECT_THROW(p.validate(), Error);
  p = RobotParams{};
  p.travel_x_mm = 0;
  EXPECT_THROW(p.validate(), Error);
}
