#include <gtest/gtest.h>

#include "mrguide/config.hpp"
#include "mrguide/eval_harness.hpp"
#include "oracles.hpp"

using namespace mrguide;

TEST(TargetGrid, DefaultLayoutHas234FeasiblePoses) {
  const RobotParams p;
  const TargetGridSpec spec;
  const auto poses = generate_target_grid(spec, p);
  ASSERT_EQ(poses.size(), 234u);
  EXPECT_EQ(spec.trial_count(), 234);
  double lo = 90, hi = 0;
  for (const auto& c : poses) {
    const PoseCheck chk = check_pose(c, p, 1e-9);
    EXPECT_TRUE(chk.feasible());
    lo = std::min(lo, chk.incline_deg);
    hi = std::max(hi, chk.incline_deg);
  }
  EXPECT_EQ(lo, 0.0);     // the center of every lower grid is vertical
  EXPECT_GT(hi, 20.0);    // and the layout spans a useful range of inclines
  EXPECT_LE(hi, 30.0);
}

TEST(TargetGrid, SingleCenteredPose) {
  const RobotParams p;
  TargetGridSpec spec;
  spec.upper_cols = spec.upper_rows = 1;
  spec.lower_cols = spec.lower_rows = 1;
  const auto poses = generate_target_grid(spec, p);
  ASSERT_EQ(poses.size(), 1u);
  EXPECT_EQ(poses[0], (CarriagePose{0, 0, 0, 0}));
  EXPECT_EQ(incline_angle_deg(poses[0], p), 0.0);
}

TEST(TargetGrid, FixedPitchThatCannotFitIsInfeasible) {
  const RobotParams p;
  TargetGridSpec spec;
  spec.adaptive_pitch = false;
  try {
    generate_target_grid(spec, p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InfeasibleSpec);
  }
}

TEST(Metrics, PositionErrorRequiresSamePlane) {
  EXPECT_DOUBLE_EQ(position_error(Point3(0, 0, -10), Point3(3, 4, -10)), 5.0);
  try {
    position_error(Point3(0, 0, -10), Point3(0, 0, -11));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PlaneMismatch);
  }
}

TEST(Metrics, OrientationErrorMatchesAcos) {
  const NeedleLine a{Point3(0, 0, 0), Vec3(0, 0, -1)};
  const NeedleLine b{Point3(1, 1, 0), Vec3(std::sin(0.1), 0, -std::cos(0.1))};
  EXPECT_NEAR(orientation_error(a, b), rad_to_deg(0.1), 1e-12);
}

TEST(Bins, SevenEqualWidthBinsOverObservedRange) {
  std::vector<EvalRecord> recs;
  for (int i = 0; i <= 14; ++i) {
    EvalRecord r;
    r.incline_deg = 2.0 + i;  // 2..16
    r.position_error_mm = i;
    r.orientation_error_deg = 1.0;
    recs.push_back(r);
  }
  EvalRecord failed;
  failed.status = "Stalled";
  failed.incline_deg = 100.0;
  recs.push_back(failed);
  const auto bins = bin_by_incline(recs);
  ASSERT_EQ(bins.size(), 7u);
  EXPECT_EQ(bins.front().lo_deg, 2.0);
  EXPECT_EQ(bins.back().hi_deg, 16.0);
  int n = 0;
  for (const auto& b : bins) {
    EXPECT_NEAR(b.hi_deg - b.lo_deg, 2.0, 1e-12);
    n += b.position_mm.count;
  }
  EXPECT_EQ(n, 15);
  EXPECT_EQ(bins.back().position_mm.count, 3);  // 14, 15 and the closed right edge 16
}

TEST(Summaries, MeanAndSampleSd) {
  const Stat s = summarize({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.sd, std::sqrt(5.0 / 3.0), 1e-12);
  EXPECT_TRUE(std::isnan(summarize({}).mean));
}

TEST(Experiment, ZeroNoiseIsExact) {
  const RobotParams p;
  ExperimentSpec spec = ExperimentSpec::free_space(0);
  spec.model = ErrorModel::perfect();
  spec.ideal_axes = true;
  const EvalReport r = run_experiment(spec, p, default_axis_params(p));
  ASSERT_EQ(r.records.size(), 234u);
  EXPECT_EQ(r.failed_trials, 0);
  for (const auto& rec : r.records) {
    ASSERT_LT(rec.position_error_mm, 1e-9);
    ASSERT_LT(rec.orientation_error_deg, 1e-9);
  }
  EXPECT_NEAR(r.plane_z_mm, p.z_lower_mm - 80.0, 1e-12);
}

TEST(Experiment, TargetsComeFromTheIndependentLineOracle) {
  const RobotParams p;
  ExperimentSpec spec = ExperimentSpec::free_space(0);
  spec.model = ErrorModel::perfect();
  spec.ideal_axes = true;
  const EvalReport r = run_experiment(spec, p, default_axis_params(p));
  for (const auto& rec : r.records) {
    const oracle::V3 u(rec.commanded.upper_x, rec.commanded.upper_y, p.z_upper_mm);
    const oracle::V3 l(rec.commanded.lower_x, rec.commanded.lower_y, p.z_lower_mm);
    const oracle::V3 t = oracle::line_at_z(u, l, r.plane_z_mm);
    ASSERT_LT((t - rec.target).norm(), 1e-9);
  }
}

TEST(Experiment, BearingHeightErrorGrowsWithIncline) {
  const RobotParams p;
  ExperimentSpec spec = ExperimentSpec::free_space(0);
  spec.model = ErrorModel::perfect();
  spec.model.lower_bearing_offset_mm = 2.0;
  spec.ideal_axes = true;
  const EvalReport r = run_experiment(spec, p, default_axis_params(p));
  for (const auto& rec : r.records) {
    // The measured line pivots about the upper bearing; the error at the plane
    // scales with the carriage offset.
    const double off = relative_displacement_mm(rec.commanded);
    const double h = p.bearing_spacing_mm();
    const double depth = p.z_upper_mm - r.plane_z_mm;
    const double expected = off * depth / h - off * depth / (h - 2.0);
    ASSERT_NEAR(rec.position_error_mm, std::abs(expected), 1e-9);
  }
  EXPECT_GT(r.bins.back().position_mm.mean, r.bins.front().position_mm.mean);
}

TEST(Experiment, DeterministicAcrossJobs) {
  const RobotParams p;
  const ExperimentSpec spec = ExperimentSpec::free_space(7);
  const auto a = run_experiment(spec, p, default_axis_params(p), 1);
  const auto b = run_experiment(spec, p, default_axis_params(p), 4);
  EXPECT_EQ(report_csv(a), report_csv(b));
  EXPECT_EQ(report_to_json(a).dump(), report_to_json(b).dump());
  const auto c = run_experiment(ExperimentSpec::free_space(8), p, default_axis_params(p), 1);
  EXPECT_NE(report_csv(a), report_csv(c));
}

TEST(Experiment, CalibratedModelLandsInBenchBand) {
  const RobotParams p;
  const auto r = run_experiment(ExperimentSpec::free_space(1), p, default_axis_params(p));
  EXPECT_GE(r.position_mm.mean, 1.3);
  EXPECT_LE(r.position_mm.mean, 3.9);
  EXPECT_GE(r.orientation_deg.mean, 2.7);
  EXPECT_LE(r.orientation_deg.mean, 5.1);
}

TEST(Experiment, PhantomPresetUsesRandomPosesAtRobotDepth) {
  const RobotParams p;
  const auto r = run_experiment(ExperimentSpec::phantom(3), p, default_axis_params(p));
  ASSERT_EQ(r.records.size(), 3u);
  EXPECT_EQ(r.plane_z_mm, -105.0);
  for (const auto& rec : r.records) EXPECT_TRUE(check_pose(rec.commanded, p).feasible());
}

TEST(Experiment, AxisNoiseMatchesConfiguredMeanAbsoluteError) {
  const ErrorModel m = ErrorModel::calibrated();
  // E|N(0, s)| = s * sqrt(2 / pi)
  EXPECT_NEAR(m.axis_noise[0].sigma_mm * std::sqrt(2.0 / M_PI), 0.19, 1e-12);
  EXPECT_NEAR(m.axis_noise[1].sigma_mm * std::sqrt(2.0 / M_PI), 0.17, 1e-12);
  EXPECT_NEAR(m.tracker_sigma_mm * std::sqrt(3.0), 0.5, 1e-12);
}

TEST(Config, RobotConfigRoundTrip) {
  const Json j = Json::parse(R"({"z_u_mm": -36.5, "z_l_mm": -82.2, "travel_x_mm": 55, "travel_y_mm": 30,
                                "max_incline_deg": 30,
                                "axes": {"y": {"stop_threshold_mm": 0.5}, "lower_y": {"speed_neg_mm_s": 1.0}}})");
  const RobotConfig c = robot_config_from_json(j);
  EXPECT_EQ(c.params.x_min_mm, -27.5);
  EXPECT_EQ(c.axes[axis_index(AxisId::UpperY)].stop_threshold_mm, 0.5);
  EXPECT_EQ(c.axes[axis_index(AxisId::LowerY)].stop_threshold_mm, 0.5);
  EXPECT_EQ(c.axes[axis_index(AxisId::LowerY)].speed_neg_mm_s, 1.0);
  EXPECT_NEAR(c.axes[axis_index(AxisId::UpperY)].speed_neg_mm_s, 30.0 / 35.0, 1e-15);
  const RobotConfig back = robot_config_from_json(robot_config_to_json(c));
  EXPECT_EQ(back.params.z_lower_mm, c.params.z_lower_mm);
  EXPECT_EQ(back.axes[3].speed_neg_mm_s, 1.0);
}

TEST(Config, CornerOriginAndValidation) {
  const RobotConfig c = robot_config_from_json(Json::parse(R"({"origin": "corner"})"));
  EXPECT_EQ(c.params.x_min_mm, 0.0);
  EXPECT_EQ(c.axes[0].travel_max_mm, 55.0);
  EXPECT_THROW(robot_config_from_json(Json::parse(R"({"z_u_mm": -90})")), Error);
  EXPECT_THROW(robot_config_from_json(Json::parse(R"({"bogus": 1})")), Error);
  EXPECT_THROW(robot_config_from_json(Json::parse(R"({"axes": {"x": {"speed_pos_mm_s": 9}}})")), Error);
}

TEST(Config, ExperimentSpecOverrides) {
  const Json j = Json::parse(R"({"preset": "default", "depth_mm": 60, "grid": {"upper_cols": 3, "upper_rows": 3},
                                "error_model": {"preset": "calibrated", "tracker_sigma_mm": 0}})");
  const ExperimentSpec s = experiment_spec_from_json(j, 5);
  EXPECT_EQ(s.depth_mm, 60.0);
  EXPECT_EQ(s.grid.upper_cols, 3);
  EXPECT_EQ(s.model.tracker_sigma_mm, 0.0);
  EXPECT_EQ(s.model.seed, 5u);
  EXPECT_GT(s.model.registration.tilt_deg, 0.0);
  EXPECT_THROW(experiment_spec_from_json(Json("nope"), 0), Error);
  EXPECT_TRUE(experiment_spec_from_json(Json("zero_noise"), 0).ideal_axes);
}

TEST(Config, Fiducials) {
  const auto f = fiducials_from_json(Json::parse(R"({"pairs": [{"mr": [0,0,0], "robot": [1,2,3]}]})"));
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].robot, Vec3(1, 2, 3));
  EXPECT_THROW(fiducials_from_json(Json::parse(R"({"pairs": [{"mr": [0,0], "robot": [1,2,3]}]})")), Error);
}
