#include <gtest/gtest.h>

#include <chrono>
#include <random>
#include <sstream>

#include <json.hpp>

#include "mrguide/motion_planner.hpp"

using namespace mrguide;

namespace {

CarriagePose random_feasible(std::mt19937_64& rng, const RobotParams& p) {
  std::uniform_real_distribution<double> ux(p.x_min_mm, p.x_max_mm()), uy(p.y_min_mm, p.y_max_mm());
  while (true) {
    CarriagePose c{ux(rng), uy(rng), ux(rng), uy(rng)};
    if (check_pose(c, p, 0.0).feasible()) return c;
  }
}

}  // namespace

TEST(PlanStep, HandExecutedSequence) {
  // Errors (12, 0, 3, 0) with ideal execution. Every iteration serves one
  // class; the y class has nothing to do and yields zero-length steps.
  PlanState s;
  s.errors = {12, 0, 3, 0};
  std::vector<std::pair<int, double>> seen;
  while (auto step = plan_step(s)) {
    seen.emplace_back(axis_number(step->axis), step->delta_mm);
    s.errors[axis_index(step->axis)] -= step->delta_mm;
  }
  const std::vector<std::pair<int, double>> expected = {{1, 5}, {4, 0}, {1, 5}, {4, 0}, {3, 3}, {4, 0}, {1, 2}};
  EXPECT_EQ(seen, expected);
  EXPECT_EQ(s.errors, (std::array<double, 4>{0, 0, 0, 0}));
}

TEST(PlanStep, TiesGoToTheLowerCarriage) {
  PlanState s;
  s.errors = {-4, 2, 4, -2};
  auto a = plan_step(s);
  EXPECT_EQ(a->axis, AxisId::LowerX);
  EXPECT_EQ(a->delta_mm, 4.0);
  auto b = plan_step(s);
  EXPECT_EQ(b->axis, AxisId::LowerY);
  EXPECT_EQ(b->delta_mm, -2.0);
}

TEST(PlanStep, DoneWhenWithinTolerance) {
  PlanState s;
  s.errors = {0.2, -0.5, 0.1, 0.0};
  s.tolerances = {0.3, 0.6, 0.3, 0.6};
  EXPECT_FALSE(plan_step(s).has_value());
}

TEST(Guard, TruncatesToTheDiskBoundary) {
  const CarriagePose obs{0, 20, 0, 0};  // offset (0, 20)
  const double limit = 25.0;
  const double allowed = detail::guard_step(obs, AxisId::UpperX, 20.0, limit);
  EXPECT_NEAR(allowed, 15.0, 1e-12);
  EXPECT_NEAR(detail::guard_step(obs, AxisId::LowerX, -20.0, limit), -15.0, 1e-12);
  EXPECT_EQ(detail::guard_step(obs, AxisId::UpperX, 3.0, limit), 3.0);
  // On the boundary, further outward motion is blocked.
  const CarriagePose edge{0, 25, 0, 0};
  EXPECT_EQ(detail::guard_step(edge, AxisId::UpperX, 2.0, limit), 0.0);
  EXPECT_EQ(detail::guard_step(edge, AxisId::UpperY, -2.0, limit), -2.0);
}

TEST(ExecutePlan, IdealAxesReachExactly) {
  const RobotParams p;
  RobotSim sim = make_robot_sim(p, ideal_axis_params(p), CarriagePose{});
  const CarriagePose goal{12.5, -7.25, 3.0, 4.0};
  const MoveResult r = execute_plan(goal, sim);
  EXPECT_TRUE(r.reached);
  for (AxisId a : kAllAxes) EXPECT_NEAR(r.final_pose[a], goal[a], 1e-12);
}

TEST(ExecutePlan, ZeroLengthMove) {
  const RobotParams p;
  RobotSim sim = make_robot_sim(p, default_axis_params(p), CarriagePose{1, 2, 3, 4});
  const MoveResult r = execute_plan(CarriagePose{1, 2, 3, 4}, sim);
  EXPECT_TRUE(r.reached);
  EXPECT_TRUE(r.steps.empty());
  EXPECT_EQ(r.elapsed_sim_time_s, 0.0);
}

TEST(ExecutePlan, RandomPairsSatisfyStrategyProperties) {
  const RobotParams p;
  const auto axes = default_axis_params(p);
  std::mt19937_64 rng(99);
  const auto t0 = std::chrono::steady_clock::now();
  for (int trial = 0; trial < 1000; ++trial) {
    const CarriagePose start = random_feasible(rng, p);
    const CarriagePose goal = random_feasible(rng, p);
    RobotSim sim = make_robot_sim(p, axes, start);
    PlannerOptions opts;
    opts.dt_s = 0.05;
    CarriagePose last = sim.true_pose();
    bool single_axis = true;
    opts.on_tick = [&](const TickEvent& e) {
      const CarriagePose now = e.robot.true_pose();
      for (AxisId a : kAllAxes) {
        if (a != e.axis && now[a] != last[a]) single_axis = false;
      }
      last = now;
    };
    const MoveResult r = execute_plan(goal, sim, opts);
    ASSERT_TRUE(r.reached) << trial;
    ASSERT_TRUE(single_axis) << trial;
    for (AxisId a : kAllAxes) {
      ASSERT_LE(std::abs(sim.observed_pose()[a] - goal[a]), axes[axis_index(a)].stop_threshold_mm + 1e-9);
    }
    int prev_iteration = 0;
    for (const auto& s : r.steps) {
      ASSERT_LE(std::abs(s.delta_mm), kMaxStepMm);
      ASSERT_GT(s.iteration, prev_iteration);
      ASSERT_EQ(s.parity, (s.iteration - 1) % 2);  // strict alternation, counting no-op iterations
      ASSERT_EQ(is_x_axis(s.axis), s.parity == 0);
      ASSERT_LE(s.incline_deg, 30.01);
      prev_iteration = s.iteration;
    }
    ASSERT_LE(r.max_transient_incline_deg, 30.01);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 30.0);
}

TEST(ExecutePlan, GuardPreventsTransientInclineViolation) {
  const RobotParams p;
  // Carriage offset (0, 26) to (26, 0): both inside the 26.385 mm limit, but
  // the literal strategy's first 5 mm x step passes outside it.
  const CarriagePose start{0, 13, 0, -13};
  const CarriagePose goal{13, 0, -13, 0};
  RobotSim literal_sim = make_robot_sim(p, default_axis_params(p), start);
  PlannerOptions literal;
  literal.guard = false;
  const MoveResult lit = execute_plan(goal, literal_sim, literal);
  EXPECT_TRUE(lit.reached);
  EXPECT_GT(lit.max_transient_incline_deg, 30.0);

  RobotSim guarded_sim = make_robot_sim(p, default_axis_params(p), start);
  const MoveResult g = execute_plan(goal, guarded_sim);
  EXPECT_TRUE(g.reached);
  EXPECT_LE(g.max_transient_incline_deg, 30.0);
  bool truncated = false;
  for (const auto& s : g.steps) truncated = truncated || s.truncated;
  EXPECT_TRUE(truncated);
}

TEST(ExecutePlan, WideSwingStaysInsideLimit) {
  const RobotParams p;
  RobotSim sim = make_robot_sim(p, default_axis_params(p), CarriagePose{11, 0, -11, 0});
  const MoveResult r = execute_plan(CarriagePose{-11, 0, 11, 0}, sim);
  EXPECT_TRUE(r.reached);
  EXPECT_LE(r.max_transient_incline_deg, 30.0);
}

TEST(ExecutePlan, DeadbandResidualsDoNotStall) {
  // Near the incline limit the y residuals left inside their deadbands push the
  // last x correction outside the disk; the planner must nudge y to make room.
  const RobotParams p;
  const auto axes = default_axis_params(p);
  RobotSim sim = make_robot_sim(p, axes, CarriagePose{-24.77694291, 8.494467582, -25.97907662, -11.48851223});
  PlannerOptions opts;
  opts.dt_s = 0.05;
  const CarriagePose goal{21.65829621, -0.006026145929, -2.309041805, -10.59148286};
  const MoveResult r = execute_plan(goal, sim, opts);
  EXPECT_TRUE(r.reached);
  for (AxisId a : kAllAxes) {
    EXPECT_LE(std::abs(sim.observed_pose()[a] - goal[a]), axes[axis_index(a)].stop_threshold_mm + 1e-9);
  }
  bool nudged = false;
  for (const auto& s : r.steps) {
    EXPECT_LE(s.incline_deg, 30.01);
    nudged = nudged || (s.truncated && std::abs(s.delta_mm) == axes[axis_index(s.axis)].stop_threshold_mm + 0.01);
  }
  EXPECT_TRUE(nudged);
  EXPECT_LE(r.max_transient_incline_deg, 30.0 + 1e-9);
}

TEST(ExecutePlan, InfeasibleTargetIsRejected) {
  const RobotParams p;
  RobotSim sim = make_robot_sim(p, default_axis_params(p), CarriagePose{});
  try {
    execute_plan(CarriagePose{20, 0, -20, 0}, sim);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InclineExceeded);
  }
}

TEST(ExecutePlan, CancellationStopsAtStepBoundary) {
  const RobotParams p;
  RobotSim sim = make_robot_sim(p, default_axis_params(p), CarriagePose{});
  std::stop_source src;
  PlannerOptions opts;
  opts.stop = src.get_token();
  opts.on_step = [&](const StepRecord&) { src.request_stop(); };
  const MoveResult r = execute_plan(CarriagePose{20, 10, 20, 10}, sim, opts);
  EXPECT_TRUE(r.cancelled);
  EXPECT_FALSE(r.reached);
  EXPECT_EQ(r.steps.size(), 1u);
  for (const auto& s : sim.states) EXPECT_EQ(s.valve, Valve::Off);
}

TEST(ExecutePlan, IterationBudget) {
  const RobotParams p;
  RobotSim sim = make_robot_sim(p, default_axis_params(p), CarriagePose{});
  PlannerOptions opts;
  opts.max_iterations = 2;
  try {
    execute_plan(CarriagePose{20, 10, 20, 10}, sim, opts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Timeout);
  }
}

TEST(StepLog, JsonLines) {
  const RobotParams p;
  RobotSim sim = make_robot_sim(p, ideal_axis_params(p), CarriagePose{});
  const MoveResult r = execute_plan(CarriagePose{7, 0, 0, 0}, sim);
  std::ostringstream out;
  write_step_log_jsonl(out, r.steps);
  std::istringstream in(out.str());
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(in, line)) rows.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(rows.size(), 2u);
  // 5 mm then 2 mm at 0.5 mm/s; step times are resolved to one tick.
  EXPECT_NEAR(rows[0]["t"].get<double>(), 10.0, 0.011);
  EXPECT_NEAR(rows[1]["t"].get<double>(), 14.0, 0.021);
  EXPECT_EQ(rows[0]["axis"], 1);
  EXPECT_EQ(rows[0]["delta_mm"], 5.0);
  EXPECT_EQ(rows[1]["delta_mm"], 2.0);
  EXPECT_NEAR(rows[0]["incline_deg"].get<double>(), rad_to_deg(std::atan2(5.0, 45.7)), 1e-8);
  EXPECT_NEAR(rows[1]["incline_deg"].get<double>(), rad_to_deg(std::atan2(7.0, 45.7)), 1e-8);
}
