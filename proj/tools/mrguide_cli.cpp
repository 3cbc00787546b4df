// Command-line driver: kinematics, planning, simulation, workspace analysis,
// targeting experiments and the control service.

#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mrguide/control_service.hpp"
#include "mrguide/mrguide.hpp"

namespace {

using namespace mrguide;

std::vector<double> parse_list(const std::string& text, std::size_t n, const std::string& what) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, what + ": '" + item + "' is not a number");
    }
  }
  if (v.size() != n) {
    throw Error(ErrorCode::InvalidArgument, what + " needs " + std::to_string(n) + " comma-separated values");
  }
  return v;
}

Vec3 parse_point(const std::string& text, const std::string& what) {
  const auto v = parse_list(text, 3, what);
  return {v[0], v[1], v[2]};
}

CarriagePose parse_pose(const std::string& text, const std::string& what) {
  const auto v = parse_list(text, 4, what);
  return {v[0], v[1], v[2], v[3]};
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  out << content;
  if (!out) throw Error(ErrorCode::Io, "write failed: " + path);
}

struct Globals {
  std::string config_path;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  std::string out;
};

RobotConfig load_config(const Globals& g) {
  return g.config_path.empty() ? robot_config_from_json(Json::object()) : load_robot_config(g.config_path);
}

void echo_resolved(const Globals& g, const std::string& command, const RobotConfig& cfg, Json options) {
  Json j{{"command", command},
         {"config_path", g.config_path.empty() ? Json(nullptr) : Json(g.config_path)},
         {"seed", g.seed},
         {"jobs", g.jobs},
         {"out", g.out.empty() ? Json(nullptr) : Json(g.out)},
         {"robot", robot_config_to_json(cfg)},
         {"options", std::move(options)}};
  std::cerr << Json{{"resolved", j}}.dump() << '\n';
}

Json ik_json(const IkSolution& ik, const RobotParams& params) {
  return Json{{"pose", pose_to_json(ik.pose)},
              {"incline_deg", ik.check.incline_deg},
              {"within_travel", ik.check.within_travel},
              {"within_incline", ik.check.within_incline},
              {"feasible", ik.check.feasible()},
              {"upper_bearing", vec3_to_json(ik.pose.upper_bearing(params))},
              {"lower_bearing", vec3_to_json(ik.pose.lower_bearing(params))}};
}

std::atomic<bool> g_interrupted{false};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulation, planning and evaluation tools for a 4-DoF needle-guide robot"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Robot config JSON");
  app.add_option("--seed", g.seed, "Top-level random seed");
  app.add_option("--jobs", g.jobs, "Worker threads for parallel stages")->check(CLI::Range(1u, 256u));
  app.add_option("--out", g.out, "Output path (file or prefix, per subcommand)");

  // ik
  auto* ik = app.add_subcommand("ik", "Carriage pose for an entry/target line");
  std::string ik_entry, ik_target;
  bool ik_report = false;
  ik->add_option("--entry", ik_entry, "Entry point x,y,z (mm, robot frame)")->required();
  ik->add_option("--target", ik_target, "Target point x,y,z (mm, robot frame)")->required();
  ik->add_flag("--report-only", ik_report, "Print feasibility flags instead of failing on limit violations");

  // fk
  auto* fk = app.add_subcommand("fk", "Needle line for a carriage pose");
  std::string fk_pose;
  std::optional<double> fk_plane;
  fk->add_option("--pose", fk_pose, "upper_x,upper_y,lower_x,lower_y (mm)")->required();
  fk->add_option("--plane-z", fk_plane, "Also intersect the line with the plane z = value (mm)");

  // plan / run share their target options
  struct MoveArgs {
    std::string start = "0,0,0,0";
    std::string goal;
    std::string entry, target;
    bool literal = false;
    double dt = 0.01;
  };
  MoveArgs plan_args, run_args;
  auto add_move_options = [](CLI::App* sub, MoveArgs& a) {
    sub->add_option("--start", a.start, "Start pose upper_x,upper_y,lower_x,lower_y")->capture_default_str();
    auto* goal = sub->add_option("--goal", a.goal, "Goal pose upper_x,upper_y,lower_x,lower_y");
    auto* entry = sub->add_option("--entry", a.entry, "Entry point x,y,z (goal from inverse kinematics)");
    auto* target = sub->add_option("--target", a.target, "Target point x,y,z");
    entry->needs(target);
    target->needs(entry);
    goal->excludes(entry);
    goal->excludes(target);
    sub->add_flag("--literal", a.literal, "Disable the incline guard");
    sub->add_option("--dt", a.dt, "Simulation tick (s)")->check(CLI::Range(1e-4, 0.1))->capture_default_str();
  };
  auto* plan = app.add_subcommand("plan", "Sequential-move step log on ideal axes (JSON lines)");
  add_move_options(plan, plan_args);
  auto* run = app.add_subcommand("run", "Execute a move on the simulated axes and write a trajectory CSV");
  add_move_options(run, run_args);
  std::string run_steps;
  run->add_option("--steps", run_steps, "Also write the step log (JSON lines)");

  // workspace
  auto* ws = app.add_subcommand("workspace", "Sample the reachable workspace and write it as CSV");
  double ws_dmin = 0.0, ws_dmax = 150.0, ws_res = 5.0;
  std::string ws_json;
  ws->add_option("--depth-min", ws_dmin, "Shallowest depth below the lower bearing (mm)")->capture_default_str();
  ws->add_option("--depth-max", ws_dmax, "Deepest depth (needle reach, mm)")->capture_default_str();
  ws->add_option("--resolution", ws_res, "Grid resolution (mm)")->capture_default_str();
  ws->add_option("--json", ws_json, "Also write samples with generating poses as JSON");

  // coverage
  auto* cov = app.add_subcommand("coverage", "Fraction of an organ mesh reachable by the needle");
  std::string cov_mesh, cov_save;
  bool cov_liver = false;
  double cov_standoff = 25.0, cov_pitch = 2.0, cov_dmax = 150.0, cov_top = std::numeric_limits<double>::quiet_NaN();
  auto* mesh_opt = cov->add_option("--mesh", cov_mesh, "Closed STL mesh (robot frame, mm)");
  auto* liver_opt = cov->add_flag("--liver", cov_liver, "Use the built-in 1147 ml ellipsoidal liver stand-in");
  mesh_opt->excludes(liver_opt);
  cov->add_option("--standoff", cov_standoff, "Abdominal wall thickness: mesh shift down (mm)")->capture_default_str();
  cov->add_option("--pitch", cov_pitch, "Voxel pitch (mm)")->capture_default_str();
  cov->add_option("--depth-max", cov_dmax, "Needle reach below the lower bearing (mm)")->capture_default_str();
  cov->add_option("--liver-top", cov_top, "Top z of the stand-in before the standoff (default: lower bearing z)");
  cov->add_option("--save-mesh", cov_save, "Write the mesh used (binary STL)");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Run a targeting experiment; writes <out>.csv and <out>.json");
  std::string ev_spec = "default";
  ev->add_option("--spec", ev_spec, "Preset (default, phantom, zero_noise) or experiment JSON file")
      ->capture_default_str();

  // serve
  auto* sv = app.add_subcommand("serve", "Start the HTTP control service");
  std::string sv_host = "127.0.0.1";
  int sv_port = 8080;
  double sv_scale = 10.0;
  sv->add_option("--host", sv_host, "Bind address")->capture_default_str();
  sv->add_option("--port", sv_port, "TCP port (0 picks a free port)")->check(CLI::Range(0, 65535))->capture_default_str();
  sv->add_option("--time-scale", sv_scale, "Simulated seconds per wall second")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << Json{{"error", "InvalidArgument"}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }

  try {
    const RobotConfig cfg = load_config(g);
    const RobotParams& params = cfg.params;

    if (*ik) {
      echo_resolved(g, "ik", cfg, Json{{"entry", ik_entry}, {"target", ik_target}, {"report_only", ik_report}});
      const TargetPlan tp{Point3(parse_point(ik_entry, "--entry")), Point3(parse_point(ik_target, "--target"))};
      const IkSolution sol = inverse_kinematics(tp, params);
      if (!ik_report) require_feasible(sol.pose, params);
      std::cout << ik_json(sol, params).dump(2) << '\n';
      return 0;
    }

    if (*fk) {
      echo_resolved(g, "fk", cfg, Json{{"pose", fk_pose}, {"plane_z", fk_plane ? Json(*fk_plane) : Json(nullptr)}});
      const CarriagePose pose = parse_pose(fk_pose, "--pose");
      const NeedleLine line = forward_kinematics(pose, params);
      const PoseCheck chk = check_pose(pose, params);
      Json out{{"line", line_to_json(line)},
               {"incline_deg", chk.incline_deg},
               {"within_travel", chk.within_travel},
               {"within_incline", chk.within_incline}};
      if (fk_plane) out["intersection"] = vec3_to_json(project_to_plane(line, *fk_plane).xyz);
      std::cout << out.dump(2) << '\n';
      return 0;
    }

    if (*plan || *run) {
      const bool is_run = static_cast<bool>(*run);
      const MoveArgs& a = is_run ? run_args : plan_args;
      if (a.goal.empty() && a.entry.empty()) throw Error(ErrorCode::InvalidArgument, "give --goal or --entry/--target");
      echo_resolved(g, is_run ? "run" : "plan", cfg,
                    Json{{"start", a.start}, {"goal", a.goal}, {"entry", a.entry}, {"target", a.target},
                         {"guard", !a.literal}, {"dt_s", a.dt}});
      const CarriagePose start = parse_pose(a.start, "--start");
      const CarriagePose goal =
          !a.goal.empty() ? parse_pose(a.goal, "--goal")
                          : solve_inverse_kinematics(TargetPlan{Point3(parse_point(a.entry, "--entry")),
                                                                Point3(parse_point(a.target, "--target"))},
                                                     params);
      require_feasible(start, params);
      RobotSim sim = make_robot_sim(params, is_run ? cfg.axes : ideal_axis_params(params), start);
      PlannerOptions opts;
      opts.guard = !a.literal;
      opts.dt_s = a.dt;

      std::ostringstream trajectory;
      trajectory.precision(10);
      if (is_run) {
        trajectory << "t,moving_axis,upper_x,upper_y,lower_x,lower_y,incline_deg\n";
        auto row = [&](double t, int axis, const RobotSim& r) {
          const CarriagePose p = r.true_pose();
          trajectory << t << ',' << axis << ',' << p.upper_x << ',' << p.upper_y << ',' << p.lower_x << ','
                     << p.lower_y << ',' << incline_angle_deg(p, params) << '\n';
        };
        row(0.0, 0, sim);
        opts.on_tick = [row](const TickEvent& e) { row(e.t_s, axis_number(e.axis), e.robot); };
      }
      const MoveResult r = execute_plan(goal, sim, opts);

      if (!is_run) {
        std::ostringstream log;
        write_step_log_jsonl(log, r.steps);
        if (g.out.empty()) std::cout << log.str();
        else write_file(g.out, log.str());
        return 0;
      }
      const std::string path = g.out.empty() ? "trajectory.csv" : g.out;
      write_file(path, trajectory.str());
      if (!run_steps.empty()) {
        std::ostringstream log;
        write_step_log_jsonl(log, r.steps);
        write_file(run_steps, log.str());
      }
      std::cout << Json{{"reached", r.reached},
                        {"steps", r.steps.size()},
                        {"iterations", r.iterations},
                        {"elapsed_sim_time_s", r.elapsed_sim_time_s},
                        {"max_transient_incline_deg", r.max_transient_incline_deg},
                        {"goal", pose_to_json(goal)},
                        {"final_pose", pose_to_json(r.final_pose)},
                        {"trajectory_csv", path}}
                       .dump(2)
                << '\n';
      return 0;
    }

    if (*ws) {
      echo_resolved(g, "workspace", cfg,
                    Json{{"depth_min_mm", ws_dmin}, {"depth_max_mm", ws_dmax}, {"resolution_mm", ws_res}});
      const WorkspaceCloud cloud = sample_workspace(params, DepthRange{ws_dmin, ws_dmax}, ws_res, g.jobs);
      const std::string path = g.out.empty() ? "workspace.csv" : g.out;
      write_cloud_csv(cloud, path);
      if (!ws_json.empty()) {
        Json samples = Json::array();
        for (const auto& s : cloud.samples) {
          samples.push_back(Json{{"point", vec3_to_json(s.point)}, {"depth_mm", s.depth_mm}, {"pose", pose_to_json(s.pose)}});
        }
        write_file(ws_json, Json{{"resolution_mm", ws_res}, {"samples", samples}}.dump());
      }
      std::cout << Json{{"samples", cloud.samples.size()}, {"csv", path},
                        {"half_extent_x_at_max_depth_mm", frustum_half_extent_x(params, ws_dmax)}}
                       .dump(2)
                << '\n';
      return 0;
    }

    if (*cov) {
      if (cov_mesh.empty() && !cov_liver) throw Error(ErrorCode::InvalidArgument, "give --mesh or --liver");
      const double top = std::isnan(cov_top) ? params.z_lower_mm : cov_top;
      echo_resolved(g, "coverage", cfg,
                    Json{{"mesh", cov_liver ? Json("liver-standin") : Json(cov_mesh)},
                         {"standoff_mm", cov_standoff},
                         {"pitch_mm", cov_pitch},
                         {"depth_max_mm", cov_dmax},
                         {"liver_top_z_mm", cov_liver ? Json(top) : Json(nullptr)}});
      const TriMesh mesh = cov_liver ? make_liver_standin(top) : read_stl(cov_mesh);
      if (!cov_save.empty()) write_stl_binary(mesh, cov_save);
      const WorkspaceCloud cloud = sample_workspace(params, DepthRange{0.0, cov_dmax}, 5.0, g.jobs);
      const CoverageResult r = coverage_ratio(cloud, mesh, cov_standoff, cov_pitch, g.jobs);
      const Json out{{"ratio", r.ratio},
                     {"pitch_mm", r.pitch_mm},
                     {"organ_voxels", r.organ_voxels},
                     {"reachable_voxels", r.reachable_voxels},
                     {"organ_volume_ml", std::abs(signed_volume(mesh)) / 1000.0}};
      if (!g.out.empty()) write_file(g.out, out.dump(2) + "\n");
      std::cout << out.dump(2) << '\n';
      return 0;
    }

    if (*ev) {
      const bool is_file = ev_spec.find(".json") != std::string::npos;
      const Json spec_json = is_file ? read_json_file(ev_spec) : Json(ev_spec);
      const ExperimentSpec spec = experiment_spec_from_json(spec_json, g.seed);
      echo_resolved(g, "evaluate", cfg, Json{{"spec", ev_spec}, {"experiment", spec.name}});
      const EvalReport report = run_experiment(spec, params, cfg.axes, g.jobs);
      const std::string prefix = g.out.empty() ? "report" : g.out;
      write_file(prefix + ".csv", report_csv(report));
      const Json summary = report_to_json(report);
      write_file(prefix + ".json", summary.dump(2) + "\n");
      std::cout << summary.dump(2) << '\n';
      return 0;
    }

    if (*sv) {
      ServiceOptions so;
      so.time_scale = sv_scale;
      so.seed = g.seed;
      echo_resolved(g, "serve", cfg, Json{{"host", sv_host}, {"port", sv_port}, {"time_scale", sv_scale}});
      ControlService service(cfg, so);
      httplib::Server server;
      service.mount(server);
      int port = sv_port;
      if (port == 0) {
        port = server.bind_to_any_port(sv_host);
      } else if (!server.bind_to_port(sv_host, port)) {
        throw Error(ErrorCode::Io, "cannot bind " + sv_host + ":" + std::to_string(port));
      }
      if (port < 0) throw Error(ErrorCode::Io, "cannot bind " + sv_host);
      std::cout << Json{{"listening", sv_host + ":" + std::to_string(port)}}.dump() << std::endl;
      static httplib::Server* active = &server;
      std::signal(SIGINT, [](int) { g_interrupted = true; active->stop(); });
      std::signal(SIGTERM, [](int) { g_interrupted = true; active->stop(); });
      server.listen_after_bind();
      service.shutdown();
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << Json{{"error", to_string(e.code())}, {"message", e.what()}}.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << Json{{"error", "Internal"}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }
  return 0;
}
