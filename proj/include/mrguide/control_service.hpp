#pragma once

// HTTP control service around one simulated robot session.
//
//   POST /registration  fiducial pairs -> MR-to-robot transform + residual
//   POST /plan          entry/target -> carriage pose, path polyline, flags
//   POST /execute       {"plan_id"} or {"pose"} -> runs the sequential planner
//   POST /abort         cooperative stop at the next step boundary
//   GET  /state         session snapshot
//   GET  /events        server-sent events; ?since=N replays events after seq N
//
// Session mutations happen under one mutex. The executor runs the planner on a
// private copy of the axes and publishes snapshots on every tick; a separate
// publisher turns the latest snapshot into telemetry events at a fixed rate.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include "mrguide/config.hpp"
#include "mrguide/geometry.hpp"
#include "mrguide/kinematics.hpp"
#include "mrguide/motion_planner.hpp"

// After Eigen: <resolv.h>, pulled in by httplib, defines a `_res` macro.
#include <httplib.h>

namespace mrguide {

/// Ordered event log with gapless sequence numbers and a bounded replay window.
class EventBus {
 public:
  explicit EventBus(std::size_t capacity = 4096) : capacity_(capacity) {}

  /// Stamps `event` with the next sequence number and stores it.
  std::uint64_t publish(Json event) {
    std::uint64_t seq;
    {
      std::lock_guard lock(mu_);
      seq = ++last_seq_;
      event["seq"] = seq;
      log_.push_back(std::move(event));
      while (log_.size() > capacity_) log_.pop_front();
    }
    cv_.notify_all();
    return seq;
  }

  /// Events with seq > since; waits up to `timeout` for the first one.
  std::vector<Json> since(std::uint64_t since, std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return last_seq_ > since || closed_; });
    std::vector<Json> out;
    for (const auto& e : log_) {
      if (e["seq"].get<std::uint64_t>() > since) out.push_back(e);
    }
    return out;
  }

  std::uint64_t last_seq() const {
    std::lock_guard lock(mu_);
    return last_seq_;
  }

  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  bool closed() const {
    std::lock_guard lock(mu_);
    return closed_;
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Json> log_;
  std::size_t capacity_;
  std::uint64_t last_seq_ = 0;
  bool closed_ = false;
};

struct ServiceOptions {
  /// Simulated seconds per wall second.
  double time_scale = 10.0;
  double telemetry_hz = 10.0;
  double dt_s = 0.01;
  bool guard = true;
  std::uint64_t seed = 0;
};

struct StoredPlan {
  std::string id;
  Vec3 entry_robot;
  Vec3 target_robot;
  CarriagePose pose;
};

class ControlService {
 public:
  ControlService(RobotConfig config, ServiceOptions options)
      : config_(std::move(config)), options_(options),
        robot_(make_robot_sim(config_.params, config_.axes, CarriagePose{})) {
    if (!(options_.time_scale > 0.0)) throw Error(ErrorCode::InvalidConfig, "time scale must be positive");
    if (!(options_.telemetry_hz > 0.0)) throw Error(ErrorCode::InvalidConfig, "telemetry rate must be positive");
    telemetry_ = std::jthread([this](std::stop_token st) { telemetry_loop(st); });
  }

  ~ControlService() { shutdown(); }

  ControlService(const ControlService&) = delete;
  ControlService& operator=(const ControlService&) = delete;

  void shutdown() {
    {
      std::lock_guard lock(mu_);
      if (executor_.joinable()) executor_.request_stop();
    }
    if (executor_.joinable()) executor_.join();
    telemetry_.request_stop();
    if (telemetry_.joinable()) telemetry_.join();
    bus_.close();
  }

  EventBus& events() { return bus_; }
  const RobotConfig& config() const { return config_; }

  // Each handler returns (HTTP status, JSON body).
  struct Reply {
    int status = 200;
    Json body;
  };

  static Reply error_reply(int status, ErrorCode code, const std::string& message, Json extra = Json::object()) {
    extra["error"] = to_string(code);
    extra["message"] = message;
    return {status, extra};
  }

  static int status_for(ErrorCode code) {
    switch (code) {
      case ErrorCode::NoRegistration:
      case ErrorCode::PlanActive: return 409;
      case ErrorCode::UnknownPlan: return 404;
      case ErrorCode::InvalidArgument:
      case ErrorCode::FrameMismatch: return 400;
      default: return 422;
    }
  }

  Reply post_registration(const Json& body) {
    const FiducialSet pairs = fiducials_from_json(body);
    const RigidTransform t = fit_rigid_transform(pairs);
    Json out = transform_to_json(t);
    out["rms_residual_mm"] = rms_residual(t, pairs);
    out["max_residual_mm"] = max_residual(t, pairs);
    out["pairs"] = pairs.size();
    {
      std::lock_guard lock(mu_);
      registration_ = t;
      registration_summary_ = out;
    }
    bus_.publish(Json{{"type", "registration"}, {"t", sim_time()}, {"rms_residual_mm", out["rms_residual_mm"]}});
    return {200, out};
  }

  Reply post_plan(const Json& body) {
    if (!body.is_object() || !body.contains("entry") || !body.contains("target")) {
      throw Error(ErrorCode::InvalidArgument, "plan request needs 'entry' and 'target'");
    }
    const std::string frame = body.value("frame", std::string("robot"));
    Vec3 entry = vec3_from_json(body.at("entry"), "entry");
    Vec3 target = vec3_from_json(body.at("target"), "target");
    if (frame == "mr") {
      std::optional<RigidTransform> reg;
      {
        std::lock_guard lock(mu_);
        reg = registration_;
      }
      if (!reg) throw Error(ErrorCode::NoRegistration, "MR-frame plan requires a registration");
      entry = reg->rotation() * entry + reg->translation();
      target = reg->rotation() * target + reg->translation();
    } else if (frame != "robot") {
      throw Error(ErrorCode::InvalidArgument, "frame must be 'robot' or 'mr'");
    }

    const IkSolution ik = inverse_kinematics(TargetPlan{Point3(entry), Point3(target)}, config_.params);
    const CarriagePose& p = ik.pose;
    Json path = Json::array({vec3_to_json(entry), vec3_to_json(p.upper_bearing(config_.params)),
                             vec3_to_json(p.lower_bearing(config_.params)), vec3_to_json(target)});
    Json out{{"pose", pose_to_json(p)},
             {"incline_deg", ik.check.incline_deg},
             {"within_travel", ik.check.within_travel},
             {"within_incline", ik.check.within_incline},
             {"feasible", ik.check.feasible()},
             {"path", path},
             {"entry_robot", vec3_to_json(entry)},
             {"target_robot", vec3_to_json(target)}};
    if (!ik.check.within_travel) {
      out["travel_excess_mm"] = ik.check.travel_excess_mm;
      out["axis"] = axis_name(ik.check.worst_axis);
      return error_reply(422, ErrorCode::OutOfTravel, "carriage pose leaves the travel rectangle", out);
    }
    if (!ik.check.within_incline) {
      return error_reply(422, ErrorCode::InclineExceeded, "incline exceeds the bearing limit", out);
    }
    std::lock_guard lock(mu_);
    const std::string id = "plan-" + std::to_string(++plan_counter_);
    plans_[id] = StoredPlan{id, entry, target, p};
    out["plan_id"] = id;
    return {200, out};
  }

  Reply post_execute(const Json& body) {
    CarriagePose target;
    std::string plan_id;
    if (body.is_object() && body.contains("plan_id")) {
      plan_id = body.at("plan_id").get<std::string>();
      std::lock_guard lock(mu_);
      auto it = plans_.find(plan_id);
      if (it == plans_.end()) throw Error(ErrorCode::UnknownPlan, "no plan '" + plan_id + "'");
      target = it->second.pose;
    } else if (body.is_object() && body.contains("pose")) {
      target = pose_from_json(body.at("pose"));
      plan_id = "pose";
    } else {
      throw Error(ErrorCode::InvalidArgument, "execute needs 'plan_id' or 'pose'");
    }
    require_feasible(target, config_.params);

    std::lock_guard lock(mu_);
    if (active_) throw Error(ErrorCode::PlanActive, "a plan is already executing");
    if (executor_.joinable()) executor_.join();  // previous run already finished
    active_ = true;
    const std::string exec_id = "exec-" + std::to_string(++exec_counter_);
    active_plan_ = plan_id;
    active_exec_ = exec_id;
    steps_done_ = 0;
    executor_ = std::jthread([this, target, exec_id](std::stop_token st) { run_execution(st, target, exec_id); });
    return {202, Json{{"execution_id", exec_id}, {"plan_id", plan_id}, {"target", pose_to_json(target)}}};
  }

  Reply post_abort() {
    bool was_active;
    {
      std::lock_guard lock(mu_);
      was_active = active_;
      if (active_) executor_.request_stop();
    }
    return {200, Json{{"aborted", was_active}}};
  }

  Reply get_state() {
    std::lock_guard lock(mu_);
    return {200, snapshot_locked()};
  }

  /// Blocks until the active execution (if any) finishes. Test helper.
  bool wait_idle(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < deadline) {
      {
        std::lock_guard lock(mu_);
        if (!active_) return true;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    return false;
  }

  void mount(httplib::Server& server) {
    auto wrap = [this](auto handler) {
      return [this, handler](const httplib::Request& req, httplib::Response& res) {
        Reply r;
        try {
          Json body = req.body.empty() ? Json::object() : Json::parse(req.body);
          r = handler(body);
        } catch (const Json::exception& e) {
          r = error_reply(400, ErrorCode::InvalidArgument, e.what());
        } catch (const Error& e) {
          r = error_reply(status_for(e.code()), e.code(), e.what());
        }
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
      };
    };
    server.Post("/registration", wrap([this](const Json& b) { return post_registration(b); }));
    server.Post("/plan", wrap([this](const Json& b) { return post_plan(b); }));
    server.Post("/execute", wrap([this](const Json& b) { return post_execute(b); }));
    server.Post("/abort", wrap([this](const Json&) { return post_abort(); }));
    server.Get("/state", wrap([this](const Json&) { return get_state(); }));
    server.Get("/events", [this](const httplib::Request& req, httplib::Response& res) {
      auto cursor = std::make_shared<std::uint64_t>(0);
      if (req.has_param("since")) {
        try {
          *cursor = std::stoull(req.get_param_value("since"));
        } catch (const std::exception&) {
          res.status = 400;
          res.set_content(error_reply(400, ErrorCode::InvalidArgument, "bad 'since'").body.dump(), "application/json");
          return;
        }
      } else {
        *cursor = bus_.last_seq();
      }
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider("text/event-stream", [this, cursor](std::size_t, httplib::DataSink& sink) {
        if (bus_.closed()) {
          sink.done();
          return true;
        }
        const auto batch = bus_.since(*cursor, std::chrono::milliseconds(250));
        std::string chunk;
        for (const auto& e : batch) {
          const auto seq = e["seq"].get<std::uint64_t>();
          chunk += "id: " + std::to_string(seq) + "\ndata: " + e.dump() + "\n\n";
          *cursor = seq;
        }
        if (chunk.empty()) chunk = ": keep-alive\n\n";
        return sink.write(chunk.data(), chunk.size());
      });
    });
  }

 private:
  double sim_time() {
    std::lock_guard lock(mu_);
    return sim_time_;
  }

  Json snapshot_locked() const {
    const CarriagePose pose = robot_.true_pose();
    Json valves = Json::object();
    Json encoders = Json::object();
    for (AxisId a : kAllAxes) {
      valves[axis_name(a)] = valve_name(robot_.states[axis_index(a)].valve);
      encoders[axis_name(a)] = robot_.states[axis_index(a)].encoder_mm;
    }
    return Json{{"t", sim_time_},
                {"pose", pose_to_json(pose)},
                {"encoders", encoders},
                {"valves", valves},
                {"incline_deg", incline_angle_deg(pose, config_.params)},
                {"active", active_},
                {"plan_id", active_ ? Json(active_plan_) : Json(nullptr)},
                {"execution_id", active_exec_.empty() ? Json(nullptr) : Json(active_exec_)},
                {"steps_done", steps_done_},
                {"moving_axis", moving_axis_ ? Json(axis_number(*moving_axis_)) : Json(nullptr)},
                {"registration", registration_summary_},
                {"time_scale", options_.time_scale},
                {"last_result", last_result_}};
  }

  void telemetry_loop(std::stop_token st) {
    const auto period = std::chrono::duration<double>(1.0 / options_.telemetry_hz);
    auto next = std::chrono::steady_clock::now();
    while (!st.stop_requested()) {
      Json ev;
      {
        std::lock_guard lock(mu_);
        ev = snapshot_locked();
      }
      ev.erase("registration");
      ev.erase("last_result");
      ev["type"] = "telemetry";
      bus_.publish(std::move(ev));
      next += std::chrono::duration_cast<std::chrono::steady_clock::duration>(period);
      std::mutex m;
      std::unique_lock lk(m);
      std::condition_variable_any cv;
      cv.wait_until(lk, st, next, [] { return false; });
    }
  }

  void run_execution(std::stop_token st, CarriagePose target, std::string exec_id) {
    RobotSim sim = [&] {
      std::lock_guard lock(mu_);
      return robot_;
    }();
    const double t_start = sim_time();
    const auto wall_start = std::chrono::steady_clock::now();
    bus_.publish(Json{{"type", "execution_started"}, {"execution_id", exec_id}, {"t", t_start},
                      {"target", pose_to_json(target)}});

    PlannerOptions opts;
    opts.guard = options_.guard;
    opts.dt_s = options_.dt_s;
    opts.stop = st;
    opts.on_tick = [&](const TickEvent& ev) {
      {
        std::lock_guard lock(mu_);
        robot_.states = ev.robot.states;
        sim_time_ = ev.t_s;
        moving_axis_ = ev.axis;
      }
      if (st.stop_requested()) return;  // finish the in-flight step without pacing
      const auto due = wall_start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                        std::chrono::duration<double>((ev.t_s - t_start) / options_.time_scale));
      std::this_thread::sleep_until(due);
    };
    opts.on_step = [&](const StepRecord& s) {
      {
        std::lock_guard lock(mu_);
        ++steps_done_;
        moving_axis_.reset();
      }
      bus_.publish(Json{{"type", "step"},
                        {"execution_id", exec_id},
                        {"t", s.t_s},
                        {"iteration", s.iteration},
                        {"axis", axis_number(s.axis)},
                        {"delta_mm", s.delta_mm},
                        {"incline_deg", s.incline_deg},
                        {"truncated", s.truncated}});
    };

    Json result;
    try {
      MoveResult r = execute_plan(target, sim, opts);
      result = Json{{"type", r.cancelled ? "aborted" : "complete"},
                    {"reached", r.reached},
                    {"steps", r.steps.size()},
                    {"elapsed_sim_time_s", r.elapsed_sim_time_s},
                    {"max_transient_incline_deg", r.max_transient_incline_deg},
                    {"final_pose", pose_to_json(r.final_pose)},
                    {"observed_pose", pose_to_json(r.observed_pose)}};
    } catch (const Error& e) {
      result = Json{{"type", "error"}, {"error", to_string(e.code())}, {"message", e.what()}};
    }
    result["execution_id"] = exec_id;
    {
      std::lock_guard lock(mu_);
      robot_.states = sim.states;
      double t = sim_time_;
      for (const auto& s : sim.states) t = std::max(t, s.time_s);
      sim_time_ = t;
      moving_axis_.reset();
      result["t"] = sim_time_;
      last_result_ = result;
      active_ = false;
    }
    bus_.publish(result);
  }

  RobotConfig config_;
  ServiceOptions options_;
  EventBus bus_;

  mutable std::mutex mu_;
  RobotSim robot_;
  double sim_time_ = 0.0;
  std::optional<RigidTransform> registration_;
  Json registration_summary_ = nullptr;
  std::map<std::string, StoredPlan> plans_;
  std::uint64_t plan_counter_ = 0;
  std::uint64_t exec_counter_ = 0;
  bool active_ = false;
  std::string active_plan_;
  std::string active_exec_;
  int steps_done_ = 0;
  std::optional<AxisId> moving_axis_;
  Json last_result_ = nullptr;

  std::jthread executor_;
  std::jthread telemetry_;
};

}  // namespace mrguide
