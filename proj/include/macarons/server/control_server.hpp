#pragma once

// Device registry, config, staged updates, readings, scripts and the job
// coordinator. Transport-agnostic; http_api.hpp maps it onto HTTP.

#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "macarons/commands.hpp"
#include "macarons/error.hpp"
#include "macarons/farm_io.hpp"
#include "macarons/protocol.hpp"
#include "macarons/scenario.hpp"
#include "macarons/semver.hpp"
#include "macarons/server/store.hpp"

namespace macarons::server {

using Clock = std::function<double()>;

inline double wall_clock_seconds() {
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

struct ServerConfig {
  double default_sleep_seconds = 30.0;
  double max_long_poll_hold = 25.0;
  std::optional<double> step_timeout;  // default: 2 x the device's sleep_seconds
  double coordinator_tick = 0.02;      // real seconds between coordinator wake-ups
};

struct WaitCondition {
  std::optional<std::string> reading;
  nlohmann::json equals;
  std::optional<double> seconds;
};

struct ScriptStep {
  std::string device_id;
  std::string command;
  nlohmann::json args = nlohmann::json::object();
  std::optional<WaitCondition> wait;
  std::optional<double> timeout_seconds;
};

inline std::vector<ScriptStep> parse_script_steps(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw Error(ErrorCode::validation, "script needs a non-empty 'steps' array");
  std::vector<ScriptStep> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& s = j[i];
    auto bad = [&](const std::string& what) {
      return Error(ErrorCode::validation, "step " + std::to_string(i) + ": " + what);
    };
    if (!s.is_object()) throw bad("must be an object");
    ScriptStep st;
    if (!s.contains("device") || !s["device"].is_string()) throw bad("'device' must be a string");
    if (!s.contains("command") || !s["command"].is_string()) throw bad("'command' must be a string");
    st.device_id = s["device"].get<std::string>();
    st.command = s["command"].get<std::string>();
    st.args = s.value("args", nlohmann::json::object());
    if (!st.args.is_object()) throw bad("'args' must be an object");
    if (s.contains("wait") && !s["wait"].is_null()) {
      const auto& w = s["wait"];
      WaitCondition wc;
      if (w.contains("reading")) {
        if (!w["reading"].is_string() || !w.contains("equals")) throw bad("reading wait needs 'reading' and 'equals'");
        wc.reading = w["reading"].get<std::string>();
        wc.equals = w["equals"];
      } else if (w.contains("seconds")) {
        if (!w["seconds"].is_number() || w["seconds"].get<double>() < 0) throw bad("'seconds' must be >= 0");
        wc.seconds = w["seconds"].get<double>();
      } else {
        throw bad("wait needs 'reading' or 'seconds'");
      }
      st.wait = wc;
    }
    if (s.contains("timeout_seconds")) {
      if (!s["timeout_seconds"].is_number() || !(s["timeout_seconds"].get<double>() > 0)) {
        throw bad("'timeout_seconds' must be positive");
      }
      st.timeout_seconds = s["timeout_seconds"].get<double>();
    }
    out.push_back(std::move(st));
  }
  return out;
}

inline nlohmann::json to_json(const ScriptStep& s) {
  nlohmann::json j{{"device", s.device_id}, {"command", s.command}, {"args", s.args}};
  if (s.wait) {
    if (s.wait->reading) {
      j["wait"] = {{"reading", *s.wait->reading}, {"equals", s.wait->equals}};
    } else {
      j["wait"] = {{"seconds", *s.wait->seconds}};
    }
  }
  if (s.timeout_seconds) j["timeout_seconds"] = *s.timeout_seconds;
  return j;
}

inline bool is_terminal_job_status(const std::string& s) {
  return s == "succeeded" || s == "failed" || s == "aborted";
}

/// Which devices drive each module of the farm the server manages.
struct ModuleBinding {
  std::string mover;
  std::string elevator;
};

class ControlServer {
 public:
  explicit ControlServer(Store& store, ServerConfig cfg = {}, Clock clock = wall_clock_seconds)
      : store_(store), cfg_(cfg), clock_(std::move(clock)) {
    recover_jobs();
  }

  ~ControlServer() { shutdown(); }
  ControlServer(const ControlServer&) = delete;
  ControlServer& operator=(const ControlServer&) = delete;

  double now() const { return clock_(); }
  const ServerConfig& config() const { return cfg_; }
  Store& store() { return store_; }

  /// Stops coordinators without touching job rows; a later start marks them aborted.
  void shutdown() {
    {
      std::lock_guard lock(mu_);
      if (stopping_) return;
      stopping_ = true;
    }
    cv_.notify_all();
    std::vector<std::thread> threads;
    {
      std::lock_guard lock(mu_);
      for (auto& [id, t] : coordinators_) threads.push_back(std::move(t));
      coordinators_.clear();
    }
    for (auto& t : threads) {
      if (t.joinable()) t.join();
    }
  }

  // Devices ------------------------------------------------------------------

  nlohmann::json register_device(const RegistrationRequest& req) {
    req.validate();
    static const std::regex kind_re("[a-z][a-z0-9_-]{0,31}");
    if (!std::regex_match(req.kind, kind_re)) throw Error(ErrorCode::validation, "device kind must match [a-z][a-z0-9_-]*");
    return store_.transaction([&] {
      if (auto existing = store_.device_by_hardware(req.hardware_id)) {
        if (existing->kind != req.kind) {
          throw Error(ErrorCode::conflict, "hardware_id '" + req.hardware_id + "' is registered as " + existing->kind);
        }
        return device_json(*existing);
      }
      DeviceRow d;
      char id[64];
      std::snprintf(id, sizeof id, "%s-%04lld", req.kind.c_str(), static_cast<long long>(store_.next_sequence("device")));
      d.device_id = id;
      d.kind = req.kind;
      d.hardware_id = req.hardware_id;
      d.registered_at = now();
      d.installed_version = Semver::parse(req.firmware_version).str();
      store_.insert_device(d);
      return device_json(d);
    });
  }

  nlohmann::json list_devices() {
    return store_.transaction([&] {
      auto out = nlohmann::json::array();
      for (const auto& d : store_.devices()) out.push_back(device_json(d));
      return out;
    });
  }

  nlohmann::json device(const std::string& id) {
    return store_.transaction([&] { return device_json(require_device(id)); });
  }

  // Updates ------------------------------------------------------------------

  nlohmann::json stage_update(const std::string& id, const UpdateBundle& bundle) {
    bundle.verify();
    return store_.transaction([&] {
      auto d = require_device(id);
      if (!(Semver::parse(bundle.version) > Semver::parse(d.installed_version))) {
        throw Error(ErrorCode::version_regression,
                    "bundle " + bundle.version + " is not newer than installed " + d.installed_version);
      }
      store_.stage(id, bundle.version, encode(bundle));
      return nlohmann::json{{"device_id", id}, {"staged", bundle.version}};
    });
  }

  std::optional<UpdateBundle> poll_update(const std::string& id, DeviceCyclePhase phase) {
    if (phase != DeviceCyclePhase::pre_update && phase != DeviceCyclePhase::post_update) {
      throw Error(ErrorCode::protocol, "update polls are only valid in pre_update or post_update");
    }
    return store_.transaction([&]() -> std::optional<UpdateBundle> {
      require_device(id);
      store_.touch_device(id, now(), std::string(to_string(phase)));
      if (auto s = store_.staged(id)) return decode<UpdateBundle>(s->second);
      return std::nullopt;
    });
  }

  nlohmann::json ack_update(const std::string& id, const UpdateAck& ack) {
    if (ack.device_id != id) throw Error(ErrorCode::validation, "ack is for a different device");
    return store_.transaction([&] {
      auto d = require_device(id);
      auto staged = store_.staged(id);
      if (!staged) {
        if (d.installed_version == ack.version) return nlohmann::json{{"device_id", id}, {"installed", d.installed_version}};
        throw Error(ErrorCode::conflict, "no staged update to acknowledge");
      }
      if (staged->first != ack.version) {
        throw Error(ErrorCode::conflict, "ack for " + ack.version + " but " + staged->first + " is staged");
      }
      store_.set_installed_version(id, ack.version);
      store_.clear_staged(id);
      return nlohmann::json{{"device_id", id}, {"installed", ack.version}};
    });
  }

  // Readings -----------------------------------------------------------------

  void push_readings(const std::string& id, const std::vector<Reading>& readings) {
    store_.transaction([&] {
      require_device(id);
      auto latest = store_.latest_reading_time(id);
      for (const auto& r : readings) {
        if (r.device_id != id) throw Error(ErrorCode::validation, "reading is for a different device");
        if (latest && r.timestamp < *latest) {
          throw Error(ErrorCode::validation, "reading timestamps must not go backwards for a device");
        }
        latest = r.timestamp;
        nlohmann::json v;
        std::visit([&](const auto& x) { v = x; }, r.value);
        store_.insert_reading(id, r.timestamp, r.key, v);
      }
    });
    cv_.notify_all();
  }

  std::vector<Reading> list_readings(const std::string& id, std::optional<double> from, std::optional<double> to) {
    return store_.transaction([&] {
      require_device(id);
      std::vector<Reading> out;
      for (const auto& row : store_.readings(id, from, to)) out.push_back(to_reading(row));
      return out;
    });
  }

  // Config -------------------------------------------------------------------

  void set_config(const std::string& id, const std::string& key, const nlohmann::json& value) {
    if (key.empty()) throw Error(ErrorCode::validation, "config key must be non-empty");
    if (key == "sleep_seconds" && !(value.is_number() && value.get<double>() >= 0)) {
      throw Error(ErrorCode::validation, "sleep_seconds must be a non-negative number");
    }
    store_.transaction([&] {
      require_device(id);
      store_.set_config(id, key, value);
    });
  }

  /// The stored map. With `device_fetch` the device is marked seen in run_main
  /// and server defaults fill keys the operator has not set.
  nlohmann::json get_config(const std::string& id, bool device_fetch = false) {
    return store_.transaction([&] {
      require_device(id);
      auto cfg = store_.config(id);
      if (device_fetch) {
        store_.touch_device(id, now(), "run_main");
        if (!cfg.contains("sleep_seconds")) cfg["sleep_seconds"] = cfg_.default_sleep_seconds;
      }
      return cfg;
    });
  }

  // Scripts and jobs ---------------------------------------------------------

  nlohmann::json upload_script(const nlohmann::json& body) {
    if (!body.is_object()) throw Error(ErrorCode::validation, "script must be an object");
    std::string name = body.value("name", std::string("unnamed"));
    auto steps = parse_script_steps(body.value("steps", nlohmann::json()));
    auto steps_json = nlohmann::json::array();
    for (const auto& s : steps) steps_json.push_back(to_json(s));
    return store_.transaction([&] {
      ScriptRow row;
      char id[32];
      std::snprintf(id, sizeof id, "script-%04lld", static_cast<long long>(store_.next_sequence("script")));
      row.script_id = id;
      row.name = name;
      row.steps = steps_json;
      row.uploaded_at = now();
      store_.insert_script(row);
      return script_json(row);
    });
  }

  nlohmann::json list_scripts() {
    return store_.transaction([&] {
      auto out = nlohmann::json::array();
      for (const auto& s : store_.scripts()) out.push_back(script_json(s));
      return out;
    });
  }

  nlohmann::json script(const std::string& id) {
    return store_.transaction([&] {
      auto s = store_.script(id);
      if (!s) throw Error(ErrorCode::not_found, "no script '" + id + "'");
      return script_json(*s);
    });
  }

  nlohmann::json run_script(const std::string& script_id) {
    std::lock_guard lock(mu_);
    if (stopping_) throw Error(ErrorCode::conflict, "server is shutting down");
    JobRow job = store_.transaction([&] {
      auto s = store_.script(script_id);
      if (!s) throw Error(ErrorCode::not_found, "no script '" + script_id + "'");
      auto steps = parse_script_steps(s->steps);
      std::set<std::string> devices;
      for (std::size_t i = 0; i < steps.size(); ++i) {
        auto d = store_.device(steps[i].device_id);
        if (!d) {
          throw Error(ErrorCode::validation, "step " + std::to_string(i) + ": device '" + steps[i].device_id +
                                                 "' is not registered");
        }
        if (auto kind = parse_device_kind(d->kind); kind && !in_vocabulary(*kind, steps[i].command)) {
          throw Error(ErrorCode::validation, "step " + std::to_string(i) + ": '" + steps[i].command +
                                                 "' is not a " + d->kind + " command");
        }
        devices.insert(steps[i].device_id);
      }
      for (const auto& other : store_.jobs()) {
        if (is_terminal_job_status(other.status)) continue;
        auto os = store_.script(other.script_id);
        for (const auto& st : parse_script_steps(os->steps)) {
          if (devices.count(st.device_id)) {
            throw Error(ErrorCode::conflict, "device '" + st.device_id + "' is busy with " + other.job_id);
          }
        }
      }
      JobRow j;
      char id[32];
      std::snprintf(id, sizeof id, "job-%04lld", static_cast<long long>(store_.next_sequence("job")));
      j.job_id = id;
      j.script_id = script_id;
      j.status = "pending";
      j.created_at = now();
      j.steps = nlohmann::json::array();
      for (std::size_t i = 0; i < steps.size(); ++i) {
        j.steps.push_back({{"index", i}, {"device", steps[i].device_id}, {"command", steps[i].command},
                           {"status", "pending"}});
      }
      store_.upsert_job(j);
      return j;
    });
    coordinators_[job.job_id] = std::thread([this, job] { coordinate(job); });
    return job_json(job);
  }

  nlohmann::json job(const std::string& id) {
    return store_.transaction([&] {
      auto j = store_.job(id);
      if (!j) throw Error(ErrorCode::not_found, "no job '" + id + "'");
      return job_json(*j);
    });
  }

  nlohmann::json list_jobs() {
    return store_.transaction([&] {
      auto out = nlohmann::json::array();
      for (const auto& j : store_.jobs()) out.push_back(job_json(j));
      return out;
    });
  }

  /// Blocks until the job is terminal or `timeout` real seconds pass.
  nlohmann::json wait_job(const std::string& id, double timeout) {
    auto until = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout);
    for (;;) {
      auto j = job(id);
      if (is_terminal_job_status(j["status"].get<std::string>()) || std::chrono::steady_clock::now() >= until) return j;
      std::unique_lock lock(mu_);
      cv_.wait_for(lock, std::chrono::duration<double>(cfg_.coordinator_tick));
    }
  }

  // Commands -----------------------------------------------------------------

  /// Long-poll: the oldest queued command for the device, or nothing after `hold` seconds.
  std::optional<Command> next_command(const std::string& device_id, double hold) {
    hold = std::clamp(hold, 0.0, cfg_.max_long_poll_hold);
    using SteadyClock = std::chrono::steady_clock;
    const auto until = SteadyClock::now() + std::chrono::duration_cast<SteadyClock::duration>(std::chrono::duration<double>(hold));
    const auto tick = std::chrono::duration_cast<SteadyClock::duration>(std::chrono::duration<double>(cfg_.coordinator_tick * 5));
    store_.transaction([&] {
      require_device(device_id);
      store_.touch_device(device_id, now(), "run_main");
    });
    for (;;) {
      auto cmd = store_.transaction([&]() -> std::optional<Command> {
        auto row = store_.next_queued_command(device_id);
        if (!row) return std::nullopt;
        store_.mark_delivered(row->command_id, now(), store_.last_reading_seq());
        return Command{row->command_id, row->device_id, row->name, row->args};
      });
      if (cmd) {
        cv_.notify_all();
        return cmd;
      }
      std::unique_lock lock(mu_);
      if (stopping_ || SteadyClock::now() >= until) return std::nullopt;
      cv_.wait_until(lock, std::min(until, SteadyClock::now() + tick));
    }
  }

  void command_result(const std::string& command_id, const CommandResult& result) {
    if (result.command_id != command_id) throw Error(ErrorCode::validation, "result is for a different command");
    store_.transaction([&] {
      auto c = store_.command(command_id);
      if (!c) throw Error(ErrorCode::not_found, "no command '" + command_id + "'");
      if (c->status != "delivered") throw Error(ErrorCode::conflict, "command " + command_id + " is " + c->status);
      store_.set_command_result(command_id, "done", nlohmann::json::parse(encode(result)));
    });
    cv_.notify_all();
  }

  // Farm and tray moves ------------------------------------------------------

  void set_farm(const FarmFile& farm, const std::vector<ModuleBinding>& bindings) {
    if (bindings.size() != farm.farm.n()) throw Error(ErrorCode::validation, "one device binding per module required");
    auto b = nlohmann::json::array();
    for (const auto& m : bindings) b.push_back({{"mover", m.mover}, {"elevator", m.elevator}});
    store_.transaction([&] {
      for (const auto& m : bindings) {
        require_device(m.mover);
        require_device(m.elevator);
      }
      store_.set_meta("farm", save_farm(farm));
      store_.set_meta("farm.bindings", b.dump());
    });
  }

  /// Farm layout, carriage locations and device bindings.
  nlohmann::json farm() {
    return store_.transaction([&] {
      auto f = store_.meta("farm");
      if (!f) throw Error(ErrorCode::not_found, "no farm configured");
      auto j = nlohmann::json::parse(*f);
      j["bindings"] = nlohmann::json::parse(store_.meta("farm.bindings").value_or("[]"));
      return j;
    });
  }

  /// Compiles and runs the script that moves `carriage_id` to `dest`. Returns
  /// {"job": null} when the carriage is already there.
  nlohmann::json request_move(const std::string& carriage_id, const CellAddress& dest) {
    FarmFile ff;
    std::vector<ModuleBinding> bindings;
    store_.transaction([&] {
      auto f = store_.meta("farm");
      if (!f) throw Error(ErrorCode::not_found, "no farm configured");
      ff = load_farm(*f);
      for (const auto& b : nlohmann::json::parse(store_.meta("farm.bindings").value_or("[]"))) {
        bindings.push_back({b.at("mover").get<std::string>(), b.at("elevator").get<std::string>()});
      }
    });
    auto it = std::find_if(ff.carriages.begin(), ff.carriages.end(), [&](const Carriage& c) { return c.id == carriage_id; });
    if (it == ff.carriages.end()) throw Error(ErrorCode::not_found, "no carriage '" + carriage_id + "'");
    const auto* cell = std::get_if<location::Cell>(&it->location);
    if (!cell) throw Error(ErrorCode::validation, "carriage '" + carriage_id + "' is not on a shelf");
    if (cell->addr == dest) return nlohmann::json{{"job", nullptr}};
    auto steps = compile_move_script(ff, bindings, carriage_id, cell->addr, dest);
    auto body = nlohmann::json{{"name", "move " + carriage_id}, {"steps", nlohmann::json::array()}};
    for (const auto& s : steps) body["steps"].push_back(to_json(s));
    auto script = upload_script(body);
    store_.transaction([&] {
      store_.set_meta("move." + script["script_id"].get<std::string>(),
                      nlohmann::json{{"carriage", carriage_id}, {"module", dest.module}, {"col", dest.col}, {"row", dest.row}}.dump());
    });
    return nlohmann::json{{"job", run_script(script["script_id"].get<std::string>())}};
  }

  /// Script steps for one tray move, derived by dry-running the plan in the
  /// module model; each mover step carries its platform row and the elevator
  /// is told its occupant whenever that changes.
  static std::vector<ScriptStep> compile_move_script(const FarmFile& ff, const std::vector<ModuleBinding>& bindings,
                                                     const std::string& carriage_id, const CellAddress& from,
                                                     const CellAddress& to) {
    if (from.module != to.module) throw Error(ErrorCode::validation, "moves between modules are not supported");
    if (to.module >= ff.farm.n() || !in_bounds(ff.farm.modules[to.module], to)) {
      throw Error(ErrorCode::address, "destination outside the module");
    }
    if (to.module >= bindings.size()) throw Error(ErrorCode::validation, "module has no bound devices");
    const auto& spec = ff.farm.modules[to.module];
    const auto& bind = bindings[to.module];
    ModuleWorld<double> w(to.module, MoverKinematics<double>::from(spec, 2.0), ElevatorKinematics<double>::from(spec));
    for (const auto& c : ff.carriages) {
      if (const auto* cell = std::get_if<location::Cell>(&c.location); cell && cell->addr.module == to.module) {
        w.place(c, cell->addr);
      }
    }
    if (auto occ = w.carriage_in(to.col, to.row)) {
      throw Error(ErrorCode::validation, "destination is occupied by carriage " + *occ);
    }
    std::deque<detail::PlanStep> plan;
    detail::plan_move(plan, from, to);
    std::vector<ScriptStep> out;
    std::optional<Occupant> told;
    std::vector<SimEvent<double>> sink;
    auto tell_occupant = [&] {
      std::optional<Occupant> now = w.elevator().occupant;
      if (now) now->mover_id = bind.mover;
      if (now == told) return;
      ScriptStep s;
      s.device_id = bind.elevator;
      auto wc = to_wire(ElevatorCommand{elevator_cmd::SetOccupant{now}});
      s.command = wc.name;
      s.args = wc.args;
      out.push_back(s);
      told = now;
    };
    tell_occupant();
    double t = 0;
    for (auto& step : plan) {
      ScriptStep s;
      std::optional<CommandError> err;
      if (step.role == DeviceRole::mover) {
        const auto& cmd = std::get<MoverCommand>(step.command);
        auto wc = to_wire(cmd, w.mover().row);
        s.device_id = bind.mover;
        s.command = wc.name;
        s.args = wc.args;
        err = w.command_mover(cmd, t, sink);
      } else {
        const auto& cmd = std::get<ElevatorCommand>(step.command);
        auto wc = to_wire(cmd);
        s.device_id = bind.elevator;
        s.command = wc.name;
        s.args = wc.args;
        err = w.command_elevator(cmd, t, sink);
      }
      if (err) throw Error(ErrorCode::validation, "move of " + carriage_id + " is not possible: " + err->message);
      out.push_back(s);
      while (auto dt = w.time_to_event()) {
        w.step(t, *dt, sink);
        t += *dt;
      }
      tell_occupant();
    }
    return out;
  }

  std::string export_state() { return store_.export_state(); }

 private:
  DeviceRow require_device(const std::string& id) {
    auto d = store_.device(id);
    if (!d) throw Error(ErrorCode::not_found, "no device '" + id + "'");
    return *d;
  }

  nlohmann::json device_json(const DeviceRow& d) {
    nlohmann::json j{{"device_id", d.device_id},
                     {"kind", d.kind},
                     {"hardware_id", d.hardware_id},
                     {"registered_at", d.registered_at},
                     {"installed_version", d.installed_version},
                     {"supported", parse_device_kind(d.kind).has_value()},
                     {"config", store_.config(d.device_id)}};
    j["last_seen"] = d.last_seen ? nlohmann::json(*d.last_seen) : nlohmann::json();
    j["last_phase"] = d.last_phase ? nlohmann::json(*d.last_phase) : nlohmann::json();
    if (auto s = store_.staged(d.device_id)) {
      j["staged_update"] = {{"version", s->first}};
    } else {
      j["staged_update"] = nullptr;
    }
    return j;
  }

  static nlohmann::json script_json(const ScriptRow& s) {
    return {{"script_id", s.script_id}, {"name", s.name}, {"steps", s.steps}, {"uploaded_at", s.uploaded_at}};
  }

  static nlohmann::json job_json(const JobRow& j) {
    nlohmann::json out{{"job_id", j.job_id}, {"script_id", j.script_id}, {"status", j.status},
                       {"steps", j.steps},   {"created_at", j.created_at}};
    out["started_at"] = j.started_at ? nlohmann::json(*j.started_at) : nlohmann::json();
    out["finished_at"] = j.finished_at ? nlohmann::json(*j.finished_at) : nlohmann::json();
    out["reason"] = j.reason ? nlohmann::json(*j.reason) : nlohmann::json();
    return out;
  }

  static Reading to_reading(const ReadingRow& row) {
    Reading r;
    r.device_id = row.device_id;
    r.timestamp = row.timestamp;
    r.key = row.key;
    if (row.value.is_number()) {
      r.value = row.value.get<double>();
    } else {
      r.value = row.value.get<std::string>();
    }
    return r;
  }

  void recover_jobs() {
    store_.transaction([&] {
      for (auto j : store_.jobs()) {
        if (is_terminal_job_status(j.status)) continue;
        j.status = "aborted";
        j.finished_at = now();
        j.reason = "server restarted while the job was " + std::string(j.started_at ? "running" : "pending");
        for (auto& s : j.steps) {
          auto st = s["status"].get<std::string>();
          if (st == "pending" || st == "running") s["status"] = "aborted";
        }
        store_.upsert_job(j);
        store_.cancel_open_commands(j.job_id);
      }
    });
  }

  bool stopping() {
    std::lock_guard lock(mu_);
    return stopping_;
  }

  /// Waits on the shared condition for up to one tick.
  void nap() {
    std::unique_lock lock(mu_);
    if (stopping_) return;
    cv_.wait_for(lock, std::chrono::duration<double>(cfg_.coordinator_tick));
  }

  double step_timeout(const ScriptStep& s) {
    if (s.timeout_seconds) return *s.timeout_seconds;
    if (cfg_.step_timeout) return *cfg_.step_timeout;
    auto cfg = store_.transaction([&] { return store_.config(s.device_id); });
    double sleep = cfg_.default_sleep_seconds;
    if (auto it = cfg.find("sleep_seconds"); it != cfg.end() && it->is_number()) sleep = it->get<double>();
    return 2.0 * sleep;
  }

  void coordinate(JobRow job) {
    try {
      run_job(job);
    } catch (const std::exception& e) {
      if (stopping()) return;
      job.status = "failed";
      job.finished_at = now();
      job.reason = std::string("coordinator error: ") + e.what();
      try {
        store_.transaction([&] {
          store_.upsert_job(job);
          store_.cancel_open_commands(job.job_id);
        });
      } catch (...) {
      }
    }
    cv_.notify_all();
  }

  void run_job(JobRow& job) {
    auto steps = parse_script_steps(store_.transaction([&] { return store_.script(job.script_id)->steps; }));
    job.status = "running";
    job.started_at = now();
    store_.transaction([&] { store_.upsert_job(job); });

    auto finish = [&](const std::string& status, std::optional<std::string> reason) {
      job.status = status;
      job.finished_at = now();
      job.reason = std::move(reason);
      store_.transaction([&] {
        store_.upsert_job(job);
        store_.cancel_open_commands(job.job_id);
        if (status == "succeeded") apply_move(job.script_id);
      });
    };

    for (std::size_t i = 0; i < steps.size(); ++i) {
      const auto& st = steps[i];
      auto& outcome = job.steps[i];
      const double timeout = step_timeout(st);
      const double started = now();
      const double deadline = started + timeout;
      std::string command_id = store_.transaction([&] {
        CommandRow c;
        char id[32];
        std::snprintf(id, sizeof id, "cmd-%06lld", static_cast<long long>(store_.next_sequence("command")));
        c.command_id = id;
        c.job_id = job.job_id;
        c.device_id = st.device_id;
        c.name = st.command;
        c.args = st.args;
        c.status = "queued";
        c.created_at = started;
        store_.insert_command(c);
        outcome["status"] = "running";
        outcome["command_id"] = c.command_id;
        outcome["started_at"] = started;
        store_.upsert_job(job);
        return c.command_id;
      });
      cv_.notify_all();

      auto fail_step = [&](const std::string& status, const std::string& error) {
        outcome["status"] = status;
        outcome["error"] = error;
        outcome["finished_at"] = now();
        for (std::size_t k = i + 1; k < steps.size(); ++k) job.steps[k]["status"] = "skipped";
        finish("failed", "step " + std::to_string(i) + " " + status + ": " + error);
      };

      // Command completion.
      std::optional<CommandRow> done;
      for (;;) {
        if (stopping()) return;
        auto c = store_.transaction([&] { return store_.command(command_id); });
        if (c && c->status == "done") {
          done = c;
          break;
        }
        if (now() >= deadline) {
          fail_step("timeout", "device " + st.device_id + " did not complete '" + st.command + "' within " +
                                   scalar_str(timeout) + " s");
          return;
        }
        nap();
      }
      auto result = decode<CommandResult>(done->result->dump());
      outcome["result"] = result.data;
      if (!result.ok) {
        fail_step("failed", result.error.empty() ? "device reported an error" : result.error);
        return;
      }

      // Completion condition.
      if (st.wait && st.wait->seconds) {
        const double until = now() + *st.wait->seconds;
        while (now() < until) {
          if (stopping()) return;
          nap();
        }
      } else if (st.wait && st.wait->reading) {
        for (;;) {
          if (stopping()) return;
          bool met = store_.transaction([&] {
            for (const auto& r : store_.readings_after(st.device_id, done->reading_mark)) {
              if (r.key == *st.wait->reading && reading_equals(r.value, st.wait->equals)) return true;
            }
            return false;
          });
          if (met) break;
          if (now() >= deadline) {
            fail_step("timeout", "reading '" + *st.wait->reading + "' never reached " + st.wait->equals.dump());
            return;
          }
          nap();
        }
      }
      outcome["status"] = "succeeded";
      outcome["finished_at"] = now();
      store_.transaction([&] { store_.upsert_job(job); });
    }
    finish("succeeded", std::nullopt);
  }

  static bool reading_equals(const nlohmann::json& got, const nlohmann::json& want) {
    if (got.is_number() && want.is_number()) return got.get<double>() == want.get<double>();
    return got == want;
  }

  // Inside a transaction: a finished tray-move script updates the carriage location.
  void apply_move(const std::string& script_id) {
    auto m = store_.meta("move." + script_id);
    auto f = store_.meta("farm");
    if (!m || !f) return;
    auto mv = nlohmann::json::parse(*m);
    auto ff = load_farm(*f);
    for (auto& c : ff.carriages) {
      if (c.id == mv["carriage"].get<std::string>()) {
        c.location = location::Cell{CellAddress{mv["module"].get<std::size_t>(), mv["col"].get<int>(), mv["row"].get<int>()}};
      }
    }
    store_.set_meta("farm", save_farm(ff));
  }

  Store& store_;
  ServerConfig cfg_;
  Clock clock_;
  std::mutex mu_;
  std::condition_variable cv_;
  bool stopping_ = false;
  std::map<std::string, std::thread> coordinators_;
};

}  // namespace macarons::server
