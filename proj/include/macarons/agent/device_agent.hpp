#pragma once

// Simulated mover/elevator firmware running the five-phase device cycle:
// wake, pre_update, run_main, post_update, deep_sleep.
//
// Losing the server never faults the agent: each phase that needs the server
// is skipped (or cut short) and the cycle still ends in deep sleep.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "macarons/agent/clock.hpp"
#include "macarons/agent/link.hpp"
#include "macarons/commands.hpp"
#include "macarons/device.hpp"
#include "macarons/farm_io.hpp"
#include "macarons/protocol.hpp"

namespace macarons::agent {

struct ExecResult {
  bool ok = true;
  std::string error;
  nlohmann::json data = nlohmann::json::object();
  double duration = 0.0;  // device seconds the command took
  std::vector<std::pair<std::string, std::variant<double, std::string>>> readings;
};

/// The physical side of an agent: FSM state plus kinematics.
class DeviceModel {
 public:
  virtual ~DeviceModel() = default;
  virtual DeviceKind kind() const = 0;
  virtual ExecResult execute(const WireCommand& cmd) = 0;
  virtual nlohmann::json snapshot() const = 0;
};

/// Mover with its own view of the module's carriages, loaded from the farm file.
class MoverModel : public DeviceModel {
 public:
  MoverModel(const ModuleSpec& spec, std::size_t module, const std::vector<Carriage>& carriages, double t_engage = 2.0)
      : k_(MoverKinematics<double>::from(spec, t_engage)), module_(module) {
    state_ = mover_docked_at_exit<double>("mover", k_);
    for (const auto& c : carriages) {
      mass_[c.id] = c.tray_mass;
      if (const auto* cell = std::get_if<location::Cell>(&c.location); cell && cell->addr.module == module) {
        cells_[{cell->addr.col, cell->addr.row}] = c.id;
      } else if (const auto* ex = std::get_if<location::AtExit>(&c.location); ex && ex->module == module) {
        exit_.push_back(c.id);
      }
    }
  }

  DeviceKind kind() const override { return DeviceKind::mover; }
  const MoverState<double>& state() const { return state_; }

  ExecResult execute(const WireCommand& w) override {
    ExecResult r;
    ParsedMoverCommand p;
    try {
      p = parse_mover_command(w);
    } catch (const Error& e) {
      return fail(e.what());
    }
    const bool at_bay = same_point(state_.position, k_.bay_position());
    // On the platform the commanded row is where the elevator has taken us.
    if (at_bay && p.row && !state_.task) state_.row = *p.row;
    Env env(*this, at_bay ? std::optional<int>(state_.row) : std::nullopt);
    auto step = mover_step(k_, state_, 0.0, p.command, env);
    if (step.status == StepStatus::rejected) return fail(std::string(to_string(step.error->fault)) + ": " + step.error->message);
    state_ = step.state;
    absorb(step.events);
    double t = 0;
    while (auto dt = mover_time_to_event(k_, state_)) {
      auto s = mover_step(k_, state_, *dt, p.command, env);
      state_ = s.state;
      t += *dt;
      absorb(s.events);
    }
    r.duration = t;
    r.data = snapshot();
    r.readings = {{"position", state_.position}, {"row", static_cast<double>(state_.row)},
                  {"marker_count", static_cast<double>(state_.marker_count)}};
    return r;
  }

  nlohmann::json snapshot() const override {
    return {{"mode", std::string(to_string(state_.mode))},
            {"position", state_.position},
            {"row", state_.row},
            {"marker_count", state_.marker_count},
            {"carrying", state_.carrying ? nlohmann::json(*state_.carrying) : nlohmann::json()}};
  }

 private:
  // Agent-mode surroundings: carriages are known locally, the elevator is
  // assumed aligned wherever the coordinator says we are.
  struct Env : MoverEnv {
    Env(const MoverModel& m, std::optional<int> platform_row) : m(m), platform_row(platform_row) {}
    std::optional<std::string> carriage_at(int col, int row) const override {
      if (row == kExitRow) return m.exit_.empty() ? std::nullopt : std::optional(m.exit_.front());
      if (auto it = m.cells_.find({col, row}); it != m.cells_.end()) return it->second;
      return std::nullopt;
    }
    double carriage_mass(const std::string& id) const override {
      auto it = m.mass_.find(id);
      return it == m.mass_.end() ? 0.0 : it->second;
    }
    std::optional<int> elevator_row() const override { return platform_row ? platform_row : m.state_.row; }
    bool elevator_locked() const override { return false; }
    const MoverModel& m;
    std::optional<int> platform_row;
  };

  static ExecResult fail(std::string msg) {
    ExecResult r;
    r.ok = false;
    r.error = std::move(msg);
    return r;
  }

  void absorb(const std::vector<DeviceEvent<double>>& events) {
    for (const auto& e : events) {
      if (e.kind == EventKind::engage) {
        const auto& id = e.detail.at("carriage");
        if (!exit_.empty() && exit_.front() == id) exit_.erase(exit_.begin());
        for (auto it = cells_.begin(); it != cells_.end(); ++it) {
          if (it->second == id) {
            cells_.erase(it);
            break;
          }
        }
      } else if (e.kind == EventKind::release) {
        const auto& id = e.detail.at("carriage");
        if (same_point(state_.position, k_.bay_position())) {
          exit_.push_back(id);
        } else if (auto col = rail_index(k_, state_.position)) {
          cells_[{*col, state_.row}] = id;
        }
      }
    }
  }

  MoverKinematics<double> k_;
  std::size_t module_;
  MoverState<double> state_;
  std::map<std::pair<int, int>, std::string> cells_;
  std::vector<std::string> exit_;
  std::map<std::string, double> mass_;
};

class ElevatorModel : public DeviceModel {
 public:
  explicit ElevatorModel(const ModuleSpec& spec) : k_(ElevatorKinematics<double>::from(spec)) {
    state_.id = "elevator";
    state_.height = k_.height_of(kExitRow);
    state_.row = state_.target_row = kExitRow;
  }

  DeviceKind kind() const override { return DeviceKind::elevator; }
  const ElevatorState<double>& state() const { return state_; }

  ExecResult execute(const WireCommand& w) override {
    ExecResult r;
    ElevatorCommand cmd;
    try {
      cmd = parse_elevator_command(w);
    } catch (const Error& e) {
      r.ok = false;
      r.error = e.what();
      return r;
    }
    auto step = elevator_step(k_, state_, 0.0, cmd);
    if (step.status == StepStatus::rejected) {
      r.ok = false;
      r.error = std::string(to_string(step.error->fault)) + ": " + step.error->message;
      return r;
    }
    state_ = step.state;
    double t = 0;
    while (auto dt = elevator_time_to_event(k_, state_)) {
      state_ = elevator_step(k_, state_, *dt, cmd).state;
      t += *dt;
    }
    r.duration = t;
    r.data = snapshot();
    r.readings = {{"height", state_.height}, {"row", static_cast<double>(state_.row)}};
    return r;
  }

  nlohmann::json snapshot() const override {
    nlohmann::json j{{"mode", std::string(to_string(state_.mode))},
                     {"height", state_.height},
                     {"row", state_.row},
                     {"lock_engaged", state_.lock_engaged},
                     {"ir_triggered", state_.ir_triggered}};
    j["occupant"] = state_.occupant ? nlohmann::json{{"mover", state_.occupant->mover_id},
                                                     {"carriage", state_.occupant->carriage_id
                                                                      ? nlohmann::json(*state_.occupant->carriage_id)
                                                                      : nlohmann::json()}}
                                    : nlohmann::json();
    return j;
  }

 private:
  ElevatorKinematics<double> k_;
  ElevatorState<double> state_;
};

struct PhaseStamp {
  DeviceCyclePhase phase;
  double at = 0;
};

struct InstallRecord {
  DeviceCyclePhase phase;
  std::string version;
  double at = 0;
};

struct ExecutedCommand {
  std::string command_id;
  std::string name;
  bool ok = false;
  std::string error;
  double started = 0;
  double finished = 0;
  bool result_delivered = false;
};

struct CycleReport {
  std::size_t cycle = 0;
  std::vector<PhaseStamp> phases;
  std::vector<InstallRecord> installs;
  std::string version_at_run_main;
  std::vector<ExecutedCommand> commands;
  std::vector<std::string> link_errors;
  double sleep_seconds = 0;
  bool server_reachable = false;

  bool phase_order_ok() const {
    if (phases.size() != kCycleOrder.size()) return false;
    for (std::size_t i = 0; i < phases.size(); ++i) {
      if (phases[i].phase != kCycleOrder[i]) return false;
      if (i > 0 && phases[i].at < phases[i - 1].at) return false;
    }
    return true;
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"cycle", cycle}, {"version_at_run_main", version_at_run_main}, {"sleep_seconds", sleep_seconds},
                     {"server_reachable", server_reachable}, {"link_errors", link_errors}};
    j["phases"] = nlohmann::json::array();
    for (const auto& p : phases) j["phases"].push_back({{"phase", to_string(p.phase)}, {"at", p.at}});
    j["installs"] = nlohmann::json::array();
    for (const auto& i : installs) j["installs"].push_back({{"phase", to_string(i.phase)}, {"version", i.version}, {"at", i.at}});
    j["commands"] = nlohmann::json::array();
    for (const auto& c : commands) {
      j["commands"].push_back({{"command_id", c.command_id}, {"name", c.name}, {"ok", c.ok}, {"error", c.error},
                               {"started", c.started}, {"finished", c.finished}, {"result_delivered", c.result_delivered}});
    }
    return j;
  }
};

struct AgentOptions {
  std::string hardware_id;
  std::string firmware_version = "1.0.0";
  double default_sleep_seconds = 30.0;
  double awake_seconds = 10.0;  // run_main window, overridable by server config "awake_seconds"
  double command_hold = 2.0;    // long-poll hold per request, config "command_hold_seconds"
  std::optional<std::filesystem::path> install_root;  // where bundle files are written
};

class DeviceAgent {
 public:
  DeviceAgent(std::unique_ptr<DeviceModel> model, ServerLink& link, AgentClock& clock, AgentOptions opt)
      : model_(std::move(model)), link_(link), clock_(clock), opt_(std::move(opt)), version_(opt_.firmware_version) {
    Semver::parse(version_);
    if (opt_.hardware_id.empty()) throw Error(ErrorCode::parameter, "agent needs a hardware id");
  }

  const std::optional<std::string>& device_id() const { return device_id_; }
  const std::string& installed_version() const { return version_; }
  const std::map<std::string, Bytes>& files() const { return files_; }
  const nlohmann::json& local_config() const { return config_; }
  DeviceModel& model() { return *model_; }
  DeviceCyclePhase phase() const { return phase_; }

  /// Registers if not yet registered. False if the server is unreachable.
  bool ensure_registered() {
    if (device_id_) return true;
    try {
      device_id_ = link_.register_device({std::string(to_string(model_->kind())), opt_.hardware_id, version_});
      return true;
    } catch (const LinkDown&) {
      return false;
    }
  }

  CycleReport run_cycle() {
    CycleReport rep;
    rep.cycle = ++cycles_;
    bool down = false;
    auto note = [&](const std::exception& e) {
      rep.link_errors.push_back(e.what());
      if (dynamic_cast<const LinkDown*>(&e)) down = true;
    };

    enter(DeviceCyclePhase::wake, rep);
    if (!ensure_registered()) {
      down = true;
      rep.link_errors.push_back("registration: server unreachable");
    }

    enter(DeviceCyclePhase::pre_update, rep);
    if (!down) check_update(DeviceCyclePhase::pre_update, rep, note);

    enter(DeviceCyclePhase::run_main, rep);
    rep.version_at_run_main = version_;
    if (!down) {
      try {
        config_ = link_.fetch_config(*device_id_);
        rep.server_reachable = true;
      } catch (const std::exception& e) {
        note(e);
      }
    }
    if (!down) serve_commands(rep, down, note);

    enter(DeviceCyclePhase::post_update, rep);
    if (!down) check_update(DeviceCyclePhase::post_update, rep, note);

    enter(DeviceCyclePhase::deep_sleep, rep);
    rep.sleep_seconds = config_number("sleep_seconds", opt_.default_sleep_seconds);
    clock_.sleep(rep.sleep_seconds);
    return rep;
  }

 private:
  void enter(DeviceCyclePhase p, CycleReport& rep) {
    phase_ = p;
    rep.phases.push_back({p, clock_.now()});
  }

  double config_number(const char* key, double fallback) const {
    auto it = config_.find(key);
    return it != config_.end() && it->is_number() ? it->get<double>() : fallback;
  }

  template <class Note>
  void check_update(DeviceCyclePhase phase, CycleReport& rep, Note&& note) {
    try {
      auto bundle = link_.poll_update(*device_id_, phase);
      rep.server_reachable = true;
      if (!bundle) return;
      bundle->verify();
      if (bundle->version != version_) {
        install(*bundle);
        rep.installs.push_back({phase, bundle->version, clock_.now()});
      }
      link_.ack_update({*device_id_, bundle->version});
    } catch (const std::exception& e) {
      note(e);
    }
  }

  void install(const UpdateBundle& b) {
    for (const auto& f : b.files) {
      files_[f.path] = f.content;
      if (opt_.install_root) {
        auto path = *opt_.install_root / f.path;
        std::filesystem::create_directories(path.parent_path());
        write_text_file(path, std::string_view(reinterpret_cast<const char*>(f.content.data()), f.content.size()));
      }
    }
    version_ = b.version;
  }

  template <class Note>
  void serve_commands(CycleReport& rep, bool& down, Note&& note) {
    const double window = config_number("awake_seconds", opt_.awake_seconds);
    const double hold = config_number("command_hold_seconds", opt_.command_hold);
    const double until = clock_.now() + window;
    while (!down && clock_.now() < until) {
      std::optional<Command> cmd;
      try {
        cmd = link_.next_command(*device_id_, std::min(hold, until - clock_.now()));
      } catch (const std::exception& e) {
        note(e);
        break;
      }
      if (!cmd) {
        clock_.waited(std::min(hold, until - clock_.now()));
        continue;
      }
      ExecutedCommand ex{cmd->command_id, cmd->name, false, {}, clock_.now(), 0, false};
      auto r = model_->execute({cmd->name, cmd->args});
      clock_.sleep(r.duration);
      ex.ok = r.ok;
      ex.error = r.error;
      ex.finished = clock_.now();
      std::vector<Reading> readings;
      for (const auto& [k, v] : r.readings) readings.push_back({*device_id_, ex.finished, k, v});
      try {
        if (!readings.empty()) link_.push_readings(*device_id_, readings);
        link_.post_result({cmd->command_id, r.ok, r.error, r.data});
        ex.result_delivered = true;
      } catch (const std::exception& e) {
        note(e);
      }
      rep.commands.push_back(std::move(ex));
    }
  }

  std::unique_ptr<DeviceModel> model_;
  ServerLink& link_;
  AgentClock& clock_;
  AgentOptions opt_;
  std::optional<std::string> device_id_;
  std::string version_;
  std::map<std::string, Bytes> files_;
  nlohmann::json config_ = nlohmann::json::object();
  DeviceCyclePhase phase_ = DeviceCyclePhase::deep_sleep;
  std::size_t cycles_ = 0;
};

}  // namespace macarons::agent
