#pragma once

// Load/unload scenarios on top of the kernel.
//
// Each module runs a sequential plan: one device command at a time, the next
// issued the instant the previous completes. Unloading visits carriages in
// column-major order starting from the column next to the elevator bay, so a
// loaded mover never has to pass under another carriage. With zero latch time
// the total for a full module equals N_h*N_v*((N_h+1)*t_h + (N_v+1)*t_v).

#include <algorithm>
#include <deque>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "macarons/digest.hpp"
#include "macarons/error.hpp"
#include "macarons/farm.hpp"
#include "macarons/farm_io.hpp"
#include "macarons/kernel.hpp"
#include "macarons/rational.hpp"
#include "macarons/world.hpp"

namespace macarons {

enum class GoalKind { unload_all, load_all, move_one };

struct Goal {
  GoalKind kind = GoalKind::unload_all;
  std::string carriage;  // move_one
  CellAddress dest;      // move_one

  bool operator==(const Goal&) const = default;
};

enum class ModulesMode { parallel, serial };

/// Per-unit operation times. Unset move times fall back to the module's speeds.
struct ScenarioTiming {
  std::optional<Rational> t_h;
  std::optional<Rational> t_v;
  Rational t_engage{2};

  bool operator==(const ScenarioTiming&) const = default;
};

struct Placement {
  Carriage carriage;
  CellAddress cell;

  bool operator==(const Placement&) const = default;
};

struct Scenario {
  FarmSpec farm;
  std::vector<Placement> placements;  // for load_all: destination cells
  Goal goal;
  ScenarioTiming timing;
  ModulesMode modules = ModulesMode::parallel;

  bool operator==(const Scenario&) const = default;
};

template <class S>
struct Trace {
  std::vector<SimEvent<S>> events;
  S total_time{};
  std::map<std::string, S> completions;
  std::size_t modules = 0;
  std::string farm_digest;
};

template <class S>
S from_rational(const Rational& r) {
  if constexpr (std::is_same_v<S, Rational>) {
    return r;
  } else {
    return static_cast<S>(r.to_double());
  }
}

inline std::string farm_digest(const FarmSpec& farm) { return sha256_hex(save_farm(FarmFile{farm, {}})); }

namespace detail {

struct PlanStep {
  DeviceRole role = DeviceRole::mover;
  std::variant<MoverCommand, ElevatorCommand> command;
};

inline PlanStep mover(MoverCommand c) { return {DeviceRole::mover, std::move(c)}; }
inline PlanStep elevator(ElevatorCommand c) { return {DeviceRole::elevator, std::move(c)}; }

inline void plan_unload(std::deque<PlanStep>& plan, const CellAddress& at) {
  plan.push_back(elevator(elevator_cmd::GotoRow{at.row}));
  plan.push_back(mover(mover_cmd::MoveTo{at.col, std::nullopt}));
  plan.push_back(mover(mover_cmd::Engage{}));
  plan.push_back(mover(mover_cmd::Dock{}));
  plan.push_back(elevator(elevator_cmd::Lock{}));
  plan.push_back(elevator(elevator_cmd::GotoRow{kExitRow}));
  plan.push_back(elevator(elevator_cmd::Unlock{}));
  plan.push_back(mover(mover_cmd::Release{}));
}

inline void plan_load(std::deque<PlanStep>& plan, const CellAddress& to) {
  plan.push_back(mover(mover_cmd::Engage{}));
  plan.push_back(elevator(elevator_cmd::Lock{}));
  plan.push_back(elevator(elevator_cmd::GotoRow{to.row}));
  plan.push_back(elevator(elevator_cmd::Unlock{}));
  plan.push_back(mover(mover_cmd::MoveTo{to.col, std::nullopt}));
  plan.push_back(mover(mover_cmd::Release{}));
  plan.push_back(mover(mover_cmd::Dock{}));
  plan.push_back(elevator(elevator_cmd::GotoRow{kExitRow}));
}

inline void plan_move(std::deque<PlanStep>& plan, const CellAddress& from, const CellAddress& to) {
  plan.push_back(elevator(elevator_cmd::GotoRow{from.row}));
  plan.push_back(mover(mover_cmd::MoveTo{from.col, std::nullopt}));
  plan.push_back(mover(mover_cmd::Engage{}));
  if (from.row == to.row) {
    plan.push_back(mover(mover_cmd::MoveTo{to.col, std::nullopt}));
  } else {
    plan.push_back(mover(mover_cmd::Dock{}));
    plan.push_back(elevator(elevator_cmd::Lock{}));
    plan.push_back(elevator(elevator_cmd::GotoRow{to.row}));
    plan.push_back(elevator(elevator_cmd::Unlock{}));
    plan.push_back(mover(mover_cmd::MoveTo{to.col, std::nullopt}));
  }
  plan.push_back(mover(mover_cmd::Release{}));
  plan.push_back(mover(mover_cmd::Dock{}));
  plan.push_back(elevator(elevator_cmd::GotoRow{kExitRow}));
}

template <class S>
class PlanController : public SimController<S> {
 public:
  PlanController(std::vector<ModuleWorld<S>>& worlds, std::vector<std::deque<PlanStep>> plans, ModulesMode mode,
                 bool check)
      : worlds_(worlds), plans_(std::move(plans)), mode_(mode), check_(check) {}

  bool dispatch(const S& now, std::vector<SimEvent<S>>& out) override {
    bool progressed = false;
    for (std::size_t m = 0; m < worlds_.size(); ++m) {
      auto& w = worlds_[m];
      if (check_) w.check_invariants();
      while (!plans_[m].empty() && w.idle()) {
        PlanStep step = std::move(plans_[m].front());
        plans_[m].pop_front();
        std::optional<CommandError> err;
        if (step.role == DeviceRole::mover) {
          err = w.command_mover(std::get<MoverCommand>(step.command), now, out);
        } else {
          err = w.command_elevator(std::get<ElevatorCommand>(step.command), now, out);
        }
        if (err) {
          throw Error(ErrorCode::scenario, "module " + std::to_string(m) + ": " + std::string(to_string(err->fault)) +
                                               ": " + err->message);
        }
        progressed = true;
        if (check_) w.check_invariants();
      }
      // Serial mode: later modules wait until this one has fully finished.
      if (mode_ == ModulesMode::serial && !(plans_[m].empty() && w.idle())) break;
    }
    return progressed;
  }

  bool done() const override {
    for (std::size_t m = 0; m < worlds_.size(); ++m) {
      if (!plans_[m].empty() || !worlds_[m].idle()) return false;
    }
    return true;
  }

 private:
  std::vector<ModuleWorld<S>>& worlds_;
  std::vector<std::deque<PlanStep>> plans_;
  ModulesMode mode_;
  bool check_;
};

}  // namespace detail

struct RunOptions {
  bool check_invariants = true;
};

/// Builds the per-module worlds for a scenario (exposed for tests and tools).
template <class S>
std::vector<ModuleWorld<S>> build_worlds(const Scenario& sc) {
  if (auto v = validate_farm(sc.farm); !v.ok()) {
    throw Error(ErrorCode::validation, "invalid farm: " + v.violations.front().rule);
  }
  std::optional<S> t_h, t_v;
  if (sc.timing.t_h) t_h = from_rational<S>(*sc.timing.t_h);
  if (sc.timing.t_v) t_v = from_rational<S>(*sc.timing.t_v);
  std::vector<ModuleWorld<S>> worlds;
  worlds.reserve(sc.farm.n());
  for (std::size_t m = 0; m < sc.farm.n(); ++m) {
    const auto& spec = sc.farm.modules[m];
    worlds.emplace_back(m, MoverKinematics<S>::from(spec, from_rational<S>(sc.timing.t_engage), t_h),
                        ElevatorKinematics<S>::from(spec, t_v));
  }
  return worlds;
}

template <class S>
Trace<S> run_scenario(const Scenario& sc, const RunOptions& opt = {}) {
  auto worlds = build_worlds<S>(sc);
  std::vector<std::deque<detail::PlanStep>> plans(worlds.size());
  std::vector<std::string> in_scope;

  auto check_module = [&](const CellAddress& a, const std::string& id) {
    if (a.module >= worlds.size()) throw Error(ErrorCode::address, "carriage '" + id + "' refers to a missing module");
  };

  switch (sc.goal.kind) {
    case GoalKind::unload_all: {
      std::vector<CellAddress> cells;
      for (const auto& p : sc.placements) {
        check_module(p.cell, p.carriage.id);
        worlds[p.cell.module].place(p.carriage, p.cell);
        cells.push_back(p.cell);
        in_scope.push_back(p.carriage.id);
      }
      // Column nearest the bay first, rows bottom-up within a column.
      std::sort(cells.begin(), cells.end(), [](const CellAddress& a, const CellAddress& b) {
        if (a.module != b.module) return a.module < b.module;
        if (a.col != b.col) return a.col > b.col;
        return a.row < b.row;
      });
      for (const auto& c : cells) detail::plan_unload(plans[c.module], c);
      break;
    }
    case GoalKind::load_all: {
      std::vector<Placement> order = sc.placements;
      std::sort(order.begin(), order.end(), [](const Placement& a, const Placement& b) {
        if (a.cell.module != b.cell.module) return a.cell.module < b.cell.module;
        if (a.cell.col != b.cell.col) return a.cell.col < b.cell.col;
        return a.cell.row < b.cell.row;
      });
      std::map<CellAddress, std::string> taken;
      for (const auto& p : order) {
        check_module(p.cell, p.carriage.id);
        if (!in_bounds(sc.farm.modules[p.cell.module], p.cell)) {
          throw Error(ErrorCode::address, "destination of '" + p.carriage.id + "' outside the module");
        }
        if (auto [it, fresh] = taken.emplace(p.cell, p.carriage.id); !fresh) {
          throw Error(ErrorCode::scenario, "carriages '" + it->second + "' and '" + p.carriage.id + "' share a cell");
        }
        worlds[p.cell.module].queue_at_exit(p.carriage);
        detail::plan_load(plans[p.cell.module], p.cell);
        in_scope.push_back(p.carriage.id);
      }
      break;
    }
    case GoalKind::move_one: {
      const Placement* src = nullptr;
      for (const auto& p : sc.placements) {
        check_module(p.cell, p.carriage.id);
        worlds[p.cell.module].place(p.carriage, p.cell);
        if (p.carriage.id == sc.goal.carriage) src = &p;
      }
      if (src == nullptr) throw Error(ErrorCode::scenario, "goal carriage '" + sc.goal.carriage + "' not placed");
      const auto& dest = sc.goal.dest;
      if (dest.module != src->cell.module) throw Error(ErrorCode::scenario, "move_one cannot change module");
      if (!in_bounds(sc.farm.modules[dest.module], dest)) throw Error(ErrorCode::address, "destination outside module");
      if (dest.col == src->cell.col && dest.row == src->cell.row) break;
      if (auto other = worlds[dest.module].carriage_in(dest.col, dest.row)) {
        throw Error(ErrorCode::scenario, "destination occupied by carriage " + *other);
      }
      detail::plan_move(plans[dest.module], src->cell, dest);
      in_scope.push_back(sc.goal.carriage);
      break;
    }
  }

  Kernel<S> kernel(KernelMode::event_driven);
  std::vector<WorldAgent<S>> agents;
  agents.reserve(worlds.size());
  for (auto& w : worlds) agents.emplace_back(w);
  for (auto& a : agents) kernel.add(a);

  detail::PlanController<S> controller(worlds, std::move(plans), sc.modules, opt.check_invariants);
  Trace<S> trace;
  trace.events = kernel.run(controller);
  trace.modules = worlds.size();
  trace.farm_digest = farm_digest(sc.farm);
  for (const auto& e : trace.events) {
    if (trace.total_time < e.time) trace.total_time = e.time;
    if (e.kind == EventKind::release) trace.completions[e.detail.at("carriage")] = e.time;
  }
  for (const auto& id : in_scope) {
    if (trace.completions.count(id) == 0) throw Error(ErrorCode::scenario, "carriage '" + id + "' never completed");
  }
  for (auto it = trace.completions.begin(); it != trace.completions.end();) {
    it = std::find(in_scope.begin(), in_scope.end(), it->first) == in_scope.end() ? trace.completions.erase(it)
                                                                                   : std::next(it);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Files

inline Rational rational_from_json(const nlohmann::json& j, const char* what) {
  if (j.is_number_integer()) return Rational(j.get<std::int64_t>());
  if (j.is_number()) return Rational::from_double(j.get<double>());
  if (j.is_string()) return Rational::parse(j.get<std::string>());
  throw Error(ErrorCode::validation, std::string(what) + " must be a number or a \"p/q\" string");
}

/// Parses a scenario document. `base` resolves a relative "farm_file".
inline Scenario scenario_from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  try {
    if (!j.is_object() || j.value("format", std::string("macarons-scenario")) != "macarons-scenario") {
      throw Error(ErrorCode::validation, "not a scenario document");
    }
    Scenario sc;
    FarmFile farm;
    if (auto it = j.find("farm"); it != j.end()) {
      farm = farm_from_json(*it);
    } else if (auto f = j.find("farm_file"); f != j.end()) {
      farm = load_farm_file(base / f->get<std::string>());
    } else {
      throw Error(ErrorCode::validation, "scenario needs \"farm\" or \"farm_file\"");
    }
    sc.farm = farm.farm;
    if (auto cs = j.find("carriages"); cs != j.end()) {
      for (const auto& c : *cs) {
        Carriage carriage{c.at("id").get<std::string>(), c.value("tray_mass", 0.0), {}};
        CellAddress addr{c.value("module", std::size_t{0}), c.at("col").get<int>(), c.at("row").get<int>()};
        carriage.location = location::Cell{addr};
        sc.placements.push_back({carriage, addr});
      }
    } else {
      for (const auto& c : farm.carriages) {
        sc.placements.push_back({c, std::get<location::Cell>(c.location).addr});
      }
    }
    const auto& goal = j.at("goal");
    auto type = goal.at("type").get<std::string>();
    if (type == "unload_all") {
      sc.goal.kind = GoalKind::unload_all;
    } else if (type == "load_all") {
      sc.goal.kind = GoalKind::load_all;
    } else if (type == "move_one") {
      sc.goal.kind = GoalKind::move_one;
      sc.goal.carriage = goal.at("carriage").get<std::string>();
      const auto& to = goal.at("to");
      sc.goal.dest = {to.value("module", std::size_t{0}), to.at("col").get<int>(), to.at("row").get<int>()};
    } else {
      throw Error(ErrorCode::validation, "unknown goal type '" + type + "'");
    }
    if (auto t = j.find("timing"); t != j.end()) {
      if (auto v = t->find("t_h"); v != t->end() && !v->is_null()) sc.timing.t_h = rational_from_json(*v, "t_h");
      if (auto v = t->find("t_v"); v != t->end() && !v->is_null()) sc.timing.t_v = rational_from_json(*v, "t_v");
      if (auto v = t->find("t_engage"); v != t->end()) sc.timing.t_engage = rational_from_json(*v, "t_engage");
    }
    auto modules = j.value("modules", std::string("parallel"));
    if (modules == "parallel") {
      sc.modules = ModulesMode::parallel;
    } else if (modules == "serial") {
      sc.modules = ModulesMode::serial;
    } else {
      throw Error(ErrorCode::validation, "modules must be parallel or serial");
    }
    return sc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::validation, std::string("scenario: ") + e.what());
  }
}

inline Scenario load_scenario_file(const std::filesystem::path& path) {
  auto text = read_text_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DecodeError(DecodeError::from_parser_position(e.byte), "scenario file: " + std::string(e.what()));
  }
  return scenario_from_json(j, path.parent_path());
}

/// Line-delimited JSON: one "event" record per event, then one "summary".
template <class S>
std::string trace_to_jsonl(const Trace<S>& trace) {
  std::string out;
  auto time_fields = [](nlohmann::json& j, const S& t) {
    j["time"] = to_double(t);
    if constexpr (std::is_same_v<S, Rational>) j["time_exact"] = t.str();
  };
  for (const auto& e : trace.events) {
    nlohmann::json j{{"type", "event"}, {"entity", e.entity}, {"kind", to_string(e.kind)}, {"detail", e.detail}};
    time_fields(j, e.time);
    out += j.dump();
    out += '\n';
  }
  nlohmann::json summary{{"type", "summary"},
                         {"events", trace.events.size()},
                         {"modules", trace.modules},
                         {"farm_digest", trace.farm_digest}};
  time_fields(summary, trace.total_time);
  summary["total_time"] = summary["time"];
  summary.erase("time");
  if (summary.contains("time_exact")) {
    summary["total_time_exact"] = summary["time_exact"];
    summary.erase("time_exact");
  }
  nlohmann::json completions = nlohmann::json::object();
  for (const auto& [id, t] : trace.completions) completions[id] = to_double(t);
  summary["completions"] = completions;
  out += summary.dump();
  out += '\n';
  return out;
}

template <class S>
std::string trace_hash(const Trace<S>& trace) {
  return sha256_hex(trace_to_jsonl(trace));
}

/// Summary record of a trace file, as read back by the analytics report.
struct TraceSummary {
  double total_time = 0.0;
  std::size_t events = 0;
  std::size_t modules = 0;
  std::string farm_digest;
  std::map<std::string, double> completions;
};

inline TraceSummary read_trace_summary(std::string_view jsonl) {
  std::istringstream in{std::string(jsonl)};
  std::string line;
  std::optional<TraceSummary> found;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw DecodeError(offset + DecodeError::from_parser_position(e.byte), "trace record");
      }
      if (j.value("type", std::string()) == "summary") {
        TraceSummary s;
        s.total_time = j.at("total_time").get<double>();
        s.events = j.at("events").get<std::size_t>();
        s.modules = j.at("modules").get<std::size_t>();
        s.farm_digest = j.at("farm_digest").get<std::string>();
        for (const auto& [k, v] : j.at("completions").items()) s.completions[k] = v.get<double>();
        found = s;
      }
    }
    offset += line.size() + 1;
  }
  if (!found) throw Error(ErrorCode::validation, "trace has no summary record");
  return *found;
}

}  // namespace macarons
