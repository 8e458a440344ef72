#pragma once

// Mover and elevator state machines.
//
// Both devices are advanced by pure step functions: given a state, a time
// slice and the active command they return the next state plus the events
// emitted inside the slice (with exact analytic offsets). Commands that would
// break an interlock or an end-stop are rejected before any motion happens.
//
// Rail frame: cell `col` sits at x = col * pitch_h and the elevator bay at
// x = n_h * pitch_h. Elevator frame: row r sits at height (r + 1) * pitch_v and
// the exit station at height 0 (row kExitRow).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "macarons/error.hpp"
#include "macarons/farm.hpp"
#include "macarons/rational.hpp"

namespace macarons {

inline constexpr int kExitRow = -1;

template <class S>
bool same_point(const S& a, const S& b) {
  if constexpr (std::is_floating_point_v<S>) {
    return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b));
  } else {
    return a == b;
  }
}

template <class S>
S abs_value(const S& x) {
  return x < S(0) ? -x : x;
}

enum class EventKind { arrive, engage, release, lock, unlock, phase_change, error };

inline std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::arrive: return "arrive";
    case EventKind::engage: return "engage";
    case EventKind::release: return "release";
    case EventKind::lock: return "lock";
    case EventKind::unlock: return "unlock";
    case EventKind::phase_change: return "phase_change";
    case EventKind::error: return "error";
  }
  return "error";
}

enum class CommandFault {
  bounds,
  no_carriage,
  interlock,
  misalignment,
  busy,
  not_carrying,
  path_blocked,
  locked,
  overload,
  not_at_row,
  no_occupant,
  release_not_permitted,
  unknown_command,
};

inline std::string_view to_string(CommandFault f) {
  switch (f) {
    case CommandFault::bounds: return "bounds";
    case CommandFault::no_carriage: return "no_carriage";
    case CommandFault::interlock: return "interlock";
    case CommandFault::misalignment: return "misalignment";
    case CommandFault::busy: return "busy";
    case CommandFault::not_carrying: return "not_carrying";
    case CommandFault::path_blocked: return "path_blocked";
    case CommandFault::locked: return "locked";
    case CommandFault::overload: return "overload";
    case CommandFault::not_at_row: return "not_at_row";
    case CommandFault::no_occupant: return "no_occupant";
    case CommandFault::release_not_permitted: return "release_not_permitted";
    case CommandFault::unknown_command: return "unknown_command";
  }
  return "unknown_command";
}

struct CommandError {
  CommandFault fault;
  std::string message;

  bool operator==(const CommandError&) const = default;
};

template <class S>
struct DeviceEvent {
  S offset{};  // time into the step slice
  EventKind kind = EventKind::arrive;
  std::map<std::string, std::string> detail;
};

enum class StepStatus { in_progress, completed, rejected };

template <class State, class S>
struct StepResult {
  State state;
  std::vector<DeviceEvent<S>> events;
  StepStatus status = StepStatus::in_progress;
  std::optional<CommandError> error;
};

// ---------------------------------------------------------------------------
// Commands

namespace mover_cmd {
struct MoveTo {
  int col = 0;
  std::optional<int> row = std::nullopt;  // agent mode: shelf row the elevator delivered us to
};
struct Dock {
  std::optional<int> row;
};
struct Engage {};
struct Release {};
}  // namespace mover_cmd

using MoverCommand = std::variant<mover_cmd::MoveTo, mover_cmd::Dock, mover_cmd::Engage, mover_cmd::Release>;

struct Occupant {
  std::string mover_id;
  std::optional<std::string> carriage_id;

  bool loaded() const { return carriage_id.has_value(); }
  bool operator==(const Occupant&) const = default;
};

namespace elevator_cmd {
struct GotoRow {
  int row = 0;  // kExitRow for the exit station
};
struct Lock {};
struct Unlock {};
/// Agent mode only: the elevator cannot see who is aboard, the coordinator says.
struct SetOccupant {
  std::optional<Occupant> occupant;
};
}  // namespace elevator_cmd

using ElevatorCommand = std::variant<elevator_cmd::GotoRow, elevator_cmd::Lock, elevator_cmd::Unlock, elevator_cmd::SetOccupant>;

// ---------------------------------------------------------------------------
// Kinematics

template <class S>
struct MoverKinematics {
  int n_h = 1;
  S pitch_h = S(1250);
  S speed = S(100);
  S t_engage = S(2);
  double payload_max = 12.5;

  S bay_position() const { return S(n_h) * pitch_h; }

  /// `unit_time`, when set, overrides the speed so one pitch takes exactly that long.
  static MoverKinematics from(const ModuleSpec& m, S t_engage, std::optional<S> unit_time = std::nullopt) {
    MoverKinematics k;
    k.n_h = m.n_h;
    k.pitch_h = scalar_from<S>(m.pitch_h);
    k.speed = unit_time ? k.pitch_h / *unit_time : scalar_from<S>(m.mover_speed);
    k.t_engage = t_engage;
    k.payload_max = m.payload_max;
    if (!(k.speed > S(0))) throw Error(ErrorCode::parameter, "mover speed must be positive");
    return k;
  }
};

template <class S>
struct ElevatorKinematics {
  int n_v = 2;
  S pitch_v = S(500);
  S speed = scalar_from<S>(33.3);
  S ir_tolerance = S(3);

  S height_of(int row) const { return S(row + 1) * pitch_v; }
  S max_height() const { return S(n_v) * pitch_v; }

  static ElevatorKinematics from(const ModuleSpec& m, std::optional<S> unit_time = std::nullopt,
                                 S ir_tolerance = S(3)) {
    ElevatorKinematics k;
    k.n_v = m.n_v;
    k.pitch_v = scalar_from<S>(m.pitch_v);
    k.speed = unit_time ? k.pitch_v / *unit_time : scalar_from<S>(m.lift_speed);
    k.ir_tolerance = ir_tolerance;
    if (!(k.speed > S(0))) throw Error(ErrorCode::parameter, "lift speed must be positive");
    return k;
  }
};

// ---------------------------------------------------------------------------
// Mover

enum class MoverMode { parked, transit, under_carriage, engaged, on_elevator };

inline std::string_view to_string(MoverMode m) {
  switch (m) {
    case MoverMode::parked: return "parked";
    case MoverMode::transit: return "transit";
    case MoverMode::under_carriage: return "under_carriage";
    case MoverMode::engaged: return "engaged";
    case MoverMode::on_elevator: return "on_elevator";
  }
  return "parked";
}

template <class S>
struct MoverTask {
  enum class Kind { move, latch, unlatch };
  Kind kind = Kind::move;
  S start{};
  S target{};
  S remaining{};  // latch time left
  MoverMode arrive_mode = MoverMode::parked;
  std::string carriage;  // for latch/unlatch

  bool operator==(const MoverTask&) const = default;
};

template <class S>
struct MoverState {
  std::string id = "mover-0";
  MoverMode mode = MoverMode::on_elevator;
  S position{};  // mm along the rail
  int row = kExitRow;
  std::optional<std::string> carrying;
  std::int64_t marker_count = 0;
  std::optional<MoverTask<S>> task;

  bool moving() const { return task && task->kind == MoverTask<S>::Kind::move; }
  bool operator==(const MoverState&) const = default;
};

/// What the mover can sense about its surroundings.
class MoverEnv {
 public:
  virtual ~MoverEnv() = default;
  /// Carriage resting in a shelf cell, or waiting at the exit when row == kExitRow.
  virtual std::optional<std::string> carriage_at(int col, int row) const = 0;
  virtual double carriage_mass(const std::string& id) const = 0;
  /// Row the elevator platform is stopped and aligned at, if it is stationary.
  virtual std::optional<int> elevator_row() const = 0;
  virtual bool elevator_locked() const = 0;
};

template <class S>
MoverState<S> mover_docked_at_exit(std::string id, const MoverKinematics<S>& k) {
  MoverState<S> s;
  s.id = std::move(id);
  s.mode = MoverMode::on_elevator;
  s.position = k.bay_position();
  s.row = kExitRow;
  s.marker_count = k.n_h;
  return s;
}

template <class S>
std::optional<int> rail_index(const MoverKinematics<S>& k, const S& position) {
  // Index of the marker at `position` (n_h is the bay), if exactly on one.
  S q = position / k.pitch_h;
  std::int64_t i = floor_int(q);
  for (std::int64_t c : {i, i + 1}) {
    if (c >= 0 && c <= k.n_h && same_point(S(c) * k.pitch_h, position)) return static_cast<int>(c);
  }
  return std::nullopt;
}

namespace detail {

template <class S>
std::optional<CommandError> mover_begin(const MoverKinematics<S>& k, MoverState<S>& s, const MoverCommand& cmd,
                                        const MoverEnv& env) {
  using Task = MoverTask<S>;
  if (s.task) return CommandError{CommandFault::busy, "mover already executing a command"};
  const auto here = rail_index(k, s.position);
  const bool at_bay = here && *here == k.n_h;

  auto check_path = [&](int from_exclusive, int to_inclusive) -> std::optional<CommandError> {
    // Loaded motion may not pass under other carriages.
    int lo = std::min(from_exclusive, to_inclusive);
    int hi = std::max(from_exclusive, to_inclusive);
    for (int c = lo; c <= hi; ++c) {
      if (c == from_exclusive || c >= k.n_h) continue;
      if (auto other = env.carriage_at(c, s.row)) {
        return CommandError{CommandFault::path_blocked, "path blocked by carriage " + *other};
      }
    }
    return std::nullopt;
  };

  auto leave_elevator_checks = [&]() -> std::optional<CommandError> {
    if (!at_bay) return std::nullopt;
    auto row = env.elevator_row();
    if (!row || *row != s.row || s.row == kExitRow) {
      return CommandError{CommandFault::misalignment, "elevator not aligned with a shelf row"};
    }
    if (env.elevator_locked()) return CommandError{CommandFault::locked, "interaction arm locked to the elevator"};
    return std::nullopt;
  };

  auto start_move = [&](const S& target, MoverMode arrive) {
    Task t;
    t.kind = Task::Kind::move;
    t.start = s.position;
    t.target = target;
    t.arrive_mode = arrive;
    s.task = t;
    s.mode = s.carrying ? MoverMode::engaged : MoverMode::transit;
  };

  if (const auto* mv = std::get_if<mover_cmd::MoveTo>(&cmd)) {
    if (mv->col < 0 || mv->col >= k.n_h) {
      return CommandError{CommandFault::bounds, "column " + std::to_string(mv->col) + " beyond the end-stops"};
    }
    if (at_bay && mv->row) s.row = *mv->row;
    if (auto e = leave_elevator_checks()) return e;
    int from = here ? *here : static_cast<int>(floor_int(s.position / k.pitch_h));
    if (s.carrying) {
      if (auto e = check_path(from, mv->col)) return e;
    }
    MoverMode arrive = s.carrying ? MoverMode::engaged
                                  : (env.carriage_at(mv->col, s.row) ? MoverMode::under_carriage : MoverMode::parked);
    start_move(S(mv->col) * k.pitch_h, arrive);
    return std::nullopt;
  }
  if (const auto* dk = std::get_if<mover_cmd::Dock>(&cmd)) {
    if (at_bay) {
      start_move(s.position, MoverMode::on_elevator);
      return std::nullopt;
    }
    if (dk->row) s.row = *dk->row;
    auto row = env.elevator_row();
    if (!row || *row != s.row) return CommandError{CommandFault::misalignment, "elevator not aligned with this row"};
    if (s.carrying) {
      int from = here ? *here : static_cast<int>(floor_int(s.position / k.pitch_h));
      if (auto e = check_path(from, k.n_h)) return e;
    }
    start_move(k.bay_position(), MoverMode::on_elevator);
    return std::nullopt;
  }
  if (std::holds_alternative<mover_cmd::Engage>(cmd)) {
    if (s.carrying) return CommandError{CommandFault::busy, "already carrying " + *s.carrying};
    std::optional<std::string> target;
    if (at_bay) {
      if (s.row != kExitRow) return CommandError{CommandFault::no_carriage, "no carriage"};
      if (env.elevator_row() != std::optional<int>(kExitRow)) {
        return CommandError{CommandFault::misalignment, "elevator not stopped at the exit"};
      }
      target = env.carriage_at(0, kExitRow);
    } else if (here) {
      target = env.carriage_at(*here, s.row);
    }
    if (!target) return CommandError{CommandFault::no_carriage, "no carriage"};
    if (env.carriage_mass(*target) > k.payload_max) {
      return CommandError{CommandFault::overload, "carriage " + *target + " exceeds payload limit"};
    }
    Task t;
    t.kind = Task::Kind::latch;
    t.start = t.target = s.position;
    t.remaining = k.t_engage;
    t.arrive_mode = at_bay ? MoverMode::on_elevator : MoverMode::engaged;
    t.carriage = *target;
    s.task = t;
    return std::nullopt;
  }
  // Release.
  if (!s.carrying) return CommandError{CommandFault::not_carrying, "not carrying a carriage"};
  Task t;
  t.kind = Task::Kind::unlatch;
  t.start = t.target = s.position;
  t.remaining = k.t_engage;
  t.carriage = *s.carrying;
  if (at_bay) {
    if (s.row != kExitRow) return CommandError{CommandFault::release_not_permitted, "cannot release on the elevator"};
    if (env.elevator_row() != std::optional<int>(kExitRow)) {
      return CommandError{CommandFault::misalignment, "elevator not stopped at the exit"};
    }
    if (env.elevator_locked()) return CommandError{CommandFault::locked, "unlock the elevator before release"};
    t.arrive_mode = MoverMode::on_elevator;
  } else if (here) {
    t.arrive_mode = MoverMode::under_carriage;
  } else {
    return CommandError{CommandFault::release_not_permitted, "not aligned with a cell"};
  }
  s.task = t;
  return std::nullopt;
}

template <class S>
void update_markers(const MoverKinematics<S>& k, MoverState<S>& s, bool forward) {
  if (auto on_marker = rail_index(k, s.position)) {
    s.marker_count = *on_marker;
    return;
  }
  S q = s.position / k.pitch_h;
  s.marker_count = forward ? floor_int(q) : -floor_int(-q);
}

}  // namespace detail

/// Time until the mover's active command completes, if one is active.
template <class S>
std::optional<S> mover_time_to_event(const MoverKinematics<S>& k, const MoverState<S>& s) {
  if (!s.task) return std::nullopt;
  if (s.task->kind == MoverTask<S>::Kind::move) return abs_value(s.task->target - s.position) / k.speed;
  return s.task->remaining < S(0) ? S(0) : s.task->remaining;
}

/// Advances the mover by `dt`, starting `cmd` first if no command is active.
template <class S>
StepResult<MoverState<S>, S> mover_step(const MoverKinematics<S>& k, MoverState<S> s, const S& dt,
                                        const MoverCommand& cmd, const MoverEnv& env) {
  using Task = MoverTask<S>;
  if (dt < S(0)) throw Error(ErrorCode::parameter, "dt must be non-negative");
  StepResult<MoverState<S>, S> out{s, {}, StepStatus::in_progress, std::nullopt};
  if (!s.task) {
    if (auto err = detail::mover_begin(k, s, cmd, env)) {
      out.status = StepStatus::rejected;
      out.error = err;
      out.events.push_back({S(0), EventKind::error, {{"fault", std::string(to_string(err->fault))}, {"message", err->message}}});
      return out;
    }
  }
  Task& t = *s.task;
  if (t.kind == Task::Kind::move) {
    S remaining = abs_value(t.target - s.position);
    bool forward = t.target > s.position;
    S reach = k.speed * dt;
    if (reach >= remaining) {
      S at = remaining / k.speed;
      s.position = t.target;
      detail::update_markers(k, s, forward);
      s.mode = t.arrive_mode;
      s.task.reset();
      out.status = StepStatus::completed;
      out.events.push_back({at, EventKind::arrive, {{"position", scalar_str(s.position)}, {"row", std::to_string(s.row)}}});
    } else {
      s.position = forward ? s.position + reach : s.position - reach;
      detail::update_markers(k, s, forward);
    }
  } else {
    if (t.remaining <= dt) {
      S at = t.remaining < S(0) ? S(0) : t.remaining;
      bool engaging = t.kind == Task::Kind::latch;
      s.carrying = engaging ? std::optional<std::string>(t.carriage) : std::nullopt;
      s.mode = t.arrive_mode;
      std::string carriage = t.carriage;
      s.task.reset();
      out.status = StepStatus::completed;
      out.events.push_back({at, engaging ? EventKind::engage : EventKind::release,
                            {{"carriage", carriage}, {"row", std::to_string(s.row)}, {"position", scalar_str(s.position)}}});
    } else {
      t.remaining -= dt;
    }
  }
  out.state = std::move(s);
  return out;
}

// ---------------------------------------------------------------------------
// Elevator

enum class ElevatorMode { at_row, moving, aligning };

inline std::string_view to_string(ElevatorMode m) {
  switch (m) {
    case ElevatorMode::at_row: return "at_row";
    case ElevatorMode::moving: return "moving";
    case ElevatorMode::aligning: return "aligning";
  }
  return "at_row";
}

template <class S>
struct ElevatorState {
  std::string id = "elevator-0";
  ElevatorMode mode = ElevatorMode::at_row;
  S height{};
  int row = kExitRow;  // last row reached
  int target_row = kExitRow;
  bool lock_engaged = false;
  bool ir_triggered = true;
  std::optional<Occupant> occupant;
  bool busy = false;  // a goto is in progress

  bool in_motion() const { return mode != ElevatorMode::at_row; }
  bool operator==(const ElevatorState&) const = default;
};

class ElevatorEnv {
 public:
  virtual ~ElevatorEnv() = default;
  /// True while a mover is crossing the platform edge or latching aboard.
  virtual bool mover_busy_at_platform() const = 0;
};

class NoElevatorNeighbours : public ElevatorEnv {
 public:
  bool mover_busy_at_platform() const override { return false; }
};

template <class S>
bool ir_band(const ElevatorKinematics<S>& k, const S& height, int target_row) {
  return abs_value(height - k.height_of(target_row)) <= k.ir_tolerance;
}

template <class S>
std::optional<S> elevator_time_to_event(const ElevatorKinematics<S>& k, const ElevatorState<S>& s) {
  if (!s.busy) return std::nullopt;
  return abs_value(k.height_of(s.target_row) - s.height) / k.speed;
}

template <class S>
StepResult<ElevatorState<S>, S> elevator_step(const ElevatorKinematics<S>& k, ElevatorState<S> s, const S& dt,
                                              const ElevatorCommand& cmd, const ElevatorEnv& env = NoElevatorNeighbours{}) {
  if (dt < S(0)) throw Error(ErrorCode::parameter, "dt must be non-negative");
  StepResult<ElevatorState<S>, S> out{s, {}, StepStatus::in_progress, std::nullopt};
  auto reject = [&](CommandFault f, std::string msg) {
    out.status = StepStatus::rejected;
    out.error = CommandError{f, msg};
    out.events.push_back({S(0), EventKind::error, {{"fault", std::string(to_string(f))}, {"message", std::move(msg)}}});
    return out;
  };
  auto complete = [&](EventKind kind, std::map<std::string, std::string> detail) {
    out.status = StepStatus::completed;
    out.events.push_back({S(0), kind, std::move(detail)});
    out.state = s;
    return out;
  };

  if (!s.busy) {
    if (const auto* go = std::get_if<elevator_cmd::GotoRow>(&cmd)) {
      if (go->row < kExitRow || go->row >= k.n_v) {
        return reject(CommandFault::bounds, "row " + std::to_string(go->row) + " outside the shaft");
      }
      if (s.occupant && s.occupant->loaded() && !s.lock_engaged) {
        return reject(CommandFault::interlock, "loaded occupant and lock disengaged");
      }
      if (env.mover_busy_at_platform()) return reject(CommandFault::busy, "mover busy at the platform");
      s.target_row = go->row;
      if (same_point(s.height, k.height_of(go->row))) {
        s.height = k.height_of(go->row);
        s.row = go->row;
        s.ir_triggered = true;
        return complete(EventKind::arrive, {{"row", std::to_string(s.row)}, {"height", scalar_str(s.height)}});
      }
      s.busy = true;
      s.ir_triggered = ir_band(k, s.height, s.target_row);
      s.mode = s.ir_triggered ? ElevatorMode::aligning : ElevatorMode::moving;
    } else if (std::holds_alternative<elevator_cmd::Lock>(cmd)) {
      if (s.in_motion()) return reject(CommandFault::not_at_row, "lock only changes at a row");
      if (!s.occupant) return reject(CommandFault::no_occupant, "nothing aboard to lock");
      s.lock_engaged = true;
      return complete(EventKind::lock, {{"row", std::to_string(s.row)}});
    } else if (std::holds_alternative<elevator_cmd::Unlock>(cmd)) {
      if (s.in_motion()) return reject(CommandFault::not_at_row, "lock only changes at a row");
      s.lock_engaged = false;
      return complete(EventKind::unlock, {{"row", std::to_string(s.row)}});
    } else if (const auto* so = std::get_if<elevator_cmd::SetOccupant>(&cmd)) {
      if (s.in_motion()) return reject(CommandFault::not_at_row, "occupant changes only at a row");
      if (!so->occupant && s.lock_engaged) return reject(CommandFault::locked, "occupant cannot leave while locked");
      s.occupant = so->occupant;
      out.status = StepStatus::completed;
      out.state = s;
      return out;
    }
  }

  S target = k.height_of(s.target_row);
  S remaining = abs_value(target - s.height);
  S reach = k.speed * dt;
  if (reach >= remaining) {
    S at = remaining / k.speed;
    s.height = target;
    s.row = s.target_row;
    s.mode = ElevatorMode::at_row;
    s.ir_triggered = true;
    s.busy = false;
    out.status = StepStatus::completed;
    out.events.push_back({at, EventKind::arrive, {{"row", std::to_string(s.row)}, {"height", scalar_str(s.height)}}});
  } else {
    s.height = target > s.height ? s.height + reach : s.height - reach;
    s.ir_triggered = ir_band(k, s.height, s.target_row);
    s.mode = s.ir_triggered ? ElevatorMode::aligning : ElevatorMode::moving;
  }
  out.state = std::move(s);
  return out;
}

// ---------------------------------------------------------------------------
// IR sensor calibration

struct IrCalibration {
  double offset = 0.0;     // mm the sensor mount is shifted by
  double tolerance = 3.0;  // mm

  bool operator==(const IrCalibration&) const = default;
};

/// Bisects the sensor mount offset until the trigger boundary is bracketed
/// within the calibration tolerance. `probe(offset)` reports whether the
/// sensor triggers with the mount at `offset`.
inline IrCalibration calibrate_ir(const IrCalibration& initial, const std::function<bool(double)>& probe,
                                  double lo = -50.0, double hi = 50.0, int max_probes = 20) {
  if (!(initial.tolerance > 0.0)) throw Error(ErrorCode::parameter, "calibration tolerance must be positive");
  if (!(lo < hi)) throw Error(ErrorCode::parameter, "calibration bracket is empty");
  int probes = 0;
  bool lo_state = probe(lo);
  bool hi_state = probe(hi);
  probes += 2;
  if (lo_state == hi_state) throw Error(ErrorCode::calibration_failed, "no trigger boundary inside the bracket");
  while (hi - lo > initial.tolerance) {
    if (probes >= max_probes) throw Error(ErrorCode::calibration_failed, "probe budget exhausted");
    double mid = lo + (hi - lo) / 2.0;
    bool state = probe(mid);
    ++probes;
    if (state == lo_state) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return {lo + (hi - lo) / 2.0, initial.tolerance};
}

}  // namespace macarons
