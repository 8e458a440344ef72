#pragma once

// One module's mover, elevator and carriages stepped together. The world owns
// the physical coupling between the devices (who is aboard the platform, which
// cells hold carriages) and keeps carriage locations in sync with device
// events. It is a value type so the safety search can copy and hash it.

#include <cstdio>
#include <deque>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "macarons/device.hpp"
#include "macarons/error.hpp"
#include "macarons/farm.hpp"
#include "macarons/kernel.hpp"

namespace macarons {

enum class DeviceRole { mover, elevator };

template <class S>
class ModuleWorld {
 public:
  ModuleWorld(std::size_t module, MoverKinematics<S> mk, ElevatorKinematics<S> ek)
      : module_(module), mk_(std::move(mk)), ek_(std::move(ek)) {
    char tag[16];
    std::snprintf(tag, sizeof tag, "%02zu", module);
    mover_ = mover_docked_at_exit<S>(std::string("mover-") + tag, mk_);
    elevator_.id = std::string("elevator-") + tag;
    elevator_.height = ek_.height_of(kExitRow);
    elevator_.row = elevator_.target_row = kExitRow;
    sync();
  }

  std::size_t module() const { return module_; }
  const MoverKinematics<S>& mover_kinematics() const { return mk_; }
  const ElevatorKinematics<S>& elevator_kinematics() const { return ek_; }
  const MoverState<S>& mover() const { return mover_; }
  const ElevatorState<S>& elevator() const { return elevator_; }
  const std::map<std::string, Carriage>& carriages() const { return carriages_; }
  const std::deque<std::string>& exit_queue() const { return exit_queue_; }

  void place(Carriage c, const CellAddress& addr) {
    if (addr.col < 0 || addr.col >= mk_.n_h || addr.row < 0 || addr.row >= ek_.n_v) {
      throw Error(ErrorCode::address, "carriage '" + c.id + "' placed outside the module");
    }
    auto cell = std::make_pair(addr.col, addr.row);
    if (auto it = cells_.find(cell); it != cells_.end()) {
      throw Error(ErrorCode::scenario, "carriages '" + it->second + "' and '" + c.id + "' share a cell");
    }
    if (carriages_.count(c.id) != 0) throw Error(ErrorCode::scenario, "duplicate carriage id '" + c.id + "'");
    c.location = location::Cell{CellAddress{module_, addr.col, addr.row}};
    cells_[cell] = c.id;
    carriages_[c.id] = std::move(c);
    ++carriage_count_;
  }

  /// Carriage waiting at the exit station to be loaded, in pickup order.
  void queue_at_exit(Carriage c) {
    if (carriages_.count(c.id) != 0) throw Error(ErrorCode::scenario, "duplicate carriage id '" + c.id + "'");
    c.location = location::AtExit{module_};
    exit_queue_.push_back(c.id);
    carriages_[c.id] = std::move(c);
    ++carriage_count_;
  }

  std::optional<std::string> carriage_in(int col, int row) const {
    if (auto it = cells_.find({col, row}); it != cells_.end()) return it->second;
    return std::nullopt;
  }

  bool idle(DeviceRole role) const { return role == DeviceRole::mover ? !mover_.task : !elevator_.busy; }
  bool idle() const { return idle(DeviceRole::mover) && idle(DeviceRole::elevator); }

  std::optional<S> time_to_event() const {
    auto a = mover_time_to_event(mk_, mover_);
    auto b = elevator_time_to_event(ek_, elevator_);
    if (a && b) return *a < *b ? a : b;
    return a ? a : b;
  }

  /// Starts a command at `now`. Instant commands complete here; on rejection
  /// an error event is emitted and the error returned.
  std::optional<CommandError> command_mover(const MoverCommand& cmd, const S& now, std::vector<SimEvent<S>>& out) {
    if (mover_.task) return CommandError{CommandFault::busy, "mover busy"};
    mover_cmd_ = cmd;
    auto r = mover_step(mk_, mover_, S(0), cmd, MoverView{*this});
    return absorb_mover(std::move(r), now, out);
  }

  std::optional<CommandError> command_elevator(const ElevatorCommand& cmd, const S& now,
                                               std::vector<SimEvent<S>>& out) {
    if (elevator_.busy) return CommandError{CommandFault::busy, "elevator busy"};
    elevator_cmd_ = cmd;
    auto r = elevator_step(ek_, elevator_, S(0), cmd, ElevatorView{*this});
    return absorb_elevator(std::move(r), now, out);
  }

  void step(const S& now, const S& dt, std::vector<SimEvent<S>>& out) {
    if (mover_.task) absorb_mover(mover_step(mk_, mover_, dt, mover_cmd_, MoverView{*this}), now, out);
    if (elevator_.busy) absorb_elevator(elevator_step(ek_, elevator_, dt, elevator_cmd_, ElevatorView{*this}), now, out);
  }

  /// Throws if any physical or safety invariant is broken.
  void check_invariants() const {
    auto fail = [&](const std::string& what) { throw Error(ErrorCode::scenario, "invariant broken: " + what); };
    if (mover_.position < S(0) || mover_.position > mk_.bay_position()) fail("mover outside rail end-stops");
    if (elevator_.height < S(0) || elevator_.height > ek_.max_height()) fail("elevator outside shaft");
    if (elevator_.in_motion() && elevator_.occupant && elevator_.occupant->loaded() && !elevator_.lock_engaged) {
      fail("elevator moving with a loaded occupant and the lock disengaged");
    }
    if (carriages_.size() != carriage_count_) fail("carriage count changed");
    std::size_t in_cells = 0;
    std::size_t carried = 0;
    for (const auto& [id, c] : carriages_) {
      if (const auto* cell = std::get_if<location::Cell>(&c.location)) {
        auto it = cells_.find({cell->addr.col, cell->addr.row});
        if (it == cells_.end() || it->second != id) fail("carriage " + id + " not registered in its cell");
        ++in_cells;
      } else if (std::holds_alternative<location::OnMover>(c.location) ||
                 std::holds_alternative<location::OnElevator>(c.location)) {
        if (mover_.carrying != id) fail("carriage " + id + " is not on the mover");
        ++carried;
      }
      if (mover_.carrying == id && c.tray_mass > mk_.payload_max) fail("payload exceeded by " + id);
    }
    if (in_cells != cells_.size()) fail("cell map holds stale carriages");
    if (carried > 1) fail("mover holds more than one carriage");
    if (mover_.carrying && carried != 1) fail("mover carrying a carriage that is not on it");
  }

  /// Canonical text form of the full state, used to hash states in searches.
  std::string key() const {
    std::ostringstream os;
    os << to_string(mover_.mode) << '|' << scalar_str(mover_.position) << '|' << mover_.row << '|'
       << mover_.carrying.value_or("-") << '|' << mover_.marker_count << '|';
    if (mover_.task) {
      os << static_cast<int>(mover_.task->kind) << ':' << scalar_str(mover_.task->start) << ':'
         << scalar_str(mover_.task->target) << ':'
         << scalar_str(mover_.task->remaining) << ':' << to_string(mover_.task->arrive_mode) << ':' << mover_.task->carriage;
    }
    os << "||" << to_string(elevator_.mode) << '|' << scalar_str(elevator_.height) << '|' << elevator_.row << '|'
       << elevator_.target_row << '|' << elevator_.lock_engaged << elevator_.ir_triggered << elevator_.busy << '|';
    if (elevator_.occupant) os << elevator_.occupant->mover_id << '/' << elevator_.occupant->carriage_id.value_or("-");
    os << "||";
    for (const auto& [id, c] : carriages_) os << id << '@' << location_key(c.location) << ';';
    os << "|q:";
    for (const auto& id : exit_queue_) os << id << ',';
    return os.str();
  }

  bool mover_at_bay() const { return same_point(mover_.position, mk_.bay_position()); }

 private:
  struct MoverView : MoverEnv {
    const ModuleWorld& w;
    explicit MoverView(const ModuleWorld& world) : w(world) {}
    std::optional<std::string> carriage_at(int col, int row) const override {
      if (row == kExitRow) {
        if (w.exit_queue_.empty()) return std::nullopt;
        return w.exit_queue_.front();
      }
      return w.carriage_in(col, row);
    }
    double carriage_mass(const std::string& id) const override {
      auto it = w.carriages_.find(id);
      return it == w.carriages_.end() ? 0.0 : it->second.tray_mass;
    }
    std::optional<int> elevator_row() const override {
      if (w.elevator_.busy || w.elevator_.in_motion()) return std::nullopt;
      return w.elevator_.row;
    }
    bool elevator_locked() const override { return w.elevator_.lock_engaged; }
  };

  struct ElevatorView : ElevatorEnv {
    const ModuleWorld& w;
    explicit ElevatorView(const ModuleWorld& world) : w(world) {}
    bool mover_busy_at_platform() const override {
      const auto& t = w.mover_.task;
      if (!t) return false;
      S bay = w.mk_.bay_position();
      if (t->kind != MoverTask<S>::Kind::move) return w.mover_at_bay();
      return same_point(t->start, bay) || same_point(t->target, bay);
    }
  };

  static std::string location_key(const Location& loc) {
    if (const auto* c = std::get_if<location::Cell>(&loc)) {
      return "cell" + std::to_string(c->addr.col) + "," + std::to_string(c->addr.row);
    }
    if (std::holds_alternative<location::OnElevator>(loc)) return "elevator";
    if (std::holds_alternative<location::OnMover>(loc)) return "mover";
    return "exit";
  }

  std::optional<CommandError> absorb_mover(StepResult<MoverState<S>, S> r, const S& now, std::vector<SimEvent<S>>& out) {
    mover_ = std::move(r.state);
    for (auto& e : r.events) {
      if (e.kind == EventKind::engage) on_engage(e.detail.at("carriage"));
      if (e.kind == EventKind::release) on_release(e.detail.at("carriage"));
      e.detail["module"] = std::to_string(module_);
      out.push_back({now + e.offset, mover_.id, e.kind, std::move(e.detail)});
    }
    sync();
    return r.error;
  }

  std::optional<CommandError> absorb_elevator(StepResult<ElevatorState<S>, S> r, const S& now,
                                              std::vector<SimEvent<S>>& out) {
    elevator_ = std::move(r.state);
    for (auto& e : r.events) {
      e.detail["module"] = std::to_string(module_);
      out.push_back({now + e.offset, elevator_.id, e.kind, std::move(e.detail)});
    }
    sync();
    return r.error;
  }

  void on_engage(const std::string& id) {
    auto& c = carriages_.at(id);
    if (const auto* cell = std::get_if<location::Cell>(&c.location)) {
      cells_.erase({cell->addr.col, cell->addr.row});
    } else if (!exit_queue_.empty() && exit_queue_.front() == id) {
      exit_queue_.pop_front();
    }
    c.location = location::OnMover{mover_.id};
  }

  void on_release(const std::string& id) {
    auto& c = carriages_.at(id);
    if (mover_at_bay()) {
      c.location = location::AtExit{module_};
      return;
    }
    auto col = rail_index(mk_, mover_.position);
    CellAddress addr{module_, col.value_or(0), mover_.row};
    cells_[{addr.col, addr.row}] = id;
    c.location = location::Cell{addr};
  }

  /// Re-derives the physical coupling after any device change.
  void sync() {
    if (mover_at_bay()) {
      mover_.row = elevator_.row;
      elevator_.occupant = Occupant{mover_.id, mover_.carrying};
    } else {
      elevator_.occupant.reset();
    }
    if (mover_.carrying) {
      auto& c = carriages_.at(*mover_.carrying);
      if (mover_at_bay()) {
        c.location = location::OnElevator{module_};
      } else {
        c.location = location::OnMover{mover_.id};
      }
    }
  }

  std::size_t module_;
  MoverKinematics<S> mk_;
  ElevatorKinematics<S> ek_;
  MoverState<S> mover_;
  ElevatorState<S> elevator_;
  MoverCommand mover_cmd_ = mover_cmd::Engage{};
  ElevatorCommand elevator_cmd_ = elevator_cmd::Unlock{};
  std::map<std::string, Carriage> carriages_;
  std::map<std::pair<int, int>, std::string> cells_;
  std::deque<std::string> exit_queue_;
  std::size_t carriage_count_ = 0;
};

/// Adapts a world to the kernel's agent interface.
template <class S>
class WorldAgent : public SimAgent<S> {
 public:
  explicit WorldAgent(ModuleWorld<S>& world) : world_(world) {
    char tag[24];
    std::snprintf(tag, sizeof tag, "module-%02zu", world.module());
    entity_ = tag;
  }
  const std::string& entity() const override { return entity_; }
  std::optional<S> time_to_event() const override { return world_.time_to_event(); }
  void step(const S& now, const S& dt, std::vector<SimEvent<S>>& out) override { world_.step(now, dt, out); }

 private:
  ModuleWorld<S>& world_;
  std::string entity_;
};

}  // namespace macarons
