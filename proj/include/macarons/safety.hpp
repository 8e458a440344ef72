#pragma once

// Exhaustive reachability over one module's mover x elevator product.
//
// Every command (valid or not) may be issued to an idle device at any state,
// and time advances in slices of at most `quantum`, so mid-motion states are
// visited too. Time is exact (Rational), which keeps the state space finite.

#include <deque>
#include <string>
#include <unordered_set>
#include <vector>

#include "macarons/rational.hpp"
#include "macarons/world.hpp"

namespace macarons {

struct ModelCheckOptions {
  Rational t_h{2};
  Rational t_v{2};
  Rational t_engage{1};
  Rational quantum{1};
  std::size_t max_states = 2'000'000;
};

struct ModelCheckReport {
  std::size_t states = 0;
  std::size_t transitions = 0;
  std::size_t rejected_commands = 0;
  std::size_t interlock_violations = 0;  // moving, loaded, unlocked
  std::size_t invariant_violations = 0;  // anything check_invariants() flags
  bool loaded_locked_motion_seen = false;
  bool loaded_unlocked_rest_seen = false;  // goto_row was tried from such states
  bool exhausted = true;                  // false if max_states cut the search short
  std::string first_violation;
};

inline std::vector<MoverCommand> mover_alphabet(int n_h) {
  std::vector<MoverCommand> out;
  for (int c = -1; c <= n_h; ++c) out.push_back(mover_cmd::MoveTo{c, std::nullopt});
  out.push_back(mover_cmd::Dock{});
  out.push_back(mover_cmd::Engage{});
  out.push_back(mover_cmd::Release{});
  return out;
}

inline std::vector<ElevatorCommand> elevator_alphabet(int n_v) {
  std::vector<ElevatorCommand> out;
  for (int r = kExitRow - 1; r <= n_v; ++r) out.push_back(elevator_cmd::GotoRow{r});
  out.push_back(elevator_cmd::Lock{});
  out.push_back(elevator_cmd::Unlock{});
  return out;
}

/// BFS from `initial`. The world must use Rational time.
inline ModelCheckReport model_check(const ModuleWorld<Rational>& initial, const ModelCheckOptions& opt = {}) {
  using W = ModuleWorld<Rational>;
  ModelCheckReport rep;
  const auto movers = mover_alphabet(initial.mover_kinematics().n_h);
  const auto elevators = elevator_alphabet(initial.elevator_kinematics().n_v);

  std::unordered_set<std::string> seen;
  std::deque<W> frontier;
  std::vector<SimEvent<Rational>> sink;

  auto inspect = [&](const W& w) {
    const auto& e = w.elevator();
    bool loaded = e.occupant && e.occupant->loaded();
    if (!e.in_motion() && loaded && !e.lock_engaged) rep.loaded_unlocked_rest_seen = true;
    if (e.in_motion() && loaded) {
      if (e.lock_engaged) {
        rep.loaded_locked_motion_seen = true;
      } else {
        ++rep.interlock_violations;
        if (rep.first_violation.empty()) rep.first_violation = w.key();
      }
    }
    try {
      w.check_invariants();
    } catch (const Error& err) {
      ++rep.invariant_violations;
      if (rep.first_violation.empty()) rep.first_violation = std::string(err.what()) + " @ " + w.key();
    }
  };
  auto visit = [&](W&& w) {
    ++rep.transitions;
    if (!seen.insert(w.key()).second) return;
    if (seen.size() > opt.max_states) {
      rep.exhausted = false;
      return;
    }
    inspect(w);
    frontier.push_back(std::move(w));
  };

  visit(W(initial));
  rep.transitions = 0;
  while (!frontier.empty()) {
    W w = std::move(frontier.front());
    frontier.pop_front();
    if (w.idle(DeviceRole::mover)) {
      for (const auto& cmd : movers) {
        W next = w;
        sink.clear();
        if (next.command_mover(cmd, Rational(0), sink)) {
          ++rep.rejected_commands;
          continue;
        }
        visit(std::move(next));
      }
    }
    if (w.idle(DeviceRole::elevator)) {
      for (const auto& cmd : elevators) {
        W next = w;
        sink.clear();
        if (next.command_elevator(cmd, Rational(0), sink)) {
          ++rep.rejected_commands;
          continue;
        }
        visit(std::move(next));
      }
    }
    if (auto t = w.time_to_event()) {
      Rational dt = *t < opt.quantum ? *t : opt.quantum;
      W next = w;
      sink.clear();
      next.step(Rational(0), dt, sink);
      visit(std::move(next));
    }
  }
  rep.states = seen.size();
  return rep;
}

/// The standard check: a 2x1 module (one column, two rows) holding one
/// carriage on the shelf and one waiting at the exit.
inline ModelCheckReport model_check_minimal_module(const ModelCheckOptions& opt = {}) {
  ModuleSpec spec;
  spec.n_h = 1;
  spec.n_v = 2;
  ModuleWorld<Rational> w(0, MoverKinematics<Rational>::from(spec, opt.t_engage, opt.t_h),
                          ElevatorKinematics<Rational>::from(spec, opt.t_v));
  w.place(Carriage{"c-shelf", 5.0, {}}, CellAddress{0, 0, 1});
  w.queue_at_exit(Carriage{"c-exit", 5.0, {}});
  return model_check(w, opt);
}

}  // namespace macarons
