#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "gen.hpp"
#include "macarons/device.hpp"
#include "macarons/farm.hpp"

using namespace macarons;

namespace {

struct FakeMoverEnv : MoverEnv {
  std::map<std::pair<int, int>, std::string> cells;
  std::optional<std::string> exit_carriage;
  std::map<std::string, double> mass;
  std::optional<int> platform = 0;
  bool locked = false;

  std::optional<std::string> carriage_at(int col, int row) const override {
    if (row == kExitRow) return exit_carriage;
    auto it = cells.find({col, row});
    return it == cells.end() ? std::nullopt : std::optional(it->second);
  }
  double carriage_mass(const std::string& id) const override { return mass.count(id) ? mass.at(id) : 5.0; }
  std::optional<int> elevator_row() const override { return platform; }
  bool elevator_locked() const override { return locked; }
};

template <class S>
MoverState<S> parked_at(int col, int row, const MoverKinematics<S>& k) {
  MoverState<S> s;
  s.mode = MoverMode::parked;
  s.position = S(col) * k.pitch_h;
  s.row = row;
  s.marker_count = col;
  return s;
}

// Runs the active command to completion; returns the elapsed time.
template <class S>
S finish_mover(const MoverKinematics<S>& k, MoverState<S>& s, const MoverCommand& cmd, const MoverEnv& env) {
  auto start = mover_step(k, s, S(0), cmd, env);
  EXPECT_NE(start.status, StepStatus::rejected) << (start.error ? start.error->message : "");
  s = start.state;
  S t{};
  while (auto dt = mover_time_to_event(k, s)) {
    s = mover_step(k, s, *dt, cmd, env).state;
    t += *dt;
  }
  return t;
}

ModuleSpec module_4x3() {
  ModuleSpec m;
  m.n_h = 4;
  m.n_v = 3;
  return m;
}

}  // namespace

TEST(Mover, OnePitchTakesExactlyTwelveAndAHalfSeconds) {
  auto k = MoverKinematics<Rational>::from(module_4x3(), Rational(2));
  FakeMoverEnv env;
  auto s = parked_at(0, 0, k);
  auto r = mover_step(k, s, Rational(25, 2), MoverCommand{mover_cmd::MoveTo{1}}, env);
  ASSERT_EQ(r.status, StepStatus::completed);
  EXPECT_EQ(r.state.position, Rational(1250));
  EXPECT_EQ(r.state.mode, MoverMode::parked);
  EXPECT_EQ(r.state.marker_count, 1);
  ASSERT_EQ(r.events.size(), 1u);
  EXPECT_EQ(r.events[0].offset, Rational(25, 2));
  // Cross-check against the farm-model travel time.
  EXPECT_EQ(r.events[0].offset, travel_time(Rational(1250), Rational(100)));

  // Half the time gets half way, with no arrival.
  auto half = mover_step(k, s, Rational(25, 4), MoverCommand{mover_cmd::MoveTo{1}}, env);
  EXPECT_EQ(half.status, StepStatus::in_progress);
  EXPECT_EQ(half.state.position, Rational(625));
  EXPECT_EQ(half.state.mode, MoverMode::transit);
}

TEST(Mover, EngageWithoutCarriageIsRejected) {
  auto k = MoverKinematics<double>::from(module_4x3(), 2.0);
  FakeMoverEnv env;
  auto r = mover_step(k, parked_at(1, 0, k), 1.0, MoverCommand{mover_cmd::Engage{}}, env);
  ASSERT_EQ(r.status, StepStatus::rejected);
  EXPECT_EQ(r.error->fault, CommandFault::no_carriage);
  EXPECT_EQ(r.error->message, "no carriage");
}

TEST(Mover, EndStopsRejectMovesOffTheRail) {
  auto k = MoverKinematics<double>::from(module_4x3(), 2.0);
  FakeMoverEnv env;
  for (int col : {4, 5, -1}) {
    auto r = mover_step(k, parked_at(0, 0, k), 1.0, MoverCommand{mover_cmd::MoveTo{col}}, env);
    ASSERT_EQ(r.status, StepStatus::rejected) << col;
    EXPECT_EQ(r.error->fault, CommandFault::bounds);
    EXPECT_EQ(r.state.position, 0.0);
  }
}

TEST(Mover, EngageCarryReleaseCycle) {
  auto k = MoverKinematics<Rational>::from(module_4x3(), Rational(2));
  FakeMoverEnv env;
  env.cells[{2, 1}] = "c1";
  auto s = parked_at(0, 1, k);
  EXPECT_EQ(finish_mover(k, s, mover_cmd::MoveTo{2}, env), Rational(25));
  EXPECT_EQ(s.mode, MoverMode::under_carriage);
  EXPECT_EQ(finish_mover(k, s, mover_cmd::Engage{}, env), Rational(2));
  EXPECT_EQ(s.mode, MoverMode::engaged);
  EXPECT_EQ(s.carrying, std::optional<std::string>("c1"));
  env.cells.clear();
  EXPECT_EQ(finish_mover(k, s, mover_cmd::MoveTo{0}, env), Rational(25));
  EXPECT_EQ(s.mode, MoverMode::engaged);
  EXPECT_EQ(finish_mover(k, s, mover_cmd::Release{}, env), Rational(2));
  EXPECT_EQ(s.mode, MoverMode::under_carriage);
  EXPECT_FALSE(s.carrying);
}

TEST(Mover, LoadedMotionCannotPassUnderAnotherCarriage) {
  auto k = MoverKinematics<double>::from(module_4x3(), 2.0);
  FakeMoverEnv env;
  env.cells[{1, 0}] = "blocker";
  auto s = parked_at(3, 0, k);
  s.carrying = "c1";
  s.mode = MoverMode::engaged;
  auto r = mover_step(k, s, 1.0, MoverCommand{mover_cmd::MoveTo{0}}, env);
  ASSERT_EQ(r.status, StepStatus::rejected);
  EXPECT_EQ(r.error->fault, CommandFault::path_blocked);
  EXPECT_NE(r.error->message.find("blocker"), std::string::npos);
  // Unloaded, it passes underneath.
  s.carrying.reset();
  s.mode = MoverMode::parked;
  EXPECT_EQ(mover_step(k, s, 1.0, MoverCommand{mover_cmd::MoveTo{0}}, env).status, StepStatus::in_progress);
}

TEST(Mover, OverweightCarriageIsRefused) {
  auto k = MoverKinematics<double>::from(module_4x3(), 2.0);
  FakeMoverEnv env;
  env.cells[{0, 0}] = "heavy";
  env.mass["heavy"] = 12.6;
  auto r = mover_step(k, parked_at(0, 0, k), 1.0, MoverCommand{mover_cmd::Engage{}}, env);
  ASSERT_EQ(r.status, StepStatus::rejected);
  EXPECT_EQ(r.error->fault, CommandFault::overload);
}

TEST(Mover, LeavingThePlatformNeedsAlignedUnlockedElevator) {
  auto k = MoverKinematics<double>::from(module_4x3(), 2.0);
  FakeMoverEnv env;
  auto s = mover_docked_at_exit<double>("m", k);
  s.row = 1;
  env.platform = 2;
  EXPECT_EQ(mover_step(k, s, 1.0, MoverCommand{mover_cmd::MoveTo{0}}, env).error->fault, CommandFault::misalignment);
  env.platform = 1;
  env.locked = true;
  EXPECT_EQ(mover_step(k, s, 1.0, MoverCommand{mover_cmd::MoveTo{0}}, env).error->fault, CommandFault::locked);
  env.locked = false;
  EXPECT_EQ(mover_step(k, s, 1.0, MoverCommand{mover_cmd::MoveTo{0}}, env).status, StepStatus::in_progress);
}

TEST(Mover, RejectsNegativeTimeStep) {
  auto k = MoverKinematics<double>::from(module_4x3(), 2.0);
  FakeMoverEnv env;
  EXPECT_THROW(mover_step(k, parked_at(0, 0, k), -1.0, MoverCommand{mover_cmd::MoveTo{1}}, env), Error);
}

TEST(Elevator, OneRowTakesFiveThousandOver333Seconds) {
  auto k = ElevatorKinematics<Rational>::from(module_4x3());
  ElevatorState<Rational> s;
  s.height = k.height_of(0);
  s.row = s.target_row = 0;
  auto t = elevator_time_to_event(k, elevator_step(k, s, Rational(0), ElevatorCommand{elevator_cmd::GotoRow{1}}).state);
  ASSERT_TRUE(t);
  EXPECT_EQ(*t, Rational(5000, 333));
  EXPECT_EQ(*t, travel_time(Rational(500), Rational(333, 10)));
  EXPECT_NEAR(t->to_double(), 15.015, 0.001);

  auto r = elevator_step(k, s, *t, ElevatorCommand{elevator_cmd::GotoRow{1}});
  EXPECT_EQ(r.status, StepStatus::completed);
  EXPECT_EQ(r.state.row, 1);
  EXPECT_EQ(r.state.mode, ElevatorMode::at_row);
  EXPECT_TRUE(r.state.ir_triggered);
}

TEST(Elevator, LoadedOccupantWithoutLockIsAnInterlockError) {
  auto k = ElevatorKinematics<double>::from(module_4x3());
  ElevatorState<double> s;
  s.occupant = Occupant{"m", "c1"};
  auto r = elevator_step(k, s, 1.0, ElevatorCommand{elevator_cmd::GotoRow{1}});
  ASSERT_EQ(r.status, StepStatus::rejected);
  EXPECT_EQ(r.error->fault, CommandFault::interlock);
  EXPECT_EQ(r.state.height, s.height);

  s = elevator_step(k, s, 0.0, ElevatorCommand{elevator_cmd::Lock{}}).state;
  EXPECT_TRUE(s.lock_engaged);
  EXPECT_EQ(elevator_step(k, s, 1.0, ElevatorCommand{elevator_cmd::GotoRow{1}}).status, StepStatus::in_progress);
  // An empty mover may ride unlocked.
  ElevatorState<double> empty;
  empty.occupant = Occupant{"m", std::nullopt};
  EXPECT_EQ(elevator_step(k, empty, 1.0, ElevatorCommand{elevator_cmd::GotoRow{1}}).status, StepStatus::in_progress);
}

TEST(Elevator, GotoCurrentRowCompletesImmediately) {
  auto k = ElevatorKinematics<double>::from(module_4x3());
  ElevatorState<double> s;
  s.height = k.height_of(2);
  s.row = s.target_row = 2;
  auto r = elevator_step(k, s, 0.0, ElevatorCommand{elevator_cmd::GotoRow{2}});
  EXPECT_EQ(r.status, StepStatus::completed);
  ASSERT_EQ(r.events.size(), 1u);
  EXPECT_EQ(r.events[0].offset, 0.0);
  EXPECT_FALSE(elevator_time_to_event(k, r.state));
}

TEST(Elevator, LockOnlyChangesAtARow) {
  auto k = ElevatorKinematics<double>::from(module_4x3());
  ElevatorState<double> s;
  s.occupant = Occupant{"m", std::nullopt};
  s = elevator_step(k, s, 1.0, ElevatorCommand{elevator_cmd::GotoRow{2}}).state;
  ASSERT_TRUE(s.in_motion());
  EXPECT_EQ(elevator_step(k, s, 0.0, ElevatorCommand{elevator_cmd::Lock{}}).status, StepStatus::in_progress);
  // The lock request waits behind the move; the FSM keeps moving and stays unlocked.
  EXPECT_FALSE(elevator_step(k, s, 0.0, ElevatorCommand{elevator_cmd::Lock{}}).state.lock_engaged);
}

TEST(Elevator, RowsOutsideTheShaftAreRejected) {
  auto k = ElevatorKinematics<double>::from(module_4x3());
  for (int row : {-2, 3, 10}) {
    EXPECT_EQ(elevator_step(k, ElevatorState<double>{}, 1.0, ElevatorCommand{elevator_cmd::GotoRow{row}}).error->fault,
              CommandFault::bounds);
  }
}

TEST(IrCalibration, FindsBoundaryAtThreeMillimetres) {
  const double boundary = 3.0;
  auto probe = [&](double x) { return x >= boundary; };
  // Oracle: linear scan at 0.01 mm for the first triggering offset.
  double scanned = NAN;
  for (int i = 0; i <= 10000; ++i) {
    double x = -50.0 + i * 0.01;
    if (probe(x)) {
      scanned = x;
      break;
    }
  }
  ASSERT_NEAR(scanned, boundary, 0.011);
  int probes = 0;
  auto counted = [&](double x) {
    ++probes;
    return probe(x);
  };
  auto c = calibrate_ir({0.0, 0.1}, counted);
  EXPECT_GE(c.offset, 2.9);
  EXPECT_LE(c.offset, 3.1);
  EXPECT_NEAR(c.offset, scanned, 0.1);
  EXPECT_LE(probes, 20);
}

TEST(IrCalibration, ZeroBoundaryAndDegenerateProbe) {
  auto c = calibrate_ir({0.0, 0.1}, [](double x) { return x > 0.0; });
  EXPECT_LE(std::abs(c.offset), 0.1);
  try {
    calibrate_ir({0.0, 0.1}, [](double) { return false; });
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::calibration_failed);
  }
  EXPECT_THROW(calibrate_ir({0.0, 0.0}, [](double x) { return x > 0; }), Error);
}

TEST(IrCalibration, RandomBoundariesMatchLinearScan) {
  gen::Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    double boundary = rng.real(-49.0, 49.0);
    bool rising = rng.coin();
    auto probe = [&](double x) { return rising ? x >= boundary : x < boundary; };
    double scanned = NAN;
    bool first = probe(-50.0);
    for (int j = 1; j <= 10000; ++j) {
      double x = -50.0 + j * 0.01;
      if (probe(x) != first) {
        scanned = x;
        break;
      }
    }
    auto c = calibrate_ir({0.0, 0.1}, probe);
    EXPECT_NEAR(c.offset, scanned, 0.1 + 0.01) << boundary;
  }
}

// Random command sequences against both FSMs: no teleporting, no leaving the
// rail or shaft, and marker counts agree with position after completed moves.
TEST(DeviceFuzz, KinematicBoundsEndStopsAndLocalisation) {
  gen::Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    ModuleSpec m;
    m.n_h = rng.integer(1, 6);
    m.n_v = rng.integer(1, 5);
    m.pitch_h = rng.real(300, 2000);
    m.pitch_v = rng.real(200, 800);
    m.mover_speed = rng.real(20, 200);
    m.lift_speed = rng.real(10, 80);
    auto mk = MoverKinematics<double>::from(m, rng.real(0.5, 3));
    auto ek = ElevatorKinematics<double>::from(m);
    FakeMoverEnv env;
    for (int c = 0; c < m.n_h; ++c) {
      for (int r = 0; r < m.n_v; ++r) {
        if (rng.coin(0.3)) env.cells[{c, r}] = "c" + std::to_string(c) + "-" + std::to_string(r);
      }
    }
    int row = rng.integer(0, m.n_v - 1);
    env.platform = row;
    MoverState<double> ms = parked_at(rng.integer(0, m.n_h - 1), row, mk);
    ElevatorState<double> es;
    es.occupant = rng.coin() ? std::optional(Occupant{"m", rng.coin() ? std::optional<std::string>("c") : std::nullopt})
                             : std::nullopt;
    MoverCommand mcmd = mover_cmd::MoveTo{0};
    ElevatorCommand ecmd = elevator_cmd::GotoRow{0};
    for (int step = 0; step < 60; ++step) {
      if (!ms.task) {
        switch (rng.integer(0, 4)) {
          case 0: mcmd = mover_cmd::Engage{}; break;
          case 1: mcmd = mover_cmd::Release{}; break;
          default: mcmd = mover_cmd::MoveTo{rng.integer(-1, m.n_h)};
        }
      }
      if (!es.busy) {
        switch (rng.integer(0, 3)) {
          case 0: ecmd = elevator_cmd::Lock{}; break;
          case 1: ecmd = elevator_cmd::Unlock{}; break;
          default: ecmd = elevator_cmd::GotoRow{rng.integer(-2, m.n_v)};
        }
      }
      double dt = rng.coin(0.2) ? 0.0 : rng.real(0.0, 30.0);

      auto mr = mover_step(mk, ms, dt, mcmd, env);
      EXPECT_LE(std::abs(mr.state.position - ms.position), mk.speed * dt + 1e-9);
      EXPECT_GE(mr.state.position, 0.0);
      EXPECT_LE(mr.state.position, mk.bay_position() + 1e-9);
      EXPECT_EQ(mr.state.carrying.has_value(), mr.state.mode == MoverMode::engaged || (mr.state.carrying && mr.state.mode == MoverMode::on_elevator));
      if (mr.status == StepStatus::completed && std::holds_alternative<mover_cmd::MoveTo>(mcmd)) {
        EXPECT_NEAR(static_cast<double>(mr.state.marker_count) * mk.pitch_h, mr.state.position, 1e-6);
      }
      if (mr.status == StepStatus::completed) {
        if (auto* e = std::get_if<mover_cmd::Engage>(&mcmd); e && mr.state.carrying) {
          env.cells.erase({static_cast<int>(std::lround(mr.state.position / mk.pitch_h)), mr.state.row});
        } else if (std::holds_alternative<mover_cmd::Release>(mcmd)) {
          env.cells[{static_cast<int>(std::lround(mr.state.position / mk.pitch_h)), mr.state.row}] = "dropped" + std::to_string(step);
        }
      }
      ms = mr.state;

      auto er = elevator_step(ek, es, dt, ecmd);
      EXPECT_LE(std::abs(er.state.height - es.height), ek.speed * dt + 1e-9);
      EXPECT_GE(er.state.height, 0.0);
      EXPECT_LE(er.state.height, ek.max_height() + 1e-9);
      EXPECT_EQ(er.state.ir_triggered, ir_band(ek, er.state.height, er.state.target_row));
      if (er.state.height != es.height && es.occupant && es.occupant->loaded()) {
        EXPECT_TRUE(es.lock_engaged && er.state.lock_engaged) << "loaded motion without the lock";
      }
      es = er.state;
    }
  }
}
