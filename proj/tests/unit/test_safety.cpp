#include <chrono>

#include <gtest/gtest.h>

#include "macarons/safety.hpp"

using namespace macarons;

TEST(ModelCheck, MinimalModuleNeverMovesALoadedUnlockedPlatform) {
  auto start = std::chrono::steady_clock::now();
  auto rep = model_check_minimal_module();
  auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_TRUE(rep.exhausted);
  EXPECT_EQ(rep.interlock_violations, 0u) << rep.first_violation;
  EXPECT_EQ(rep.invariant_violations, 0u) << rep.first_violation;
  // The search is not vacuous: loaded motion happens, and the unsafe
  // precondition is reached with goto_row offered from it.
  EXPECT_TRUE(rep.loaded_locked_motion_seen);
  EXPECT_TRUE(rep.loaded_unlocked_rest_seen);
  EXPECT_GT(rep.states, 1000u);
  EXPECT_GT(rep.rejected_commands, 0u);
  EXPECT_LT(secs, 30.0);
}

TEST(ModelCheck, VerdictDoesNotDependOnTheTimeQuantum) {
  for (Rational q : {Rational(1, 2), Rational(2)}) {
    ModelCheckOptions opt;
    opt.quantum = q;
    auto rep = model_check_minimal_module(opt);
    EXPECT_TRUE(rep.exhausted);
    EXPECT_EQ(rep.interlock_violations + rep.invariant_violations, 0u) << q.str();
    EXPECT_TRUE(rep.loaded_locked_motion_seen);
  }
}

TEST(ModelCheck, StateBudgetIsReported) {
  ModelCheckOptions opt;
  opt.max_states = 50;
  auto rep = model_check_minimal_module(opt);
  EXPECT_FALSE(rep.exhausted);
}

TEST(ModelCheck, TwoByTwoModuleWithThreeCarriages) {
  ModuleSpec spec;
  spec.n_h = 2;
  spec.n_v = 2;
  ModelCheckOptions opt;
  ModuleWorld<Rational> w(0, MoverKinematics<Rational>::from(spec, opt.t_engage, opt.t_h),
                          ElevatorKinematics<Rational>::from(spec, opt.t_v));
  w.place(Carriage{"a", 5.0, {}}, CellAddress{0, 0, 0});
  w.place(Carriage{"b", 5.0, {}}, CellAddress{0, 1, 1});
  w.queue_at_exit(Carriage{"c", 5.0, {}});
  auto rep = model_check(w, opt);
  EXPECT_TRUE(rep.exhausted);
  EXPECT_EQ(rep.interlock_violations + rep.invariant_violations, 0u) << rep.first_violation;
  EXPECT_TRUE(rep.loaded_locked_motion_seen);
}
