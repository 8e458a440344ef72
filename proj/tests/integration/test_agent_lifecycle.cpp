#include <fstream>

#include <gtest/gtest.h>

#include "harness.hpp"
#include "macarons/farm_io.hpp"

using namespace macarons;
using namespace macarons::agent;
using namespace macarons::server;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<DeviceCyclePhase> phases_of(const CycleReport& r) {
  std::vector<DeviceCyclePhase> out;
  for (const auto& p : r.phases) out.push_back(p.phase);
  return out;
}

const std::vector<DeviceCyclePhase> kFive(kCycleOrder.begin(), kCycleOrder.end());

struct Farm {
  FarmFile file;
  ModuleSpec spec() const { return file.farm.modules[0]; }
};

Farm demo_farm() { return {load_farm_file(mtest::data_path("farms/demo-4x2.json"))}; }

/// Both devices of module 0, cycling on their own threads.
struct ModuleAgents {
  ModuleAgents(const Farm& f, const std::string& url, double awake = 3.0)
      : mover(std::make_unique<MoverModel>(f.spec(), 0, f.file.carriages), url, mtest::agent_options("hw-m", awake)),
        elevator(std::make_unique<ElevatorModel>(f.spec()), url, mtest::agent_options("hw-e", awake)) {}

  void register_both() {
    ASSERT_TRUE(mover.agent().ensure_registered());
    ASSERT_TRUE(elevator.agent().ensure_registered());
  }
  std::string mover_id() { return *mover.agent().device_id(); }
  std::string elevator_id() { return *elevator.agent().device_id(); }

  mtest::AgentRunner mover;
  mtest::AgentRunner elevator;
};

}  // namespace

TEST(AgentLifecycle, UpdateStagedWhileAsleepInstallsBeforeRunMain) {
  mtest::TempDir dir;
  mtest::LiveServer live(dir / "a.db");
  auto opt = mtest::agent_options("hw-m", 0.5);
  opt.install_root = dir / "device";
  mtest::AgentRunner agent(std::make_unique<ElevatorModel>(ModuleSpec{}), live.url(), opt);

  auto first = agent.cycle();
  EXPECT_EQ(phases_of(first), kFive);
  EXPECT_TRUE(first.installs.empty());
  EXPECT_EQ(agent.agent().phase(), DeviceCyclePhase::deep_sleep);
  auto id = *agent.agent().device_id();

  auto bundle = UpdateBundle::make("1.1.0", {{"bin/elevator.py", to_bytes("speed = 33.3\n")}});
  live.server().stage_update(id, bundle);

  auto second = agent.cycle();
  EXPECT_TRUE(second.phase_order_ok());
  ASSERT_EQ(second.installs.size(), 1u);
  EXPECT_EQ(second.installs[0].phase, DeviceCyclePhase::pre_update);
  EXPECT_EQ(second.installs[0].version, "1.1.0");
  EXPECT_EQ(second.version_at_run_main, "1.1.0");
  EXPECT_EQ(slurp(dir / "device" / "bin" / "elevator.py"), "speed = 33.3\n");

  auto dev = live.server().device(id);
  EXPECT_EQ(dev["installed_version"], "1.1.0");
  EXPECT_TRUE(dev["staged_update"].is_null());

  auto third = agent.cycle();
  EXPECT_TRUE(third.installs.empty());
}

TEST(AgentLifecycle, UpdateStagedDuringRunMainLandsAtPostUpdate) {
  mtest::TempDir dir;
  mtest::LiveServer live(dir / "a.db");
  mtest::AgentRunner agent(std::make_unique<ElevatorModel>(ModuleSpec{}), live.url(), mtest::agent_options("hw-e", 2.0));
  ASSERT_TRUE(agent.agent().ensure_registered());
  auto id = *agent.agent().device_id();

  CycleReport rep;
  std::thread t([&] { rep = agent.cycle(); });
  ASSERT_TRUE(mtest::eventually([&] { return live.server().device(id)["last_phase"] == "run_main"; }, 10));
  live.server().stage_update(id, UpdateBundle::make("2.0.0", {}));
  t.join();

  EXPECT_TRUE(rep.phase_order_ok());
  EXPECT_EQ(rep.version_at_run_main, "1.0.0");
  ASSERT_EQ(rep.installs.size(), 1u);
  EXPECT_EQ(rep.installs[0].phase, DeviceCyclePhase::post_update);
  EXPECT_EQ(agent.agent().installed_version(), "2.0.0");
  EXPECT_EQ(agent.cycle().version_at_run_main, "2.0.0");
}

TEST(AgentLifecycle, ConfigSetWhileAsleepIsCopiedOnWake) {
  mtest::TempDir dir;
  mtest::LiveServer live(dir / "a.db");
  mtest::AgentRunner agent(std::make_unique<ElevatorModel>(ModuleSpec{}), live.url(), mtest::agent_options("hw-e", 0.25));
  agent.cycle();
  auto id = *agent.agent().device_id();
  live.server().set_config(id, "sleep_seconds", 42);
  live.server().set_config(id, "awake_seconds", 0.25);
  live.server().set_config(id, "ir_tolerance_mm", 3);

  auto rep = agent.cycle();
  EXPECT_EQ(agent.agent().local_config(), live.server().get_config(id));
  EXPECT_EQ(rep.sleep_seconds, 42);
}

TEST(AgentLifecycle, ServerDownForWholeCycle) {
  VirtualClock clock(0.0);
  HttpLink link("http://127.0.0.1:" + std::to_string(mtest::closed_port()), 0.2);
  DeviceAgent agent(std::make_unique<MoverModel>(ModuleSpec{}, 0, std::vector<Carriage>{}), link, clock,
                    mtest::agent_options("hw-m"));
  for (int i = 0; i < 3; ++i) {
    CycleReport rep;
    ASSERT_NO_THROW(rep = agent.run_cycle());
    EXPECT_EQ(phases_of(rep), kFive);
    EXPECT_TRUE(rep.phase_order_ok());
    EXPECT_TRUE(rep.commands.empty());
    EXPECT_FALSE(rep.server_reachable);
    EXPECT_FALSE(rep.link_errors.empty());
    EXPECT_EQ(rep.sleep_seconds, 1.0);
    EXPECT_EQ(agent.phase(), DeviceCyclePhase::deep_sleep);
  }
  EXPECT_FALSE(agent.device_id());
  EXPECT_DOUBLE_EQ(clock.now(), 3.0);
}

TEST(AgentLifecycle, QueuedMoveRunsInRunMainAndPushesPosition) {
  mtest::TempDir dir;
  mtest::LiveServer live(dir / "a.db");
  auto farm = demo_farm();
  mtest::AgentRunner mover(std::make_unique<MoverModel>(farm.spec(), 0, farm.file.carriages), live.url(),
                           mtest::agent_options("hw-m"));
  ASSERT_TRUE(mover.agent().ensure_registered());
  auto id = *mover.agent().device_id();
  auto script = live.server().upload_script(
      {{"steps", {{{"device", id}, {"command", "move_to"}, {"args", {{"col", 2}, {"row", 0}}}}}}});
  auto job = live.server().run_script(script["script_id"]);

  auto rep = mover.cycle();
  ASSERT_EQ(rep.commands.size(), 1u);
  EXPECT_EQ(rep.commands[0].name, "move_to");
  EXPECT_TRUE(rep.commands[0].ok) << rep.commands[0].error;
  EXPECT_TRUE(rep.commands[0].result_delivered);
  EXPECT_TRUE(rep.phase_order_ok());
  // From the bay (4 pitches out) back to col 2: two pitches at 100 mm/s.
  EXPECT_DOUBLE_EQ(rep.commands[0].finished - rep.commands[0].started, 25.0);

  auto done = live.server().wait_job(job["job_id"], 10);
  EXPECT_EQ(done["status"], "succeeded");
  bool saw_position = false;
  for (const auto& r : live.server().list_readings(id, std::nullopt, std::nullopt)) {
    if (r.key == "position") {
      saw_position = true;
      EXPECT_EQ(std::get<double>(r.value), 2500.0);
    }
  }
  EXPECT_TRUE(saw_position);
}

TEST(AgentLifecycle, FourStepScriptAgainstSimulatedAgents) {
  mtest::TempDir dir;
  mtest::LiveServer live(dir / "a.db");
  auto farm = demo_farm();
  ModuleAgents agents(farm, live.url());
  agents.register_both();
  auto e = agents.elevator_id();
  auto m = agents.mover_id();
  auto script = live.server().upload_script(
      {{"name", "fetch tray-a"},
       {"steps",
        {{{"device", e}, {"command", "goto_row"}, {"args", {{"row", 1}}}},
         {{"device", m}, {"command", "move_to"}, {"args", {{"col", 3}, {"row", 1}}}},
         {{"device", m}, {"command", "engage"}},
         {{"device", m}, {"command", "move_to"}, {"args", {{"col", 0}, {"row", 1}}}, {"wait", {{"reading", "position"}, {"equals", 0}}}}}}});
  agents.mover.start();
  agents.elevator.start();
  auto job = live.server().run_script(script["script_id"]);
  auto done = live.server().wait_job(job["job_id"], 60);
  agents.mover.stop();
  agents.elevator.stop();

  ASSERT_EQ(done["status"], "succeeded") << done.dump(2);
  ASSERT_EQ(done["steps"].size(), 4u);
  for (const auto& s : done["steps"]) EXPECT_EQ(s["status"], "succeeded");
  EXPECT_EQ(done["steps"][2]["result"]["carrying"], "tray-a");
  EXPECT_EQ(done["steps"][3]["result"]["position"], 0.0);
  EXPECT_FALSE(done["started_at"].is_null());
  EXPECT_GE(done["finished_at"].get<double>(), done["started_at"].get<double>());

  for (auto* runner : {&agents.mover, &agents.elevator}) {
    for (const auto& rep : runner->reports()) EXPECT_TRUE(rep.phase_order_ok());
  }
}

TEST(AgentLifecycle, TrayMoveBetweenRowsUpdatesTheFarm) {
  mtest::TempDir dir;
  mtest::LiveServer live(dir / "a.db");
  Farm farm;
  farm.file.farm.modules = {ModuleSpec{}};
  farm.file.carriages = {Carriage{"tray-01", 6.0, location::Cell{CellAddress{0, 0, 0}}}};
  ModuleAgents agents(farm, live.url());
  agents.register_both();
  live.server().set_farm(farm.file, {{agents.mover_id(), agents.elevator_id()}});

  agents.mover.start();
  agents.elevator.start();
  auto out = live.server().request_move("tray-01", CellAddress{0, 0, 1});
  ASSERT_FALSE(out["job"].is_null());
  auto done = live.server().wait_job(out["job"]["job_id"], 60);
  agents.mover.stop();
  agents.elevator.stop();

  ASSERT_EQ(done["status"], "succeeded") << done.dump(2);
  auto carriages = live.server().farm()["carriages"];
  ASSERT_EQ(carriages.size(), 1u);
  auto placed = load_farm(live.server().farm().dump());
  const auto* cell = std::get_if<location::Cell>(&placed.carriages[0].location);
  ASSERT_TRUE(cell);
  EXPECT_EQ(cell->addr, (CellAddress{0, 0, 1}));
}

TEST(AgentLifecycle, AgentsKeepCyclingWhenTheServerStopsMidJob) {
  mtest::TempDir dir;
  auto farm = demo_farm();
  std::string job_id;
  std::size_t cycles_before = 0;
  {
    auto live = std::make_unique<mtest::LiveServer>(dir / "a.db");
    ModuleAgents agents(farm, live->url(), 0.5);
    agents.register_both();
    auto e = agents.elevator_id();
    auto script = live->server().upload_script(
        {{"steps",
          {{{"device", e}, {"command", "goto_row"}, {"args", {{"row", 1}}}},
           {{"device", e}, {"command", "goto_row"}, {"args", {{"row", 0}}}, {"wait", {{"seconds", 60}}}}}}});
    agents.elevator.start();
    job_id = live->server().run_script(script["script_id"])["job_id"];
    ASSERT_TRUE(mtest::eventually([&] { return live->server().job(job_id)["steps"][1]["status"] == "running"; }, 20));
    live->stop();
    cycles_before = agents.elevator.reports().size();
    ASSERT_TRUE(mtest::eventually([&] { return agents.elevator.reports().size() >= cycles_before + 3; }, 20));
    agents.elevator.stop();
    auto reps = agents.elevator.reports();
    for (std::size_t i = cycles_before; i < reps.size(); ++i) {
      EXPECT_TRUE(reps[i].phase_order_ok());
      EXPECT_EQ(reps[i].phases.back().phase, DeviceCyclePhase::deep_sleep);
    }
    EXPECT_EQ(agents.elevator.agent().phase(), DeviceCyclePhase::deep_sleep);
    live.reset();
  }
  mtest::LiveServer restarted(dir / "a.db");
  auto job = restarted.server().job(job_id);
  EXPECT_EQ(job["status"], "aborted");
  EXPECT_FALSE(job["reason"].is_null());
  EXPECT_FALSE(job["finished_at"].is_null());
}
