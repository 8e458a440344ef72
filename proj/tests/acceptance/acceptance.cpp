// Acceptance run for the primary criteria. One PASS/FAIL line per criterion;
// exit status is the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>

#include "../integration/process.hpp"
#include "macarons/analytics.hpp"
#include "macarons/safety.hpp"
#include "macarons/scenario.hpp"

using namespace macarons;
using namespace macarons::agent;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string one_decimal(double v) { return fmt("%.1f", v); }

bool within(double value, double target, double rel) { return std::abs(value - target) <= rel * std::abs(target); }

// 1 -------------------------------------------------------------------------

Verdict human_unload() {
  TimingParams t;  // scissor-lift defaults: t_h_s 10, t_v_s 6, t_m 15
  double th = closed_form_t_human(10, 10, 10, t);
  const int reps = 1000;
  volatile double sink = 0;
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) sink = sink + closed_form_t_human(10, 10, 10, t);
  double per_call_ms = seconds_since(t0) * 1000.0 / reps;
  auto shown = one_decimal(hours_1dp(th));
  bool ok = th == 38000.0 && shown == "10.6" && per_call_ms < 1.0;
  return {ok, fmt("T_human = %.1f s = %.4f h, rendered %s h; %.6f ms per call", th, seconds_to_hours(th), shown.c_str(),
                  per_call_ms)};
}

// 2 -------------------------------------------------------------------------

Verdict automated_unload() {
  auto farm = load_farm_file(mtest::data_path("farms/ten-10x10.json"));
  auto t = TimingParams::from_module(farm.farm.modules.front());
  double closed = farm_t_module(farm.farm, t, ModulesMode::parallel);

  auto sc = load_scenario_file(mtest::data_path("scenarios/unload-ten-modules.json"));
  if (sc.timing.t_engage != Rational(0) || sc.modules != ModulesMode::parallel || sc.timing.t_h || sc.timing.t_v) {
    return {false, "ten-module scenario is not the parallel, zero-engage, speed-derived run"};
  }
  auto t0 = std::chrono::steady_clock::now();
  auto trace = run_scenario<double>(sc);
  double elapsed = seconds_since(t0);
  double simulated = trace.total_time;

  double hc = seconds_to_hours(closed), hs = seconds_to_hours(simulated);
  bool ok = t.t_h_m == 12.5 && within(hc, 8.3, 0.05) && within(hs, 8.3, 0.05) && elapsed < 10.0;
  return {ok, fmt("t_h_m %.3f s, t_v_m %.4f s; closed form %.2f s = %.3f h (%+.2f%% vs 8.3 h); simulated %.2f s = %.3f h "
                  "(%+.2f%%) in %.2f s",
                  t.t_h_m, t.t_v_m, closed, hc, (hc / 8.3 - 1) * 100, simulated, hs, (hs / 8.3 - 1) * 100, elapsed)};
}

// 3, 4 ----------------------------------------------------------------------

Verdict labour() {
  double lc = labour_cost(217.5, 222.18);
  bool ok = std::abs(lc - 48324.15) < 0.005 && within(lc, 48325.0, 1e-4);
  return {ok, fmt("labour_cost(217.5, 222.18) = %.2f USD, %.4f%% from 48,325", lc, (lc / 48325.0 - 1) * 100)};
}

Verdict savings() {
  double sv = tray_labour_savings(217.5, 222.18, 0.15, 0.56);
  CostModel costs;
  costs.grow_area = 217.5;
  costs.labour_rate = 222.18;
  costs.tray_labour_fraction = 0.15;
  costs.labour_cost_share = 0.56;
  costs.reference_savings = 4110.0;
  auto farm = load_farm_file(mtest::data_path("farms/ten-10x10.json"));
  auto report = comparison_report(farm.farm, TimingParams::from_module(farm.farm.modules.front()), costs);
  std::string flag;
  for (const auto& r : report.rows) {
    if (r.name == "savings_gap") flag = r.note;
  }
  bool ok = fmt("%.2f", sv) == "4059.23" && flag == "computed differs from reference by -1.2%";
  return {ok, fmt("tray_labour_savings = %.2f USD; report: \"%s\"", sv, flag.c_str())};
}

// 5 -------------------------------------------------------------------------

Verdict oracle_sweep() {
  auto t0 = std::chrono::steady_clock::now();
  int matched = 0;
  std::string first_miss;
  for (int n_h = 1; n_h <= 4; ++n_h) {
    for (int n_v = 1; n_v <= 4; ++n_v) {
      ModuleSpec m;
      m.n_h = n_h;
      m.n_v = n_v;
      Scenario sc;
      sc.farm.modules = {m};
      for (int c = 0; c < n_h; ++c) {
        for (int r = 0; r < n_v; ++r) {
          CellAddress a{0, c, r};
          sc.placements.push_back({Carriage{fmt("c%d-%d", c, r), 5.0, location::Cell{a}}, a});
        }
      }
      Rational t_h(n_h + 2, 3), t_v(5, 7 + n_v);
      sc.timing = {t_h, t_v, Rational(0)};
      auto got = run_scenario<Rational>(sc).total_time;
      auto want = closed_form_t_module<Rational>(n_h, n_v, t_h, t_v);
      if (got == want) {
        ++matched;
      } else if (first_miss.empty()) {
        first_miss = fmt(" first miss %dx%d: %s vs %s", n_h, n_v, got.str().c_str(), want.str().c_str());
      }
    }
  }
  double elapsed = seconds_since(t0);
  return {matched == 16 && elapsed < 5.0, fmt("%d/16 exact matches in %.3f s%s", matched, elapsed, first_miss.c_str())};
}

// 6 -------------------------------------------------------------------------

Verdict interlock() {
  auto t0 = std::chrono::steady_clock::now();
  auto rep = model_check_minimal_module();
  double elapsed = seconds_since(t0);
  bool ok = rep.exhausted && rep.interlock_violations == 0 && rep.invariant_violations == 0 &&
            rep.loaded_locked_motion_seen && rep.loaded_unlocked_rest_seen && elapsed < 30.0;
  return {ok, fmt("%zu states, %zu transitions, %zu interlock violations, %zu invariant violations; loaded motion %s, "
                  "loaded unlocked rest %s; %.2f s%s",
                  rep.states, rep.transitions, rep.interlock_violations, rep.invariant_violations,
                  rep.loaded_locked_motion_seen ? "reached" : "NOT reached",
                  rep.loaded_unlocked_rest_seen ? "reached" : "NOT reached", elapsed,
                  rep.first_violation.empty() ? "" : (": " + rep.first_violation).c_str())};
}

// 7 -------------------------------------------------------------------------

Verdict protocol_lifecycle() {
  mtest::TempDir dir;
  mtest::ServerProcess server(dir.path(), dir / "lifecycle.db", {"--max-hold", "0.5"});
  mtest::Api api(server.url());
  VirtualClock clock(1.7e9, 0.002);
  HttpLink link(server.url(), 0.5);
  auto opt = mtest::agent_options("acc-elevator", 1.0);
  DeviceAgent agent(std::make_unique<ElevatorModel>(ModuleSpec{}), link, clock, opt);

  auto first = agent.run_cycle();
  if (!agent.device_id() || !first.phase_order_ok()) return {false, "first cycle did not register"};
  const auto id = *agent.device_id();

  // The agent is in deep sleep between cycles; stage now.
  auto staged = api.post("/api/devices/" + id + "/update",
                         encode(UpdateBundle::make("1.1.0", {{"bin/elevator.py", to_bytes("lift_speed = 33.3\n")}})));
  if (staged.status != 200) return {false, "staging failed: " + staged.body.dump()};
  auto second = agent.run_cycle();
  bool installed = second.phase_order_ok() && second.installs.size() == 1 &&
                   second.installs[0].phase == DeviceCyclePhase::pre_update && second.version_at_run_main == "1.1.0" &&
                   api.get("/api/devices/" + id).body["installed_version"] == "1.1.0";

  // Kill the server while the agent is in run_main.
  CycleReport during;
  std::thread t([&] { during = agent.run_cycle(); });
  bool in_run_main = mtest::eventually([&] { return api.get("/api/devices/" + id).body["last_phase"] == "run_main"; }, 10);
  server.process().kill(SIGKILL);
  server.process().wait();
  t.join();
  auto after = agent.run_cycle();
  bool survived = in_run_main && during.phase_order_ok() && after.phase_order_ok() && after.commands.empty() &&
                  agent.phase() == DeviceCyclePhase::deep_sleep && !after.server_reachable;

  std::string install_phase = second.installs.empty() ? "none" : std::string(to_string(second.installs[0].phase));
  return {installed && survived,
          fmt("update: installed at %s, version at run_main %s; server SIGKILLed in run_main: cycle phases %zu, "
              "next cycle phases %zu, ends in %s",
              install_phase.c_str(), second.version_at_run_main.c_str(), during.phases.size(), after.phases.size(),
              std::string(to_string(agent.phase())).c_str())};
}

// 8 -------------------------------------------------------------------------

Verdict determinism() {
  int scenarios = 0, stable = 0;
  for (const auto& e : std::filesystem::directory_iterator(mtest::data_path("scenarios"))) {
    if (e.path().extension() != ".json") continue;
    ++scenarios;
    auto sc = load_scenario_file(e.path());
    bool same = trace_hash(run_scenario<double>(sc)) == trace_hash(run_scenario<double>(sc)) &&
                trace_hash(run_scenario<Rational>(sc)) == trace_hash(run_scenario<Rational>(sc));
    stable += same;
  }

  mtest::TempDir dir;
  auto db = dir / "persist.db";
  auto [seeded, seed_out] = mtest::run({MACARONS_SERVER_BIN, "seed-demo", "--db", db.string()}, dir.path());
  if (seeded != 0) return {false, "seed-demo failed"};
  auto devices = nlohmann::json::parse(seed_out)["devices"];
  const auto mover = devices[0]["device_id"].get<std::string>();
  const auto elevator = devices[1]["device_id"].get<std::string>();
  std::vector<std::string> paths{"/api/devices", "/api/devices/" + mover + "/config", "/api/devices/" + mover + "/readings",
                                 "/api/scripts", "/api/farm"};
  std::vector<std::string> before;
  {
    mtest::ServerProcess server(dir.path(), db);
    mtest::Api api(server.url());
    api.put("/api/devices/" + mover + "/config", {{"sleep_seconds", 30}, {"label", "bay 1"}});
    auto batch = nlohmann::json::array();
    for (int i = 0; i < 100; ++i) batch.push_back(to_message_json(Reading{mover, 1.7e9 + i / 7.0, "position", 1250.0 * i / 3.0}));
    api.post("/api/devices/" + mover + "/readings", batch);
    api.post("/api/scripts", nlohmann::json{{"name", "lift"}, {"steps", {{{"device", elevator}, {"command", "goto_row"}, {"args", {{"row", 1}}}}}}});
    api.post("/api/devices/" + elevator + "/update", encode(UpdateBundle::make("1.0.1", {{"cfg.txt", to_bytes("tol=3")}})));
    for (const auto& p : paths) before.push_back(api.get(p).body.dump());
    server.process().kill(SIGKILL);
    server.process().wait();
  }
  auto exported = server::Store(db.string()).export_state();
  bool identical = true;
  {
    mtest::ServerProcess server(dir.path(), db);
    mtest::Api api(server.url());
    for (std::size_t i = 0; i < paths.size(); ++i) identical = identical && api.get(paths[i]).body.dump() == before[i];
    server.process().kill(SIGTERM);
    server.process().wait();
  }
  identical = identical && server::Store(db.string()).export_state() == exported;

  return {scenarios > 0 && stable == scenarios && identical,
          fmt("%d/%d scenarios hash-stable in double and exact time; state after SIGKILL and restart %s (%zu bytes)",
              stable, scenarios, identical ? "byte-identical" : "DIFFERS", exported.size())};
}

// 9 -------------------------------------------------------------------------

struct OpenRail : MoverEnv {
  std::optional<std::string> carriage_at(int, int) const override { return std::nullopt; }
  double carriage_mass(const std::string&) const override { return 0.0; }
  std::optional<int> elevator_row() const override { return std::nullopt; }
  bool elevator_locked() const override { return false; }
};

Verdict speed_contract() {
  ModuleSpec spec;  // mover 100 mm/s, lift 33.3 mm/s, pitches 1250 / 500 mm
  spec.n_h = 4;
  spec.n_v = 3;
  auto mk = MoverKinematics<Rational>::from(spec, Rational(2));
  MoverState<Rational> m;
  m.mode = MoverMode::parked;
  m.row = 0;
  OpenRail rail;
  MoverCommand go{mover_cmd::MoveTo{1, std::nullopt}};
  auto started = mover_step(mk, m, Rational(0), go, rail).state;
  auto mt = mover_time_to_event(mk, started);
  if (!mt) return {false, "mover never arrives"};
  auto arrived = mover_step(mk, started, *mt, go, rail);

  auto ek = ElevatorKinematics<Rational>::from(spec);
  ElevatorState<Rational> e;
  e.height = ek.height_of(0);
  e.row = e.target_row = 0;
  ElevatorCommand up{elevator_cmd::GotoRow{1}};
  auto lifting = elevator_step(ek, e, Rational(0), up).state;
  auto et = elevator_time_to_event(ek, lifting);
  if (!et) return {false, "elevator never arrives"};
  auto landed = elevator_step(ek, lifting, *et, up);

  bool mover_ok = *mt == Rational(25, 2) && arrived.state.position - m.position == Rational(1250) &&
                  arrived.status == StepStatus::completed;
  bool lift_ok = std::abs(et->to_double() - 15.015) <= 0.001 && landed.state.height - e.height == Rational(500) &&
                 landed.state.row == 1 && landed.status == StepStatus::completed;
  return {mover_ok && lift_ok, fmt("mover 1250 mm in %s s; elevator 500 mm in %s s = %.6f s", mt->str().c_str(),
                                   et->str().c_str(), et->to_double())};
}

}  // namespace

int main() {
  struct Criterion {
    int number;
    const char* name;
    std::function<Verdict()> check;
  };
  const std::vector<Criterion> criteria{
      {1, "human unload figure", human_unload},
      {2, "automated unload figure", automated_unload},
      {3, "labour cost", labour},
      {4, "tray labour savings", savings},
      {5, "oracle equivalence sweep", oracle_sweep},
      {6, "interlock safety", interlock},
      {7, "protocol lifecycle", protocol_lifecycle},
      {8, "determinism and persistence", determinism},
      {9, "speed contract", speed_contract},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << "AC" << c.number << " " << (v.pass ? "PASS" : "FAIL") << "  " << c.name << ": " << v.detail << std::endl;
  }
  return failures;
}
