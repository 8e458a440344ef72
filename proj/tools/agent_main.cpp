// agent run --kind mover|elevator --server <url> --module <farm file> [--realtime | --sim-clock <endpoint>]
//
// Prints one JSON cycle report per line.

#include <iostream>

#include <CLI11.hpp>

#include "macarons/agent/device_agent.hpp"

using namespace macarons;
using namespace macarons::agent;

int main(int argc, char** argv) {
  CLI::App app{"Simulated mover/elevator firmware"};
  app.require_subcommand(1);
  auto* cmd = app.add_subcommand("run", "Run device cycles against a server");
  std::string kind, server, module_path, hardware_id, firmware = "1.0.0";
  std::size_t index = 0;
  bool realtime = false;
  std::optional<std::string> sim_clock;
  std::optional<std::string> install_root;
  std::size_t cycles = 0;
  double awake = 10.0;
  cmd->add_option("--kind", kind, "Device kind")->required()->check(CLI::IsMember({"mover", "elevator"}));
  cmd->add_option("--server", server, "Server base URL, e.g. http://127.0.0.1:8080")->required();
  cmd->add_option("--module", module_path, "Farm file describing the module")->required()->check(CLI::ExistingFile);
  cmd->add_option("--index", index, "Module index within the farm file");
  cmd->add_option("--hardware-id", hardware_id, "Hardware id (default: sim-<kind>-<index>)");
  cmd->add_option("--firmware", firmware, "Initial firmware version");
  auto* rt = cmd->add_flag("--realtime", realtime, "Run on the wall clock");
  cmd->add_option("--sim-clock", sim_clock, "URL answering {\"now\": seconds}")->excludes(rt);
  cmd->add_option("--install-root", install_root, "Directory to write installed bundle files into");
  cmd->add_option("--cycles", cycles, "Stop after this many cycles (0 = forever)");
  cmd->add_option("--awake", awake, "Default run_main window, seconds");
  CLI11_PARSE(app, argc, argv);

  try {
    auto farm = load_farm_file(module_path);
    if (index >= farm.farm.n()) throw Error(ErrorCode::parameter, "module index out of range");
    const auto& spec = farm.farm.modules[index];
    std::unique_ptr<DeviceModel> model;
    if (kind == "mover") {
      model = std::make_unique<MoverModel>(spec, index, farm.carriages);
    } else {
      model = std::make_unique<ElevatorModel>(spec);
    }
    std::unique_ptr<AgentClock> clock;
    if (realtime) {
      clock = std::make_unique<RealClock>();
    } else if (sim_clock) {
      clock = std::make_unique<RemoteClock>(*sim_clock);
    } else {
      // Fast-forward device time, but pace each sleep so the server is not hammered.
      clock = std::make_unique<VirtualClock>(RealClock().now(), 0.2);
    }
    if (hardware_id.empty()) {
      char hw[48];
      std::snprintf(hw, sizeof hw, "sim-%s-%02zu", kind.c_str(), index);
      hardware_id = hw;
    }
    HttpLink link(server);
    AgentOptions opt;
    opt.hardware_id = hardware_id;
    opt.firmware_version = firmware;
    opt.awake_seconds = awake;
    if (install_root) opt.install_root = *install_root;
    DeviceAgent agent(std::move(model), link, *clock, opt);
    for (std::size_t c = 0; cycles == 0 || c < cycles; ++c) {
      auto rep = agent.run_cycle();
      nlohmann::json line = rep.to_json();
      line["device_id"] = agent.device_id() ? nlohmann::json(*agent.device_id()) : nlohmann::json();
      line["installed_version"] = agent.installed_version();
      std::cout << line.dump() << std::endl;
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "agent: " << to_string(e.code()) << ": " << e.what() << "\n";
    return 2;
  }
}
