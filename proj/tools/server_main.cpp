// server serve --db <path> --listen <host:port> [--ui <dir>]
// server seed-demo --db <path> [--farm <file>]
//
// MACARONS_DB and MACARONS_LISTEN override the defaults; flags override both.

#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "macarons/server/http_api.hpp"

using namespace macarons;
using namespace macarons::server;

namespace {

httplib::Server* g_http = nullptr;

void on_signal(int) {
  if (g_http) g_http->stop();
}

std::pair<std::string, int> split_listen(const std::string& listen) {
  auto colon = listen.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::parameter, "--listen expects host:port");
  return {listen.substr(0, colon), std::stoi(listen.substr(colon + 1))};
}

FarmFile demo_farm() {
  FarmFile f;
  ModuleSpec m;  // the built 2x1 module: one column, two rows
  f.farm.modules = {m};
  f.carriages = {Carriage{"tray-01", 6.0, location::Cell{CellAddress{0, 0, 0}}}};
  return f;
}

int serve(const std::string& db, const std::string& listen, const std::optional<std::string>& ui, double sleep_seconds,
          double max_hold) {
  Store store(db);
  ServerConfig cfg;
  cfg.default_sleep_seconds = sleep_seconds;
  cfg.max_long_poll_hold = max_hold;
  ControlServer srv(store, cfg);
  httplib::Server http;
  http.new_task_queue = [] { return new httplib::ThreadPool(16); };
  mount_api(http, srv, ui);

  auto [host, port] = split_listen(listen);
  if (port == 0) {
    port = http.bind_to_any_port(host);
  } else if (!http.bind_to_port(host, port)) {
    port = -1;
  }
  if (port < 0) {
    std::cerr << "server: cannot listen on " << listen << "\n";
    return 1;
  }
  g_http = &http;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "listening on " << host << ":" << port << std::endl;
  http.listen_after_bind();
  srv.shutdown();
  return 0;
}

int seed_demo(const std::string& db, const std::optional<std::string>& farm_path, double sleep_seconds) {
  Store store(db);
  ControlServer srv(store);
  FarmFile farm = farm_path ? load_farm_file(*farm_path) : demo_farm();
  std::vector<ModuleBinding> bindings;
  auto out = nlohmann::json::array();
  for (std::size_t m = 0; m < farm.farm.n(); ++m) {
    char hw[32];
    std::snprintf(hw, sizeof hw, "sim-mover-%02zu", m);
    auto mover = srv.register_device({"mover", hw, "1.0.0"});
    std::snprintf(hw, sizeof hw, "sim-elevator-%02zu", m);
    auto elevator = srv.register_device({"elevator", hw, "1.0.0"});
    bindings.push_back({mover["device_id"], elevator["device_id"]});
    for (const auto* d : {&mover, &elevator}) {
      srv.set_config((*d)["device_id"], "sleep_seconds", sleep_seconds);
      out.push_back(*d);
    }
  }
  srv.set_farm(farm, bindings);
  std::cout << nlohmann::json{{"devices", out}, {"farm", nlohmann::json::parse(save_farm(farm))}}.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Control server for the crop-tray transport devices"};
  app.require_subcommand(1);

  std::string db = "macarons.db";
  std::string listen = "127.0.0.1:8080";
  std::optional<std::string> ui;
  std::optional<std::string> farm;
  double sleep_seconds = 30.0;
  double max_hold = 25.0;

  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP API");
  serve_cmd->add_option("--db", db, "SQLite database file")->envname("MACARONS_DB");
  serve_cmd->add_option("--listen", listen, "host:port (port 0 picks a free port)")->envname("MACARONS_LISTEN");
  serve_cmd->add_option("--ui", ui, "Directory of static UI assets to serve at /");
  serve_cmd->add_option("--sleep-seconds", sleep_seconds, "Default device sleep period");
  serve_cmd->add_option("--max-hold", max_hold, "Longest command long-poll hold, seconds");

  auto* seed_cmd = app.add_subcommand("seed-demo", "Register a simulated farm's devices");
  seed_cmd->add_option("--db", db, "SQLite database file")->envname("MACARONS_DB");
  seed_cmd->add_option("--farm", farm, "Farm file (default: one 2x1 module)")->check(CLI::ExistingFile);
  seed_cmd->add_option("--sleep-seconds", sleep_seconds, "sleep_seconds config for each device");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*serve_cmd) return serve(db, listen, ui, sleep_seconds, max_hold);
    return seed_demo(db, farm, sleep_seconds);
  } catch (const Error& e) {
    std::cerr << "server: " << to_string(e.code()) << ": " << e.what() << "\n";
    return 2;
  }
}
