// sim run --scenario <file> --trace-out <file> [--modules parallel|serial] [--exact]

#include <iostream>

#include <CLI11.hpp>

#include "macarons/scenario.hpp"

using namespace macarons;

template <class S>
int run(const Scenario& sc, const std::string& trace_out) {
  auto trace = run_scenario<S>(sc);
  auto jsonl = trace_to_jsonl(trace);
  write_text_file(trace_out, jsonl);
  std::cout << "events " << trace.events.size() << "\n"
            << "total_time " << scalar_str(trace.total_time) << " s (" << to_double(trace.total_time) / 3600.0 << " h)\n"
            << "trace_sha256 " << sha256_hex(jsonl) << "\n";
  return 0;
}

int main(int argc, char** argv) {
  CLI::App app{"Discrete-event simulator for crop-tray transport scenarios"};
  app.require_subcommand(1);
  auto* cmd = app.add_subcommand("run", "Run a scenario and write its trace");
  std::string scenario_path;
  std::string trace_out;
  std::string modules;
  bool exact = false;
  cmd->add_option("--scenario", scenario_path, "Scenario file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--trace-out", trace_out, "Trace output (JSON lines)")->required();
  cmd->add_option("--modules", modules, "Override module mode")->check(CLI::IsMember({"parallel", "serial"}));
  cmd->add_flag("--exact", exact, "Use exact rational time instead of double");
  CLI11_PARSE(app, argc, argv);

  try {
    auto sc = load_scenario_file(scenario_path);
    if (!modules.empty()) sc.modules = modules == "serial" ? ModulesMode::serial : ModulesMode::parallel;
    return exact ? run<Rational>(sc, trace_out) : run<double>(sc, trace_out);
  } catch (const Error& e) {
    std::cerr << "sim: " << to_string(e.code()) << ": " << e.what() << "\n";
    return 2;
  }
}
