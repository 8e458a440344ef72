// analyze report --farm <file> --timings <file> --costs <file> [--trace <file>]... --out <path> --format table|records

#include <iostream>

#include <CLI11.hpp>

#include "macarons/analytics.hpp"

using namespace macarons;

int main(int argc, char** argv) {
  CLI::App app{"Closed-form unload times and labour economics"};
  app.require_subcommand(1);
  auto* cmd = app.add_subcommand("report", "Compare closed forms, simulation traces and labour savings");
  std::string farm_path, timings_path, costs_path, out_path, format = "table", modules = "parallel";
  std::vector<std::string> traces;
  cmd->add_option("--farm", farm_path, "Farm file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--timings", timings_path, "Timing parameters (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--costs", costs_path, "Cost model (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--trace", traces, "Simulation trace(s) to include")->check(CLI::ExistingFile);
  cmd->add_option("--out", out_path, "Output path ('-' for stdout)")->required();
  cmd->add_option("--format", format, "table or records")->check(CLI::IsMember({"table", "records"}));
  cmd->add_option("--modules", modules, "How modules combine")->check(CLI::IsMember({"parallel", "serial"}));
  CLI11_PARSE(app, argc, argv);

  try {
    auto farm = load_farm_file(farm_path).farm;
    auto parse = [](const std::string& path) {
      try {
        return nlohmann::json::parse(read_text_file(path));
      } catch (const nlohmann::json::parse_error& e) {
        throw DecodeError(DecodeError::from_parser_position(e.byte), path + ": malformed JSON");
      }
    };
    auto timings = timings_from_json(parse(timings_path), farm);
    auto costs = costs_from_json(parse(costs_path), farm);
    std::vector<TraceSummary> summaries;
    for (const auto& t : traces) summaries.push_back(read_trace_summary(read_text_file(t)));
    auto report = comparison_report(farm, timings, costs, summaries,
                                    modules == "serial" ? ModulesMode::serial : ModulesMode::parallel);
    auto text = render_report(report, format == "records" ? ReportFormat::records : ReportFormat::table);
    if (out_path == "-") {
      std::cout << text;
    } else {
      write_text_file(out_path, text);
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "analyze: " << to_string(e.code()) << ": " << e.what() << "\n";
    return 2;
  }
}
