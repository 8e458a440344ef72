#pragma once

// Closed-form unload times and labour economics, plus the comparison report.

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "macarons/error.hpp"
#include "macarons/farm.hpp"
#include "macarons/scenario.hpp"

namespace macarons {

/// Per-unit times in seconds. The scissor-lift and manual-lift values are
/// only needed for the human baseline.
struct TimingParams {
  double t_h_m = 12.5;
  double t_v_m = 500.0 / 33.3;
  std::optional<double> t_h_s = 10.0;
  std::optional<double> t_v_s = 6.0;
  std::optional<double> t_m = 15.0;

  bool has_human_baseline() const { return t_h_s && t_v_s && t_m; }

  /// Automated times derived from a module's pitches and speeds.
  static TimingParams from_module(const ModuleSpec& m) {
    TimingParams p;
    p.t_h_m = travel_time(m.pitch_h, m.mover_speed);
    p.t_v_m = travel_time(m.pitch_v, m.lift_speed);
    return p;
  }
};

struct CostModel {
  double labour_rate = 222.18;          // USD / m^2 / year
  double tray_labour_fraction = 0.15;   // share of labour spent moving trays
  double labour_cost_share = 0.56;      // share of operating cost that is labour
  double grow_area = 217.5;             // m^2
  std::optional<double> reference_savings;  // published figure to compare against, USD/year

  void validate() const {
    auto fraction = [](double v, const char* name) {
      if (!(v > 0.0 && v <= 1.0)) throw Error(ErrorCode::validation, std::string(name) + " must lie in (0, 1]");
    };
    fraction(tray_labour_fraction, "tray_labour_fraction");
    fraction(labour_cost_share, "labour_cost_share");
    if (!(labour_rate > 0.0)) throw Error(ErrorCode::validation, "labour_rate must be positive");
    if (!(grow_area > 0.0)) throw Error(ErrorCode::validation, "grow_area must be positive");
  }
};

/// N_h N_v ((N_h + 1) t_h + (N_v + 1) t_v) for one module.
template <class S>
S closed_form_t_module(int n_h, int n_v, const S& t_h, const S& t_v) {
  if (n_h < 1 || n_v < 1) throw Error(ErrorCode::parameter, "module needs n_h, n_v >= 1");
  if (!(t_h > S(0)) || !(t_v > S(0))) throw Error(ErrorCode::parameter, "unit times must be positive");
  return S(n_h) * S(n_v) * (S(n_h + 1) * t_h + S(n_v + 1) * t_v);
}

inline double closed_form_t_module(int n_h, int n_v, double t_h, double t_v) {
  return closed_form_t_module<double>(n_h, n_v, t_h, t_v);
}

/// (2 N_v N_h t_v_s + N_v N_h t_m + N_h (N_h + 1) t_h_s) N for a human with a scissor lift.
template <class S>
S closed_form_t_human(int n_h, int n_v, int n_modules, const S& t_h_s, const S& t_v_s, const S& t_m) {
  if (n_h < 1 || n_v < 1 || n_modules < 1) throw Error(ErrorCode::parameter, "counts must be >= 1");
  S nh(n_h);
  S nv(n_v);
  return (S(2) * nv * nh * t_v_s + nv * nh * t_m + nh * S(n_h + 1) * t_h_s) * S(n_modules);
}

inline double closed_form_t_human(int n_h, int n_v, int n_modules, const TimingParams& p) {
  if (!p.has_human_baseline()) throw Error(ErrorCode::parameter, "scissor-lift timings missing");
  return closed_form_t_human<double>(n_h, n_v, n_modules, *p.t_h_s, *p.t_v_s, *p.t_m);
}

template <class S>
S labour_cost(const S& grow_area, const S& labour_rate) {
  return grow_area * labour_rate;
}

template <class S>
S tray_labour_savings(const S& grow_area, const S& labour_rate, const S& tray_labour_fraction, const S& labour_cost_share) {
  return labour_cost(grow_area, labour_rate) * tray_labour_fraction * labour_cost_share;
}

inline double labour_cost(const CostModel& m) {
  m.validate();
  return labour_cost(m.grow_area, m.labour_rate);
}

inline double tray_labour_savings(const CostModel& m) {
  m.validate();
  return tray_labour_savings(m.grow_area, m.labour_rate, m.tray_labour_fraction, m.labour_cost_share);
}

inline const char* kSavingsFormula = "grow_area * labour_rate * tray_labour_fraction * labour_cost_share";

inline double seconds_to_hours(double s) { return s / 3600.0; }

/// Hours rounded to one decimal, as presented in the report.
inline double hours_1dp(double seconds) { return std::round(seconds_to_hours(seconds) * 10.0) / 10.0; }

// ---------------------------------------------------------------------------
// Report

enum class ReportFormat { table, records };

struct ReportRow {
  std::string name;
  double value = 0.0;
  std::string unit;
  std::string note;
};

struct ComparisonReport {
  std::vector<ReportRow> rows;
  bool human_section = false;
};

/// Automated unload time for the whole farm: modules run side by side in
/// parallel mode (slowest module), one after another in serial mode.
inline double farm_t_module(const FarmSpec& farm, const TimingParams& t, ModulesMode mode) {
  double total = 0.0;
  for (const auto& m : farm.modules) {
    double tm = closed_form_t_module(m.n_h, m.n_v, t.t_h_m, t.t_v_m);
    total = mode == ModulesMode::parallel ? std::max(total, tm) : total + tm;
  }
  return total;
}

inline double farm_t_human(const FarmSpec& farm, const TimingParams& t) {
  double total = 0.0;
  for (const auto& m : farm.modules) total += closed_form_t_human(m.n_h, m.n_v, 1, t);
  return total;
}

inline ComparisonReport comparison_report(const FarmSpec& farm, const TimingParams& timings, const CostModel& costs,
                                          const std::vector<TraceSummary>& traces = {},
                                          ModulesMode mode = ModulesMode::parallel) {
  if (auto v = validate_farm(farm); !v.ok()) throw Error(ErrorCode::validation, "invalid farm: " + v.violations.front().rule);
  costs.validate();
  const std::string digest = farm_digest(farm);
  for (const auto& t : traces) {
    if (t.modules != farm.n() || t.farm_digest != digest) {
      throw Error(ErrorCode::validation, "trace was produced for a different farm");
    }
  }

  ComparisonReport r;
  auto add = [&](std::string name, double value, std::string unit, std::string note = {}) {
    r.rows.push_back({std::move(name), value, std::move(unit), std::move(note)});
  };
  add("modules", static_cast<double>(farm.n()), "count");
  add("grow_units", static_cast<double>(grow_units(farm)), "count");
  add("t_h_m", timings.t_h_m, "s");
  add("t_v_m", timings.t_v_m, "s");
  double tm = farm_t_module(farm, timings, mode);
  add("T_module", tm, "s", mode == ModulesMode::parallel ? "closed form, modules in parallel" : "closed form, modules in series");
  add("T_module_hours", hours_1dp(tm), "h");
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const double sim = traces[i].total_time;
    add("T_simulated[" + std::to_string(i) + "]", sim, "s", "from trace");
    add("T_simulated_hours[" + std::to_string(i) + "]", hours_1dp(sim), "h");
    add("T_simulated_minus_closed[" + std::to_string(i) + "]", sim - tm, "s");
  }
  if (timings.has_human_baseline()) {
    r.human_section = true;
    double th = farm_t_human(farm, timings);
    add("T_human", th, "s", "scissor lift, one operator");
    add("T_human_hours", hours_1dp(th), "h");
    add("time_saved", th - tm, "s");
  }
  double lc = labour_cost(costs);
  add("grow_area", costs.grow_area, "m2");
  add("labour_cost", lc, "USD/year", "grow_area * labour_rate");
  double sv = tray_labour_savings(costs);
  add("tray_labour_savings", sv, "USD/year", kSavingsFormula);
  if (costs.reference_savings) {
    double gap = (sv - *costs.reference_savings) / *costs.reference_savings * 100.0;
    add("reference_savings", *costs.reference_savings, "USD/year");
    char note[96];
    std::snprintf(note, sizeof note, "computed differs from reference by %+.1f%%", gap);
    add("savings_gap", gap, "%", note);
  }
  return r;
}

/// Hour rows are already rounded to one decimal and print that way.
inline std::string format_value(double v, const std::string& unit = {}) {
  char buf[64];
  std::snprintf(buf, sizeof buf, unit == "h" ? "%.1f" : "%.2f", v);
  return buf;
}

inline std::string render_report(const ComparisonReport& r, ReportFormat format) {
  std::string out;
  if (format == ReportFormat::records) {
    for (const auto& row : r.rows) {
      nlohmann::json j{{"name", row.name}, {"value", row.value}, {"unit", row.unit}};
      if (!row.note.empty()) j["note"] = row.note;
      out += j.dump();
      out += '\n';
    }
    return out;
  }
  std::size_t name_w = 4;
  std::size_t value_w = 5;
  for (const auto& row : r.rows) {
    name_w = std::max(name_w, row.name.size());
    value_w = std::max(value_w, format_value(row.value, row.unit).size());
  }
  auto line = [&](const std::string& a, const std::string& b, const std::string& c, const std::string& d) {
    std::string s = a + std::string(name_w - a.size() + 2, ' ') + std::string(value_w - b.size(), ' ') + b + "  " + c;
    if (!d.empty()) s += std::string(c.size() < 9 ? 9 - c.size() : 1, ' ') + d;
    return s + "\n";
  };
  out += line("name", "value", "unit", "note");
  out += std::string(name_w + value_w + 20, '-') + "\n";
  for (const auto& row : r.rows) out += line(row.name, format_value(row.value, row.unit), row.unit, row.note);
  if (!r.human_section) out += "(human baseline omitted: scissor-lift timings not supplied)\n";
  return out;
}

// ---------------------------------------------------------------------------
// Input files

inline TimingParams timings_from_json(const nlohmann::json& j, const FarmSpec& farm) {
  TimingParams t = farm.modules.empty() ? TimingParams{} : TimingParams::from_module(farm.modules.front());
  t.t_h_s.reset();
  t.t_v_s.reset();
  t.t_m.reset();
  try {
    if (j.contains("t_h_m")) t.t_h_m = j.at("t_h_m").get<double>();
    if (j.contains("t_v_m")) t.t_v_m = j.at("t_v_m").get<double>();
    if (j.contains("t_h_s")) t.t_h_s = j.at("t_h_s").get<double>();
    if (j.contains("t_v_s")) t.t_v_s = j.at("t_v_s").get<double>();
    if (j.contains("t_m")) t.t_m = j.at("t_m").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::validation, std::string("timings: ") + e.what());
  }
  for (double v : {t.t_h_m, t.t_v_m, t.t_h_s.value_or(1.0), t.t_v_s.value_or(1.0), t.t_m.value_or(1.0)}) {
    if (!(v > 0.0)) throw Error(ErrorCode::validation, "timings must be strictly positive");
  }
  return t;
}

/// Costs file: rate and fractions, plus either "grow_area" or "area_per_unit"
/// (which is multiplied by the farm's grow-unit count).
inline CostModel costs_from_json(const nlohmann::json& j, const FarmSpec& farm) {
  CostModel c;
  try {
    c.labour_rate = j.value("labour_rate", c.labour_rate);
    c.tray_labour_fraction = j.value("tray_labour_fraction", c.tray_labour_fraction);
    c.labour_cost_share = j.value("labour_cost_share", c.labour_cost_share);
    if (j.contains("grow_area")) {
      c.grow_area = j.at("grow_area").get<double>();
    } else {
      c.grow_area = grow_area(farm, j.value("area_per_unit", area_preset::farm_equivalent));
    }
    if (j.contains("reference_savings")) c.reference_savings = j.at("reference_savings").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::validation, std::string("costs: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace macarons
