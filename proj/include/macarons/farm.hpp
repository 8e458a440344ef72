#pragma once

// Static farm model: grow-unit grid geometry, carriages and spec validation.
//
// Frames used throughout the library:
//   * cell frame: x = col * pitch_h, z = row * pitch_v (origin at col 0, row 0);
//   * the elevator bay sits one pitch beyond the last column, at x = n_h * pitch_h;
//   * the exit station sits one pitch below row 0. Elevator heights are measured
//     from it, so shelf row r is at height (r + 1) * pitch_v.

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "macarons/error.hpp"

namespace macarons {

/// Soft limits a module is validated against. Overridable because the frame can
/// be rebuilt with other profile lengths.
struct Limits {
  double max_payload_kg = 12.5;
  double max_tray_w_mm = 1060.0;
  double max_tray_d_mm = 630.0;
  double min_aisle_gap_mm = 1000.0;

  bool operator==(const Limits&) const = default;
};

struct ModuleSpec {
  int n_h = 1;
  int n_v = 2;
  double pitch_h = 1250.0;  // mm, centre-to-centre of grow units along a shelf
  double pitch_v = 500.0;   // mm, shelf spacing
  double mover_speed = 100.0;  // mm/s
  double lift_speed = 33.3;    // mm/s
  double tray_w = 1060.0;      // mm
  double tray_d = 630.0;       // mm
  double payload_max = 12.5;   // kg
  double aisle_gap = 1000.0;   // mm

  int capacity() const { return n_h * n_v; }
  double shelf_length() const { return n_h * pitch_h; }

  bool operator==(const ModuleSpec&) const = default;
};

struct FarmSpec {
  std::vector<ModuleSpec> modules;
  Limits limits;

  std::size_t n() const { return modules.size(); }

  static FarmSpec uniform(std::size_t count, const ModuleSpec& spec) {
    FarmSpec farm;
    farm.modules.assign(count, spec);
    return farm;
  }

  bool operator==(const FarmSpec&) const = default;
};

struct CellAddress {
  std::size_t module = 0;
  int col = 0;
  int row = 0;

  auto operator<=>(const CellAddress&) const = default;
};

namespace location {
struct Cell {
  CellAddress addr;
  bool operator==(const Cell&) const = default;
};
struct OnElevator {
  std::size_t module = 0;
  bool operator==(const OnElevator&) const = default;
};
struct OnMover {
  std::string mover_id;
  bool operator==(const OnMover&) const = default;
};
/// Left the module through the exit station.
struct AtExit {
  std::size_t module = 0;
  bool operator==(const AtExit&) const = default;
};
}  // namespace location

using Location = std::variant<location::Cell, location::OnElevator, location::OnMover, location::AtExit>;

struct Carriage {
  std::string id;
  double tray_mass = 0.0;  // kg
  Location location;

  bool operator==(const Carriage&) const = default;
};

struct Violation {
  std::string rule;
  double limit = 0.0;
  double value = 0.0;

  bool operator==(const Violation&) const = default;
};

struct ValidationResult {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
};

/// Checks a module against its typed invariants and the farm's soft limits.
/// Violations are data: every broken rule is reported with limit and value.
inline ValidationResult validate_module_spec(const ModuleSpec& spec, std::size_t farm_size,
                                             const Limits& limits = {}) {
  ValidationResult out;
  auto at_least_one = [&](const char* rule, int v) {
    if (v < 1) out.violations.push_back({rule, 1.0, static_cast<double>(v)});
  };
  auto positive = [&](const char* rule, double v) {
    if (!(v > 0.0)) out.violations.push_back({rule, 0.0, v});
  };
  auto at_most = [&](const char* rule, double limit, double v) {
    if (!(v <= limit)) out.violations.push_back({rule, limit, v});
  };

  at_least_one("n_h >= 1", spec.n_h);
  at_least_one("n_v >= 1", spec.n_v);
  positive("pitch_h > 0", spec.pitch_h);
  positive("pitch_v > 0", spec.pitch_v);
  positive("mover_speed > 0", spec.mover_speed);
  positive("lift_speed > 0", spec.lift_speed);
  positive("tray_w > 0", spec.tray_w);
  positive("tray_d > 0", spec.tray_d);
  positive("payload_max > 0", spec.payload_max);
  at_most("tray_w <= max_tray_w", limits.max_tray_w_mm, spec.tray_w);
  at_most("tray_d <= max_tray_d", limits.max_tray_d_mm, spec.tray_d);
  at_most("payload_max <= max_payload", limits.max_payload_kg, spec.payload_max);
  if (farm_size > 1 && !(spec.aisle_gap >= limits.min_aisle_gap_mm)) {
    out.violations.push_back({"aisle_gap >= 1000 mm", limits.min_aisle_gap_mm, spec.aisle_gap});
  }
  return out;
}

inline ValidationResult validate_farm(const FarmSpec& farm) {
  ValidationResult out;
  if (farm.modules.empty()) out.violations.push_back({"n >= 1", 1.0, 0.0});
  for (const auto& m : farm.modules) {
    auto r = validate_module_spec(m, farm.n(), farm.limits);
    out.violations.insert(out.violations.end(), r.violations.begin(), r.violations.end());
  }
  return out;
}

inline bool in_bounds(const ModuleSpec& spec, const CellAddress& addr) {
  return addr.col >= 0 && addr.col < spec.n_h && addr.row >= 0 && addr.row < spec.n_v;
}

struct Position2 {
  double x = 0.0;  // mm
  double z = 0.0;  // mm

  bool operator==(const Position2&) const = default;
};

inline Position2 cell_position(const ModuleSpec& spec, const CellAddress& addr) {
  if (!in_bounds(spec, addr)) {
    throw Error(ErrorCode::address, "cell (" + std::to_string(addr.col) + ", " + std::to_string(addr.row) +
                                        ") outside " + std::to_string(spec.n_h) + "x" + std::to_string(spec.n_v));
  }
  return {addr.col * spec.pitch_h, addr.row * spec.pitch_v};
}

template <class S>
S travel_time(const S& distance, const S& speed) {
  if (!(speed > S(0))) throw Error(ErrorCode::parameter, "speed must be positive");
  if (distance < S(0)) throw Error(ErrorCode::parameter, "distance must be non-negative");
  return distance / speed;
}

inline double travel_time(double distance, double speed) { return travel_time<double>(distance, speed); }

/// Per-grow-unit area presets (m^2). The farm-equivalent value reproduces a
/// 217.5 m^2 total for ten 10x10 modules; the others are the cost-ratio and
/// bare-tray readings of the same figure.
namespace area_preset {
inline constexpr double farm_equivalent = 0.2175;
inline constexpr double cost_ratio = 144.96 / 128.85;
inline constexpr double tray = 1.060 * 0.630;
}  // namespace area_preset

inline std::int64_t grow_units(const FarmSpec& farm) {
  std::int64_t units = 0;
  for (const auto& m : farm.modules) units += static_cast<std::int64_t>(m.n_h) * m.n_v;
  return units;
}

inline double grow_area(const FarmSpec& farm, double area_per_unit) {
  if (!(area_per_unit > 0.0)) throw Error(ErrorCode::parameter, "area_per_unit must be positive");
  return static_cast<double>(grow_units(farm)) * area_per_unit;
}

}  // namespace macarons
