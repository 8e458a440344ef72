#pragma once

// Farm files: pretty-printed JSON, documented in docs/farm-file.md.
//
//   {
//     "format": "macarons-farm", "version": 1,
//     "limits":  { "max_payload_kg": 12.5, ... },          // optional
//     "modules": [ { "n_h": 1, "n_v": 2, "pitch_h": 1250, ... } ],
//     "carriages": [ { "id": "c1", "module": 0, "col": 0, "row": 1, "tray_mass": 10 } ]  // optional
//   }
//
// Missing module keys take the ModuleSpec defaults.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "macarons/error.hpp"
#include "macarons/farm.hpp"

namespace macarons {

/// Farm plus the carriages initially resting in cells.
struct FarmFile {
  FarmSpec farm;
  std::vector<Carriage> carriages;

  bool operator==(const FarmFile&) const = default;
};

inline nlohmann::json to_json(const ModuleSpec& m) {
  return {{"n_h", m.n_h},           {"n_v", m.n_v},         {"pitch_h", m.pitch_h},         {"pitch_v", m.pitch_v},
          {"mover_speed", m.mover_speed}, {"lift_speed", m.lift_speed}, {"tray_w", m.tray_w}, {"tray_d", m.tray_d},
          {"payload_max", m.payload_max}, {"aisle_gap", m.aisle_gap}};
}

inline nlohmann::json to_json(const Limits& l) {
  return {{"max_payload_kg", l.max_payload_kg},
          {"max_tray_w_mm", l.max_tray_w_mm},
          {"max_tray_d_mm", l.max_tray_d_mm},
          {"min_aisle_gap_mm", l.min_aisle_gap_mm}};
}

namespace detail {
template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::validation, std::string("field '") + key + "': " + e.what());
    }
  }
}
}  // namespace detail

inline ModuleSpec module_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::validation, "module entry must be an object");
  ModuleSpec m;
  detail::read_opt(j, "n_h", m.n_h);
  detail::read_opt(j, "n_v", m.n_v);
  detail::read_opt(j, "pitch_h", m.pitch_h);
  detail::read_opt(j, "pitch_v", m.pitch_v);
  detail::read_opt(j, "mover_speed", m.mover_speed);
  detail::read_opt(j, "lift_speed", m.lift_speed);
  detail::read_opt(j, "tray_w", m.tray_w);
  detail::read_opt(j, "tray_d", m.tray_d);
  detail::read_opt(j, "payload_max", m.payload_max);
  detail::read_opt(j, "aisle_gap", m.aisle_gap);
  return m;
}

inline nlohmann::json to_json(const FarmFile& f) {
  nlohmann::json modules = nlohmann::json::array();
  for (const auto& m : f.farm.modules) modules.push_back(to_json(m));
  nlohmann::json carriages = nlohmann::json::array();
  for (const auto& c : f.carriages) {
    const auto* cell = std::get_if<location::Cell>(&c.location);
    if (cell == nullptr) throw Error(ErrorCode::validation, "farm files only hold carriages resting in cells");
    carriages.push_back({{"id", c.id},
                         {"module", cell->addr.module},
                         {"col", cell->addr.col},
                         {"row", cell->addr.row},
                         {"tray_mass", c.tray_mass}});
  }
  return {{"format", "macarons-farm"}, {"version", 1},       {"n", f.farm.n()},
          {"limits", to_json(f.farm.limits)}, {"modules", modules}, {"carriages", carriages}};
}

inline FarmFile farm_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::validation, "farm file must be an object");
  if (j.value("format", std::string("macarons-farm")) != "macarons-farm") {
    throw Error(ErrorCode::validation, "not a farm file");
  }
  FarmFile out;
  if (auto it = j.find("limits"); it != j.end()) {
    detail::read_opt(*it, "max_payload_kg", out.farm.limits.max_payload_kg);
    detail::read_opt(*it, "max_tray_w_mm", out.farm.limits.max_tray_w_mm);
    detail::read_opt(*it, "max_tray_d_mm", out.farm.limits.max_tray_d_mm);
    detail::read_opt(*it, "min_aisle_gap_mm", out.farm.limits.min_aisle_gap_mm);
  }
  auto modules = j.find("modules");
  if (modules == j.end() || !modules->is_array()) throw Error(ErrorCode::validation, "farm file needs a modules list");
  for (const auto& m : *modules) out.farm.modules.push_back(module_from_json(m));
  if (auto n = j.find("n"); n != j.end() && n->get<std::size_t>() != out.farm.n()) {
    throw Error(ErrorCode::validation, "n does not match the number of modules");
  }
  if (auto cs = j.find("carriages"); cs != j.end()) {
    for (const auto& c : *cs) {
      Carriage carriage;
      carriage.id = c.at("id").get<std::string>();
      carriage.tray_mass = c.value("tray_mass", 0.0);
      CellAddress addr{c.value("module", std::size_t{0}), c.at("col").get<int>(), c.at("row").get<int>()};
      if (addr.module >= out.farm.n() || !in_bounds(out.farm.modules[addr.module], addr)) {
        throw Error(ErrorCode::address, "carriage '" + carriage.id + "' placed outside its module");
      }
      carriage.location = location::Cell{addr};
      out.carriages.push_back(std::move(carriage));
    }
  }
  return out;
}

inline std::string save_farm(const FarmFile& f) { return to_json(f).dump(2) + "\n"; }

inline FarmFile load_farm(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DecodeError(DecodeError::from_parser_position(e.byte), "farm file: " + std::string(e.what()));
  }
  try {
    return farm_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::validation, std::string("farm file: ") + e.what());
  }
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << text;
}

inline FarmFile load_farm_file(const std::filesystem::path& path) { return load_farm(read_text_file(path)); }

}  // namespace macarons
