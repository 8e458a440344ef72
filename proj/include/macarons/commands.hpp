#pragma once

// Wire command names/args <-> device FSM commands.
//
// Agents cannot see each other, so in agent mode mover commands may carry the
// shelf row the elevator platform sits at ("row"), and the elevator is told
// who is aboard with set_occupant.

#include <optional>
#include <string>
#include <variant>

#include <nlohmann/json.hpp>

#include "macarons/device.hpp"
#include "macarons/error.hpp"

namespace macarons {

struct WireCommand {
  std::string name;
  nlohmann::json args = nlohmann::json::object();

  bool operator==(const WireCommand&) const = default;
};

inline WireCommand to_wire(const MoverCommand& cmd, std::optional<int> row = std::nullopt) {
  WireCommand w;
  std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, mover_cmd::MoveTo>) {
          w.name = "move_to";
          w.args["col"] = c.col;
          if (c.row) row = c.row;
        } else if constexpr (std::is_same_v<T, mover_cmd::Dock>) {
          w.name = "dock";
          if (c.row) row = c.row;
        } else if constexpr (std::is_same_v<T, mover_cmd::Engage>) {
          w.name = "engage";
        } else {
          w.name = "release";
        }
      },
      cmd);
  if (row) w.args["row"] = *row;
  return w;
}

inline WireCommand to_wire(const ElevatorCommand& cmd) {
  WireCommand w;
  std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, elevator_cmd::GotoRow>) {
          if (c.row == kExitRow) {
            w.name = "goto_exit";
          } else {
            w.name = "goto_row";
            w.args["row"] = c.row;
          }
        } else if constexpr (std::is_same_v<T, elevator_cmd::Lock>) {
          w.name = "lock";
        } else if constexpr (std::is_same_v<T, elevator_cmd::Unlock>) {
          w.name = "unlock";
        } else {
          w.name = "set_occupant";
          if (c.occupant) {
            w.args["mover"] = c.occupant->mover_id;
            w.args["carriage"] = c.occupant->carriage_id ? nlohmann::json(*c.occupant->carriage_id) : nlohmann::json();
          }
        }
      },
      cmd);
  return w;
}

namespace detail {
inline int int_arg(const nlohmann::json& args, const char* key) {
  auto it = args.find(key);
  if (it == args.end() || !it->is_number_integer()) {
    throw Error(ErrorCode::validation, std::string("argument '") + key + "' must be an integer");
  }
  return it->get<int>();
}
inline std::optional<int> opt_int_arg(const nlohmann::json& args, const char* key) {
  if (!args.contains(key) || args.at(key).is_null()) return std::nullopt;
  return int_arg(args, key);
}
}  // namespace detail

/// Mover command plus the agent-mode platform row, if given.
struct ParsedMoverCommand {
  MoverCommand command;
  std::optional<int> row;
};

inline ParsedMoverCommand parse_mover_command(const WireCommand& w) {
  if (!w.args.is_object()) throw Error(ErrorCode::validation, "command args must be an object");
  auto row = detail::opt_int_arg(w.args, "row");
  if (w.name == "move_to") return {mover_cmd::MoveTo{detail::int_arg(w.args, "col"), row}, row};
  if (w.name == "dock") return {mover_cmd::Dock{row}, row};
  if (w.name == "engage") return {mover_cmd::Engage{}, row};
  if (w.name == "release") return {mover_cmd::Release{}, row};
  throw Error(ErrorCode::validation, "unknown mover command '" + w.name + "'");
}

inline ElevatorCommand parse_elevator_command(const WireCommand& w) {
  if (!w.args.is_object()) throw Error(ErrorCode::validation, "command args must be an object");
  if (w.name == "goto_row") return elevator_cmd::GotoRow{detail::int_arg(w.args, "row")};
  if (w.name == "goto_exit") return elevator_cmd::GotoRow{kExitRow};
  if (w.name == "lock") return elevator_cmd::Lock{};
  if (w.name == "unlock") return elevator_cmd::Unlock{};
  if (w.name == "set_occupant") {
    if (!w.args.contains("mover") || w.args.at("mover").is_null()) return elevator_cmd::SetOccupant{};
    Occupant o;
    o.mover_id = w.args.at("mover").get<std::string>();
    if (w.args.contains("carriage") && !w.args.at("carriage").is_null()) o.carriage_id = w.args.at("carriage").get<std::string>();
    return elevator_cmd::SetOccupant{o};
  }
  throw Error(ErrorCode::validation, "unknown elevator command '" + w.name + "'");
}

}  // namespace macarons
