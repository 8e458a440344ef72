#pragma once

// Server <-> device messages and the five-phase device cycle.
//
// Every message travels as a JSON object carrying a "type" tag and a "v"
// version. Keys are emitted sorted, so encodings are byte-stable; unknown keys
// are ignored on decode. docs/wire-protocol.md lists every field.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "macarons/digest.hpp"
#include "macarons/error.hpp"
#include "macarons/semver.hpp"

namespace macarons {

inline constexpr int kProtocolVersion = 1;

enum class DeviceKind { mover, elevator };

inline std::string_view to_string(DeviceKind k) { return k == DeviceKind::mover ? "mover" : "elevator"; }

inline std::optional<DeviceKind> parse_device_kind(std::string_view s) {
  if (s == "mover") return DeviceKind::mover;
  if (s == "elevator") return DeviceKind::elevator;
  return std::nullopt;
}

enum class DeviceCyclePhase { wake, pre_update, run_main, post_update, deep_sleep };

inline constexpr std::array<DeviceCyclePhase, 5> kCycleOrder = {
    DeviceCyclePhase::wake, DeviceCyclePhase::pre_update, DeviceCyclePhase::run_main, DeviceCyclePhase::post_update,
    DeviceCyclePhase::deep_sleep};

inline DeviceCyclePhase next_phase(DeviceCyclePhase p) {
  switch (p) {
    case DeviceCyclePhase::wake: return DeviceCyclePhase::pre_update;
    case DeviceCyclePhase::pre_update: return DeviceCyclePhase::run_main;
    case DeviceCyclePhase::run_main: return DeviceCyclePhase::post_update;
    case DeviceCyclePhase::post_update: return DeviceCyclePhase::deep_sleep;
    case DeviceCyclePhase::deep_sleep: return DeviceCyclePhase::wake;
  }
  return DeviceCyclePhase::wake;
}

inline std::string_view to_string(DeviceCyclePhase p) {
  switch (p) {
    case DeviceCyclePhase::wake: return "wake";
    case DeviceCyclePhase::pre_update: return "pre_update";
    case DeviceCyclePhase::run_main: return "run_main";
    case DeviceCyclePhase::post_update: return "post_update";
    case DeviceCyclePhase::deep_sleep: return "deep_sleep";
  }
  return "wake";
}

inline std::optional<DeviceCyclePhase> parse_phase(std::string_view s) {
  for (auto p : kCycleOrder) {
    if (to_string(p) == s) return p;
  }
  return std::nullopt;
}

/// Commands each device kind understands.
inline const std::vector<std::string>& command_vocabulary(DeviceKind k) {
  static const std::vector<std::string> mover = {"move_to", "dock", "engage", "release"};
  static const std::vector<std::string> elevator = {"goto_row", "goto_exit", "lock", "unlock", "set_occupant"};
  return k == DeviceKind::mover ? mover : elevator;
}

inline bool in_vocabulary(DeviceKind k, std::string_view name) {
  const auto& v = command_vocabulary(k);
  return std::find(v.begin(), v.end(), name) != v.end();
}

// ---------------------------------------------------------------------------
// Message types

struct RegistrationRequest {
  std::string kind;  // "mover" | "elevator"; other kinds are accepted but unsupported
  std::string hardware_id;
  std::string firmware_version;

  std::optional<DeviceKind> device_kind() const { return parse_device_kind(kind); }

  void validate() const {
    if (hardware_id.empty()) throw Error(ErrorCode::validation, "hardware_id must be non-empty");
    if (kind.empty()) throw Error(ErrorCode::validation, "kind must be non-empty");
    Semver::parse(firmware_version);
  }

  bool operator==(const RegistrationRequest&) const = default;
};

struct BundleFile {
  std::string path;
  Bytes content;

  bool operator==(const BundleFile&) const = default;
};

/// A path is acceptable if it is relative and stays inside the device root.
inline bool is_safe_bundle_path(std::string_view path) {
  if (path.empty() || path.front() == '/' || path.find('\\') != std::string_view::npos) return false;
  if (path.find('\0') != std::string_view::npos) return false;
  std::size_t start = 0;
  while (start <= path.size()) {
    auto end = path.find('/', start);
    auto part = path.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    if (part.empty() || part == "." || part == "..") return false;
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return true;
}

/// SHA-256 over, for each file in order: path bytes, a 0x00 separator, the
/// content length as 8 big-endian bytes, then the content.
inline std::string bundle_checksum(const std::vector<BundleFile>& files) {
  Sha256 h;
  for (const auto& f : files) {
    h.update(f.path);
    const std::uint8_t sep = 0;
    h.update(std::span<const std::uint8_t>(&sep, 1));
    std::array<std::uint8_t, 8> len{};
    auto n = static_cast<std::uint64_t>(f.content.size());
    for (int i = 7; i >= 0; --i) {
      len[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(n & 0xff);
      n >>= 8;
    }
    h.update(len);
    h.update(f.content);
  }
  return h.hex_digest();
}

struct UpdateBundle {
  std::string version;
  std::vector<BundleFile> files;
  std::string checksum;

  static UpdateBundle make(std::string version, std::vector<BundleFile> files) {
    UpdateBundle b{std::move(version), std::move(files), {}};
    b.checksum = bundle_checksum(b.files);
    return b;
  }

  bool checksum_ok() const { return checksum == bundle_checksum(files); }

  /// Throws integrity on checksum mismatch, validation on bad paths/version.
  void verify() const {
    Semver::parse(version);
    for (const auto& f : files) {
      if (!is_safe_bundle_path(f.path)) throw Error(ErrorCode::validation, "unsafe bundle path '" + f.path + "'");
    }
    if (!checksum_ok()) throw Error(ErrorCode::integrity, "bundle checksum mismatch");
  }

  bool operator==(const UpdateBundle&) const = default;
};

using ReadingValue = std::variant<double, std::string>;

struct Reading {
  std::string device_id;
  double timestamp = 0.0;  // seconds since epoch
  std::string key;
  ReadingValue value;

  bool operator==(const Reading&) const = default;
};

struct Command {
  std::string command_id;
  std::string device_id;
  std::string name;
  nlohmann::json args = nlohmann::json::object();

  bool operator==(const Command&) const = default;
};

struct CommandResult {
  std::string command_id;
  bool ok = true;
  std::string error;
  nlohmann::json data = nlohmann::json::object();

  bool operator==(const CommandResult&) const = default;
};

struct UpdateAck {
  std::string device_id;
  std::string version;

  bool operator==(const UpdateAck&) const = default;
};

using ConfigMap = std::map<std::string, nlohmann::json>;

// ---------------------------------------------------------------------------
// Encoding

template <class T>
struct MessageTraits;

template <>
struct MessageTraits<RegistrationRequest> {
  static constexpr std::string_view tag = "registration_request";
  static void write(nlohmann::json& j, const RegistrationRequest& m) {
    j["kind"] = m.kind;
    j["hardware_id"] = m.hardware_id;
    j["firmware_version"] = m.firmware_version;
  }
  static RegistrationRequest read(const nlohmann::json& j) {
    return {j.at("kind").get<std::string>(), j.at("hardware_id").get<std::string>(),
            j.at("firmware_version").get<std::string>()};
  }
};

template <>
struct MessageTraits<UpdateBundle> {
  static constexpr std::string_view tag = "update_bundle";
  static void write(nlohmann::json& j, const UpdateBundle& m) {
    j["version"] = m.version;
    j["checksum"] = m.checksum;
    auto files = nlohmann::json::array();
    for (const auto& f : m.files) files.push_back({{"path", f.path}, {"content_b64", base64_encode(f.content)}});
    j["files"] = std::move(files);
  }
  static UpdateBundle read(const nlohmann::json& j) {
    UpdateBundle b;
    b.version = j.at("version").get<std::string>();
    b.checksum = j.at("checksum").get<std::string>();
    for (const auto& f : j.at("files")) {
      b.files.push_back({f.at("path").get<std::string>(), base64_decode(f.at("content_b64").get<std::string>())});
    }
    return b;
  }
};

template <>
struct MessageTraits<Reading> {
  static constexpr std::string_view tag = "reading";
  static void write(nlohmann::json& j, const Reading& m) {
    j["device_id"] = m.device_id;
    j["timestamp"] = m.timestamp;
    j["key"] = m.key;
    std::visit([&](const auto& v) { j["value"] = v; }, m.value);
  }
  static Reading read(const nlohmann::json& j) {
    Reading r;
    r.device_id = j.at("device_id").get<std::string>();
    r.timestamp = j.at("timestamp").get<double>();
    r.key = j.at("key").get<std::string>();
    const auto& v = j.at("value");
    if (v.is_number()) {
      r.value = v.get<double>();
    } else if (v.is_string()) {
      r.value = v.get<std::string>();
    } else {
      throw Error(ErrorCode::validation, "reading value must be a number or a string");
    }
    return r;
  }
};

template <>
struct MessageTraits<Command> {
  static constexpr std::string_view tag = "command";
  static void write(nlohmann::json& j, const Command& m) {
    j["command_id"] = m.command_id;
    j["device_id"] = m.device_id;
    j["name"] = m.name;
    j["args"] = m.args;
  }
  static Command read(const nlohmann::json& j) {
    Command c;
    c.command_id = j.at("command_id").get<std::string>();
    c.device_id = j.at("device_id").get<std::string>();
    c.name = j.at("name").get<std::string>();
    c.args = j.value("args", nlohmann::json::object());
    if (!c.args.is_object()) throw Error(ErrorCode::validation, "command args must be an object");
    return c;
  }
};

template <>
struct MessageTraits<CommandResult> {
  static constexpr std::string_view tag = "command_result";
  static void write(nlohmann::json& j, const CommandResult& m) {
    j["command_id"] = m.command_id;
    j["ok"] = m.ok;
    j["error"] = m.error;
    j["data"] = m.data;
  }
  static CommandResult read(const nlohmann::json& j) {
    CommandResult r;
    r.command_id = j.at("command_id").get<std::string>();
    r.ok = j.at("ok").get<bool>();
    r.error = j.value("error", std::string());
    r.data = j.value("data", nlohmann::json::object());
    return r;
  }
};

template <>
struct MessageTraits<UpdateAck> {
  static constexpr std::string_view tag = "update_ack";
  static void write(nlohmann::json& j, const UpdateAck& m) {
    j["device_id"] = m.device_id;
    j["version"] = m.version;
  }
  static UpdateAck read(const nlohmann::json& j) {
    return {j.at("device_id").get<std::string>(), j.at("version").get<std::string>()};
  }
};

template <class T>
nlohmann::json to_message_json(const T& m) {
  nlohmann::json j = nlohmann::json::object();
  MessageTraits<T>::write(j, m);
  j["type"] = MessageTraits<T>::tag;
  j["v"] = kProtocolVersion;
  return j;
}

template <class T>
std::string encode(const T& m) {
  return to_message_json(m).dump();
}

inline nlohmann::json parse_message_bytes(std::string_view bytes) {
  try {
    auto j = nlohmann::json::parse(bytes);
    if (!j.is_object()) throw DecodeError(0, "message is not an object");
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    throw DecodeError(DecodeError::from_parser_position(e.byte), "malformed message");
  }
}

template <class T>
T from_message_json(const nlohmann::json& j) {
  auto type = j.find("type");
  if (type == j.end() || !type->is_string()) throw DecodeError(0, "message has no type tag");
  if (type->get<std::string>() != MessageTraits<T>::tag) {
    throw DecodeError(0, "expected '" + std::string(MessageTraits<T>::tag) + "', got '" + type->get<std::string>() + "'");
  }
  auto v = j.find("v");
  if (v == j.end() || !v->is_number_integer() || v->get<int>() != kProtocolVersion) {
    throw DecodeError(0, "unsupported protocol version");
  }
  try {
    return MessageTraits<T>::read(j);
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError(0, std::string(MessageTraits<T>::tag) + ": " + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::decode) throw;
    throw DecodeError(0, std::string(MessageTraits<T>::tag) + ": " + e.what());
  }
}

template <class T>
T decode(std::string_view bytes) {
  return from_message_json<T>(parse_message_bytes(bytes));
}

using AnyMessage = std::variant<RegistrationRequest, UpdateBundle, Reading, Command, CommandResult, UpdateAck>;

/// Decodes any message by its type tag.
inline AnyMessage decode_any(std::string_view bytes) {
  auto j = parse_message_bytes(bytes);
  auto tag = j.value("type", std::string());
  if (tag == MessageTraits<RegistrationRequest>::tag) return from_message_json<RegistrationRequest>(j);
  if (tag == MessageTraits<UpdateBundle>::tag) return from_message_json<UpdateBundle>(j);
  if (tag == MessageTraits<Reading>::tag) return from_message_json<Reading>(j);
  if (tag == MessageTraits<Command>::tag) return from_message_json<Command>(j);
  if (tag == MessageTraits<CommandResult>::tag) return from_message_json<CommandResult>(j);
  if (tag == MessageTraits<UpdateAck>::tag) return from_message_json<UpdateAck>(j);
  throw DecodeError(0, "unknown message type '" + tag + "'");
}

}  // namespace macarons
