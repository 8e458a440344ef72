#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace macarons {

enum class ErrorCode {
  address,
  parameter,
  validation,
  decode,
  not_found,
  integrity,
  version_regression,
  protocol,
  conflict,
  storage,
  calibration_failed,
  scenario,
  io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::address: return "address";
    case ErrorCode::parameter: return "parameter";
    case ErrorCode::validation: return "validation";
    case ErrorCode::decode: return "decode";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::integrity: return "integrity";
    case ErrorCode::version_regression: return "version_regression";
    case ErrorCode::protocol: return "protocol";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::storage: return "storage";
    case ErrorCode::calibration_failed: return "calibration_failed";
    case ErrorCode::scenario: return "scenario";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

inline std::optional<ErrorCode> parse_error_code(std::string_view s) {
  for (int i = 0; i <= static_cast<int>(ErrorCode::io); ++i) {
    if (to_string(static_cast<ErrorCode>(i)) == s) return static_cast<ErrorCode>(i);
  }
  return std::nullopt;
}

/// Base exception for every fault raised by the library. The code is stable
/// and is what the HTTP layer maps onto status codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised when wire bytes cannot be decoded. `offset` is the 0-based index of
/// the byte the parser rejected (0 for structurally valid JSON with a bad schema).
class DecodeError : public Error {
 public:
  DecodeError(std::size_t offset, const std::string& what)
      : Error(ErrorCode::decode, what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

  /// nlohmann's parse_error::byte counts characters read, so it is one past the index.
  static std::size_t from_parser_position(std::size_t chars_read) { return chars_read ? chars_read - 1 : 0; }

 private:
  std::size_t offset_;
};

}  // namespace macarons
