#pragma once

#include <charconv>
#include <compare>
#include <cstdint>
#include <string>
#include <string_view>
#include <system_error>

#include "macarons/error.hpp"

namespace macarons {

/// MAJOR.MINOR.PATCH with an optional -prerelease tag. Build metadata is not
/// supported. A prerelease orders below its release; tags compare as strings.
struct Semver {
  std::uint32_t major = 0;
  std::uint32_t minor = 0;
  std::uint32_t patch = 0;
  std::string prerelease;

  static Semver parse(std::string_view text) {
    auto fail = [&] { return Error(ErrorCode::validation, "invalid version '" + std::string(text) + "'"); };
    Semver v;
    std::string_view core = text;
    if (auto dash = text.find('-'); dash != std::string_view::npos) {
      core = text.substr(0, dash);
      v.prerelease = std::string(text.substr(dash + 1));
      if (v.prerelease.empty()) throw fail();
    }
    std::uint32_t* parts[] = {&v.major, &v.minor, &v.patch};
    const char* p = core.data();
    const char* end = core.data() + core.size();
    for (int i = 0; i < 3; ++i) {
      auto [next, ec] = std::from_chars(p, end, *parts[i]);
      if (ec != std::errc{} || next == p) throw fail();
      p = next;
      if (i < 2) {
        if (p == end || *p != '.') throw fail();
        ++p;
      }
    }
    if (p != end) throw fail();
    return v;
  }

  std::string str() const {
    auto s = std::to_string(major) + "." + std::to_string(minor) + "." + std::to_string(patch);
    return prerelease.empty() ? s : s + "-" + prerelease;
  }

  friend bool operator==(const Semver&, const Semver&) = default;
  friend std::strong_ordering operator<=>(const Semver& a, const Semver& b) {
    if (auto c = a.major <=> b.major; c != 0) return c;
    if (auto c = a.minor <=> b.minor; c != 0) return c;
    if (auto c = a.patch <=> b.patch; c != 0) return c;
    if (a.prerelease.empty() != b.prerelease.empty()) {
      return a.prerelease.empty() ? std::strong_ordering::greater : std::strong_ordering::less;
    }
    return a.prerelease <=> b.prerelease;
  }
};

}  // namespace macarons
