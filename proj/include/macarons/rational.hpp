#pragma once

// Exact rational scalar. The simulation kernel, device state machines and the
// closed-form analytics are templated on their scalar type; instantiating them
// with Rational makes time and distance arithmetic exact.

#include <charconv>
#include <cmath>
#include <compare>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <string>
#include <string_view>
#include <system_error>

#include "macarons/error.hpp"

namespace macarons {

class Rational {
 public:
  constexpr Rational() = default;
  constexpr Rational(std::int64_t n) : num_(n), den_(1) {}  // NOLINT: implicit from integers
  Rational(std::int64_t n, std::int64_t d) { assign(n, d); }

  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }

  double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }

  /// Parses "p/q", an integer, or a finite decimal such as "33.3" (exactly 333/10).
  static Rational parse(std::string_view text) {
    auto fail = [&] { return Error(ErrorCode::parameter, "not a rational: '" + std::string(text) + "'"); };
    if (text.empty()) throw fail();
    if (auto slash = text.find('/'); slash != std::string_view::npos) {
      return Rational(parse_int(text.substr(0, slash), fail), parse_int(text.substr(slash + 1), fail));
    }
    bool negative = false;
    std::string_view body = text;
    if (body.front() == '-' || body.front() == '+') {
      negative = body.front() == '-';
      body.remove_prefix(1);
    }
    std::string_view exponent_part;
    if (auto e = body.find_first_of("eE"); e != std::string_view::npos) {
      exponent_part = body.substr(e + 1);
      body = body.substr(0, e);
    }
    std::string digits;
    std::int64_t scale = 0;
    bool seen_point = false;
    for (char c : body) {
      if (c == '.') {
        if (seen_point) throw fail();
        seen_point = true;
      } else if (c >= '0' && c <= '9') {
        digits.push_back(c);
        if (seen_point) ++scale;
      } else {
        throw fail();
      }
    }
    if (digits.empty()) throw fail();
    std::int64_t exponent = exponent_part.empty() ? 0 : parse_int(exponent_part, fail);
    scale -= exponent;
    // Strip leading zeros so the overflow guard below only sees significant digits.
    auto first = digits.find_first_not_of('0');
    digits = first == std::string::npos ? "0" : digits.substr(first);
    if (digits.size() > 18) throw fail();
    Rational value(parse_int(digits, fail));
    Rational ten(10);
    for (; scale > 0; --scale) value = value / ten;
    for (; scale < 0; ++scale) value = value * ten;
    return negative ? -value : value;
  }

  /// Exact value of the shortest decimal that round-trips to `x`, so 33.3 maps
  /// to 333/10 rather than the binary approximation.
  static Rational from_double(double x) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
    if (ec != std::errc{}) throw Error(ErrorCode::parameter, "cannot convert double to rational");
    return parse(std::string_view(buf, static_cast<std::size_t>(end - buf)));
  }

  std::string str() const { return den_ == 1 ? std::to_string(num_) : std::to_string(num_) + "/" + std::to_string(den_); }

  friend Rational operator+(const Rational& a, const Rational& b) {
    return make(static_cast<__int128>(a.num_) * b.den_ + static_cast<__int128>(b.num_) * a.den_,
                static_cast<__int128>(a.den_) * b.den_);
  }
  friend Rational operator-(const Rational& a, const Rational& b) { return a + (-b); }
  friend Rational operator*(const Rational& a, const Rational& b) {
    return make(static_cast<__int128>(a.num_) * b.num_, static_cast<__int128>(a.den_) * b.den_);
  }
  friend Rational operator/(const Rational& a, const Rational& b) {
    if (b.num_ == 0) throw Error(ErrorCode::parameter, "rational division by zero");
    return make(static_cast<__int128>(a.num_) * b.den_, static_cast<__int128>(a.den_) * b.num_);
  }
  Rational operator-() const {
    Rational r;
    r.num_ = -num_;
    r.den_ = den_;
    return r;
  }
  Rational& operator+=(const Rational& o) { return *this = *this + o; }
  Rational& operator-=(const Rational& o) { return *this = *this - o; }
  Rational& operator*=(const Rational& o) { return *this = *this * o; }
  Rational& operator/=(const Rational& o) { return *this = *this / o; }

  friend bool operator==(const Rational& a, const Rational& b) { return a.num_ == b.num_ && a.den_ == b.den_; }
  friend std::strong_ordering operator<=>(const Rational& a, const Rational& b) {
    return static_cast<__int128>(a.num_) * b.den_ <=> static_cast<__int128>(b.num_) * a.den_;
  }

  friend std::ostream& operator<<(std::ostream& os, const Rational& r) { return os << r.str(); }

 private:
  template <class Fail>
  static std::int64_t parse_int(std::string_view s, Fail fail) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw fail();
    return v;
  }

  static __int128 gcd128(__int128 a, __int128 b) {
    if (a < 0) a = -a;
    if (b < 0) b = -b;
    while (b != 0) {
      __int128 t = a % b;
      a = b;
      b = t;
    }
    return a;
  }

  static Rational make(__int128 n, __int128 d) {
    if (d == 0) throw Error(ErrorCode::parameter, "rational with zero denominator");
    if (d < 0) {
      n = -n;
      d = -d;
    }
    __int128 g = gcd128(n, d);
    if (g > 1) {
      n /= g;
      d /= g;
    }
    constexpr __int128 lim = INT64_MAX;
    if (n > lim || n < -lim || d > lim) throw Error(ErrorCode::parameter, "rational overflow");
    Rational r;
    r.num_ = static_cast<std::int64_t>(n);
    r.den_ = static_cast<std::int64_t>(d);
    return r;
  }

  void assign(std::int64_t n, std::int64_t d) { *this = make(n, d); }

  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

// Scalar adapters shared by the templated numerics.
template <class S>
S scalar_from(double x);

template <>
inline double scalar_from<double>(double x) {
  return x;
}

template <>
inline Rational scalar_from<Rational>(double x) {
  return Rational::from_double(x);
}

inline double to_double(double x) { return x; }
inline double to_double(const Rational& r) { return r.to_double(); }

inline std::string scalar_str(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ec == std::errc{} ? end : buf);
}
inline std::string scalar_str(const Rational& r) { return r.str(); }

/// Largest integer not greater than x.
inline std::int64_t floor_int(double x) { return static_cast<std::int64_t>(std::floor(x)); }
inline std::int64_t floor_int(const Rational& r) {
  std::int64_t q = r.num() / r.den();
  if (r.num() % r.den() != 0 && r.num() < 0) --q;
  return q;
}

}  // namespace macarons
