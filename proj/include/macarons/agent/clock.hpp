#pragma once

// Time sources for device agents: wall clock, virtual (fast-forward) and a
// remote simulation clock polled over HTTP.

#include <algorithm>
#include <chrono>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "macarons/error.hpp"

namespace macarons::agent {

class AgentClock {
 public:
  virtual ~AgentClock() = default;
  /// Seconds since the epoch (or since the simulation origin).
  virtual double now() = 0;
  /// Lets `seconds` of device time pass.
  virtual void sleep(double seconds) = 0;
  /// Reports that `seconds` of real time were spent blocked elsewhere
  /// (a long-poll, say). Only clocks detached from real time care.
  virtual void waited(double seconds) { (void)seconds; }
};

inline void real_sleep(double seconds) {
  if (seconds > 0) std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
}

class RealClock : public AgentClock {
 public:
  double now() override {
    using namespace std::chrono;
    return duration<double>(system_clock::now().time_since_epoch()).count();
  }
  void sleep(double seconds) override { real_sleep(seconds); }
};

/// Time advances only when the agent sleeps or reports waiting. `real_pause`
/// caps how much real time each sleep takes, for pacing against a server.
class VirtualClock : public AgentClock {
 public:
  explicit VirtualClock(double start = 0.0, double real_pause = 0.0) : now_(start), real_pause_(real_pause) {}

  double now() override {
    std::lock_guard lock(mu_);
    return now_;
  }
  void sleep(double seconds) override {
    advance(seconds);
    real_sleep(std::min(seconds, real_pause_));
  }
  void waited(double seconds) override { advance(seconds); }
  void advance(double seconds) {
    std::lock_guard lock(mu_);
    if (seconds > 0) now_ += seconds;
  }

 private:
  std::mutex mu_;
  double now_;
  double real_pause_;
};

/// Splits "http://host:port/path" into ("http://host:port", "/path").
inline std::pair<std::string, std::string> split_url(const std::string& url) {
  auto scheme = url.find("://");
  if (scheme == std::string::npos) throw Error(ErrorCode::parameter, "URL needs a scheme: " + url);
  auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

/// Follows a remote clock endpoint answering {"now": seconds}. If the
/// endpoint is unreachable the agent falls back to its own real-time clock so
/// it keeps cycling.
class RemoteClock : public AgentClock {
 public:
  explicit RemoteClock(const std::string& endpoint, double poll_interval = 0.05)
      : poll_interval_(poll_interval) {
    auto [base, path] = split_url(endpoint);
    path_ = path;
    client_ = std::make_unique<httplib::Client>(base);
    client_->set_connection_timeout(1, 0);
    client_->set_read_timeout(2, 0);
  }

  double now() override {
    if (auto t = fetch()) {
      offset_ = *t - fallback_.now();
      return *t;
    }
    return fallback_.now() + offset_;
  }

  void sleep(double seconds) override {
    const double target = now() + seconds;
    auto real_deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(seconds * 4 + 1);
    for (;;) {
      auto t = fetch();
      if (!t) {
        real_sleep(std::max(0.0, target - (fallback_.now() + offset_)));
        return;
      }
      if (*t >= target || std::chrono::steady_clock::now() > real_deadline) return;
      real_sleep(poll_interval_);
    }
  }

 private:
  std::optional<double> fetch() {
    auto res = client_->Get(path_);
    if (!res || res->status != 200) return std::nullopt;
    try {
      return nlohmann::json::parse(res->body).at("now").get<double>();
    } catch (const nlohmann::json::exception&) {
      return std::nullopt;
    }
  }

  std::unique_ptr<httplib::Client> client_;
  std::string path_;
  double poll_interval_;
  RealClock fallback_;
  double offset_ = 0.0;
};

}  // namespace macarons::agent
