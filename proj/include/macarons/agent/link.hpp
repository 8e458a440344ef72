#pragma once

// The agent's view of the control server.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "macarons/agent/clock.hpp"
#include "macarons/error.hpp"
#include "macarons/protocol.hpp"

namespace macarons::agent {

/// The server could not be reached at all (as opposed to answering with an error).
class LinkDown : public Error {
 public:
  explicit LinkDown(const std::string& what) : Error(ErrorCode::io, what) {}
};

class ServerLink {
 public:
  virtual ~ServerLink() = default;
  /// Returns the assigned device id.
  virtual std::string register_device(const RegistrationRequest& req) = 0;
  virtual std::optional<UpdateBundle> poll_update(const std::string& id, DeviceCyclePhase phase) = 0;
  virtual void ack_update(const UpdateAck& ack) = 0;
  virtual nlohmann::json fetch_config(const std::string& id) = 0;
  virtual std::optional<Command> next_command(const std::string& id, double hold) = 0;
  virtual void post_result(const CommandResult& result) = 0;
  virtual void push_readings(const std::string& id, const std::vector<Reading>& readings) = 0;
};

class HttpLink : public ServerLink {
 public:
  explicit HttpLink(const std::string& base_url, double connect_timeout = 1.0) : client_(base_url) {
    auto sec = static_cast<time_t>(connect_timeout);
    client_.set_connection_timeout(sec, static_cast<time_t>((connect_timeout - static_cast<double>(sec)) * 1e6));
    client_.set_read_timeout(5, 0);
    client_.set_keep_alive(false);
  }

  std::string register_device(const RegistrationRequest& req) override {
    auto j = call(client_.Post("/api/devices/register", encode(req), "application/json"), "register");
    return j.at("device_id").get<std::string>();
  }

  std::optional<UpdateBundle> poll_update(const std::string& id, DeviceCyclePhase phase) override {
    auto j = call(client_.Get("/api/devices/" + id + "/update?phase=" + std::string(to_string(phase))), "poll_update");
    if (j.at("update").is_null()) return std::nullopt;
    return from_message_json<UpdateBundle>(j.at("update"));
  }

  void ack_update(const UpdateAck& ack) override {
    call(client_.Post("/api/devices/" + ack.device_id + "/update/ack", encode(ack), "application/json"), "ack");
  }

  nlohmann::json fetch_config(const std::string& id) override {
    return call(client_.Get("/api/devices/" + id + "/config?phase=run_main"), "config");
  }

  std::optional<Command> next_command(const std::string& id, double hold) override {
    client_.set_read_timeout(static_cast<time_t>(hold) + 5, 0);
    auto res = client_.Get("/api/devices/" + id + "/commands?hold=" + std::to_string(hold));
    client_.set_read_timeout(5, 0);
    if (res && res->status == 204) return std::nullopt;
    auto j = call(std::move(res), "commands");
    return from_message_json<Command>(j);
  }

  void post_result(const CommandResult& r) override {
    call(client_.Post("/api/commands/" + r.command_id + "/result", encode(r), "application/json"), "result");
  }

  void push_readings(const std::string& id, const std::vector<Reading>& readings) override {
    auto body = nlohmann::json::array();
    for (const auto& r : readings) body.push_back(to_message_json(r));
    call(client_.Post("/api/devices/" + id + "/readings", body.dump(), "application/json"), "readings");
  }

 private:
  static nlohmann::json call(httplib::Result res, const char* what) {
    if (!res) throw LinkDown(std::string(what) + ": server unreachable (" + httplib::to_string(res.error()) + ")");
    nlohmann::json body;
    try {
      body = res->body.empty() ? nlohmann::json::object() : nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error& e) {
      throw DecodeError(DecodeError::from_parser_position(e.byte), std::string(what) + ": malformed response");
    }
    if (res->status >= 400) {
      auto code = parse_error_code(body.value("error", std::string())).value_or(ErrorCode::protocol);
      throw Error(code, std::string(what) + ": " + body.value("message", "HTTP " + std::to_string(res->status)));
    }
    return body;
  }

  httplib::Client client_;
};

}  // namespace macarons::agent
