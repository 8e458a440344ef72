#pragma once

// HTTP/1.1 + JSON binding of ControlServer. docs/wire-protocol.md lists the
// endpoints and bodies.

#include <cstdlib>
#include <optional>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "macarons/error.hpp"
#include "macarons/protocol.hpp"
#include "macarons/server/control_server.hpp"

namespace macarons::server {

inline int http_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::not_found: return 404;
    case ErrorCode::address:
    case ErrorCode::parameter:
    case ErrorCode::validation:
    case ErrorCode::decode: return 400;
    case ErrorCode::integrity:
    case ErrorCode::version_regression:
    case ErrorCode::protocol: return 422;
    case ErrorCode::conflict: return 409;
    default: return 500;
  }
}

inline void send_json(httplib::Response& res, const nlohmann::json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, ErrorCode code, const std::string& message) {
  send_json(res, {{"error", std::string(to_string(code))}, {"message", message}}, http_status(code));
}

inline std::optional<double> query_number(const httplib::Request& req, const char* key) {
  if (!req.has_param(key)) return std::nullopt;
  const auto v = req.get_param_value(key);
  char* end = nullptr;
  double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) {
    throw Error(ErrorCode::validation, std::string("query parameter '") + key + "' must be a number");
  }
  return d;
}

inline nlohmann::json parse_body(const httplib::Request& req) {
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::parse_error& e) {
    throw DecodeError(DecodeError::from_parser_position(e.byte), "request body is not valid JSON");
  }
}

/// Registers every route of the API on `http`. With `ui_dir` the directory is
/// served as static files at /.
inline void mount_api(httplib::Server& http, ControlServer& srv, const std::optional<std::string>& ui_dir = std::nullopt) {
  using Req = httplib::Request;
  using Res = httplib::Response;

  auto guarded = [](auto fn) {
    return [fn](const Req& req, Res& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        send_error(res, e.code(), e.what());
      } catch (const nlohmann::json::exception& e) {
        send_error(res, ErrorCode::validation, e.what());
      } catch (const std::exception& e) {
        send_error(res, ErrorCode::storage, e.what());
      }
    };
  };

  http.Get("/api/clock", guarded([&srv](const Req&, Res& res) { send_json(res, {{"now", srv.now()}}); }));

  http.Post("/api/devices/register", guarded([&srv](const Req& req, Res& res) {
              auto j = parse_body(req);
              // Accept both the tagged wire message and a bare object.
              RegistrationRequest r = j.contains("type") ? from_message_json<RegistrationRequest>(j)
                                                         : MessageTraits<RegistrationRequest>::read(j);
              send_json(res, srv.register_device(r));
            }));

  http.Get("/api/devices", guarded([&srv](const Req&, Res& res) { send_json(res, srv.list_devices()); }));

  http.Get(R"(/api/devices/([^/]+))",
           guarded([&srv](const Req& req, Res& res) { send_json(res, srv.device(req.matches[1])); }));

  http.Get(R"(/api/devices/([^/]+)/config)", guarded([&srv](const Req& req, Res& res) {
             bool device_fetch = req.has_param("phase");
             if (device_fetch) {
               auto phase = parse_phase(req.get_param_value("phase"));
               if (phase != DeviceCyclePhase::run_main) {
                 throw Error(ErrorCode::protocol, "devices fetch config in run_main");
               }
             }
             auto cfg = srv.get_config(req.matches[1], device_fetch);
             if (req.has_param("key")) {
               auto key = req.get_param_value("key");
               nlohmann::json one = nlohmann::json::object();
               if (cfg.contains(key)) one[key] = cfg[key];
               cfg = one;
             }
             send_json(res, cfg);
           }));

  http.Put(R"(/api/devices/([^/]+)/config)", guarded([&srv](const Req& req, Res& res) {
             auto body = parse_body(req);
             if (!body.is_object()) throw Error(ErrorCode::validation, "config body must be an object");
             for (const auto& [k, v] : body.items()) srv.set_config(req.matches[1], k, v);
             send_json(res, srv.get_config(req.matches[1]));
           }));

  http.Post(R"(/api/devices/([^/]+)/update)", guarded([&srv](const Req& req, Res& res) {
              send_json(res, srv.stage_update(req.matches[1], decode<UpdateBundle>(req.body)));
            }));

  http.Get(R"(/api/devices/([^/]+)/update)", guarded([&srv](const Req& req, Res& res) {
             auto phase = parse_phase(req.get_param_value("phase"));
             if (!phase) throw Error(ErrorCode::protocol, "missing or unknown phase");
             auto b = srv.poll_update(req.matches[1], *phase);
             send_json(res, {{"update", b ? to_message_json(*b) : nlohmann::json()}});
           }));

  http.Post(R"(/api/devices/([^/]+)/update/ack)", guarded([&srv](const Req& req, Res& res) {
              send_json(res, srv.ack_update(req.matches[1], decode<UpdateAck>(req.body)));
            }));

  http.Post(R"(/api/devices/([^/]+)/readings)", guarded([&srv](const Req& req, Res& res) {
              auto j = parse_body(req);
              std::vector<Reading> rs;
              if (j.is_array()) {
                for (const auto& r : j) rs.push_back(from_message_json<Reading>(r));
              } else {
                rs.push_back(from_message_json<Reading>(j));
              }
              srv.push_readings(req.matches[1], rs);
              send_json(res, {{"accepted", rs.size()}});
            }));

  http.Get(R"(/api/devices/([^/]+)/readings)", guarded([&srv](const Req& req, Res& res) {
             auto out = nlohmann::json::array();
             for (const auto& r : srv.list_readings(req.matches[1], query_number(req, "from"), query_number(req, "to"))) {
               out.push_back(to_message_json(r));
             }
             send_json(res, out);
           }));

  http.Get(R"(/api/devices/([^/]+)/commands)", guarded([&srv](const Req& req, Res& res) {
             double hold = query_number(req, "hold").value_or(srv.config().max_long_poll_hold);
             if (auto c = srv.next_command(req.matches[1], hold)) {
               res.status = 200;
               res.set_content(encode(*c), "application/json");
             } else {
               res.status = 204;
             }
           }));

  http.Post(R"(/api/commands/([^/]+)/result)", guarded([&srv](const Req& req, Res& res) {
              srv.command_result(req.matches[1], decode<CommandResult>(req.body));
              send_json(res, {{"command_id", std::string(req.matches[1])}, {"recorded", true}});
            }));

  http.Post("/api/scripts", guarded([&srv](const Req& req, Res& res) { send_json(res, srv.upload_script(parse_body(req)), 201); }));
  http.Get("/api/scripts", guarded([&srv](const Req&, Res& res) { send_json(res, srv.list_scripts()); }));
  http.Get(R"(/api/scripts/([^/]+))", guarded([&srv](const Req& req, Res& res) { send_json(res, srv.script(req.matches[1])); }));
  http.Post(R"(/api/scripts/([^/]+)/run)",
            guarded([&srv](const Req& req, Res& res) { send_json(res, srv.run_script(req.matches[1]), 202); }));

  http.Get("/api/jobs", guarded([&srv](const Req&, Res& res) { send_json(res, srv.list_jobs()); }));
  http.Get(R"(/api/jobs/([^/]+))", guarded([&srv](const Req& req, Res& res) { send_json(res, srv.job(req.matches[1])); }));

  http.Get("/api/farm", guarded([&srv](const Req&, Res& res) { send_json(res, srv.farm()); }));
  http.Post("/api/farm/moves", guarded([&srv](const Req& req, Res& res) {
              auto j = parse_body(req);
              const auto& to = j.at("to");
              CellAddress dest{to.value("module", std::size_t{0}), to.at("col").get<int>(), to.at("row").get<int>()};
              auto out = srv.request_move(j.at("carriage").get<std::string>(), dest);
              send_json(res, out, out["job"].is_null() ? 200 : 202);
            }));

  if (ui_dir) {
    if (!http.set_mount_point("/", *ui_dir)) throw Error(ErrorCode::io, "UI directory '" + *ui_dir + "' not found");
  }
}

}  // namespace macarons::server
