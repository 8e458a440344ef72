#pragma once

// SQLite-backed persistence for the control server.
//
// One file, rollback journal (no WAL side files). Callers group the row
// accessors inside transaction(), which serializes writers on one mutex.

#include <sqlite3.h>

#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "macarons/error.hpp"

namespace macarons::server {

using nlohmann::json;

class Statement {
 public:
  Statement(sqlite3* db, const char* sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK) fail("prepare");
  }
  ~Statement() { sqlite3_finalize(stmt_); }
  Statement(const Statement&) = delete;
  Statement& operator=(const Statement&) = delete;

  Statement& bind(int i, const std::string& v) {
    check(sqlite3_bind_text(stmt_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
    return *this;
  }
  Statement& bind(int i, const char* v) { return bind(i, std::string(v)); }
  Statement& bind(int i, double v) {
    check(sqlite3_bind_double(stmt_, i, v));
    return *this;
  }
  Statement& bind(int i, std::int64_t v) {
    check(sqlite3_bind_int64(stmt_, i, v));
    return *this;
  }
  Statement& bind(int i, int v) { return bind(i, static_cast<std::int64_t>(v)); }
  Statement& bind(int i, std::nullopt_t) {
    check(sqlite3_bind_null(stmt_, i));
    return *this;
  }
  template <class T>
  Statement& bind(int i, const std::optional<T>& v) {
    return v ? bind(i, *v) : bind(i, std::nullopt);
  }

  /// True while rows are available.
  bool step() {
    int rc = sqlite3_step(stmt_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    fail("step");
    return false;
  }
  void run() {
    while (step()) {
    }
  }

  bool is_null(int c) const { return sqlite3_column_type(stmt_, c) == SQLITE_NULL; }
  std::string text(int c) const {
    auto* p = reinterpret_cast<const char*>(sqlite3_column_text(stmt_, c));
    return p ? std::string(p, static_cast<std::size_t>(sqlite3_column_bytes(stmt_, c))) : std::string();
  }
  std::optional<std::string> opt_text(int c) const { return is_null(c) ? std::nullopt : std::optional(text(c)); }
  double real(int c) const { return sqlite3_column_double(stmt_, c); }
  std::optional<double> opt_real(int c) const { return is_null(c) ? std::nullopt : std::optional(real(c)); }
  std::int64_t integer(int c) const { return sqlite3_column_int64(stmt_, c); }
  int column_count() const { return sqlite3_column_count(stmt_); }
  int column_type(int c) const { return sqlite3_column_type(stmt_, c); }

 private:
  void check(int rc) {
    if (rc != SQLITE_OK) fail("bind");
  }
  [[noreturn]] void fail(const char* what) const {
    throw Error(ErrorCode::storage, std::string("sqlite ") + what + ": " + sqlite3_errmsg(db_));
  }

  sqlite3* db_;
  sqlite3_stmt* stmt_ = nullptr;
};

struct DeviceRow {
  std::string device_id;
  std::string kind;
  std::string hardware_id;
  double registered_at = 0;
  std::string installed_version;
  std::optional<double> last_seen;
  std::optional<std::string> last_phase;
};

struct ReadingRow {
  std::int64_t seq = 0;
  std::string device_id;
  double timestamp = 0;
  std::string key;
  json value;
};

struct ScriptRow {
  std::string script_id;
  std::string name;
  json steps;
  double uploaded_at = 0;
};

struct JobRow {
  std::string job_id;
  std::string script_id;
  std::string status;
  json steps;
  double created_at = 0;
  std::optional<double> started_at;
  std::optional<double> finished_at;
  std::optional<std::string> reason;
};

struct CommandRow {
  std::string command_id;
  std::string job_id;
  std::string device_id;
  std::string name;
  json args;
  std::string status;  // queued | delivered | done | cancelled
  std::optional<json> result;
  double created_at = 0;
  std::optional<double> delivered_at;
  std::int64_t reading_mark = 0;  // last reading seq when the command was delivered
};

class Store {
 public:
  explicit Store(const std::string& path) {
    if (sqlite3_open_v2(path.c_str(), &db_, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                        nullptr) != SQLITE_OK) {
      std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
      sqlite3_close(db_);
      throw Error(ErrorCode::storage, "cannot open database '" + path + "': " + msg);
    }
    sqlite3_busy_timeout(db_, 5000);
    exec("PRAGMA foreign_keys = ON");
    exec(R"sql(
      CREATE TABLE IF NOT EXISTS meta (key TEXT PRIMARY KEY, value TEXT NOT NULL);
      CREATE TABLE IF NOT EXISTS devices (
        device_id TEXT PRIMARY KEY, kind TEXT NOT NULL, hardware_id TEXT NOT NULL UNIQUE,
        registered_at REAL NOT NULL, installed_version TEXT NOT NULL,
        last_seen REAL, last_phase TEXT);
      CREATE TABLE IF NOT EXISTS device_config (
        device_id TEXT NOT NULL REFERENCES devices(device_id), key TEXT NOT NULL, value TEXT NOT NULL,
        PRIMARY KEY (device_id, key));
      CREATE TABLE IF NOT EXISTS staged_updates (
        device_id TEXT PRIMARY KEY REFERENCES devices(device_id), version TEXT NOT NULL, bundle TEXT NOT NULL);
      CREATE TABLE IF NOT EXISTS readings (
        seq INTEGER PRIMARY KEY AUTOINCREMENT, device_id TEXT NOT NULL REFERENCES devices(device_id),
        timestamp REAL NOT NULL, key TEXT NOT NULL, value TEXT NOT NULL);
      CREATE INDEX IF NOT EXISTS readings_by_device ON readings (device_id, timestamp, seq);
      CREATE TABLE IF NOT EXISTS scripts (
        script_id TEXT PRIMARY KEY, name TEXT NOT NULL, steps TEXT NOT NULL, uploaded_at REAL NOT NULL);
      CREATE TABLE IF NOT EXISTS jobs (
        job_id TEXT PRIMARY KEY, script_id TEXT NOT NULL REFERENCES scripts(script_id), status TEXT NOT NULL,
        steps TEXT NOT NULL, created_at REAL NOT NULL, started_at REAL, finished_at REAL, reason TEXT);
      CREATE TABLE IF NOT EXISTS commands (
        command_id TEXT PRIMARY KEY, job_id TEXT NOT NULL, device_id TEXT NOT NULL, name TEXT NOT NULL,
        args TEXT NOT NULL, status TEXT NOT NULL, result TEXT, created_at REAL NOT NULL, delivered_at REAL,
        reading_mark INTEGER NOT NULL DEFAULT 0);
    )sql");
  }
  ~Store() { sqlite3_close(db_); }
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  /// Runs `fn` inside one IMMEDIATE transaction, rolling back on exceptions.
  template <class F>
  auto transaction(F&& fn) {
    std::lock_guard lock(mu_);
    exec("BEGIN IMMEDIATE");
    try {
      if constexpr (std::is_void_v<decltype(fn())>) {
        fn();
        exec("COMMIT");
      } else {
        auto r = fn();
        exec("COMMIT");
        return r;
      }
    } catch (...) {
      sqlite3_exec(db_, "ROLLBACK", nullptr, nullptr, nullptr);
      throw;
    }
  }

  // The accessors below assume the caller holds a transaction.

  std::int64_t next_sequence(const std::string& name) {
    Statement q(db_, "SELECT value FROM meta WHERE key = ?");
    q.bind(1, "seq." + name);
    std::int64_t n = q.step() ? std::stoll(q.text(0)) : 0;
    Statement u(db_, "INSERT INTO meta(key, value) VALUES(?, ?) ON CONFLICT(key) DO UPDATE SET value = excluded.value");
    u.bind(1, "seq." + name).bind(2, std::to_string(n + 1)).run();
    return n + 1;
  }

  std::optional<std::string> meta(const std::string& key) {
    Statement q(db_, "SELECT value FROM meta WHERE key = ?");
    q.bind(1, key);
    return q.step() ? std::optional(q.text(0)) : std::nullopt;
  }
  void set_meta(const std::string& key, const std::string& value) {
    Statement u(db_, "INSERT INTO meta(key, value) VALUES(?, ?) ON CONFLICT(key) DO UPDATE SET value = excluded.value");
    u.bind(1, key).bind(2, value).run();
  }

  // Devices -----------------------------------------------------------------

  void insert_device(const DeviceRow& d) {
    Statement s(db_, "INSERT INTO devices VALUES (?, ?, ?, ?, ?, ?, ?)");
    s.bind(1, d.device_id).bind(2, d.kind).bind(3, d.hardware_id).bind(4, d.registered_at);
    s.bind(5, d.installed_version).bind(6, d.last_seen).bind(7, d.last_phase).run();
  }

  std::optional<DeviceRow> device(const std::string& id) {
    Statement q(db_, "SELECT * FROM devices WHERE device_id = ?");
    q.bind(1, id);
    if (!q.step()) return std::nullopt;
    return read_device(q);
  }

  std::optional<DeviceRow> device_by_hardware(const std::string& hw) {
    Statement q(db_, "SELECT * FROM devices WHERE hardware_id = ?");
    q.bind(1, hw);
    if (!q.step()) return std::nullopt;
    return read_device(q);
  }

  std::vector<DeviceRow> devices() {
    Statement q(db_, "SELECT * FROM devices ORDER BY device_id");
    std::vector<DeviceRow> out;
    while (q.step()) out.push_back(read_device(q));
    return out;
  }

  void touch_device(const std::string& id, double seen, const std::string& phase) {
    // last_seen never moves backwards.
    Statement s(db_,
                "UPDATE devices SET last_seen = CASE WHEN last_seen IS NULL OR last_seen < ?1 THEN ?1 ELSE last_seen END,"
                " last_phase = ?2 WHERE device_id = ?3");
    s.bind(1, seen).bind(2, phase).bind(3, id).run();
  }

  void set_installed_version(const std::string& id, const std::string& v) {
    Statement s(db_, "UPDATE devices SET installed_version = ? WHERE device_id = ?");
    s.bind(1, v).bind(2, id).run();
  }

  // Config --------------------------------------------------------------------

  void set_config(const std::string& id, const std::string& key, const json& value) {
    Statement s(db_, "INSERT INTO device_config VALUES (?, ?, ?) ON CONFLICT(device_id, key) DO UPDATE SET value = excluded.value");
    s.bind(1, id).bind(2, key).bind(3, value.dump()).run();
  }

  json config(const std::string& id) {
    Statement q(db_, "SELECT key, value FROM device_config WHERE device_id = ? ORDER BY key");
    q.bind(1, id);
    json out = json::object();
    while (q.step()) out[q.text(0)] = json::parse(q.text(1));
    return out;
  }

  // Staged updates ------------------------------------------------------------

  void stage(const std::string& id, const std::string& version, const std::string& bundle) {
    Statement s(db_, "INSERT INTO staged_updates VALUES (?, ?, ?) ON CONFLICT(device_id) DO UPDATE SET"
                     " version = excluded.version, bundle = excluded.bundle");
    s.bind(1, id).bind(2, version).bind(3, bundle).run();
  }

  /// (version, encoded bundle)
  std::optional<std::pair<std::string, std::string>> staged(const std::string& id) {
    Statement q(db_, "SELECT version, bundle FROM staged_updates WHERE device_id = ?");
    q.bind(1, id);
    if (!q.step()) return std::nullopt;
    return std::make_pair(q.text(0), q.text(1));
  }

  void clear_staged(const std::string& id) {
    Statement s(db_, "DELETE FROM staged_updates WHERE device_id = ?");
    s.bind(1, id).run();
  }

  // Readings ------------------------------------------------------------------

  std::int64_t insert_reading(const std::string& id, double ts, const std::string& key, const json& value) {
    Statement s(db_, "INSERT INTO readings (device_id, timestamp, key, value) VALUES (?, ?, ?, ?)");
    s.bind(1, id).bind(2, ts).bind(3, key).bind(4, value.dump()).run();
    return sqlite3_last_insert_rowid(db_);
  }

  std::optional<double> latest_reading_time(const std::string& id) {
    Statement q(db_, "SELECT MAX(timestamp) FROM readings WHERE device_id = ?");
    q.bind(1, id);
    q.step();
    return q.opt_real(0);
  }

  std::int64_t last_reading_seq() {
    Statement q(db_, "SELECT COALESCE(MAX(seq), 0) FROM readings");
    q.step();
    return q.integer(0);
  }

  std::vector<ReadingRow> readings(const std::string& id, std::optional<double> from, std::optional<double> to) {
    Statement q(db_, "SELECT seq, device_id, timestamp, key, value FROM readings WHERE device_id = ?1"
                     " AND (?2 IS NULL OR timestamp >= ?2) AND (?3 IS NULL OR timestamp <= ?3) ORDER BY timestamp, seq");
    q.bind(1, id).bind(2, from).bind(3, to);
    std::vector<ReadingRow> out;
    while (q.step()) out.push_back(read_reading(q));
    return out;
  }

  std::vector<ReadingRow> readings_after(const std::string& id, std::int64_t seq) {
    Statement q(db_, "SELECT seq, device_id, timestamp, key, value FROM readings WHERE device_id = ? AND seq > ? ORDER BY seq");
    q.bind(1, id).bind(2, seq);
    std::vector<ReadingRow> out;
    while (q.step()) out.push_back(read_reading(q));
    return out;
  }

  // Scripts -------------------------------------------------------------------

  void insert_script(const ScriptRow& s) {
    Statement st(db_, "INSERT INTO scripts VALUES (?, ?, ?, ?)");
    st.bind(1, s.script_id).bind(2, s.name).bind(3, s.steps.dump()).bind(4, s.uploaded_at).run();
  }

  std::optional<ScriptRow> script(const std::string& id) {
    Statement q(db_, "SELECT * FROM scripts WHERE script_id = ?");
    q.bind(1, id);
    if (!q.step()) return std::nullopt;
    return ScriptRow{q.text(0), q.text(1), json::parse(q.text(2)), q.real(3)};
  }

  std::vector<ScriptRow> scripts() {
    Statement q(db_, "SELECT * FROM scripts ORDER BY script_id");
    std::vector<ScriptRow> out;
    while (q.step()) out.push_back({q.text(0), q.text(1), json::parse(q.text(2)), q.real(3)});
    return out;
  }

  // Jobs ----------------------------------------------------------------------

  void upsert_job(const JobRow& j) {
    Statement s(db_, "INSERT INTO jobs VALUES (?, ?, ?, ?, ?, ?, ?, ?) ON CONFLICT(job_id) DO UPDATE SET"
                     " status = excluded.status, steps = excluded.steps, started_at = excluded.started_at,"
                     " finished_at = excluded.finished_at, reason = excluded.reason");
    s.bind(1, j.job_id).bind(2, j.script_id).bind(3, j.status).bind(4, j.steps.dump()).bind(5, j.created_at);
    s.bind(6, j.started_at).bind(7, j.finished_at).bind(8, j.reason).run();
  }

  std::optional<JobRow> job(const std::string& id) {
    Statement q(db_, "SELECT * FROM jobs WHERE job_id = ?");
    q.bind(1, id);
    if (!q.step()) return std::nullopt;
    return read_job(q);
  }

  std::vector<JobRow> jobs(const std::optional<std::string>& status = std::nullopt) {
    Statement q(db_, "SELECT * FROM jobs WHERE ?1 IS NULL OR status = ?1 ORDER BY job_id");
    q.bind(1, status);
    std::vector<JobRow> out;
    while (q.step()) out.push_back(read_job(q));
    return out;
  }

  // Commands ------------------------------------------------------------------

  void insert_command(const CommandRow& c) {
    Statement s(db_, "INSERT INTO commands VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)");
    s.bind(1, c.command_id).bind(2, c.job_id).bind(3, c.device_id).bind(4, c.name).bind(5, c.args.dump());
    s.bind(6, c.status).bind(7, c.result ? std::optional(c.result->dump()) : std::nullopt).bind(8, c.created_at);
    s.bind(9, c.delivered_at).bind(10, c.reading_mark).run();
  }

  std::optional<CommandRow> command(const std::string& id) {
    Statement q(db_, "SELECT * FROM commands WHERE command_id = ?");
    q.bind(1, id);
    if (!q.step()) return std::nullopt;
    return read_command(q);
  }

  std::optional<CommandRow> next_queued_command(const std::string& device_id) {
    Statement q(db_, "SELECT * FROM commands WHERE device_id = ? AND status = 'queued' ORDER BY created_at, command_id LIMIT 1");
    q.bind(1, device_id);
    if (!q.step()) return std::nullopt;
    return read_command(q);
  }

  void mark_delivered(const std::string& id, double at, std::int64_t reading_mark) {
    Statement s(db_, "UPDATE commands SET status = 'delivered', delivered_at = ?, reading_mark = ? WHERE command_id = ?");
    s.bind(1, at).bind(2, reading_mark).bind(3, id).run();
  }

  void set_command_result(const std::string& id, const std::string& status, const std::optional<json>& result) {
    Statement s(db_, "UPDATE commands SET status = ?, result = ? WHERE command_id = ?");
    s.bind(1, status).bind(2, result ? std::optional(result->dump()) : std::nullopt).bind(3, id).run();
  }

  void cancel_open_commands(const std::string& job_id) {
    Statement s(db_, "UPDATE commands SET status = 'cancelled' WHERE job_id = ? AND status IN ('queued', 'delivered')");
    s.bind(1, job_id).run();
  }

  /// Canonical dump of every table, used to compare state across restarts.
  std::string export_state() {
    std::lock_guard lock(mu_);
    json out = json::object();
    for (const char* table : {"meta", "devices", "device_config", "staged_updates", "readings", "scripts", "jobs", "commands"}) {
      std::string sql = std::string("SELECT * FROM ") + table + " ORDER BY 1, 2";
      Statement q(db_, sql.c_str());
      json rows = json::array();
      while (q.step()) {
        json row = json::array();
        int n = q.column_count();
        for (int c = 0; c < n; ++c) {
          switch (q.column_type(c)) {
            case SQLITE_NULL: row.push_back(nullptr); break;
            case SQLITE_INTEGER: row.push_back(q.integer(c)); break;
            case SQLITE_FLOAT: row.push_back(q.real(c)); break;
            default: row.push_back(q.text(c)); break;
          }
        }
        rows.push_back(std::move(row));
      }
      out[table] = std::move(rows);
    }
    return out.dump();
  }

 private:
  void exec(const char* sql) {
    char* err = nullptr;
    if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
      std::string msg = err ? err : "unknown";
      sqlite3_free(err);
      throw Error(ErrorCode::storage, "sqlite: " + msg);
    }
  }

  static DeviceRow read_device(const Statement& q) {
    return {q.text(0), q.text(1), q.text(2), q.real(3), q.text(4), q.opt_real(5), q.opt_text(6)};
  }
  static ReadingRow read_reading(const Statement& q) {
    return {q.integer(0), q.text(1), q.real(2), q.text(3), json::parse(q.text(4))};
  }
  static JobRow read_job(const Statement& q) {
    return {q.text(0), q.text(1), q.text(2), json::parse(q.text(3)), q.real(4), q.opt_real(5), q.opt_real(6), q.opt_text(7)};
  }
  static CommandRow read_command(const Statement& q) {
    CommandRow c;
    c.command_id = q.text(0);
    c.job_id = q.text(1);
    c.device_id = q.text(2);
    c.name = q.text(3);
    c.args = json::parse(q.text(4));
    c.status = q.text(5);
    if (auto r = q.opt_text(6)) c.result = json::parse(*r);
    c.created_at = q.real(7);
    c.delivered_at = q.opt_real(8);
    c.reading_mark = q.integer(9);
    return c;
  }

  sqlite3* db_ = nullptr;
  std::recursive_mutex mu_;
};

}  // namespace macarons::server
