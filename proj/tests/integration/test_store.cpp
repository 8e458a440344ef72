#include <gtest/gtest.h>

#include "harness.hpp"

using namespace macarons;
using namespace macarons::server;

namespace {

DeviceRow mover_row(const std::string& id, const std::string& hw) {
  DeviceRow d;
  d.device_id = id;
  d.kind = "mover";
  d.hardware_id = hw;
  d.registered_at = 10;
  d.installed_version = "1.0.0";
  return d;
}

}  // namespace

TEST(Store, ReopenKeepsSchemaAndRows) {
  mtest::TempDir dir;
  auto db = (dir / "s.db").string();
  {
    Store s(db);
    s.transaction([&] { s.insert_device(mover_row("mover-0001", "hw-01")); });
  }
  Store s(db);
  auto d = s.transaction([&] { return s.device("mover-0001"); });
  ASSERT_TRUE(d);
  EXPECT_EQ(d->hardware_id, "hw-01");
}

TEST(Store, FailedTransactionRollsBack) {
  mtest::TempDir dir;
  Store s((dir / "s.db").string());
  EXPECT_THROW(s.transaction([&] {
    s.insert_device(mover_row("mover-0001", "hw-01"));
    s.set_config("mover-0001", "sleep_seconds", 30);
    throw Error(ErrorCode::validation, "abort");
  }),
               Error);
  EXPECT_FALSE(s.transaction([&] { return s.device("mover-0001"); }));
  EXPECT_EQ(s.transaction([&] { return s.next_sequence("device"); }), 1);
}

TEST(Store, DuplicateHardwareIdIsAStorageError) {
  mtest::TempDir dir;
  Store s((dir / "s.db").string());
  s.transaction([&] { s.insert_device(mover_row("mover-0001", "hw-01")); });
  try {
    s.transaction([&] { s.insert_device(mover_row("mover-0002", "hw-01")); });
    FAIL() << "expected a constraint failure";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::storage);
  }
}

TEST(Store, ReadingsComeBackInTimestampOrderInclusive) {
  mtest::TempDir dir;
  Store s((dir / "s.db").string());
  s.transaction([&] {
    s.insert_device(mover_row("mover-0001", "hw-01"));
    for (int t : {5, 1, 3, 3, 9}) s.insert_reading("mover-0001", t, "position", t * 100);
  });
  auto rows = s.transaction([&] { return s.readings("mover-0001", 3.0, 5.0); });
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].timestamp, 3);
  EXPECT_EQ(rows[1].timestamp, 3);
  EXPECT_LT(rows[0].seq, rows[1].seq);
  EXPECT_EQ(rows[2].timestamp, 5);
  EXPECT_TRUE(s.transaction([&] { return s.readings("mover-0001", 6.0, 8.0); }).empty());
}

TEST(Store, ExportIsStableAcrossReopen) {
  mtest::TempDir dir;
  auto db = (dir / "s.db").string();
  std::string before;
  {
    Store s(db);
    s.transaction([&] {
      s.insert_device(mover_row("mover-0001", "hw-01"));
      s.set_config("mover-0001", "note", "café");
      s.set_config("mover-0001", "sleep_seconds", 0.1);
      s.insert_reading("mover-0001", 1700000000.123456789, "position", 1250.0 / 3.0);
    });
    before = s.export_state();
  }
  Store s(db);
  EXPECT_EQ(s.export_state(), before);
}
