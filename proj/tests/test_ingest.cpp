#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "airmine/ingest.hpp"
#include "airmine/text.hpp"
#include "doctest.h"

using namespace airmine;
namespace fs = std::filesystem;

namespace {

template <typename T>
const ParseError* error_of(const Parsed<T>& p) {
  return std::get_if<ParseError>(&p);
}

std::string random_bytes(std::mt19937_64& rng, std::size_t n) {
  static const std::string alphabet = "0123456789abcdefT:Z-.,\" \t\r\xff\x00eE+-nai";
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += alphabet[rng() % alphabet.size()];
  return s;
}

const std::string kApp =
    "a1b2,2015-03-04T07:00:00Z,34.0522,-118.2437,pinterest,cellular,opA,cell-7,LTE,120,4500";

}  // namespace

TEST_CASE("hash_uid") {
  CHECK(text::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(hash_uid("c", "ab").value() == text::sha256_hex("abc"));
  CHECK(hash_uid("phoneA", "s") == hash_uid("phoneA", "s"));
  CHECK(hash_uid("phoneA", "s1") != hash_uid("phoneA", "s2"));
  CHECK_THROWS_AS(hash_uid("", "s"), InvalidInput);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto h = hash_uid("id" + std::to_string(rng()), std::to_string(i));
    REQUIRE(h.value().size() == kUidHashLength);
    REQUIRE(h.value().find_first_not_of("0123456789abcdef") == std::string::npos);
  }
}

TEST_CASE("parse_location_record examples") {
  const auto ok = parse_location_record("a1b2,2015-03-04T07:31:22Z,34.0522,-118.2437");
  REQUIRE(std::holds_alternative<ObservationRecord>(ok));
  const auto& r = std::get<ObservationRecord>(ok);
  CHECK(r.uid.value() == "a1b2");
  CHECK(r.ts.epoch_seconds == *parse_iso8601_utc("2015-03-04T07:31:22Z"));
  CHECK(r.ts.precision == Precision::kSecond);
  CHECK(r.pos == GeoPoint{34.0522, -118.2437});

  const auto salted = parse_location_record("a1b2,2015-03-04T07:31:22Z,34.0522,-118.2437", std::string("s"));
  CHECK(std::get<ObservationRecord>(salted).uid == hash_uid("a1b2", "s"));

  const auto range = parse_location_record("a1b2,2015-03-04T07:31:22Z,95.0,-118.2437");
  REQUIRE(error_of(range));
  CHECK(error_of(range)->kind == ParseErrorKind::kRange);
  CHECK(error_of(range)->column == "lat");

  const auto ts = parse_location_record("a1b2,notatime,34.0,-118.0");
  REQUIRE(error_of(ts));
  CHECK(error_of(ts)->kind == ParseErrorKind::kTimestamp);

  CHECK(error_of(parse_location_record("a1b2,2015-03-04T07:31:22Z,34.0"))->kind == ParseErrorKind::kColumnCount);
  CHECK(error_of(parse_location_record(",2015-03-04T07:31:22Z,34.0,1"))->kind == ParseErrorKind::kEmptyField);
  CHECK(error_of(parse_location_record("a,2015-03-04T07:31:22Z,x,1"))->kind == ParseErrorKind::kNumber);
}

TEST_CASE("parse_app_record examples") {
  const auto ok = parse_app_record(kApp);
  REQUIRE(std::holds_alternative<AppObservation>(ok));
  const auto& ev = std::get<AppObservation>(ok).event;
  CHECK(ev.app_id == "pinterest");
  CHECK(ev.conn_type == ConnType::kCellular);
  CHECK(ev.operator_name == "opA");
  CHECK(ev.cell_id == std::optional<std::string>("cell-7"));
  CHECK(ev.tech == Tech::kLTE);
  CHECK(ev.bytes_up == 120);
  CHECK(ev.bytes_down == 4500);
  CHECK(ev.ts.precision == Precision::kHour);

  const auto neg = parse_app_record(
      "a1b2,2015-03-04T07:00:00Z,34.0522,-118.2437,pinterest,cellular,opA,cell-7,LTE,-5,4500");
  REQUIRE(error_of(neg));
  CHECK(error_of(neg)->kind == ParseErrorKind::kNegative);
  CHECK(error_of(neg)->column == "bytes_up");

  const auto wifi = parse_app_record(
      "a1b2,2015-03-04T07:00:00Z,34.0522,-118.2437,pinterest,wifi,,,other,1,2");
  REQUIRE(std::holds_alternative<AppObservation>(wifi));
  CHECK_FALSE(std::get<AppObservation>(wifi).event.cell_id.has_value());

  const auto cell = parse_app_record(
      "a1b2,2015-03-04T07:00:00Z,34.0522,-118.2437,pinterest,cellular,opA,,LTE,1,2");
  CHECK(error_of(cell)->kind == ParseErrorKind::kMissingCellId);

  const auto half = parse_app_record(
      "a1b2,2015-03-04T07:30:00Z,34.0522,-118.2437,pinterest,wifi,,,other,1,2");
  CHECK(error_of(half)->kind == ParseErrorKind::kNotHourAligned);

  const auto tech = parse_app_record(
      "a1b2,2015-03-04T07:00:00Z,34.0522,-118.2437,pinterest,cellular,opA,c,5G,1,2");
  CHECK(error_of(tech)->kind == ParseErrorKind::kEnum);
}

TEST_CASE("property: parsing arbitrary bytes yields a record or a typed error") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 20000; ++i) {
    std::string line = random_bytes(rng, rng() % 120);
    if (i % 3 == 0) {
      // Mutate one character of a valid line.
      line = kApp;
      line[rng() % line.size()] = random_bytes(rng, 1)[0];
    }
    const auto loc = parse_location_record(line);
    const auto app = parse_app_record(line);
    REQUIRE((std::holds_alternative<ObservationRecord>(loc) || error_of(loc)));
    REQUIRE((std::holds_alternative<AppObservation>(app) || error_of(app)));
  }
}

TEST_CASE("property: parse then serialize reproduces the canonical line") {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 5000; ++i) {
    Fix f{1'400'000'000 + static_cast<std::int64_t>(rng() % 100'000'000),
          {static_cast<double>(static_cast<std::int64_t>(rng() % 1'800'000) - 900'000) / 1e4,
           static_cast<double>(static_cast<std::int64_t>(rng() % 3'600'000) - 1'800'000) / 1e4}};
    const auto uid = hash_uid(std::to_string(i), "s");
    const std::string line = serialize_location(uid, f);
    const auto back = parse_location_record(line);
    REQUIRE(std::holds_alternative<ObservationRecord>(back));
    REQUIRE(serialize_location(std::get<ObservationRecord>(back)) == line);

    AppEvent ev;
    ev.ts = {f.t / 3600 * 3600, Precision::kHour};
    ev.pos = f.pos;
    ev.app_id = "app" + std::to_string(rng() % 5);
    ev.conn_type = rng() % 2 ? ConnType::kCellular : ConnType::kWifi;
    if (ev.conn_type == ConnType::kCellular) {
      ev.operator_name = "opA";
      ev.cell_id = "c" + std::to_string(rng() % 50);
      ev.tech = rng() % 2 ? Tech::kLTE : Tech::k3G;
    }
    ev.bytes_up = static_cast<std::int64_t>(rng() % 100000);
    ev.bytes_down = static_cast<std::int64_t>(rng() % 100000);
    const std::string app_line = serialize_app(uid, ev);
    const auto app_back = parse_app_record(app_line);
    REQUIRE(std::holds_alternative<AppObservation>(app_back));
    REQUIRE(std::get<AppObservation>(app_back).event == ev);
    REQUIRE(serialize_app(std::get<AppObservation>(app_back)) == app_line);
  }
}

TEST_CASE("partition_by_user") {
  CHECK(partition_by_user(std::vector<ObservationRecord>{}).empty());
  const auto a = hash_uid("a", "s"), b = hash_uid("b", "s"), c = hash_uid("c", "s");
  std::vector<ObservationRecord> recs{{b, {30, Precision::kSecond}, {1, 1}}, {a, {20, Precision::kSecond}, {1, 1}},
                                      {c, {10, Precision::kSecond}, {1, 1}}, {a, {10, Precision::kSecond}, {2, 2}},
                                      {b, {10, Precision::kSecond}, {1, 1}}, {c, {5, Precision::kSecond}, {1, 1}}};
  const auto users = partition_by_user(recs);
  REQUIRE(users.size() == 3);
  for (std::size_t i = 0; i < users.size(); ++i) {
    if (i) CHECK(users[i - 1].uid < users[i].uid);
    CHECK(users[i].fixes.size() == 2);
    CHECK(std::is_sorted(users[i].fixes.begin(), users[i].fixes.end(),
                         [](const Fix& x, const Fix& y) { return x.t < y.t; }));
  }
}

TEST_CASE("property: partitioning is a permutation and independent of workers") {
  std::mt19937_64 rng(9);
  std::vector<std::string> lines;
  std::map<std::string, std::vector<Fix>> oracle;
  for (int i = 0; i < 100000; ++i) {
    const auto uid = hash_uid("u" + std::to_string(rng() % 300), "s");
    // Coarse times so that ties occur and stability matters.
    const Fix f{1'420'000'000 + static_cast<std::int64_t>(rng() % 5000) * 60,
                {34.0 + static_cast<double>(i % 1000) / 1e4, -118.0}};
    lines.push_back(serialize_location(uid, f));
    oracle[uid.value()].push_back(f);
  }
  for (auto& [uid, fixes] : oracle) {
    std::stable_sort(fixes.begin(), fixes.end(), [](const Fix& x, const Fix& y) { return x.t < y.t; });
  }
  std::string body(kLocationHeader);
  body += '\n';
  for (const auto& l : lines) body += l + '\n';
  for (int t : {1, 2, 4, 16}) {
    const auto data = ingest_location_text(body, std::nullopt, t);
    CHECK(data.stats.lines_in == 100000);
    CHECK(data.stats.parsed == 100000);
    REQUIRE(data.users.size() == oracle.size());
    std::size_t total = 0;
    for (const auto& u : data.users) {
      REQUIRE(u.fixes == oracle.at(u.uid.value()));
      total += u.fixes.size();
    }
    CHECK(total == 100000);
  }
}

TEST_CASE("ingest counts rejects by kind") {
  const std::string body =
      "uid,ts,lat,lon\n"
      "a,2015-03-04T07:31:22Z,34.0,-118.0\n"
      "\n"
      "a,2015-03-04T07:31:22Z,95.0,-118.0\n"
      "a,notatime,34.0,-118.0\r\n"
      "b,2015-03-04T07:31:22Z,34.0\n"
      "b,2015-03-04T07:31:23Z,34.0,-118.0\r\n";
  const auto d = ingest_location_text(body, std::nullopt, 2);
  CHECK(d.stats.lines_in == 5);
  CHECK(d.stats.parsed == 2);
  CHECK(d.stats.rejected_total() == 3);
  CHECK(d.stats.rejected.at(ParseErrorKind::kRange) == 1);
  CHECK(d.stats.rejected.at(ParseErrorKind::kTimestamp) == 1);
  CHECK(d.stats.rejected.at(ParseErrorKind::kColumnCount) == 1);
  CHECK(d.users.size() == 2);
}

TEST_CASE("partitioned store round trip") {
  const fs::path dir = fs::temp_directory_path() / "airmine_test_store";
  fs::remove_all(dir);
  std::string body;
  for (int i = 0; i < 500; ++i) {
    body += "dev" + std::to_string(i % 37) + "," + format_iso8601_utc(1'420'000'000 + 3600LL * (i % 50)) +
            ",34.0" + std::to_string(i % 10) + ",-118.0\n";
  }
  const auto data = ingest_location_text(body, std::string("salt"), 1);
  write_store(dir.string(), data);
  CHECK(store_kind(dir.string()) == RecordKind::kLocation);
  const auto back = read_location_store(dir.string(), 3);
  REQUIRE(back.users.size() == data.users.size());
  for (std::size_t i = 0; i < back.users.size(); ++i) {
    CHECK(back.users[i].uid == data.users[i].uid);
    CHECK(back.users[i].fixes == data.users[i].fixes);
  }
  const fs::path again = dir.string() + "_2";
  fs::remove_all(again);
  write_store(again.string(), back);
  for (const auto& e : fs::directory_iterator(dir)) {
    std::ifstream x(e.path(), std::ios::binary), y(again / e.path().filename(), std::ios::binary);
    std::string sx((std::istreambuf_iterator<char>(x)), {}), sy((std::istreambuf_iterator<char>(y)), {});
    CHECK(sx == sy);
  }
  CHECK_THROWS_AS((void)read_app_store(dir.string(), 1), InvalidInput);
  fs::remove_all(dir);
  fs::remove_all(again);
}
