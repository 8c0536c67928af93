#include <algorithm>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "airmine/poi_apps.hpp"
#include "airmine/synth.hpp"
#include "doctest.h"

using namespace airmine;

namespace {

constexpr std::int64_t D = 86400;
const std::int64_t kMonday = days_from_civil(2015, 3, 2);
const GeoPoint kMall{34.05, -118.25};
const double kDeg50m = 0.05 / (kEarthRadiusKm * M_PI / 180.0);

std::vector<Fix> pings(std::int64_t start, int minutes, const GeoPoint& p, int step_min = 1) {
  std::vector<Fix> f;
  for (int m = 0; m <= minutes; m += step_min) f.push_back({start + 60LL * m, p});
  return f;
}

UserAppTrace app_user(const std::string& id, const std::map<std::string, int>& counts) {
  UserAppTrace u;
  u.uid = hash_uid(id, "s");
  std::int64_t h = 0;
  for (const auto& [app, n] : counts) {
    for (int i = 0; i < n; ++i) {
      AppEvent e;
      e.ts = {3600 * h++, Precision::kHour};
      e.app_id = app;
      e.conn_type = ConnType::kWifi;
      u.events.push_back(e);
    }
  }
  return u;
}

}  // namespace

TEST_CASE("detect_visits examples") {
  PipelineConfig cfg;
  const PoiIndex idx({{"mall1", PoiCategory::kMall, kMall, 200.0}});
  const GeoPoint near{kMall.lat + kDeg50m, kMall.lon};
  CHECK(haversine_km(near, kMall) == doctest::Approx(0.05));
  const auto uid = hash_uid("v", "s");
  auto v = detect_visits(uid, pings(1'000'000, 40, near), idx, cfg);
  REQUIRE(v.size() == 1);
  CHECK(v[0].duration_min == 40.0);
  CHECK(v[0].poi_id == "mall1");
  CHECK(v[0].category == PoiCategory::kMall);
  CHECK(detect_visits(uid, pings(1'000'000, 7 * 60, near), idx, cfg).empty());

  // A gap over 30 minutes splits the run; both halves are long enough.
  auto split = pings(1'000'000, 20, near);
  for (const auto& f : pings(1'000'000 + 20 * 60 + 31 * 60, 20, near)) split.push_back(f);
  CHECK(detect_visits(uid, split, idx, cfg).size() == 2);

  // Outside the radius: no visit.
  const GeoPoint far{kMall.lat + 5 * kDeg50m, kMall.lon};
  CHECK(detect_visits(uid, pings(1'000'000, 40, far), idx, cfg).empty());
}

TEST_CASE("POI matching prefers the nearest, then the smaller id") {
  const PoiIndex idx({{"b", PoiCategory::kMall, kMall, 500.0},
                      {"a", PoiCategory::kMall, kMall, 500.0},
                      {"c", PoiCategory::kFastfood, {kMall.lat + 2 * kDeg50m, kMall.lon}, 500.0}});
  const auto m = idx.match(kMall);
  REQUIRE(m);
  CHECK(idx.pois()[*m].poi_id == "a");
  const auto n = idx.match({kMall.lat + 2 * kDeg50m, kMall.lon});
  CHECK(idx.pois()[*n].poi_id == "c");
  CHECK_FALSE(idx.match({kMall.lat + 1.0, kMall.lon}).has_value());
}

TEST_CASE("property: visits are disjoint and within their category bounds") {
  PipelineConfig cfg;
  std::mt19937_64 rng(31);
  std::vector<Poi> pois;
  for (int i = 0; i < 6; ++i) {
    pois.push_back({"p" + std::to_string(i), i % 2 ? PoiCategory::kFastfood : PoiCategory::kMall,
                    {34.0 + 0.02 * i, -118.0}, 80.0 + 40.0 * i});
  }
  const PoiIndex idx(pois);
  std::vector<UserTrace> users;
  for (int u = 0; u < 100; ++u) {
    UserTrace t;
    t.uid = hash_uid("u" + std::to_string(u), "s");
    std::int64_t now = kMonday * D;
    for (int stay = 0; stay < 60; ++stay) {
      const GeoPoint p = rng() % 3 ? pois[rng() % pois.size()].center : GeoPoint{34.5, -118.5};
      const int len = static_cast<int>(rng() % 500);
      for (int m = 0; m <= len; m += 1 + static_cast<int>(rng() % 40)) t.fixes.push_back({now + 60LL * m, p});
      now += 60LL * (len + 1 + static_cast<int>(rng() % 90));
    }
    users.push_back(std::move(t));
  }
  const auto a = detect_all_visits(users, idx, cfg, 1);
  const auto b = detect_all_visits(users, idx, cfg, 4);
  REQUIRE(a.size() == b.size());
  CHECK(a.size() > 100);
  std::map<std::pair<std::string, std::string>, std::vector<std::pair<std::int64_t, std::int64_t>>> spans;
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].uid == b[i].uid);
    REQUIRE(a[i].start == b[i].start);
    REQUIRE(a[i].start <= a[i].end);
    const auto& bounds = cfg.visit_bounds.at(std::string(to_string(a[i].category)));
    REQUIRE(a[i].duration_min >= bounds.min_minutes);
    REQUIRE(a[i].duration_min <= bounds.max_minutes);
    spans[{a[i].uid.value(), a[i].poi_id}].push_back({a[i].start, a[i].end});
  }
  for (auto& [key, s] : spans) {
    std::sort(s.begin(), s.end());
    for (std::size_t i = 1; i < s.size(); ++i) REQUIRE(s[i - 1].second < s[i].first);
  }
}

TEST_CASE("extract_app_community") {
  std::vector<UserAppTrace> users{app_user("x", {{"pinterest", 100}}), app_user("y", {{"pinterest", 101}}),
                                  app_user("z", {{"pinterest", 5}, {"maps", 300}})};
  std::sort(users.begin(), users.end(), [](const auto& a, const auto& b) { return a.uid < b.uid; });
  const auto c = extract_app_community(users, "pinterest", 100);
  CHECK(c.members == std::set<UidHash>{hash_uid("y", "s")});
  CHECK(extract_app_community(users, "unknown", 100).members.empty());
  CHECK(app_invocation_counts(users, "pinterest").size() == 3);
}

TEST_CASE("property: communities shrink as the threshold grows") {
  std::mt19937_64 rng(32);
  std::vector<UserAppTrace> users;
  for (int i = 0; i < 300; ++i) users.push_back(app_user("u" + std::to_string(i), {{"a", static_cast<int>(rng() % 250)}}));
  std::sort(users.begin(), users.end(), [](const auto& a, const auto& b) { return a.uid < b.uid; });
  std::set<UidHash> prev = extract_app_community(users, "a", 0).members;
  for (int t = 1; t < 260; t += 7) {
    const auto cur = extract_app_community(users, "a", t).members;
    REQUIRE(std::includes(prev.begin(), prev.end(), cur.begin(), cur.end()));
    prev = cur;
  }
}

TEST_CASE("community_visit_rates") {
  AppCommunity c;
  c.app_id = "pinterest";
  const auto busy = hash_uid("busy", "s"), idle = hash_uid("idle", "s");
  c.members = {busy, idle};
  std::vector<Visit> visits;
  for (int i = 0; i < 12; ++i) visits.push_back({busy, "m", PoiCategory::kMall, i * 1000LL, i * 1000LL + 600, 10});
  visits.push_back({hash_uid("outsider", "s"), "m", PoiCategory::kMall, 0, 600, 10});
  const auto r = community_visit_rates(c, visits, 4.0);
  REQUIRE(r.per_member.size() == 2);
  std::map<UidHash, double> by(r.per_member.begin(), r.per_member.end());
  CHECK(by.at(busy) == 3.0);
  CHECK(by.at(idle) == 0.0);
  CHECK(r.mean == 1.5);
  CHECK_THROWS_AS(community_visit_rates(c, visits, 0.0), InvalidInput);

  std::vector<UserTrace> span(1);
  span[0].fixes = {{0, kMall}, {14 * D, kMall}};
  CHECK(study_span_weeks(span) == 2.0);
}

TEST_CASE("weekday_histogram examples") {
  PipelineConfig cfg;
  std::vector<UserTrace> all(3);
  for (int u = 0; u < 3; ++u) {
    all[u].uid = hash_uid(std::to_string(u), "s");
    for (int d = 0; d < 7; ++d) all[u].fixes.push_back({(kMonday + d) * D + 3600, kMall});
  }
  auto h = weekday_histogram(all, cfg);
  for (int d = 0; d < 7; ++d) CHECK(h.percent(d) == 100.0);

  std::vector<UserTrace> tue(1);
  tue[0].uid = hash_uid("t", "s");
  tue[0].fixes = {{(kMonday + 1) * D + 3600, kMall}};
  h = weekday_histogram(tue, cfg);
  for (int d = 0; d < 7; ++d) CHECK(h.percent(d) == (d == 1 ? 100.0 : 0.0));

  // Local time decides the weekday.
  cfg.utc_offset_hours = -8.0;
  h = weekday_histogram(tue, cfg);
  CHECK(h.percent(0) == 100.0);
}

TEST_CASE("property: weekday bars stay within [0, 100]") {
  PipelineConfig cfg;
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<UserTrace> users(1 + rng() % 30);
    for (std::size_t u = 0; u < users.size(); ++u) {
      users[u].uid = hash_uid(std::to_string(u), "s");
      const int n = static_cast<int>(rng() % 20);
      for (int i = 0; i < n; ++i) users[u].fixes.push_back({static_cast<std::int64_t>(rng() % (60 * D)), kMall});
      std::sort(users[u].fixes.begin(), users[u].fixes.end(), [](auto& a, auto& b) { return a.t < b.t; });
    }
    const auto h = weekday_histogram(users, cfg);
    for (int d = 0; d < 7; ++d) {
      REQUIRE(h.percent(d) >= 0.0);
      REQUIRE(h.percent(d) <= 100.0);
    }
  }
}

TEST_CASE("synthetic communities: sizes, rates and the mall join") {
  SynthConfig sc;
  sc.n_users = 600;
  sc.span_days = 56;
  const auto out = generate(sc, 2);
  PipelineConfig cfg;
  cfg.utc_offset_hours = sc.utc_offset_hours;
  const auto visits = detect_all_visits(out.location.users, PoiIndex(out.pois), cfg, 2);
  std::set<UidHash> mall_visitors;
  for (const auto& v : visits) {
    if (v.category == PoiCategory::kMall) mall_visitors.insert(v.uid);
  }
  std::vector<Visit> mall;
  std::copy_if(visits.begin(), visits.end(), std::back_inserter(mall),
               [](const Visit& v) { return v.category == PoiCategory::kMall; });
  const double weeks = study_span_weeks(out.location.users);
  for (const auto& prof : sc.app_profiles) {
    const auto c = extract_app_community(out.app.users, prof.app_id, cfg.app_min_invocations);
    CHECK(c.members == out.truth.communities.at(prof.app_id));
    const auto rates = community_visit_rates(c, mall, weeks);
    CHECK(std::abs(rates.mean - prof.mall_rate_per_week) <= 0.2 * prof.mall_rate_per_week + 0.2);
    std::size_t both = 0;
    for (const auto& uid : c.members) both += mall_visitors.count(uid);
    CHECK(both <= c.members.size());
    CHECK(both <= mall_visitors.size());
  }
}

TEST_CASE("visit and community tables") {
  const auto dir = std::filesystem::temp_directory_path();
  std::vector<Visit> v{{hash_uid("a", "s"), "m1", PoiCategory::kMall, 100, 2500, 40.0},
                       {hash_uid("b", "s"), "f1", PoiCategory::kFastfood, 0, 600, 10.0}};
  const auto path = (dir / "airmine_visits.csv").string();
  write_visits_csv(path, v);
  const auto back = read_visits_csv(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].uid == v[0].uid);
  CHECK(back[0].poi_id == "m1");
  CHECK(back[1].category == PoiCategory::kFastfood);
  CHECK(back[1].end == 600);
  CHECK(back[0].duration_min == 40.0);
  std::filesystem::remove(path);

  const auto pois = parse_pois_csv("poi_id,category,lat,lon,radius_m\nm1,mall,34.05,-118.25,200\n");
  REQUIRE(pois.size() == 1);
  CHECK(pois[0].radius_m == 200.0);
  CHECK_THROWS_AS(parse_pois_csv("m1,mall,34.05,-118.25,2500\n"), InvalidInput);
  CHECK_THROWS_AS(parse_pois_csv("m1,mall,34.05,-118.25,0\n"), InvalidInput);
}
