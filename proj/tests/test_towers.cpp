#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "airmine/synth.hpp"
#include "airmine/towers.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace airmine;

namespace {

AppEvent obs(const GeoPoint& p, const std::string& op, const std::string& cell, Tech tech, std::int64_t hour = 0) {
  AppEvent e;
  e.ts = {3600 * hour, Precision::kHour};
  e.pos = p;
  e.app_id = "x";
  e.conn_type = ConnType::kCellular;
  e.operator_name = op;
  e.cell_id = cell;
  e.tech = tech;
  return e;
}

UserAppTrace user(const std::string& id, std::vector<AppEvent> events) {
  return {hash_uid(id, "s"), std::move(events)};
}

}  // namespace

TEST_CASE("estimate_towers examples") {
  const GeoPoint p{34.1, -118.2};
  std::vector<UserAppTrace> one{user("a", {obs(p, "opA", "c1", Tech::kLTE)})};
  auto t = estimate_towers(one, 1);
  REQUIRE(t.size() == 1);
  const auto& e = t.begin()->second;
  CHECK(e.position == p);
  CHECK(e.n_obs == 1);
  CHECK(e.low_confidence());
  const auto d = distance_samples(one, t);
  CHECK(d.at({"opA", Tech::kLTE}).km == std::vector<double>{0.0});

  std::vector<UserAppTrace> sym{user("a", {obs({34.0, -118.0}, "opA", "c1", Tech::kLTE), obs({34.2, -118.0}, "opA", "c1", Tech::kLTE, 1),
                                           obs({34.1, -118.1}, "opA", "c1", Tech::k3G, 2), obs({34.1, -117.9}, "opA", "c1", Tech::kLTE, 3)})};
  t = estimate_towers(sym, 1);
  const auto& s = t.begin()->second;
  CHECK(s.position.lat == doctest::Approx(34.1));
  CHECK(s.position.lon == doctest::Approx(-118.0));
  CHECK(s.tech == Tech::kLTE);
  CHECK(s.n_obs == 4);

  // Same cell id under two operators stays two towers.
  std::vector<UserAppTrace> ops{user("a", {obs(p, "opA", "c1", Tech::kLTE), obs(p, "opB", "c1", Tech::kLTE, 1)})};
  CHECK(estimate_towers(ops, 1).size() == 2);

  // Wifi events carry no cell and are ignored.
  auto w = obs(p, "", "", Tech::kOther);
  w.conn_type = ConnType::kWifi;
  w.cell_id.reset();
  std::vector<UserAppTrace> wifi{user("a", {w})};
  CHECK(estimate_towers(wifi, 1).empty());
}

TEST_CASE("disc-uniform observations recover the planted tower and radius") {
  const GeoPoint planted{34.0, -118.0};
  auto rng = derive_stream(99, 1);
  std::vector<AppEvent> ev;
  for (int i = 0; i < 10000; ++i) ev.push_back(obs(uniform_in_disc(planted, 2.0, rng), "opA", "c", Tech::kLTE, i));
  std::vector<UserAppTrace> users{user("a", std::move(ev))};
  const auto t = estimate_towers(users, 2);
  CHECK(haversine_km(t.begin()->second.position, planted) <= 0.05);
  const auto km = distance_samples(users, t).at({"opA", Tech::kLTE}).km;
  CHECK(oracle::ks_disc(km, 2.0) <= 0.02);
  CHECK(std::abs(quantile(km, 0.95) - 2.0) <= 0.2);
}

TEST_CASE("property: estimates lie in the bounding box and follow translation") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(-0.02, 0.02);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<UserAppTrace> users;
    for (int k = 0; k < 3; ++k) {
      std::vector<AppEvent> ev;
      const int n = 1 + static_cast<int>(rng() % 20);
      for (int i = 0; i < n; ++i) {
        ev.push_back(obs({34.0 + u(rng), -118.0 + u(rng)}, "op", "c" + std::to_string(rng() % 4),
                         rng() % 2 ? Tech::kLTE : Tech::k3G, i));
      }
      users.push_back(user(std::to_string(k), std::move(ev)));
    }
    std::sort(users.begin(), users.end(), [](const auto& a, const auto& b) { return a.uid < b.uid; });
    const auto t = estimate_towers(users, 1);
    for (const auto& [key, e] : t) {
      REQUIRE(e.n_obs >= 1);
      REQUIRE(e.position.lat >= e.bbox_min.lat);
      REQUIRE(e.position.lat <= e.bbox_max.lat);
      REQUIRE(e.position.lon >= e.bbox_min.lon);
      REQUIRE(e.position.lon <= e.bbox_max.lon);
    }
    auto moved = users;
    for (auto& m : moved) {
      for (auto& e : m.events) e.pos.lat += 0.01, e.pos.lon += 0.01;
    }
    const auto tm = estimate_towers(moved, 3);
    for (const auto& [key, e] : t) {
      REQUIRE(tm.at(key).position.lat == doctest::Approx(e.position.lat + 0.01).epsilon(1e-10));
      REQUIRE(tm.at(key).position.lon == doctest::Approx(e.position.lon + 0.01).epsilon(1e-10));
    }
    // A longitude shift is a rotation about the pole, so distances are kept.
    auto rotated = users;
    for (auto& m : rotated) {
      for (auto& e : m.events) e.pos.lon += 0.37;
    }
    const auto d0 = distance_samples(users, t);
    const auto d1 = distance_samples(rotated, estimate_towers(rotated, 2));
    for (const auto& [g, grp] : d0) {
      for (std::size_t i = 0; i < grp.km.size(); ++i) REQUIRE(std::abs(d1.at(g).km[i] - grp.km[i]) <= 1e-6);
    }
  }
}

TEST_CASE("empirical_cdf examples") {
  const std::vector<double> s{1, 2, 3};
  const auto c = empirical_cdf(s, std::vector<double>{2});
  REQUIRE(c.size() == 1);
  CHECK(c[0].first == 2);
  CHECK(c[0].second == doctest::Approx(2.0 / 3.0));
  CHECK(empirical_cdf(s, std::vector<double>{5, 6})[0].second == 1.0);
  CHECK_THROWS_AS(empirical_cdf(std::vector<double>{}, std::vector<double>{1}), InvalidInput);
  CHECK_THROWS_AS(empirical_cdf(s, std::vector<double>{2, 2}), InvalidInput);
  const auto edges = default_cdf_edges();
  CHECK(edges.size() == 60);
  CHECK(edges.front() == doctest::Approx(0.01));
  CHECK(edges.back() == doctest::Approx(30.0));
}

TEST_CASE("property: empirical_cdf matches counting, is monotone and order-free") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> s(1 + rng() % 200);
    for (auto& x : s) x = static_cast<double>(rng() % 500) / 50.0;
    std::set<double> es;
    for (int i = 0; i < 1 + static_cast<int>(rng() % 30); ++i) es.insert(static_cast<double>(rng() % 600) / 50.0);
    const std::vector<double> edges(es.begin(), es.end());
    const auto got = empirical_cdf(s, edges);
    const auto want = oracle::cdf(s, edges);
    for (std::size_t i = 0; i < got.size(); ++i) {
      REQUIRE(got[i].second == want[i]);
      if (i) REQUIRE(got[i - 1].second <= got[i].second);
    }
    std::shuffle(s.begin(), s.end(), rng);
    REQUIRE(empirical_cdf(s, edges) == got);
  }
}

TEST_CASE("cells_per_operator") {
  CHECK(cells_per_operator({}).empty());
  std::vector<AppEvent> ev;
  for (int i = 0; i < 3; ++i) ev.push_back(obs({34.0, -118.0}, "opA", "l" + std::to_string(i), Tech::kLTE, i));
  for (int i = 0; i < 2; ++i) ev.push_back(obs({34.0, -118.0}, "opA", "g" + std::to_string(i), Tech::k3G, 10 + i));
  std::vector<UserAppTrace> users{user("a", ev)};
  const auto c = cells_per_operator(estimate_towers(users, 1));
  CHECK(c.size() == 2);
  CHECK(c.at({"opA", Tech::kLTE}) == 3);
  CHECK(c.at({"opA", Tech::k3G}) == 2);
}

TEST_CASE("synthetic operator census and radii") {
  SynthConfig sc;
  sc.n_users = 300;
  sc.span_days = 40;
  const auto out = generate(sc, 1);
  const auto t = estimate_towers(out.app.users, 2);
  std::map<OperatorTech, std::int64_t> planted;
  for (const auto& tw : out.truth.towers) ++planted[{tw.operator_name, tw.tech}];
  CHECK(cells_per_operator(t) == planted);
  for (const auto& tw : out.truth.towers) {
    const auto& e = t.at({tw.operator_name, tw.cell_id});
    CHECK(e.tech == tw.tech);
    CHECK(haversine_km(e.position, tw.position) <= 0.2);
  }
  CHECK(t == estimate_towers(out.app.users, 16));
}

TEST_CASE("quantile") {
  CHECK(quantile({1, 2, 3, 4, 5}, 0.5) == 3.0);
  CHECK(quantile({1, 2}, 0.5) == 1.5);
  CHECK(quantile({7}, 0.95) == 7.0);
  CHECK_THROWS_AS(quantile({}, 0.5), InvalidInput);
}
