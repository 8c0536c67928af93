#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "airmine/anchors.hpp"
#include "airmine/cohorts.hpp"
#include "airmine/synth.hpp"
#include "doctest.h"

using namespace airmine;

namespace {

std::vector<GeoPoint> square(double lat, double lon, double side) {
  return normalize_polygon({{lat, lon}, {lat, lon + side}, {lat + side, lon + side}, {lat + side, lon}});
}

CensusDistrict district(std::string id, std::vector<GeoPoint> ring, std::int64_t pop = 10000,
                        double income = 60000.0, DistrictKind kind = DistrictKind::kTown) {
  CensusDistrict d;
  d.district_id = std::move(id);
  d.name = d.district_id;
  d.kind = kind;
  d.population = pop;
  d.median_income = income;
  d.boundary = std::move(ring);
  return d;
}

// Independent of ray casting: winding number.
int winding(const GeoPoint& p, const std::vector<GeoPoint>& ring) {
  int w = 0;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    const auto& a = ring[i];
    const auto& b = ring[i + 1];
    const double cross = (b.lon - a.lon) * (p.lat - a.lat) - (p.lon - a.lon) * (b.lat - a.lat);
    if (a.lat <= p.lat) {
      if (b.lat > p.lat && cross > 0) ++w;
    } else if (b.lat <= p.lat && cross < 0) {
      --w;
    }
  }
  return w;
}

double edge_distance(const GeoPoint& p, const std::vector<GeoPoint>& ring) {
  double best = 1e300;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    const double ax = ring[i].lon, ay = ring[i].lat, bx = ring[i + 1].lon, by = ring[i + 1].lat;
    const double dx = bx - ax, dy = by - ay;
    double t = ((p.lon - ax) * dx + (p.lat - ay) * dy) / (dx * dx + dy * dy);
    t = std::clamp(t, 0.0, 1.0);
    best = std::min(best, std::hypot(p.lon - (ax + t * dx), p.lat - (ay + t * dy)));
  }
  return best;
}

double shoelace(const std::vector<GeoPoint>& ring) {
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    s += ring[i].lon * ring[i + 1].lat - ring[i + 1].lon * ring[i].lat;
  }
  return std::abs(s) / 2.0;
}

// Star-shaped polygon with sorted angles: simple by construction.
std::vector<GeoPoint> random_star(std::mt19937_64& rng, const GeoPoint& c) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = 3 + static_cast<int>(rng() % 10);
  std::vector<double> angles;
  for (int i = 0; i < n; ++i) angles.push_back(u(rng) * 2 * M_PI);
  std::sort(angles.begin(), angles.end());
  std::vector<GeoPoint> ring;
  for (double a : angles) {
    const double r = 0.01 + 0.04 * u(rng);
    ring.push_back({c.lat + r * std::sin(a), c.lon + r * std::cos(a)});
  }
  return ring;
}

}  // namespace

TEST_CASE("polygons") {
  const auto sq = square(34.0, -118.0, 0.1);
  CHECK(sq.front() == sq.back());
  CHECK(polygon_area(sq) == doctest::Approx(0.01));
  CHECK(point_in_polygon({34.05, -117.95}, sq));
  CHECK_FALSE(point_in_polygon({34.15, -117.95}, sq));
  CHECK(parse_polygon(format_polygon(sq)) == sq);
  CHECK_THROWS_AS(normalize_polygon({{0, 0}, {1, 1}}), InvalidInput);
  CHECK_THROWS_AS(normalize_polygon({{0, 0}, {1, 1}, {2, 2}}), InvalidInput);
  CHECK_THROWS_AS(normalize_polygon({{0, 0}, {1, 1}, {0, 1}, {1, 0}}), InvalidInput);
  CHECK_THROWS_AS(parse_polygon("1 2;3"), InvalidInput);
}

TEST_CASE("locate_district examples") {
  const DistrictIndex idx({district("D1", square(34.0, -118.0, 0.1))});
  CHECK(locate_district({34.05, -117.95}, idx) == std::optional<std::string>("D1"));
  CHECK_FALSE(locate_district({35.0, -117.95}, idx).has_value());

  const auto city = square(34.0, -118.5, 0.5);
  const auto hood = square(34.2, -118.3, 0.05);
  CHECK(shoelace(hood) < shoelace(city));
  const DistrictIndex nested({district("city", city), district("hood", hood, 6000, 60000, DistrictKind::kNeighborhood)});
  CHECK(nested.locate({34.22, -118.27}) == std::optional<std::string>("hood"));
  CHECK(nested.locate({34.1, -118.4}) == std::optional<std::string>("city"));

  // Equal areas resolve to the smaller id.
  const DistrictIndex twins({district("B", square(34.0, -118.0, 0.1)), district("A", square(34.0, -118.0, 0.1))});
  CHECK(twins.locate({34.05, -117.95}) == std::optional<std::string>("A"));
}

TEST_CASE("property: locate agrees with a winding-number oracle on random polygons") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-0.06, 0.06);
  for (int poly = 0; poly < 20; ++poly) {
    const GeoPoint c{34.0 + poly * 0.2, -118.0};
    std::vector<GeoPoint> ring;
    try {
      ring = normalize_polygon(random_star(rng, c));
    } catch (const InvalidInput&) {
      continue;
    }
    const DistrictIndex idx({district("P", ring)});
    int inside = 0;
    for (int i = 0; i < 10000; ++i) {
      const GeoPoint p{c.lat + u(rng), c.lon + u(rng)};
      if (edge_distance(p, ring) < 1e-9) continue;
      const bool want = winding(p, ring) != 0;
      REQUIRE(idx.locate(p).has_value() == want);
      REQUIRE(point_in_polygon(p, ring) == want);
      inside += want ? 1 : 0;
    }
    CHECK(inside > 0);
  }
}

TEST_CASE("filter_districts examples") {
  PipelineConfig cfg;
  auto kept = filter_districts({district("a", square(0, 0, 1), 4999), district("b", square(0, 2, 1), 5000)}, cfg);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].district_id == "b");
  auto amb = district("c", square(0, 4, 1), 90000);
  amb.ambiguous = true;
  CHECK(filter_districts({amb}, cfg).empty());

  std::vector<CensusDistrict> many;
  for (int i = 0; i < 250; ++i) {
    many.push_back(district("t" + std::to_string(i), square(i * 0.3 - 60, 0, 0.2), i < 18 ? 100 + i : 5000 + i));
  }
  CHECK(filter_districts(many, cfg).size() == 232);
}

TEST_CASE("label_for_income") {
  PipelineConfig cfg;
  CHECK(label_for_income(44999, cfg) == CohortLabel::kPoor);
  CHECK(label_for_income(45000, cfg) == CohortLabel::kMiddle);
  CHECK(label_for_income(75000, cfg) == CohortLabel::kMiddle);
  CHECK(label_for_income(75001, cfg) == CohortLabel::kRich);
  CHECK(parse_cohort(to_string(CohortLabel::kRich)) == CohortLabel::kRich);
}

TEST_CASE("share_percent with the published counts") {
  CHECK(std::abs(share_percent(10094, 47104) - 21.4) <= 0.1);
  CHECK(std::abs(share_percent(9780, 47104) - 20.8) <= 0.1);
  CHECK(share_percent(1, 0) == 0.0);
}

TEST_CASE("assign_cohorts") {
  PipelineConfig cfg;
  const DistrictIndex idx({district("poor", square(34.0, -118.0, 0.1), 9000, 44999),
                           district("mid", square(34.2, -118.0, 0.1), 9000, 45000)});
  std::vector<UserAnchors> users(4);
  for (int i = 0; i < 4; ++i) users[i].uid = hash_uid(std::to_string(i), "s");
  users[0].home = quantize({34.05, -117.95}, 0.001);
  users[1].home = quantize({34.25, -117.95}, 0.001);
  users[2].home = quantize({36.0, -117.95}, 0.001);
  const auto a = assign_cohorts(users, idx, cfg);
  REQUIRE(a.size() == 4);
  CHECK(a.at(users[0].uid).label == CohortLabel::kPoor);
  CHECK(a.at(users[0].uid).district_id == std::optional<std::string>("poor"));
  CHECK(a.at(users[0].uid).income == std::optional<double>(44999));
  CHECK(a.at(users[1].uid).label == CohortLabel::kMiddle);
  CHECK(a.at(users[2].uid).label == CohortLabel::kUnassigned);
  CHECK_FALSE(a.at(users[2].uid).district_id.has_value());
  CHECK(a.at(users[3].uid).label == CohortLabel::kUnassigned);
}

TEST_CASE("synthetic census: partition and truth agreement") {
  SynthConfig c;
  c.n_users = 400;
  c.span_days = 45;
  const auto out = generate(c, 1);
  PipelineConfig cfg;
  cfg.utc_offset_hours = c.utc_offset_hours;
  const auto eligible = filter_districts(out.census, cfg);
  CHECK(eligible.size() < out.census.size());
  const DistrictIndex idx(eligible);
  const auto anchors = compute_anchors(out.location.users, cfg, 1);
  const auto a = assign_cohorts(anchors, idx, cfg);
  std::map<CohortLabel, std::set<UidHash>> sets;
  for (const auto& [uid, ca] : a) sets[ca.label].insert(uid);
  std::size_t total = 0;
  for (const auto& [l, s] : sets) total += s.size();
  CHECK(total == anchors.size());
  for (const auto& [l1, s1] : sets) {
    for (const auto& [l2, s2] : sets) {
      if (l1 == l2) continue;
      for (const auto& u : s1) REQUIRE(s2.count(u) == 0);
    }
  }
  for (const auto& t : out.truth.users) {
    CHECK(a.at(t.uid).label == t.cohort);
    CHECK(a.at(t.uid).district_id == t.district);
  }
}

TEST_CASE("census and cohort tables round trip") {
  const auto dir = std::filesystem::temp_directory_path();
  std::vector<CensusDistrict> ds{district("a", square(34.0, -118.0, 0.1), 4000, 30000.5),
                                 district("b", square(34.2, -118.0, 0.1), 9000, 80000)};
  ds[1].ambiguous = true;
  const auto census = (dir / "airmine_census.csv").string();
  write_census_csv(census, ds);
  const auto back = load_census_csv(census);
  REQUIRE(back.size() == 2);
  CHECK(back[0].median_income == 30000.5);
  CHECK(back[1].ambiguous);
  CHECK(back[1].boundary == ds[1].boundary);

  std::map<UidHash, CohortAssignment> m;
  m[hash_uid("x", "s")] = {std::string("a"), 30000.5, CohortLabel::kPoor};
  m[hash_uid("y", "s")] = {};
  const auto path = (dir / "airmine_cohorts.csv").string();
  write_cohorts_csv(path, m);
  const auto m2 = read_cohorts_csv(path);
  REQUIRE(m2.size() == 2);
  CHECK(m2.at(hash_uid("x", "s")).district_id == std::optional<std::string>("a"));
  CHECK(m2.at(hash_uid("x", "s")).label == CohortLabel::kPoor);
  CHECK(m2.at(hash_uid("y", "s")).label == CohortLabel::kUnassigned);
  std::filesystem::remove(census);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(parse_census_csv("a,b,city,1,2,0 0;1 0;1 1\n"), InvalidInput);
  CHECK_THROWS_AS(parse_census_csv("a,b,town,-1,2,0 0;1 0;1 1\n"), InvalidInput);
}
