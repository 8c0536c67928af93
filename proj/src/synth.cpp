#include "airmine/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

#include "airmine/parallel.hpp"
#include "airmine/text.hpp"

namespace airmine {

namespace fs = std::filesystem;

namespace {

constexpr double kMetersPerDegLat = kEarthRadiusKm * 1000.0 * std::numbers::pi / 180.0;
constexpr std::int64_t kMinute = 60;
constexpr std::int64_t kHour = 3600;
constexpr std::uint64_t kCityStream = 0xC1C1C1C1ULL;
constexpr std::uint64_t kRoleStream = 0x501E5ULL;
constexpr std::uint64_t kAppOnlyStreamBase = 0xA9900000000ULL;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * unit_uniform(rng);
}

std::int64_t uniform_int(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi_inclusive) {
  const auto span = static_cast<double>(hi_inclusive - lo + 1);
  auto v = lo + static_cast<std::int64_t>(std::floor(unit_uniform(rng) * span));
  return std::min(v, hi_inclusive);
}

template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1));
    std::swap(v[i - 1], v[j]);
  }
}

double round_decimals(double v, double scale) { return std::round(v * scale) / scale; }

// Observations carry four decimals, like the raw location feed.
GeoPoint round_point(const GeoPoint& p) {
  return {round_decimals(p.lat, 1e4), round_decimals(p.lon, 1e4)};
}

GeoPoint offset_m(const GeoPoint& c, double north_m, double east_m) {
  const double coslat = std::cos(c.lat * std::numbers::pi / 180.0);
  return {c.lat + north_m / kMetersPerDegLat, c.lon + east_m / (kMetersPerDegLat * coslat)};
}

}  // namespace

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::mt19937_64 derive_stream(std::uint64_t seed, std::uint64_t stream) {
  return std::mt19937_64(splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL)));
}

GeoPoint uniform_in_disc(const GeoPoint& center, double radius_km, std::mt19937_64& rng) {
  const double r = radius_km * 1000.0 * std::sqrt(unit_uniform(rng));
  const double theta = 2.0 * std::numbers::pi * unit_uniform(rng);
  return offset_m(center, r * std::cos(theta), r * std::sin(theta));
}

std::string_view to_string(UserKind k) {
  switch (k) {
    case UserKind::kCommuter: return "commuter";
    case UserKind::kHomeWorker: return "home_worker";
    case UserKind::kResident: return "resident";
    case UserKind::kNomad: return "nomad";
    case UserKind::kSporadic: return "sporadic";
  }
  return "resident";
}

const UserTruth* GroundTruth::find(const UidHash& uid) const {
  auto it = std::lower_bound(users.begin(), users.end(), uid,
                             [](const UserTruth& u, const UidHash& id) { return u.uid < id; });
  return it != users.end() && it->uid == uid ? &*it : nullptr;
}

// ---- configuration ---------------------------------------------------------

void SynthConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw InvalidInput("synth config: " + what);
  };
  auto frac = [](double f) { return f >= 0.0 && f <= 1.0; };
  need(n_users >= 0, "n_users must be >= 0");
  need(span_days >= 1, "span_days must be >= 1");
  need(frac(fraction_homed) && frac(fraction_commuters) && frac(fraction_home_workers) &&
           frac(fraction_nomads),
       "fractions must lie in [0, 1]");
  need(fraction_commuters + fraction_home_workers <= fraction_homed + 1e-12,
       "commuters + home workers exceed homed users");
  need(fraction_homed + fraction_nomads <= 1.0 + 1e-12, "homed + nomads exceed 1");
  need(gps_jitter_m >= 0.0, "gps_jitter_m must be >= 0");
  need(obs_interval_min >= 1 && obs_interval_min <= 15,
       "obs_interval_min must lie in [1, 15] so lunch gaps stay under 30 minutes");
  need(anchor_resolution > 0.0, "anchor_resolution must be positive");
  need(district_rows >= 1 && district_cols >= 1 && district_cells >= 4,
       "district layout must be at least 1x1 with >= 4 cells per side");
  need(n_neighborhoods >= 0 && n_neighborhoods <= district_rows * district_cols,
       "n_neighborhoods exceeds the number of towns");
  need(towers_per_operator >= 1 || !towers.empty(), "no towers");
  need(n_malls >= 0 && n_fastfood >= 0, "POI counts must be >= 0");
  need(mall_minutes_lo > 0 && mall_minutes_hi >= mall_minutes_lo, "bad mall duration range");
  need(fastfood_minutes_lo > 0 && fastfood_minutes_hi >= fastfood_minutes_lo,
       "bad fastfood duration range");
  need(base_mall_rate_per_week >= 0 && base_mall_rate_per_week <= 7 &&
           fastfood_rate_per_week >= 0 && fastfood_rate_per_week <= 7,
       "visit rates must lie in [0, 7] per week");
  need(work_hours_spread >= 0, "work_hours_spread must be >= 0");
  for (double h : {work_hours_poor, work_hours_middle, work_hours_rich}) {
    need(h - work_hours_spread >= 4.5 && h + work_hours_spread <= 9.5,
         "planted work hours must stay within [4.5, 9.5]");
  }
  need(app_span_days >= 1, "app_span_days must be >= 1");
  need(frac(app_coverage) && frac(cellular_share), "app_coverage and cellular_share in [0, 1]");
  need(app_only_users >= 0, "app_only_users must be >= 0");
  std::int64_t heavy = 0;
  for (const auto& a : app_profiles) {
    need(!a.app_id.empty(), "empty app_id");
    need(a.heavy_users >= 0 && a.light_users >= 0, "app user counts must be >= 0");
    need(a.mall_rate_per_week >= 0 && a.mall_rate_per_week <= 7, "app mall rate in [0, 7]");
    heavy += a.heavy_users;
  }
  const auto covered = static_cast<std::int64_t>(std::llround(app_coverage * n_users));
  need(heavy <= covered, "more heavy app users than users with app data");
  for (const auto& a : app_profiles) {
    need(a.light_users <= covered - a.heavy_users, "too many light users for " + a.app_id);
  }
  if (!boundary_stress) {
    // Anchors sit at cell centers: jitter plus 4-decimal rounding must stay
    // three jitters clear of every cell edge.
    const double lat0 = static_cast<double>(origin_lat_index + district_rows * district_cells) *
                        anchor_resolution;
    const double half_lon_m = 0.5 * anchor_resolution * kMetersPerDegLat *
                              std::cos(std::abs(lat0) * std::numbers::pi / 180.0);
    const double rounding_m = 0.00005 * kMetersPerDegLat;
    need(3.0 * gps_jitter_m + rounding_m <= half_lon_m,
         "gps_jitter_m too large to keep anchors 3 jitters away from cell edges");
  }
}

namespace {

std::vector<std::string_view> fields(const std::string& v, std::size_t n, const std::string& key) {
  auto f = text::split(v, ',');
  for (auto& x : f) x = text::trim(x);
  if (f.size() != n) {
    throw InvalidInput("synth config: " + key + " expects " + std::to_string(n) + " fields");
  }
  return f;
}

double num(std::string_view s, const std::string& key) {
  auto d = text::to_double(s);
  if (!d) throw InvalidInput("synth config: " + key + " expects a number, got '" + std::string(s) + "'");
  return *d;
}

std::int64_t integer(std::string_view s, const std::string& key) {
  auto i = text::to_int(s);
  if (!i) throw InvalidInput("synth config: " + key + " expects an integer, got '" + std::string(s) + "'");
  return *i;
}

}  // namespace

void apply_synth_config(SynthConfig& c, const std::multimap<std::string, std::string>& kv) {
  bool towers_set = false;
  bool pois_set = false;
  bool apps_set = false;
  for (const auto& [key, v] : kv) {
    auto d = [&] { return num(v, key); };
    auto i = [&] { return integer(v, key); };
    if (key == "seed") {
      c.seed = static_cast<std::uint64_t>(i());
    } else if (key == "n_users") {
      c.n_users = i();
    } else if (key == "span_days") {
      c.span_days = static_cast<int>(i());
    } else if (key == "start_date") {
      auto t = parse_iso8601_utc(v + "T00:00:00Z");
      if (!t) throw InvalidInput("synth config: start_date expects YYYY-MM-DD");
      c.start_day = *t / kSecondsPerDay;
    } else if (key == "utc_offset") {
      c.utc_offset_hours = d();
    } else if (key == "salt") {
      c.salt = v;
    } else if (key == "fraction_homed") {
      c.fraction_homed = d();
    } else if (key == "fraction_commuters") {
      c.fraction_commuters = d();
    } else if (key == "fraction_home_workers") {
      c.fraction_home_workers = d();
    } else if (key == "fraction_nomads") {
      c.fraction_nomads = d();
    } else if (key == "gps_jitter_m") {
      c.gps_jitter_m = d();
    } else if (key == "obs_interval_min") {
      c.obs_interval_min = static_cast<int>(i());
    } else if (key == "boundary_stress") {
      c.boundary_stress = i() != 0;
    } else if (key == "anchor_resolution") {
      c.anchor_resolution = d();
    } else if (key == "origin_lat_index") {
      c.origin_lat_index = i();
    } else if (key == "origin_lon_index") {
      c.origin_lon_index = i();
    } else if (key == "district_rows") {
      c.district_rows = static_cast<int>(i());
    } else if (key == "district_cols") {
      c.district_cols = static_cast<int>(i());
    } else if (key == "district_cells") {
      c.district_cells = static_cast<int>(i());
    } else if (key == "n_neighborhoods") {
      c.n_neighborhoods = static_cast<int>(i());
    } else if (key == "poor_income_max") {
      c.poor_income_max = d();
    } else if (key == "rich_income_min") {
      c.rich_income_min = d();
    } else if (key == "district_population_min") {
      c.district_population_min = i();
    } else if (key == "consistent_min_days") {
      c.consistent_min_days = static_cast<int>(i());
    } else if (key == "consistent_max_gap_days") {
      c.consistent_max_gap_days = static_cast<int>(i());
    } else if (key == "home_min_nights") {
      c.home_min_nights = static_cast<int>(i());
    } else if (key == "work_min_workdays") {
      c.work_min_workdays = static_cast<int>(i());
    } else if (key == "towers_per_operator") {
      c.towers_per_operator = static_cast<int>(i());
    } else if (key == "tower") {
      // lat,lon,radius_km,operator,tech,cell_id
      auto f = fields(v, 6, key);
      if (!towers_set) c.towers.clear();
      towers_set = true;
      auto tech = parse_tech(f[4]);
      if (!tech) throw InvalidInput("synth config: tower tech must be LTE, 3G or other");
      c.towers.push_back({std::string(f[3]), std::string(f[5]), *tech,
                          {num(f[0], key), num(f[1], key)}, num(f[2], key)});
    } else if (key == "n_malls") {
      c.n_malls = static_cast<int>(i());
    } else if (key == "n_fastfood") {
      c.n_fastfood = static_cast<int>(i());
    } else if (key == "poi") {
      // poi_id,category,lat,lon,radius_m
      auto f = fields(v, 5, key);
      if (!pois_set) c.pois.clear();
      pois_set = true;
      auto cat = parse_poi_category(f[1]);
      if (!cat) throw InvalidInput("synth config: bad POI category");
      c.pois.push_back({std::string(f[0]), *cat, {num(f[2], key), num(f[3], key)}, num(f[4], key)});
    } else if (key == "app") {
      // app_id,heavy_users,light_users,mall_rate_per_week
      auto f = fields(v, 4, key);
      if (!apps_set) c.app_profiles.clear();
      apps_set = true;
      c.app_profiles.push_back(
          {std::string(f[0]), integer(f[1], key), integer(f[2], key), num(f[3], key)});
    } else if (key == "base_mall_rate_per_week") {
      c.base_mall_rate_per_week = d();
    } else if (key == "fastfood_rate_per_week") {
      c.fastfood_rate_per_week = d();
    } else if (key == "mall_minutes_lo") {
      c.mall_minutes_lo = d();
    } else if (key == "mall_minutes_hi") {
      c.mall_minutes_hi = d();
    } else if (key == "fastfood_minutes_lo") {
      c.fastfood_minutes_lo = d();
    } else if (key == "fastfood_minutes_hi") {
      c.fastfood_minutes_hi = d();
    } else if (key == "work_hours_poor") {
      c.work_hours_poor = d();
    } else if (key == "work_hours_middle") {
      c.work_hours_middle = d();
    } else if (key == "work_hours_rich") {
      c.work_hours_rich = d();
    } else if (key == "work_hours_spread") {
      c.work_hours_spread = d();
    } else if (key == "app_span_days") {
      c.app_span_days = static_cast<int>(i());
    } else if (key == "app_coverage") {
      c.app_coverage = d();
    } else if (key == "app_only_users") {
      c.app_only_users = i();
    } else if (key == "cellular_share") {
      c.cellular_share = d();
    } else {
      throw InvalidInput("synth config: unknown key '" + key + "'");
    }
  }
  c.validate();
}

SynthConfig load_synth_config(const std::string& path) {
  SynthConfig c;
  apply_synth_config(c, text::read_key_values(path));
  return c;
}

// ---- city layout -----------------------------------------------------------

namespace {

struct Region {
  std::int64_t lat0, lon0, lat1, lon1;  // anchor-cell index ranges, half-open
  int parent = -1;
  std::vector<int> children;
  bool eligible = false;
};

struct City {
  const SynthConfig& cfg;
  double res;
  std::int64_t lat0, lon0, lat1, lon1;  // city extent in cells
  std::vector<CensusDistrict> districts;
  std::vector<Region> regions;
  std::vector<Poi> pois;
  std::vector<SynthTower> towers;
  std::vector<std::string> operators;

  explicit City(const SynthConfig& c) : cfg(c), res(c.anchor_resolution) {
    lat0 = c.origin_lat_index;
    lon0 = c.origin_lon_index;
    lat1 = lat0 + static_cast<std::int64_t>(c.district_rows) * c.district_cells;
    lon1 = lon0 + static_cast<std::int64_t>(c.district_cols) * c.district_cells;
  }

  GeoPoint corner(std::int64_t la, std::int64_t lo) const {
    return GridCell{res, la, lo}.corner();
  }

  // Anchor point for a cell: its center, or its corner in stress mode.
  GeoPoint anchor_of(const GridCell& c) const {
    return cfg.boundary_stress ? c.corner() : c.center();
  }

  bool clear_of_pois(const GeoPoint& p, double margin_m) const {
    for (const auto& poi : pois) {
      if (haversine_km(p, poi.center) * 1000.0 <= poi.radius_m + margin_m) return false;
    }
    return true;
  }

  GeoPoint random_point(std::mt19937_64& rng) const {
    for (int attempt = 0;; ++attempt) {
      GeoPoint p{uniform(rng, static_cast<double>(lat0) * res, static_cast<double>(lat1) * res),
                 uniform(rng, static_cast<double>(lon0) * res, static_cast<double>(lon1) * res)};
      if (clear_of_pois(p, 150.0) || attempt > 1000) return p;
    }
  }

  bool in_children(const Region& r, std::int64_t la, std::int64_t lo) const {
    for (int ci : r.children) {
      const Region& c = regions[static_cast<std::size_t>(ci)];
      if (la >= c.lat0 && la < c.lat1 && lo >= c.lon0 && lo < c.lon1) return true;
    }
    return false;
  }

  GridCell random_cell(std::mt19937_64& rng, const Region& r) const {
    for (int attempt = 0;; ++attempt) {
      const GridCell c{res, uniform_int(rng, r.lat0, r.lat1 - 1), uniform_int(rng, r.lon0, r.lon1 - 1)};
      if (in_children(r, c.lat_index, c.lon_index)) continue;
      if (clear_of_pois(c.center(), 300.0) || attempt > 1000) return c;
    }
  }

  // Smallest eligible region holding the cell, walking up from `region`.
  std::optional<int> eligible_region(int region) const {
    for (int r = region; r >= 0; r = regions[static_cast<std::size_t>(r)].parent) {
      if (regions[static_cast<std::size_t>(r)].eligible) return r;
    }
    return std::nullopt;
  }
};

std::vector<GeoPoint> square_ring(const City& city, const Region& r) {
  return {city.corner(r.lat0, r.lon0), city.corner(r.lat0, r.lon1), city.corner(r.lat1, r.lon1),
          city.corner(r.lat1, r.lon0), city.corner(r.lat0, r.lon0)};
}

void build_districts(City& city, std::mt19937_64& rng) {
  const SynthConfig& c = city.cfg;
  const int towns = c.district_rows * c.district_cols;
  for (int r = 0; r < c.district_rows; ++r) {
    for (int col = 0; col < c.district_cols; ++col) {
      Region reg{city.lat0 + static_cast<std::int64_t>(r) * c.district_cells,
                 city.lon0 + static_cast<std::int64_t>(col) * c.district_cells,
                 city.lat0 + static_cast<std::int64_t>(r + 1) * c.district_cells,
                 city.lon0 + static_cast<std::int64_t>(col + 1) * c.district_cells,
                 -1, {}, false};
      CensusDistrict d;
      d.district_id = "T" + std::to_string(r) + "_" + std::to_string(col);
      d.name = "Town " + std::to_string(r) + "-" + std::to_string(col);
      d.kind = DistrictKind::kTown;
      d.median_income = 1000.0 * static_cast<double>(uniform_int(rng, 25, 120));
      d.population = unit_uniform(rng) < 0.1 ? uniform_int(rng, 1000, 4999)
                                             : uniform_int(rng, 5000, 60000);
      d.boundary = square_ring(city, reg);
      city.districts.push_back(std::move(d));
      city.regions.push_back(reg);
    }
  }
  // Boundary cases for the income and population rules.
  struct Special {
    std::optional<double> income;
    std::optional<std::int64_t> population;
    bool ambiguous = false;
  };
  const std::vector<Special> specials{{44999.0, std::nullopt, false}, {45000.0, std::nullopt, false},
                                      {75000.0, std::nullopt, false}, {75001.0, std::nullopt, false},
                                      {std::nullopt, 4999, false},    {std::nullopt, 5000, false},
                                      {std::nullopt, std::nullopt, true}};
  for (std::size_t i = 0; i < specials.size() && i < city.districts.size(); ++i) {
    auto& d = city.districts[i];
    if (specials[i].income) d.median_income = *specials[i].income;
    if (specials[i].population) {
      d.population = *specials[i].population;
    } else if (d.population < 5000) {
      d.population = 5000 + uniform_int(rng, 0, 40000);
    }
    d.ambiguous = specials[i].ambiguous;
  }
  // Nested neighborhoods: the middle half of a randomly chosen town.
  std::vector<int> town_ids(static_cast<std::size_t>(towns));
  for (int i = 0; i < towns; ++i) town_ids[static_cast<std::size_t>(i)] = i;
  shuffle(town_ids, rng);
  const std::int64_t q = c.district_cells / 4;
  for (int k = 0; k < c.n_neighborhoods; ++k) {
    const int parent = town_ids[static_cast<std::size_t>(k)];
    const Region& pr = city.regions[static_cast<std::size_t>(parent)];
    Region reg{pr.lat0 + q, pr.lon0 + q, pr.lat1 - q, pr.lon1 - q, parent, {}};
    CensusDistrict d;
    d.district_id = "N" + std::to_string(k);
    d.name = "Neighborhood " + std::to_string(k);
    d.kind = DistrictKind::kNeighborhood;
    d.median_income = 1000.0 * static_cast<double>(uniform_int(rng, 25, 120));
    d.population = unit_uniform(rng) < 0.25 ? uniform_int(rng, 1000, 4999)
                                            : uniform_int(rng, 5000, 30000);
    d.boundary = square_ring(city, reg);
    const int id = static_cast<int>(city.regions.size());
    city.regions.push_back(reg);
    city.regions[static_cast<std::size_t>(parent)].children.push_back(id);
    city.districts.push_back(std::move(d));
  }
  for (std::size_t i = 0; i < city.regions.size(); ++i) {
    const auto& d = city.districts[i];
    city.regions[i].eligible = !d.ambiguous && d.population >= c.district_population_min;
  }
}

void build_pois(City& city, std::mt19937_64& rng) {
  const SynthConfig& c = city.cfg;
  if (!c.pois.empty()) {
    city.pois = c.pois;
    return;
  }
  auto place = [&](const std::string& id, PoiCategory cat, double radius) {
    for (int attempt = 0; attempt < 10000; ++attempt) {
      // Keep a 1 km margin inside the city edge.
      const double m = 0.01;
      GeoPoint p{uniform(rng, static_cast<double>(city.lat0) * city.res + m,
                         static_cast<double>(city.lat1) * city.res - m),
                 uniform(rng, static_cast<double>(city.lon0) * city.res + m,
                         static_cast<double>(city.lon1) * city.res - m)};
      p = round_point(p);
      bool clear = true;
      for (const auto& o : city.pois) clear = clear && haversine_km(p, o.center) > 1.5;
      if (clear) {
        city.pois.push_back({id, cat, p, radius});
        return;
      }
    }
    throw InvalidInput("synth: city too small to place POI " + id);
  };
  for (int i = 0; i < c.n_malls; ++i) place("mall_" + std::to_string(i), PoiCategory::kMall, 150.0);
  for (int i = 0; i < c.n_fastfood; ++i) {
    place("fastfood_" + std::to_string(i), PoiCategory::kFastfood, 60.0);
  }
}

void build_towers(City& city, std::mt19937_64& rng) {
  const SynthConfig& c = city.cfg;
  if (!c.towers.empty()) {
    city.towers = c.towers;
  } else {
    for (const char* op : {"opA", "opB", "opC"}) {
      for (int i = 0; i < c.towers_per_operator; ++i) {
        const Tech tech = i % 2 == 0 ? Tech::kLTE : Tech::k3G;
        SynthTower t;
        t.operator_name = op;
        t.tech = tech;
        t.cell_id = std::string(op) + "-" + std::string(to_string(tech)) + "-" + std::to_string(i);
        t.position = round_point({uniform(rng, static_cast<double>(city.lat0) * city.res,
                                          static_cast<double>(city.lat1) * city.res),
                                  uniform(rng, static_cast<double>(city.lon0) * city.res,
                                          static_cast<double>(city.lon1) * city.res)});
        t.radius_km = tech == Tech::kLTE ? 1.5 : 2.5;
        city.towers.push_back(std::move(t));
      }
    }
  }
  for (const auto& t : city.towers) {
    if (std::find(city.operators.begin(), city.operators.end(), t.operator_name) ==
        city.operators.end()) {
      city.operators.push_back(t.operator_name);
    }
  }
}

// ---- per-user schedules ----------------------------------------------------

struct UserPlan {
  std::int64_t index = 0;
  UidHash uid;
  UserKind kind = UserKind::kResident;
  std::optional<GridCell> home;
  std::optional<int> home_region;
  std::optional<GridCell> work;
  double work_hours = 8.0;
  double mall_rate = 0.0;
  bool in_app = false;
  std::map<std::string, std::int64_t> invocations;  // planted per app
};

struct UserResult {
  std::vector<Fix> fixes;
  std::vector<AppEvent> events;
  std::vector<PlantedVisit> visits;
};

class Scheduler {
 public:
  Scheduler(const City& city, const UserPlan& plan, std::mt19937_64& rng)
      : city_(city), cfg_(city.cfg), plan_(plan), rng_(rng),
        offset_s_(static_cast<std::int64_t>(std::llround(cfg_.utc_offset_hours * 3600.0))),
        step_(cfg_.obs_interval_min * kMinute) {}

  UserResult run();

 private:
  // All schedule times are local seconds.
  void push(std::int64_t local_t, const GeoPoint& anchor) {
    GeoPoint p = anchor;
    if (cfg_.gps_jitter_m > 0.0) {
      const double r = cfg_.gps_jitter_m * std::sqrt(unit_uniform(rng_));
      const double th = 2.0 * std::numbers::pi * unit_uniform(rng_);
      p = offset_m(anchor, r * std::cos(th), r * std::sin(th));
    }
    out_.fixes.push_back({local_t - offset_s_, round_point(p)});
  }

  void stay(std::int64_t b, std::int64_t e, const GeoPoint& anchor,
            std::optional<std::int64_t> skip_after = std::nullopt) {
    bool skipped = !skip_after.has_value();
    std::int64_t t = b;
    for (; t < e; t += step_) {
      if (!skipped && t >= *skip_after && t > b) {
        skipped = true;
        continue;
      }
      push(t, anchor);
    }
    push(e, anchor);
  }

  void travel(std::int64_t b, std::int64_t e, const GeoPoint& from, const GeoPoint& to) {
    for (double f : {0.25, 0.5, 0.75}) {
      const GeoPoint p{from.lat + f * (to.lat - from.lat), from.lon + f * (to.lon - from.lon)};
      if (!city_.clear_of_pois(p, 100.0)) continue;
      push(b + static_cast<std::int64_t>(f * static_cast<double>(e - b)), p);
    }
  }

  // Free time from `t` until the user heads to `night` for the evening.
  // Returns the arrival time at `night`.
  std::int64_t free_time(std::int64_t day_base, std::int64_t t, GeoPoint cur, const GeoPoint& night,
                         bool record_visit);

  GeoPoint night_anchor();

  const City& city_;
  const SynthConfig& cfg_;
  const UserPlan& plan_;
  std::mt19937_64& rng_;
  std::int64_t offset_s_;
  std::int64_t step_;
  UserResult out_;
};

GeoPoint Scheduler::night_anchor() {
  if (plan_.home) return city_.anchor_of(*plan_.home);
  return city_.random_point(rng_);
}

std::int64_t Scheduler::free_time(std::int64_t day_base, std::int64_t t, GeoPoint cur,
                                  const GeoPoint& night, bool record_visit) {
  const double p_mall = plan_.mall_rate / 7.0;
  const double p_ff = cfg_.fastfood_rate_per_week / 7.0;
  std::optional<PoiCategory> visit;
  const double u = unit_uniform(rng_);
  if (u < p_mall) {
    visit = PoiCategory::kMall;
  } else if (unit_uniform(rng_) < p_ff) {
    visit = PoiCategory::kFastfood;
  }
  if (visit) {
    std::vector<const Poi*> candidates;
    for (const auto& poi : city_.pois) {
      if (poi.category == *visit) candidates.push_back(&poi);
    }
    if (!candidates.empty()) {
      const Poi& poi = *candidates[static_cast<std::size_t>(
          uniform_int(rng_, 0, static_cast<std::int64_t>(candidates.size()) - 1))];
      const bool mall = *visit == PoiCategory::kMall;
      const double minutes = mall ? uniform(rng_, cfg_.mall_minutes_lo, cfg_.mall_minutes_hi)
                                  : uniform(rng_, cfg_.fastfood_minutes_lo, cfg_.fastfood_minutes_hi);
      const std::int64_t vb = t + 30 * kMinute;
      const std::int64_t ve = vb + static_cast<std::int64_t>(std::llround(minutes * 60.0));
      travel(t, vb, cur, poi.center);
      stay(vb, ve, poi.center);
      if (record_visit) {
        out_.visits.push_back({plan_.uid, poi.poi_id, poi.category, vb - offset_s_, ve - offset_s_});
      }
      cur = poi.center;
      t = ve;
    }
  }
  const std::int64_t leave_by = day_base + 20 * kHour + 30 * kMinute;
  while (t + 60 * kMinute <= leave_by) {
    const GeoPoint spot = city_.random_point(rng_);
    const std::int64_t sb = t + 30 * kMinute;
    const std::int64_t se = std::min(sb + 3 * kHour, leave_by);
    travel(t, sb, cur, spot);
    stay(sb, se, spot);
    cur = spot;
    t = se;
  }
  travel(t, t + 30 * kMinute, cur, night);
  return t + 30 * kMinute;
}

UserResult Scheduler::run() {
  const SynthConfig& c = cfg_;
  const std::int64_t first = c.start_day * kSecondsPerDay;
  const std::int64_t last = (c.start_day + c.span_days) * kSecondsPerDay - 1;

  // Sporadic users are only observed on some days.
  std::vector<bool> active(static_cast<std::size_t>(c.span_days), true);
  if (plan_.kind == UserKind::kSporadic) {
    std::fill(active.begin(), active.end(), false);
    if (plan_.index % 2 == 1 && c.span_days >= 45) {
      // 35 days around a 10-day hole.
      for (int d = 0; d < 17; ++d) active[static_cast<std::size_t>(d)] = true;
      for (int d = 27; d < 45; ++d) active[static_cast<std::size_t>(d)] = true;
    } else {
      std::vector<int> days(static_cast<std::size_t>(c.span_days));
      for (int d = 0; d < c.span_days; ++d) days[static_cast<std::size_t>(d)] = d;
      shuffle(days, rng_);
      const int n = std::min(c.span_days, std::min(20, c.consistent_min_days));
      for (int k = 0; k < n; ++k) active[static_cast<std::size_t>(days[static_cast<std::size_t>(k)])] = true;
    }
  }

  GeoPoint night = night_anchor();
  std::int64_t since = first;  // start of the current night stay
  const std::optional<GeoPoint> work_pt =
      plan_.work ? std::optional<GeoPoint>(city_.anchor_of(*plan_.work)) : std::nullopt;

  for (int d = 0; d < c.span_days; ++d) {
    const std::int64_t day = c.start_day + d;
    const std::int64_t base = day * kSecondsPerDay;
    const bool weekday = is_weekday_mon_fri(day);
    const bool record = active[static_cast<std::size_t>(d)];
    const GeoPoint next_night = plan_.home ? night : city_.random_point(rng_);
    std::int64_t arrive = 0;

    if (!weekday) {
      stay(since, base + 10 * kHour, night);
      arrive = free_time(base, base + 10 * kHour, night, next_night, record);
    } else if (plan_.kind == UserKind::kCommuter) {
      const double h = plan_.work_hours + uniform(rng_, -c.work_hours_spread, c.work_hours_spread);
      const std::int64_t wb = base + 8 * kHour + 30 * kMinute;
      const std::int64_t we = wb + static_cast<std::int64_t>(std::llround(h * 3600.0));
      stay(since, base + 7 * kHour + 50 * kMinute, night);
      travel(base + 7 * kHour + 50 * kMinute, base + 8 * kHour + 20 * kMinute, night, *work_pt);
      stay(wb, we, *work_pt, base + 12 * kHour);  // one skipped sample over lunch
      arrive = free_time(base, we + 10 * kMinute, *work_pt, next_night, record);
    } else if (plan_.kind == UserKind::kHomeWorker) {
      stay(since, base + 18 * kHour + 30 * kMinute, night);
      arrive = free_time(base, base + 18 * kHour + 30 * kMinute, night, next_night, record);
    } else {
      // Three daytime spots of at most 3 h each: never a workplace.
      stay(since, base + 7 * kHour + 50 * kMinute, night);
      GeoPoint cur = night;
      std::int64_t t = base + 7 * kHour + 50 * kMinute;
      for (int s = 0; s < 3; ++s) {
        const GeoPoint spot = city_.random_point(rng_);
        const std::int64_t sb = t + 25 * kMinute;
        const std::int64_t se = sb + 2 * kHour + 45 * kMinute;
        travel(t, sb, cur, spot);
        stay(sb, se, spot);
        cur = spot;
        t = se;
      }
      arrive = free_time(base, t, cur, next_night, record);
    }
    night = next_night;
    since = std::max(arrive, base + 21 * kHour);
  }
  stay(since, last, night);

  if (plan_.kind == UserKind::kSporadic) {
    std::erase_if(out_.fixes, [&](const Fix& f) {
      const std::int64_t rel = local_day(f.t + offset_s_) - c.start_day;
      return rel < 0 || rel >= c.span_days || !active[static_cast<std::size_t>(rel)];
    });
  }
  // Samples are emitted in time order except where stays share a boundary.
  std::stable_sort(out_.fixes.begin(), out_.fixes.end(),
                   [](const Fix& a, const Fix& b) { return a.t < b.t; });
  return std::move(out_);
}

// ---- application records ---------------------------------------------------

std::vector<AppEvent> app_events(const City& city, const UserPlan& plan,
                                 const std::optional<GeoPoint>& home, std::mt19937_64& rng,
                                 const std::string& op) {
  const SynthConfig& c = city.cfg;
  const std::int64_t offset_s = static_cast<std::int64_t>(std::llround(c.utc_offset_hours * 3600.0));
  const std::int64_t app_first_local = (c.start_day - c.app_span_days) * kSecondsPerDay;
  const std::int64_t first_hour_utc = floor_div(app_first_local - offset_s, kHour) * kHour;
  const std::int64_t hours = static_cast<std::int64_t>(c.app_span_days) * 24;

  std::vector<const SynthTower*> own;
  for (const auto& t : city.towers) {
    if (t.operator_name == op) own.push_back(&t);
  }

  std::vector<std::pair<std::string, std::int64_t>> plan_counts(plan.invocations.begin(),
                                                                plan.invocations.end());
  static const char* kBackground[] = {"mail", "maps", "news", "video"};
  for (const char* app : kBackground) plan_counts.emplace_back(app, uniform_int(rng, 3, 15));

  std::vector<AppEvent> events;
  for (const auto& [app, n] : plan_counts) {
    for (std::int64_t k = 0; k < n; ++k) {
      AppEvent ev;
      ev.ts = {first_hour_utc + uniform_int(rng, 0, hours - 1) * kHour, Precision::kHour};
      ev.app_id = app;
      ev.operator_name = op;
      if (!own.empty() && unit_uniform(rng) < c.cellular_share) {
        const SynthTower& t = *own[static_cast<std::size_t>(
            uniform_int(rng, 0, static_cast<std::int64_t>(own.size()) - 1))];
        ev.conn_type = ConnType::kCellular;
        ev.cell_id = t.cell_id;
        ev.tech = t.tech;
        ev.pos = round_point(uniform_in_disc(t.position, t.radius_km, rng));
      } else {
        ev.conn_type = ConnType::kWifi;
        ev.tech = Tech::kOther;
        ev.pos = round_point(home ? uniform_in_disc(*home, c.gps_jitter_m / 1000.0, rng)
                                  : city.random_point(rng));
      }
      ev.bytes_up = uniform_int(rng, 0, 200000);
      ev.bytes_down = uniform_int(rng, 0, 2000000);
      events.push_back(std::move(ev));
    }
  }
  std::stable_sort(events.begin(), events.end(), [](const AppEvent& a, const AppEvent& b) {
    return a.ts.epoch_seconds < b.ts.epoch_seconds;
  });
  return events;
}

std::string raw_id(const char* prefix, std::int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%07lld", prefix, static_cast<long long>(i));
  return buf;
}

}  // namespace

// ---- generate --------------------------------------------------------------

SynthOutput generate(const SynthConfig& cfg, int threads) {
  cfg.validate();
  City city(cfg);
  {
    auto rng = derive_stream(cfg.seed, kCityStream);
    build_districts(city, rng);
    build_pois(city, rng);
    build_towers(city, rng);
  }

  const std::int64_t n = cfg.n_users;
  const auto n_homed = std::min<std::int64_t>(n, std::llround(cfg.fraction_homed * static_cast<double>(n)));
  const auto n_comm = std::min<std::int64_t>(n_homed, std::llround(cfg.fraction_commuters * static_cast<double>(n)));
  const auto n_hw = std::min<std::int64_t>(n_homed - n_comm,
                                           std::llround(cfg.fraction_home_workers * static_cast<double>(n)));
  const auto n_nomad = std::min<std::int64_t>(n - n_homed, std::llround(cfg.fraction_nomads * static_cast<double>(n)));

  std::vector<UserPlan> plans(static_cast<std::size_t>(n));
  auto role_rng = derive_stream(cfg.seed, kRoleStream);
  {
    std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    shuffle(perm, role_rng);
    for (std::int64_t k = 0; k < n; ++k) {
      UserPlan& p = plans[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])];
      if (k < n_comm) {
        p.kind = UserKind::kCommuter;
      } else if (k < n_comm + n_hw) {
        p.kind = UserKind::kHomeWorker;
      } else if (k < n_homed) {
        p.kind = UserKind::kResident;
      } else if (k < n_homed + n_nomad) {
        p.kind = UserKind::kNomad;
      } else {
        p.kind = UserKind::kSporadic;
      }
    }
  }
  // App coverage and planted communities.
  const auto n_covered = std::llround(cfg.app_coverage * static_cast<double>(n));
  {
    std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    shuffle(perm, role_rng);
    std::vector<std::int64_t> covered(perm.begin(), perm.begin() + n_covered);
    for (auto i : covered) plans[static_cast<std::size_t>(i)].in_app = true;
    shuffle(covered, role_rng);
    std::size_t next = 0;
    for (const auto& prof : cfg.app_profiles) {
      for (std::int64_t h = 0; h < prof.heavy_users; ++h) {
        // The first heavy user sits exactly on the boundary.
        plans[static_cast<std::size_t>(covered[next++])].invocations[prof.app_id] =
            h == 0 ? 101 : uniform_int(role_rng, 101, 250);
      }
    }
    for (const auto& prof : cfg.app_profiles) {
      std::int64_t placed = 0;
      for (std::size_t k = 0; k < covered.size() && placed < prof.light_users; ++k) {
        auto& inv = plans[static_cast<std::size_t>(covered[(next + k) % covered.size()])].invocations;
        if (inv.count(prof.app_id)) continue;
        inv[prof.app_id] = placed == 0 ? 100 : uniform_int(role_rng, 1, 100);
        ++placed;
      }
    }
  }

  SynthOutput out;
  out.config = cfg;
  out.census = city.districts;
  out.pois = city.pois;
  out.truth.towers = city.towers;

  const std::int64_t weekdays = [&] {
    std::int64_t w = 0;
    for (int d = 0; d < cfg.span_days; ++d) w += is_weekday_mon_fri(cfg.start_day + d) ? 1 : 0;
    return w;
  }();
  const bool full_consistent = cfg.span_days > cfg.consistent_min_days;

  std::vector<UserResult> results(static_cast<std::size_t>(n));
  std::vector<UserTruth> truths(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t i) {
    UserPlan& p = plans[i];
    auto rng = derive_stream(cfg.seed, static_cast<std::uint64_t>(i) + 1);
    p.index = static_cast<std::int64_t>(i);
    p.uid = hash_uid(raw_id("user", p.index), cfg.salt);
    const bool homed = p.kind == UserKind::kCommuter || p.kind == UserKind::kHomeWorker ||
                       p.kind == UserKind::kResident || p.kind == UserKind::kSporadic;
    if (homed) {
      const int region = static_cast<int>(
          uniform_int(rng, 0, static_cast<std::int64_t>(city.regions.size()) - 1));
      p.home_region = region;
      p.home = city.random_cell(rng, city.regions[static_cast<std::size_t>(region)]);
    }
    if (p.kind == UserKind::kHomeWorker) p.work = p.home;
    const Region whole{city.lat0, city.lon0, city.lat1, city.lon1, -1, {}, false};
    if (p.kind == UserKind::kCommuter) {
      for (int attempt = 0;; ++attempt) {
        const GridCell w = city.random_cell(rng, whole);
        if (haversine_km(w.center(), p.home->center()) >= 2.0 || attempt > 1000) {
          p.work = w;
          break;
        }
      }
    }

    UserTruth& t = truths[i];
    t.uid = p.uid;
    t.index = p.index;
    t.kind = p.kind;
    t.planted_home = p.home;
    t.in_app_data = p.in_app;
    if (p.home_region) {
      if (auto r = city.eligible_region(*p.home_region)) {
        const auto& d = city.districts[static_cast<std::size_t>(*r)];
        t.district = d.district_id;
        t.income = d.median_income;
      }
    }
    PipelineConfig thresholds;
    thresholds.poor_income_max = cfg.poor_income_max;
    thresholds.rich_income_min = cfg.rich_income_min;
    const CohortLabel home_cohort =
        t.income ? label_for_income(*t.income, thresholds) : CohortLabel::kUnassigned;
    if (p.kind == UserKind::kCommuter) {
      p.work_hours = home_cohort == CohortLabel::kRich   ? cfg.work_hours_rich
                     : home_cohort == CohortLabel::kPoor ? cfg.work_hours_poor
                                                         : cfg.work_hours_middle;
      t.work_hours_mean = p.work_hours;
    }
    p.mall_rate = cfg.base_mall_rate_per_week;
    for (const auto& prof : cfg.app_profiles) {
      auto it = p.invocations.find(prof.app_id);
      if (it != p.invocations.end() && it->second > 100) {
        t.communities.insert(prof.app_id);
        p.mall_rate = prof.mall_rate_per_week;
      }
    }
    t.mall_rate_per_week = p.mall_rate;

    t.consistent = p.kind != UserKind::kSporadic && full_consistent;
    if (t.consistent && p.home && cfg.span_days >= cfg.home_min_nights) t.home = p.home;
    if (t.consistent && p.work && weekdays >= cfg.work_min_workdays) t.work = p.work;
    if (!t.home) {
      t.district.reset();
      t.income.reset();
    }
    t.cohort = t.income ? label_for_income(*t.income, thresholds) : CohortLabel::kUnassigned;
    t.commuter = t.home && t.work && !(*t.home == *t.work);

    Scheduler sched(city, p, rng);
    results[i] = sched.run();
    if (p.in_app) {
      const std::string& op = city.operators[static_cast<std::size_t>(
          uniform_int(rng, 0, static_cast<std::int64_t>(city.operators.size()) - 1))];
      std::optional<GeoPoint> home_pt;
      if (p.home) home_pt = city.anchor_of(*p.home);
      results[i].events = app_events(city, p, home_pt, rng, op);
    }
  });

  // App-only users: present in the application data set alone.
  std::vector<UserAppTrace> app_only(static_cast<std::size_t>(cfg.app_only_users));
  for (std::int64_t k = 0; k < cfg.app_only_users; ++k) {
    auto rng = derive_stream(cfg.seed, kAppOnlyStreamBase + static_cast<std::uint64_t>(k));
    UserPlan p;
    p.uid = hash_uid(raw_id("apponly", k), cfg.salt);
    const std::string& op = city.operators[static_cast<std::size_t>(
        uniform_int(rng, 0, static_cast<std::int64_t>(city.operators.size()) - 1))];
    app_only[static_cast<std::size_t>(k)] = {p.uid, app_events(city, p, std::nullopt, rng, op)};
  }
  out.truth.app_only_users = cfg.app_only_users;

  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!results[i].fixes.empty()) {
      out.location.users.push_back({truths[i].uid, std::move(results[i].fixes)});
    }
    if (!results[i].events.empty()) {
      out.app.users.push_back({truths[i].uid, std::move(results[i].events)});
    }
    for (auto& v : results[i].visits) out.truth.visits.push_back(std::move(v));
    for (const auto& c : truths[i].communities) out.truth.communities[c].insert(truths[i].uid);
  }
  for (auto& u : app_only) {
    if (!u.events.empty()) out.app.users.push_back(std::move(u));
  }
  for (const auto& prof : cfg.app_profiles) out.truth.communities[prof.app_id];

  auto by_uid = [](const auto& a, const auto& b) { return a.uid < b.uid; };
  std::sort(out.location.users.begin(), out.location.users.end(), by_uid);
  std::sort(out.app.users.begin(), out.app.users.end(), by_uid);
  std::sort(truths.begin(), truths.end(), by_uid);
  std::stable_sort(out.truth.visits.begin(), out.truth.visits.end(),
                   [](const PlantedVisit& a, const PlantedVisit& b) {
                     if (!(a.uid == b.uid)) return a.uid < b.uid;
                     return a.start < b.start;
                   });
  out.truth.users = std::move(truths);

  const auto loc_n = static_cast<std::int64_t>(out.location.record_count());
  out.location.stats.lines_in = out.location.stats.parsed = loc_n;
  const auto app_n = static_cast<std::int64_t>(out.app.record_count());
  out.app.stats.lines_in = out.app.stats.parsed = app_n;
  return out;
}

// ---- output ----------------------------------------------------------------

namespace {

nlohmann::ordered_json cell_json(const std::optional<GridCell>& c) {
  if (!c) return nullptr;
  return nlohmann::ordered_json::array({c->lat_index, c->lon_index});
}

}  // namespace

void write_synth(const std::string& dir_s, const SynthOutput& out) {
  const fs::path dir(dir_s);
  fs::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + (dir / name).string());
    return f;
  };
  {
    auto f = open("location.csv");
    f << kLocationHeader << '\n';
    for (const auto& u : out.location.users) {
      for (const auto& fix : u.fixes) f << serialize_location(u.uid, fix) << '\n';
    }
  }
  {
    auto f = open("app.csv");
    f << kAppHeader << '\n';
    for (const auto& u : out.app.users) {
      for (const auto& ev : u.events) f << serialize_app(u.uid, ev) << '\n';
    }
  }
  write_census_csv((dir / "census.csv").string(), out.census);
  write_pois_csv((dir / "pois.csv").string(), out.pois);
  {
    auto f = open("pipeline.cfg");
    f << "# analysis settings matching the generated city\n"
      << "utc_offset=" << text::format_double(out.config.utc_offset_hours) << '\n'
      << "anchor_resolution=" << text::format_double(out.config.anchor_resolution) << '\n';
  }

  using Json = nlohmann::ordered_json;
  Json j;
  j["seed"] = out.config.seed;
  j["n_users"] = out.config.n_users;
  j["span_days"] = out.config.span_days;
  j["utc_offset"] = out.config.utc_offset_hours;
  Json users = Json::array();
  for (const auto& u : out.truth.users) {
    Json ju;
    ju["uid"] = u.uid.value();
    ju["index"] = u.index;
    ju["kind"] = std::string(to_string(u.kind));
    ju["consistent"] = u.consistent;
    ju["planted_home"] = cell_json(u.planted_home);
    ju["home"] = cell_json(u.home);
    ju["work"] = cell_json(u.work);
    ju["district"] = u.district ? Json(*u.district) : Json(nullptr);
    ju["income"] = u.income ? Json(*u.income) : Json(nullptr);
    ju["cohort"] = std::string(to_string(u.cohort));
    ju["commuter"] = u.commuter;
    ju["in_app_data"] = u.in_app_data;
    ju["communities"] = u.communities;
    ju["work_hours_mean"] = u.work_hours_mean ? Json(*u.work_hours_mean) : Json(nullptr);
    ju["mall_rate_per_week"] = u.mall_rate_per_week;
    users.push_back(std::move(ju));
  }
  j["users"] = std::move(users);
  Json visits = Json::array();
  for (const auto& v : out.truth.visits) {
    visits.push_back({{"uid", v.uid.value()},
                      {"poi_id", v.poi_id},
                      {"category", std::string(to_string(v.category))},
                      {"start", v.start},
                      {"end", v.end}});
  }
  j["visits"] = std::move(visits);
  Json towers = Json::array();
  for (const auto& t : out.truth.towers) {
    towers.push_back({{"operator", t.operator_name},
                      {"cell_id", t.cell_id},
                      {"tech", std::string(to_string(t.tech))},
                      {"lat", t.position.lat},
                      {"lon", t.position.lon},
                      {"radius_km", t.radius_km}});
  }
  j["towers"] = std::move(towers);
  Json comms = Json::object();
  for (const auto& [app, members] : out.truth.communities) {
    Json m = Json::array();
    for (const auto& uid : members) m.push_back(uid.value());
    comms[app] = std::move(m);
  }
  j["communities"] = std::move(comms);
  j["app_only_users"] = out.truth.app_only_users;
  auto f = open("truth.json");
  f << j.dump(1) << '\n';
}

}  // namespace airmine
