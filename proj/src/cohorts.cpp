#include "airmine/cohorts.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "airmine/text.hpp"

namespace airmine {

std::string_view to_string(DistrictKind k) {
  return k == DistrictKind::kTown ? "town" : "neighborhood";
}

double polygon_area(std::span<const GeoPoint> ring) {
  if (ring.size() < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    twice += ring[i].lon * ring[i + 1].lat - ring[i + 1].lon * ring[i].lat;
  }
  const auto& a = ring.back();
  const auto& b = ring.front();
  twice += a.lon * b.lat - b.lon * a.lat;  // zero when already closed
  return std::abs(twice) / 2.0;
}

bool point_in_polygon(const GeoPoint& p, std::span<const GeoPoint> ring) {
  bool inside = false;
  const std::size_t n = ring.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const GeoPoint& a = ring[i];
    const GeoPoint& b = ring[j];
    if ((a.lat > p.lat) != (b.lat > p.lat)) {
      const double x = (b.lon - a.lon) * (p.lat - a.lat) / (b.lat - a.lat) + a.lon;
      if (p.lon < x) inside = !inside;
    }
  }
  return inside;
}

namespace {

double cross(const GeoPoint& o, const GeoPoint& a, const GeoPoint& b) {
  return (a.lon - o.lon) * (b.lat - o.lat) - (a.lat - o.lat) * (b.lon - o.lon);
}

bool on_segment(const GeoPoint& p, const GeoPoint& a, const GeoPoint& b) {
  return std::min(a.lon, b.lon) <= p.lon && p.lon <= std::max(a.lon, b.lon) &&
         std::min(a.lat, b.lat) <= p.lat && p.lat <= std::max(a.lat, b.lat);
}

bool segments_intersect(const GeoPoint& p1, const GeoPoint& p2, const GeoPoint& q1,
                        const GeoPoint& q2) {
  const double d1 = cross(q1, q2, p1);
  const double d2 = cross(q1, q2, p2);
  const double d3 = cross(p1, p2, q1);
  const double d4 = cross(p1, p2, q2);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) {
    return true;
  }
  return (d1 == 0 && on_segment(p1, q1, q2)) || (d2 == 0 && on_segment(p2, q1, q2)) ||
         (d3 == 0 && on_segment(q1, p1, p2)) || (d4 == 0 && on_segment(q2, p1, p2));
}

}  // namespace

std::vector<GeoPoint> normalize_polygon(std::vector<GeoPoint> ring) {
  for (const auto& p : ring) {
    if (!p.valid()) throw InvalidInput("polygon: invalid vertex");
  }
  if (ring.size() >= 2 && ring.front() == ring.back()) ring.pop_back();
  // Drop consecutive duplicates.
  ring.erase(std::unique(ring.begin(), ring.end()), ring.end());
  if (ring.size() < 3) throw InvalidInput("polygon: fewer than 3 distinct vertices");
  if (polygon_area(ring) <= 0.0) throw InvalidInput("polygon: zero area");
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (segments_intersect(ring[i], ring[(i + 1) % n], ring[j], ring[(j + 1) % n])) {
        throw InvalidInput("polygon: self-intersecting");
      }
    }
  }
  ring.push_back(ring.front());
  return ring;
}

std::vector<GeoPoint> parse_polygon(std::string_view body) {
  std::vector<GeoPoint> ring;
  for (auto pair : text::split(body, ';')) {
    pair = text::trim(pair);
    if (pair.empty()) continue;
    const auto sp = pair.find(' ');
    if (sp == std::string_view::npos) throw InvalidInput("polygon: expected 'lon lat'");
    auto lon = text::to_double(text::trim(pair.substr(0, sp)));
    auto lat = text::to_double(text::trim(pair.substr(sp + 1)));
    if (!lon || !lat) throw InvalidInput("polygon: bad number in '" + std::string(pair) + "'");
    ring.push_back({*lat, *lon});
  }
  return ring;
}

std::string format_polygon(std::span<const GeoPoint> ring) {
  std::string out;
  for (std::size_t i = 0; i < ring.size(); ++i) {
    if (i) out += ';';
    out += text::format_double(ring[i].lon);
    out += ' ';
    out += text::format_double(ring[i].lat);
  }
  return out;
}

namespace {

constexpr std::string_view kCensusHeaderPrefix = "district_id,";

}  // namespace

std::vector<CensusDistrict> parse_census_csv(std::string_view body) {
  std::vector<CensusDistrict> out;
  std::size_t lineno = 0;
  std::vector<std::string_view> f;
  while (!body.empty()) {
    const auto nl = body.find('\n');
    std::string_view line = text::trim(body.substr(0, nl));
    body = nl == std::string_view::npos ? std::string_view{} : body.substr(nl + 1);
    ++lineno;
    if (line.empty() || line.rfind(kCensusHeaderPrefix, 0) == 0) continue;
    auto fail = [&](const std::string& what) {
      return InvalidInput("census line " + std::to_string(lineno) + ": " + what);
    };
    text::split(line, ',', f);
    if (f.size() != 6 && f.size() != 7) throw fail("expected 6 or 7 columns");
    CensusDistrict d;
    d.district_id = std::string(f[0]);
    if (d.district_id.empty()) throw fail("empty district_id");
    d.name = std::string(f[1]);
    if (f[2] == "town") {
      d.kind = DistrictKind::kTown;
    } else if (f[2] == "neighborhood") {
      d.kind = DistrictKind::kNeighborhood;
    } else {
      throw fail("kind must be town or neighborhood");
    }
    auto pop = text::to_int(f[3]);
    if (!pop || *pop < 0) throw fail("population must be a non-negative integer");
    d.population = *pop;
    auto inc = text::to_double(f[4]);
    if (!inc || *inc < 0) throw fail("median_income must be a non-negative number");
    d.median_income = *inc;
    try {
      d.boundary = normalize_polygon(parse_polygon(f[5]));
    } catch (const InvalidInput& e) {
      throw fail(e.what());
    }
    if (f.size() == 7) {
      if (f[6] != "0" && f[6] != "1" && !f[6].empty()) throw fail("ambiguous must be 0 or 1");
      d.ambiguous = f[6] == "1";
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<CensusDistrict> load_census_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open census table: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_census_csv(ss.str());
}

void write_census_csv(const std::string& path, std::span<const CensusDistrict> districts) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "district_id,name,kind,population,median_income,polygon,ambiguous\n";
  for (const auto& d : districts) {
    out << d.district_id << ',' << d.name << ',' << to_string(d.kind) << ',' << d.population
        << ',' << text::format_double(d.median_income) << ',' << format_polygon(d.boundary) << ','
        << (d.ambiguous ? 1 : 0) << '\n';
  }
}

std::vector<CensusDistrict> filter_districts(std::vector<CensusDistrict> districts,
                                             const PipelineConfig& cfg) {
  std::erase_if(districts, [&](const CensusDistrict& d) {
    return d.ambiguous || d.population < cfg.district_population_min;
  });
  return districts;
}

DistrictIndex::DistrictIndex(std::vector<CensusDistrict> districts)
    : districts_(std::move(districts)) {
  for (std::size_t i = 0; i < districts_.size(); ++i) {
    const auto& ring = districts_[i].boundary;
    if (ring.size() < 4) throw InvalidInput("district " + districts_[i].district_id + ": polygon not normalized");
    Box b{ring[0].lat, ring[0].lat, ring[0].lon, ring[0].lon};
    for (const auto& p : ring) {
      b.min_lat = std::min(b.min_lat, p.lat);
      b.max_lat = std::max(b.max_lat, p.lat);
      b.min_lon = std::min(b.min_lon, p.lon);
      b.max_lon = std::max(b.max_lon, p.lon);
    }
    boxes_.push_back(b);
    areas_.push_back(polygon_area(ring));
    if (!by_id_.emplace(districts_[i].district_id, i).second) {
      throw InvalidInput("duplicate district_id " + districts_[i].district_id);
    }
    order_.push_back(i);
  }
  std::sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) {
    if (areas_[a] != areas_[b]) return areas_[a] < areas_[b];
    return districts_[a].district_id < districts_[b].district_id;
  });
}

std::optional<std::string> DistrictIndex::locate(const GeoPoint& p) const {
  for (std::size_t i : order_) {
    const Box& b = boxes_[i];
    if (p.lat < b.min_lat || p.lat > b.max_lat || p.lon < b.min_lon || p.lon > b.max_lon) {
      continue;
    }
    if (point_in_polygon(p, districts_[i].boundary)) return districts_[i].district_id;
  }
  return std::nullopt;
}

const CensusDistrict* DistrictIndex::find(const std::string& id) const {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &districts_[it->second];
}

std::optional<std::string> locate_district(const GeoPoint& p, const DistrictIndex& index) {
  return index.locate(p);
}

std::string_view to_string(CohortLabel c) {
  switch (c) {
    case CohortLabel::kPoor: return "poor";
    case CohortLabel::kMiddle: return "middle";
    case CohortLabel::kRich: return "rich";
    case CohortLabel::kUnassigned: return "unassigned";
  }
  return "unassigned";
}

std::optional<CohortLabel> parse_cohort(std::string_view s) {
  if (s == "poor") return CohortLabel::kPoor;
  if (s == "middle") return CohortLabel::kMiddle;
  if (s == "rich") return CohortLabel::kRich;
  if (s == "unassigned") return CohortLabel::kUnassigned;
  return std::nullopt;
}

CohortLabel label_for_income(double income, const PipelineConfig& cfg) {
  if (income < cfg.poor_income_max) return CohortLabel::kPoor;
  if (income > cfg.rich_income_min) return CohortLabel::kRich;
  return CohortLabel::kMiddle;
}

std::map<UidHash, CohortAssignment> assign_cohorts(std::span<const UserAnchors> anchors,
                                                   const DistrictIndex& index,
                                                   const PipelineConfig& cfg) {
  std::map<UidHash, CohortAssignment> out;
  for (const auto& a : anchors) {
    CohortAssignment c;
    if (a.home) {
      if (auto id = index.locate(a.home->center())) {
        const CensusDistrict* d = index.find(*id);
        c.district_id = *id;
        c.income = d->median_income;
        c.label = label_for_income(d->median_income, cfg);
      }
    }
    out.emplace(a.uid, std::move(c));
  }
  return out;
}

double share_percent(std::int64_t count, std::int64_t denominator) {
  if (denominator <= 0) return 0.0;
  return 100.0 * static_cast<double>(count) / static_cast<double>(denominator);
}

void write_cohorts_csv(const std::string& path,
                       const std::map<UidHash, CohortAssignment>& cohorts) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "uid,district_id,income,cohort\n";
  for (const auto& [uid, c] : cohorts) {
    out << uid.value() << ',' << c.district_id.value_or("") << ','
        << (c.income ? text::format_double(*c.income) : "") << ',' << to_string(c.label) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::map<UidHash, CohortAssignment> read_cohorts_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open cohorts table: " + path);
  std::map<UidHash, CohortAssignment> out;
  std::string line;
  std::vector<std::string_view> f;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view l = text::trim(line);
    if (l.empty() || l.rfind("uid,", 0) == 0) continue;
    text::split(l, ',', f);
    auto bad = [&] {
      return std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed cohorts row");
    };
    if (f.size() != 4) throw bad();
    auto uid = UidHash::adopt(f[0]);
    auto label = parse_cohort(f[3]);
    if (!uid || !label) throw bad();
    CohortAssignment c;
    if (!f[1].empty()) c.district_id = std::string(f[1]);
    if (!f[2].empty()) {
      auto inc = text::to_double(f[2]);
      if (!inc) throw bad();
      c.income = *inc;
    }
    c.label = *label;
    out.emplace(*uid, std::move(c));
  }
  return out;
}

}  // namespace airmine
