#include "airmine/poi_apps.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "airmine/parallel.hpp"
#include "airmine/text.hpp"

namespace airmine {

std::string_view to_string(PoiCategory c) {
  switch (c) {
    case PoiCategory::kMall: return "mall";
    case PoiCategory::kFastfood: return "fastfood";
    case PoiCategory::kOther: return "other";
  }
  return "other";
}

std::optional<PoiCategory> parse_poi_category(std::string_view s) {
  if (s == "mall") return PoiCategory::kMall;
  if (s == "fastfood") return PoiCategory::kFastfood;
  if (s == "other") return PoiCategory::kOther;
  return std::nullopt;
}

std::vector<Poi> parse_pois_csv(std::string_view body) {
  std::vector<Poi> out;
  std::vector<std::string_view> f;
  std::size_t lineno = 0;
  while (!body.empty()) {
    const auto nl = body.find('\n');
    std::string_view line = text::trim(body.substr(0, nl));
    body = nl == std::string_view::npos ? std::string_view{} : body.substr(nl + 1);
    ++lineno;
    if (line.empty() || line.rfind("poi_id,", 0) == 0) continue;
    auto fail = [&](const std::string& what) {
      return InvalidInput("poi line " + std::to_string(lineno) + ": " + what);
    };
    text::split(line, ',', f);
    if (f.size() != 5) throw fail("expected 5 columns");
    Poi p;
    p.poi_id = std::string(f[0]);
    if (p.poi_id.empty()) throw fail("empty poi_id");
    auto cat = parse_poi_category(f[1]);
    if (!cat) throw fail("category must be mall, fastfood or other");
    p.category = *cat;
    auto lat = text::to_double(f[2]);
    auto lon = text::to_double(f[3]);
    auto r = text::to_double(f[4]);
    if (!lat || !lon || !r) throw fail("bad number");
    p.center = {*lat, *lon};
    if (!p.center.valid()) throw fail("coordinate out of range");
    if (!(*r > 0.0 && *r <= 2000.0)) throw fail("radius_m must be in (0, 2000]");
    p.radius_m = *r;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Poi> load_pois_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open POI table: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_pois_csv(ss.str());
}

void write_pois_csv(const std::string& path, std::span<const Poi> pois) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "poi_id,category,lat,lon,radius_m\n";
  for (const auto& p : pois) {
    out << p.poi_id << ',' << to_string(p.category) << ',' << text::format_double(p.center.lat)
        << ',' << text::format_double(p.center.lon) << ',' << text::format_double(p.radius_m)
        << '\n';
  }
}

// ---- index -----------------------------------------------------------------

namespace {

constexpr double kKmPerDegLat = kEarthRadiusKm * std::numbers::pi / 180.0;

std::int64_t bucket_of(double deg, double size) {
  return static_cast<std::int64_t>(std::floor(deg / size));
}

}  // namespace

PoiIndex::PoiIndex(std::vector<Poi> pois) : pois_(std::move(pois)) {
  for (std::size_t i = 0; i < pois_.size(); ++i) {
    const Poi& p = pois_[i];
    // Register the POI in every bucket its radius box touches.
    // 10% slack covers the cos(lat) change across the radius.
    const double dlat = 1.1 * p.radius_m / 1000.0 / kKmPerDegLat;
    const double coslat = std::max(1e-6, std::cos(p.center.lat * std::numbers::pi / 180.0));
    const double dlon = dlat / coslat;
    for (auto a = bucket_of(p.center.lat - dlat, kBucketDeg);
         a <= bucket_of(p.center.lat + dlat, kBucketDeg); ++a) {
      for (auto b = bucket_of(p.center.lon - dlon, kBucketDeg);
           b <= bucket_of(p.center.lon + dlon, kBucketDeg); ++b) {
        buckets_[{a, b}].push_back(i);
      }
    }
  }
}

std::optional<std::size_t> PoiIndex::match(const GeoPoint& p) const {
  auto it = buckets_.find({bucket_of(p.lat, kBucketDeg), bucket_of(p.lon, kBucketDeg)});
  if (it == buckets_.end()) return std::nullopt;
  std::optional<std::size_t> best;
  double best_d = 0.0;
  for (std::size_t i : it->second) {
    const double d = haversine_km(p, pois_[i].center) * 1000.0;
    if (d > pois_[i].radius_m) continue;
    if (!best || d < best_d || (d == best_d && pois_[i].poi_id < pois_[*best].poi_id)) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

// ---- visits ----------------------------------------------------------------

std::vector<Visit> detect_visits(const UidHash& uid, std::span<const Fix> fixes,
                                 const PoiIndex& index, const PipelineConfig& cfg) {
  std::vector<Visit> out;
  const std::int64_t gap_max = cfg.dwell_gap_max_s();
  std::optional<std::size_t> run_poi;
  std::int64_t run_start = 0;
  std::int64_t run_end = 0;

  auto close_run = [&] {
    if (!run_poi) return;
    const Poi& poi = index.pois()[*run_poi];
    auto b = cfg.visit_bounds.find(std::string(to_string(poi.category)));
    const std::int64_t secs = run_end - run_start;
    if (b != cfg.visit_bounds.end() &&
        static_cast<double>(secs) >= b->second.min_minutes * 60.0 &&
        static_cast<double>(secs) <= b->second.max_minutes * 60.0) {
      out.push_back({uid, poi.poi_id, poi.category, run_start, run_end,
                     static_cast<double>(secs) / 60.0});
    }
    run_poi.reset();
  };

  for (std::size_t i = 0; i < fixes.size(); ++i) {
    if (i > 0 && fixes[i].t < fixes[i - 1].t) {
      throw ContractViolation("detect_visits: fixes not sorted by time");
    }
    const auto m = index.match(fixes[i].pos);
    if (run_poi && m == run_poi && fixes[i].t - run_end <= gap_max) {
      run_end = fixes[i].t;
      continue;
    }
    close_run();
    if (m) {
      run_poi = m;
      run_start = run_end = fixes[i].t;
    }
  }
  close_run();
  return out;
}

std::vector<Visit> detect_all_visits(std::span<const UserTrace> users, const PoiIndex& pois,
                                     const PipelineConfig& cfg, int threads) {
  std::vector<std::vector<Visit>> per_user(users.size());
  parallel_for(users.size(), threads, [&](std::size_t i) {
    per_user[i] = detect_visits(users[i].uid, users[i].fixes, pois, cfg);
  });
  std::vector<Visit> out;
  for (auto& v : per_user) {
    out.insert(out.end(), std::make_move_iterator(v.begin()), std::make_move_iterator(v.end()));
  }
  // Users arrive uid-sorted; keep that as the output contract even if not.
  std::stable_sort(out.begin(), out.end(), [](const Visit& a, const Visit& b) {
    if (!(a.uid == b.uid)) return a.uid < b.uid;
    return a.start < b.start;
  });
  return out;
}

// ---- app communities -------------------------------------------------------

std::map<UidHash, std::int64_t> app_invocation_counts(std::span<const UserAppTrace> users,
                                                      const std::string& app_id) {
  std::map<UidHash, std::int64_t> counts;
  for (const auto& u : users) {
    const auto n = std::count_if(u.events.begin(), u.events.end(),
                                 [&](const AppEvent& e) { return e.app_id == app_id; });
    if (n > 0) counts[u.uid] += n;
  }
  return counts;
}

AppCommunity extract_app_community(std::span<const UserAppTrace> users,
                                   const std::string& app_id, int min_invocations) {
  AppCommunity c{app_id, {}, min_invocations};
  for (const auto& [uid, n] : app_invocation_counts(users, app_id)) {
    if (n > min_invocations) c.members.insert(uid);
  }
  return c;
}

VisitRates community_visit_rates(const AppCommunity& community, std::span<const Visit> visits,
                                 double span_weeks) {
  if (!(span_weeks > 0.0)) throw InvalidInput("community_visit_rates: span_weeks must be > 0");
  std::map<UidHash, std::int64_t> counts;
  for (const auto& uid : community.members) counts[uid] = 0;
  for (const auto& v : visits) {
    auto it = counts.find(v.uid);
    if (it != counts.end()) ++it->second;
  }
  VisitRates r;
  std::vector<double> rates;
  for (const auto& [uid, n] : counts) {
    const double rate = static_cast<double>(n) / span_weeks;
    r.per_member.emplace_back(uid, rate);
    rates.push_back(rate);
  }
  if (rates.empty()) return r;
  double sum = 0.0;
  for (double x : rates) sum += x;
  r.mean = sum / static_cast<double>(rates.size());
  std::sort(rates.begin(), rates.end());
  const std::size_t n = rates.size();
  r.median = n % 2 ? rates[n / 2] : (rates[n / 2 - 1] + rates[n / 2]) / 2.0;
  return r;
}

double study_span_weeks(std::span<const UserTrace> users) {
  std::optional<std::int64_t> lo, hi;
  for (const auto& u : users) {
    if (u.fixes.empty()) continue;
    lo = lo ? std::min(*lo, u.fixes.front().t) : u.fixes.front().t;
    hi = hi ? std::max(*hi, u.fixes.back().t) : u.fixes.back().t;
  }
  if (!lo) return 0.0;
  return static_cast<double>(*hi - *lo) / static_cast<double>(7 * kSecondsPerDay);
}

double WeekdayHistogram::percent(int weekday) const {
  if (total_uids == 0) return 0.0;
  return 100.0 * static_cast<double>(active[static_cast<std::size_t>(weekday)]) /
         static_cast<double>(total_uids);
}

WeekdayHistogram weekday_histogram(std::span<const UserTrace> users, const PipelineConfig& cfg) {
  WeekdayHistogram h;
  const auto off = cfg.utc_offset_s();
  for (const auto& u : users) {
    ++h.total_uids;
    std::array<bool, 7> seen{};
    for (const auto& f : u.fixes) {
      seen[static_cast<std::size_t>(weekday_of_day(local_day(to_local_seconds(f.t, off))))] = true;
    }
    for (std::size_t d = 0; d < 7; ++d) h.active[d] += seen[d] ? 1 : 0;
  }
  return h;
}

void write_visits_csv(const std::string& path, std::span<const Visit> visits) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "uid,poi_id,category,start,end,duration_min\n";
  for (const auto& v : visits) {
    out << v.uid.value() << ',' << v.poi_id << ',' << to_string(v.category) << ','
        << format_iso8601_utc(v.start) << ',' << format_iso8601_utc(v.end) << ','
        << text::format_double(v.duration_min) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<Visit> read_visits_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<Visit> out;
  std::string line;
  std::vector<std::string_view> f;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    text::split(line, ',', f);
    auto bad = [&] {
      return InvalidInput(path + ":" + std::to_string(line_no) + ": malformed visit row");
    };
    if (f.size() != 6) throw bad();
    auto uid = UidHash::adopt(f[0]);
    auto cat = parse_poi_category(f[2]);
    auto s = parse_iso8601_utc(f[3]);
    auto e = parse_iso8601_utc(f[4]);
    auto d = text::to_double(f[5]);
    if (!uid || f[1].empty() || !cat || !s || !e || !d || *e < *s) throw bad();
    out.push_back({*uid, std::string(f[1]), *cat, *s, *e, *d});
  }
  return out;
}

void write_community_csv(const std::string& path, const AppCommunity& community) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "app_id,min_invocations,uid\n";
  for (const auto& uid : community.members) {
    out << community.app_id << ',' << community.min_invocations << ',' << uid.value() << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace airmine
