#include "airmine/model.hpp"

#include <chrono>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace airmine {

bool GeoPoint::valid() const {
  return std::isfinite(lat) && std::isfinite(lon) && lat >= -90.0 &&
         lat <= 90.0 && lon >= -180.0 && lon < 180.0;
}

void validate(const GeoPoint& p) {
  if (!p.valid()) {
    throw InvalidInput("invalid coordinate (" + std::to_string(p.lat) + ", " +
                       std::to_string(p.lon) + ")");
  }
}

GeoPoint GridCell::corner() const {
  return {static_cast<double>(lat_index) * resolution,
          static_cast<double>(lon_index) * resolution};
}

GeoPoint GridCell::center() const {
  return {(static_cast<double>(lat_index) + 0.5) * resolution,
          (static_cast<double>(lon_index) + 0.5) * resolution};
}

namespace {

// floor(x / res), corrected so that the cell's lower edge is exactly
// index*res as computed in double. This makes corner() a fixed point.
std::int64_t cell_index(double x, double res) {
  auto i = static_cast<std::int64_t>(std::floor(x / res));
  while (static_cast<double>(i + 1) * res <= x) ++i;
  while (static_cast<double>(i) * res > x) --i;
  return i;
}

}  // namespace

GridCell quantize(const GeoPoint& p, double resolution) {
  if (!std::isfinite(p.lat) || !std::isfinite(p.lon)) {
    throw InvalidInput("quantize: non-finite coordinate");
  }
  if (!(resolution > 0.0) || !std::isfinite(resolution)) {
    throw InvalidInput("quantize: resolution must be positive");
  }
  return {resolution, cell_index(p.lat, resolution),
          cell_index(p.lon, resolution)};
}

double haversine_km(const GeoPoint& a, const GeoPoint& b) {
  constexpr double kRad = std::numbers::pi / 180.0;
  const double dlat = (b.lat - a.lat) * kRad;
  const double dlon = (b.lon - a.lon) * kRad;
  const double s1 = std::sin(dlat / 2.0);
  const double s2 = std::sin(dlon / 2.0);
  double h = s1 * s1 + std::cos(a.lat * kRad) * std::cos(b.lat * kRad) * s2 * s2;
  h = std::min(1.0, std::max(0.0, h));
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

GeoPoint centroid(std::span<const GeoPoint> points) {
  if (points.empty()) throw InvalidInput("centroid: empty input");
  double lat = 0.0;
  double lon = 0.0;
  for (const auto& p : points) {
    lat += p.lat;
    lon += p.lon;
  }
  const auto n = static_cast<double>(points.size());
  return {lat / n, lon / n};
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

int weekday_of_day(std::int64_t day) {
  // 1970-01-01 was a Thursday (ISO index 3).
  return static_cast<int>(((day + 3) % 7 + 7) % 7);
}

std::int64_t window_overlap(std::int64_t begin, std::int64_t end,
                            std::int64_t day, const DailyWindow& w) {
  const std::int64_t ws = day * kSecondsPerDay + w.start_s;
  const std::int64_t we = ws + w.length_s();
  const std::int64_t lo = std::max(begin, ws);
  const std::int64_t hi = std::min(end, we);
  return hi > lo ? hi - lo : 0;
}

namespace {

int parse_hhmm(std::string_view s) {
  int h = -1;
  int m = -1;
  if (s.size() != 5 || s[2] != ':') return -1;
  auto r1 = std::from_chars(s.data(), s.data() + 2, h);
  auto r2 = std::from_chars(s.data() + 3, s.data() + 5, m);
  if (r1.ec != std::errc{} || r1.ptr != s.data() + 2) return -1;
  if (r2.ec != std::errc{} || r2.ptr != s.data() + 5) return -1;
  if (h < 0 || h > 24 || m < 0 || m > 59 || (h == 24 && m != 0)) return -1;
  return h * 3600 + m * 60;
}

}  // namespace

DailyWindow parse_window(const std::string& text) {
  const auto dash = text.find('-');
  if (dash == std::string::npos) throw InvalidInput("bad window: " + text);
  const int a = parse_hhmm(std::string_view(text).substr(0, dash));
  const int b = parse_hhmm(std::string_view(text).substr(dash + 1));
  if (a < 0 || b < 0 || a == 24 * 3600) throw InvalidInput("bad window: " + text);
  return {a, b == 24 * 3600 ? 0 : b};
}

std::string format_window(const DailyWindow& w) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02d:%02d-%02d:%02d", w.start_s / 3600,
                (w.start_s / 60) % 60, w.end_s / 3600, (w.end_s / 60) % 60);
  return buf;
}

std::int64_t PipelineConfig::dwell_gap_max_s() const {
  return static_cast<std::int64_t>(std::llround(dwell_gap_max_min * 60.0));
}

std::int64_t PipelineConfig::utc_offset_s() const {
  return static_cast<std::int64_t>(std::llround(utc_offset_hours * 3600.0));
}

void PipelineConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw InvalidInput(std::string("config: ") + what);
  };
  need(anchor_resolution > 0 && std::isfinite(anchor_resolution),
       "anchor_resolution must be positive");
  need(raw_resolution > 0 && std::isfinite(raw_resolution),
       "raw_resolution must be positive");
  need(home_min_hours_per_night > 0, "home_min_hours_per_night must be positive");
  need(home_min_nights > 0, "home_min_nights must be positive");
  need(work_min_hours_per_day > 0, "work_min_hours_per_day must be positive");
  need(work_min_workdays > 0, "work_min_workdays must be positive");
  need(consistent_min_days > 0, "consistent_min_days must be positive");
  need(consistent_max_gap_days >= 0, "consistent_max_gap_days must be >= 0");
  need(dwell_gap_max_min > 0, "dwell_gap_max must be positive");
  need(poor_income_max < rich_income_min, "poor_income_max must be < rich_income_min");
  need(district_population_min > 0, "district_population_min must be positive");
  need(app_min_invocations > 0, "app_min_invocations must be positive");
  need(k_anonymity > 0, "k_anonymity must be positive");
  need(std::abs(utc_offset_hours) <= 14.0, "utc_offset out of range");
  need(night_window.start_s != night_window.end_s, "night_window is empty");
  need(workday_window.start_s != workday_window.end_s, "workday_window is empty");
  for (const auto& [cat, b] : visit_bounds) {
    need(b.min_minutes >= 0 && b.max_minutes >= b.min_minutes,
         "visit bounds must satisfy 0 <= min <= max");
  }
}

std::int64_t days_from_civil(int year, unsigned month, unsigned day) {
  using namespace std::chrono;
  const sys_days d = std::chrono::year{year} / std::chrono::month{month} /
                     std::chrono::day{day};
  return d.time_since_epoch().count();
}

std::optional<std::int64_t> parse_iso8601_utc(std::string_view t) {
  // YYYY-MM-DDTHH:MM:SSZ
  if (t.size() != 20 || t[4] != '-' || t[7] != '-' || t[10] != 'T' ||
      t[13] != ':' || t[16] != ':' || t[19] != 'Z') {
    return std::nullopt;
  }
  auto num = [&](std::size_t pos, std::size_t len, int& out) {
    auto r = std::from_chars(t.data() + pos, t.data() + pos + len, out);
    return r.ec == std::errc{} && r.ptr == t.data() + pos + len &&
           t[pos] != '-' && t[pos] != '+';
  };
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  if (!num(0, 4, y) || !num(5, 2, mo) || !num(8, 2, d) || !num(11, 2, h) ||
      !num(14, 2, mi) || !num(17, 2, s)) {
    return std::nullopt;
  }
  if (h > 23 || mi > 59 || s > 59) return std::nullopt;
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(mo)},
                           std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return std::nullopt;
  const std::int64_t days = sys_days{ymd}.time_since_epoch().count();
  return days * kSecondsPerDay + h * 3600 + mi * 60 + s;
}

std::string format_iso8601_utc(std::int64_t epoch_seconds) {
  using namespace std::chrono;
  const std::int64_t day = floor_div(epoch_seconds, kSecondsPerDay);
  const std::int64_t sod = epoch_seconds - day * kSecondsPerDay;
  const year_month_day ymd{sys_days{days{day}}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ",
                static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()), static_cast<int>(sod / 3600),
                static_cast<int>((sod / 60) % 60), static_cast<int>(sod % 60));
  return buf;
}

}  // namespace airmine
