#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

namespace airmine {

/// Raised for inputs that violate an operation's preconditions.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a caller breaks an ordering or sequencing contract.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline constexpr double kEarthRadiusKm = 6371.0;
inline constexpr std::int64_t kSecondsPerHour = 3600;
inline constexpr std::int64_t kSecondsPerDay = 86400;

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;

  bool valid() const;
  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

// Throws InvalidInput unless p.valid().
void validate(const GeoPoint& p);

/// A quantized location: the half-open box
/// [lat_index*res, (lat_index+1)*res) x [lon_index*res, (lon_index+1)*res).
struct GridCell {
  double resolution = 0.001;
  std::int64_t lat_index = 0;
  std::int64_t lon_index = 0;

  GeoPoint corner() const;
  GeoPoint center() const;

  friend bool operator==(const GridCell& a, const GridCell& b) {
    return a.lat_index == b.lat_index && a.lon_index == b.lon_index &&
           a.resolution == b.resolution;
  }
  // Cells compare by (lat_index, lon_index); resolution is expected to match.
  friend auto operator<=>(const GridCell& a, const GridCell& b) {
    if (auto c = a.lat_index <=> b.lat_index; c != 0) return c;
    return a.lon_index <=> b.lon_index;
  }
};

enum class Precision { kSecond, kHour };

struct TimeStamp {
  std::int64_t epoch_seconds = 0;
  Precision precision = Precision::kSecond;

  friend bool operator==(const TimeStamp&, const TimeStamp&) = default;
  friend auto operator<=>(const TimeStamp& a, const TimeStamp& b) {
    return a.epoch_seconds <=> b.epoch_seconds;
  }
};

/// Local-time window inside a day, in seconds since local midnight.
/// When end <= start the window wraps past midnight (e.g. 22:00-06:00) and
/// each instance is attributed to the day on which it starts.
struct DailyWindow {
  std::int32_t start_s = 0;
  std::int32_t end_s = 0;

  bool wraps() const { return end_s <= start_s; }
  std::int64_t length_s() const {
    return wraps() ? kSecondsPerDay - start_s + end_s : end_s - start_s;
  }
  friend bool operator==(const DailyWindow&, const DailyWindow&) = default;
};

/// Parses "HH:MM-HH:MM".
DailyWindow parse_window(const std::string& text);
std::string format_window(const DailyWindow& w);

struct DwellBounds {
  double min_minutes = 0.0;
  double max_minutes = 0.0;
  friend bool operator==(const DwellBounds&, const DwellBounds&) = default;
};

struct PipelineConfig {
  double anchor_resolution = 0.001;
  double raw_resolution = 0.0001;
  DailyWindow night_window{22 * 3600, 6 * 3600};
  DailyWindow workday_window{8 * 3600, 18 * 3600};
  double home_min_hours_per_night = 2.0;
  int home_min_nights = 15;
  double work_min_hours_per_day = 4.0;
  int work_min_workdays = 30;
  int consistent_min_days = 30;
  int consistent_max_gap_days = 7;
  double dwell_gap_max_min = 30.0;
  double poor_income_max = 45000.0;
  double rich_income_min = 75000.0;
  std::int64_t district_population_min = 5000;
  int app_min_invocations = 100;
  int k_anonymity = 20;
  double utc_offset_hours = 0.0;
  // Category name -> visit duration bounds in minutes.
  std::map<std::string, DwellBounds> visit_bounds{
      {"mall", {10.0, 360.0}}, {"fastfood", {5.0, 120.0}}};

  std::int64_t dwell_gap_max_s() const;
  std::int64_t utc_offset_s() const;

  // Throws InvalidInput when a field is out of range.
  void validate() const;
};

GridCell quantize(const GeoPoint& p, double resolution);

double haversine_km(const GeoPoint& a, const GeoPoint& b);

/// Component-wise arithmetic mean of degrees. Adequate at city scale
/// (spans of a few degrees); throws InvalidInput on an empty span.
GeoPoint centroid(std::span<const GeoPoint> points);

// ---- local calendar helpers ------------------------------------------------

std::int64_t floor_div(std::int64_t a, std::int64_t b);

inline std::int64_t to_local_seconds(std::int64_t utc_seconds,
                                     std::int64_t offset_s) {
  return utc_seconds + offset_s;
}

/// Days since 1970-01-01 of the local calendar date containing `local_s`.
inline std::int64_t local_day(std::int64_t local_s) {
  return floor_div(local_s, kSecondsPerDay);
}

/// ISO weekday of a day number: 0 = Monday ... 6 = Sunday.
int weekday_of_day(std::int64_t day);

inline bool is_weekday_mon_fri(std::int64_t day) { return weekday_of_day(day) < 5; }

/// Seconds of [begin, end) falling inside the window instance attributed to
/// `day` (local seconds throughout).
std::int64_t window_overlap(std::int64_t begin, std::int64_t end,
                            std::int64_t day, const DailyWindow& w);

std::int64_t days_from_civil(int year, unsigned month, unsigned day);

/// Strict "YYYY-MM-DDTHH:MM:SSZ"; nullopt on anything else.
std::optional<std::int64_t> parse_iso8601_utc(std::string_view text);
std::string format_iso8601_utc(std::int64_t epoch_seconds);

}  // namespace airmine
