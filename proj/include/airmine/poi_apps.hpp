#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "airmine/ingest.hpp"
#include "airmine/model.hpp"

namespace airmine {

enum class PoiCategory { kMall, kFastfood, kOther };

std::string_view to_string(PoiCategory c);
std::optional<PoiCategory> parse_poi_category(std::string_view s);

struct Poi {
  std::string poi_id;
  PoiCategory category = PoiCategory::kOther;
  GeoPoint center;
  double radius_m = 0.0;  // (0, 2000]
};

/// POI CSV: poi_id,category,lat,lon,radius_m
std::vector<Poi> load_pois_csv(const std::string& path);
std::vector<Poi> parse_pois_csv(std::string_view body);
void write_pois_csv(const std::string& path, std::span<const Poi> pois);

/// Radius lookup over a coarse lat/lon bucket grid.
class PoiIndex {
 public:
  explicit PoiIndex(std::vector<Poi> pois);

  /// Nearest POI whose radius (haversine) covers p; ties go to the smaller
  /// poi_id. Returns an index into pois().
  std::optional<std::size_t> match(const GeoPoint& p) const;
  const std::vector<Poi>& pois() const { return pois_; }

 private:
  static constexpr double kBucketDeg = 0.02;
  std::vector<Poi> pois_;
  std::map<std::pair<std::int64_t, std::int64_t>, std::vector<std::size_t>> buckets_;
};

struct Visit {
  UidHash uid;
  std::string poi_id;
  PoiCategory category = PoiCategory::kOther;
  std::int64_t start = 0;  // UTC seconds
  std::int64_t end = 0;
  double duration_min = 0.0;
};

/// Maximal runs of consecutive fixes matched to one POI with gaps <=
/// dwell_gap_max. Runs shorter than the category's minimum or longer than
/// its maximum are dropped; categories without bounds never yield visits.
std::vector<Visit> detect_visits(const UidHash& uid, std::span<const Fix> fixes,
                                 const PoiIndex& pois, const PipelineConfig& cfg);

/// detect_visits over every user; output ordered by (uid, start).
std::vector<Visit> detect_all_visits(std::span<const UserTrace> users, const PoiIndex& pois,
                                     const PipelineConfig& cfg, int threads);

struct AppCommunity {
  std::string app_id;
  std::set<UidHash> members;
  int min_invocations = 0;
};

/// Members are users with strictly more than `min_invocations` records
/// carrying `app_id`.
AppCommunity extract_app_community(std::span<const UserAppTrace> users,
                                   const std::string& app_id, int min_invocations);

/// Per-user invocation counts of one app, for users with at least one.
std::map<UidHash, std::int64_t> app_invocation_counts(std::span<const UserAppTrace> users,
                                                      const std::string& app_id);

struct VisitRates {
  std::vector<std::pair<UidHash, double>> per_member;  // visits/week, uid order
  double mean = 0.0;
  double median = 0.0;
};

/// Visits per week for every community member, zero-visit members
/// included. Throws InvalidInput when span_weeks <= 0.
VisitRates community_visit_rates(const AppCommunity& community, std::span<const Visit> visits,
                                 double span_weeks);

/// (last fix - first fix) over all users, in weeks; 0 with fewer than two fixes.
double study_span_weeks(std::span<const UserTrace> users);

struct WeekdayHistogram {
  std::array<std::int64_t, 7> active{};  // Mon..Sun distinct uids
  std::int64_t total_uids = 0;
  double percent(int weekday) const;
};

/// Share of uids with at least one fix on a local date falling on each weekday.
WeekdayHistogram weekday_histogram(std::span<const UserTrace> users, const PipelineConfig& cfg);

/// Stage tables (hashed uids).
void write_visits_csv(const std::string& path, std::span<const Visit> visits);
std::vector<Visit> read_visits_csv(const std::string& path);
void write_community_csv(const std::string& path, const AppCommunity& community);

}  // namespace airmine
