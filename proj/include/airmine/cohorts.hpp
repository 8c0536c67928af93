#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "airmine/anchors.hpp"
#include "airmine/model.hpp"

namespace airmine {

enum class DistrictKind { kTown, kNeighborhood };

std::string_view to_string(DistrictKind k);

struct CensusDistrict {
  std::string district_id;
  std::string name;
  DistrictKind kind = DistrictKind::kTown;
  std::int64_t population = 0;
  double median_income = 0.0;
  // Set from the optional trailing `ambiguous` column.
  bool ambiguous = false;
  // Closed ring: first vertex repeated at the end.
  std::vector<GeoPoint> boundary;
};

/// Shoelace area in square degrees (absolute value).
double polygon_area(std::span<const GeoPoint> ring);

/// Even-odd ray casting against a closed ring.
bool point_in_polygon(const GeoPoint& p, std::span<const GeoPoint> ring);

/// Closes the ring if needed and checks >= 3 distinct vertices, finite
/// coordinates, non-zero area and no self-intersection. Throws InvalidInput.
std::vector<GeoPoint> normalize_polygon(std::vector<GeoPoint> ring);

/// Parses "lon lat;lon lat;...".
std::vector<GeoPoint> parse_polygon(std::string_view text);
std::string format_polygon(std::span<const GeoPoint> ring);

/// Census CSV: district_id,name,kind,population,median_income,polygon[,ambiguous]
/// Polygons are validated here, never at query time.
std::vector<CensusDistrict> load_census_csv(const std::string& path);
std::vector<CensusDistrict> parse_census_csv(std::string_view body);
void write_census_csv(const std::string& path, std::span<const CensusDistrict> districts);

/// Drops districts below district_population_min and those flagged ambiguous.
std::vector<CensusDistrict> filter_districts(std::vector<CensusDistrict> districts,
                                             const PipelineConfig& cfg);

/// Immutable point-to-district lookup. Overlaps resolve to the smallest-area
/// polygon (ties: smaller district_id).
class DistrictIndex {
 public:
  explicit DistrictIndex(std::vector<CensusDistrict> districts);

  std::optional<std::string> locate(const GeoPoint& p) const;
  const CensusDistrict* find(const std::string& district_id) const;
  const std::vector<CensusDistrict>& districts() const { return districts_; }

 private:
  struct Box {
    double min_lat, max_lat, min_lon, max_lon;
  };
  std::vector<CensusDistrict> districts_;
  std::vector<Box> boxes_;
  std::vector<double> areas_;
  std::vector<std::size_t> order_;  // by (area, id)
  std::map<std::string, std::size_t> by_id_;
};

std::optional<std::string> locate_district(const GeoPoint& p, const DistrictIndex& index);

enum class CohortLabel { kPoor, kMiddle, kRich, kUnassigned };

std::string_view to_string(CohortLabel c);
std::optional<CohortLabel> parse_cohort(std::string_view s);

/// poor iff income < poor_income_max, rich iff income > rich_income_min.
CohortLabel label_for_income(double median_income, const PipelineConfig& cfg);

struct CohortAssignment {
  std::optional<std::string> district_id;
  std::optional<double> income;
  CohortLabel label = CohortLabel::kUnassigned;
};

/// Homes are placed at their cell center. Users without a home or outside
/// every eligible district are unassigned. `index` must hold eligible
/// districts only.
std::map<UidHash, CohortAssignment> assign_cohorts(std::span<const UserAnchors> anchors,
                                                   const DistrictIndex& index,
                                                   const PipelineConfig& cfg);

/// 100 * count / denominator; 0 for an empty denominator.
double share_percent(std::int64_t count, std::int64_t denominator);

/// Stage table (hashed uids): uid,district_id,income,cohort
void write_cohorts_csv(const std::string& path,
                       const std::map<UidHash, CohortAssignment>& cohorts);
std::map<UidHash, CohortAssignment> read_cohorts_csv(const std::string& path);

}  // namespace airmine
