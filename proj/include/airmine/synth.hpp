#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "airmine/cohorts.hpp"
#include "airmine/ingest.hpp"
#include "airmine/model.hpp"
#include "airmine/poi_apps.hpp"

namespace airmine {

struct SynthTower {
  std::string operator_name;
  std::string cell_id;
  Tech tech = Tech::kLTE;
  GeoPoint position;
  double radius_km = 1.0;
};

struct AppProfile {
  std::string app_id;
  std::int64_t heavy_users = 0;  // planted with > 100 invocations
  std::int64_t light_users = 0;  // planted with 1..100 invocations
  double mall_rate_per_week = 0.0;
};

struct SynthConfig {
  std::uint64_t seed = 1;
  std::int64_t n_users = 200;
  int span_days = 60;
  std::int64_t start_day = days_from_civil(2015, 3, 2);  // a Monday
  double utc_offset_hours = -8.0;
  std::string salt = "airmine-synth";

  double fraction_homed = 0.8;
  double fraction_commuters = 0.25;
  double fraction_home_workers = 0.15;
  double fraction_nomads = 0.1;  // the rest of the non-homed users are sporadic

  double gps_jitter_m = 10.0;
  int obs_interval_min = 10;
  bool boundary_stress = false;

  // District layout: a grid of square towns, `district_cells` anchor cells
  // on a side, anchored at the origin cell; some towns hold one nested
  // neighborhood.
  double anchor_resolution = 0.001;
  std::int64_t origin_lat_index = 34000;
  std::int64_t origin_lon_index = -118400;
  int district_rows = 6;
  int district_cols = 6;
  int district_cells = 20;
  int n_neighborhoods = 4;

  // Thresholds the ground truth is derived with (pipeline defaults).
  double poor_income_max = 45000.0;
  double rich_income_min = 75000.0;
  std::int64_t district_population_min = 5000;
  int consistent_min_days = 30;
  int consistent_max_gap_days = 7;
  int home_min_nights = 15;
  int work_min_workdays = 30;

  std::vector<SynthTower> towers;  // empty: automatic layout
  int towers_per_operator = 6;
  std::vector<Poi> pois;  // empty: automatic layout
  int n_malls = 6;
  int n_fastfood = 8;

  std::vector<AppProfile> app_profiles{{"pinterest", 30, 12, 3.0},
                                       {"yahoo_sports", 32, 12, 1.8}};
  double base_mall_rate_per_week = 0.5;
  double fastfood_rate_per_week = 1.0;
  double mall_minutes_lo = 20.0, mall_minutes_hi = 114.0;
  double fastfood_minutes_lo = 10.0, fastfood_minutes_hi = 38.0;
  double work_hours_poor = 9.0;
  double work_hours_middle = 8.0;
  double work_hours_rich = 7.0;
  double work_hours_spread = 0.5;

  int app_span_days = 28;
  double app_coverage = 0.9;
  std::int64_t app_only_users = 10;
  double cellular_share = 0.75;

  /// Throws InvalidInput describing the first inconsistency.
  void validate() const;
};

/// Applies key=value pairs (same names as the fields; `tower=`, `poi=` and
/// `app=` lines are repeatable). Throws InvalidInput on unknown keys.
void apply_synth_config(SynthConfig& cfg, const std::multimap<std::string, std::string>& kv);
SynthConfig load_synth_config(const std::string& path);

enum class UserKind { kCommuter, kHomeWorker, kResident, kNomad, kSporadic };
std::string_view to_string(UserKind k);

struct UserTruth {
  UidHash uid;
  std::int64_t index = 0;
  UserKind kind = UserKind::kResident;
  bool consistent = false;
  std::optional<GridCell> planted_home;  // where the user sleeps, if anywhere
  std::optional<GridCell> home;          // what detection must return
  std::optional<GridCell> work;
  std::optional<std::string> district;   // smallest eligible district of `home`
  std::optional<double> income;
  CohortLabel cohort = CohortLabel::kUnassigned;
  bool commuter = false;
  bool in_app_data = false;
  std::set<std::string> communities;     // heavy-user memberships
  std::optional<double> work_hours_mean; // planted mean, commuters only
  double mall_rate_per_week = 0.0;
};

struct PlantedVisit {
  UidHash uid;
  std::string poi_id;
  PoiCategory category = PoiCategory::kOther;
  std::int64_t start = 0;
  std::int64_t end = 0;
};

struct GroundTruth {
  std::vector<UserTruth> users;  // sorted by uid
  std::vector<PlantedVisit> visits;
  std::vector<SynthTower> towers;
  std::map<std::string, std::set<UidHash>> communities;
  std::int64_t app_only_users = 0;

  const UserTruth* find(const UidHash& uid) const;
};

struct SynthOutput {
  SynthConfig config;
  LocationData location;
  AppData app;
  std::vector<CensusDistrict> census;
  std::vector<Poi> pois;
  GroundTruth truth;
};

/// Deterministic in cfg (any `threads`). Every user draws from its own
/// stream derived from (seed, user index).
SynthOutput generate(const SynthConfig& cfg, int threads = 1);

/// Writes location.csv, app.csv, census.csv, pois.csv, truth.json and
/// pipeline.cfg (utc_offset for the analysis side) into `dir`.
void write_synth(const std::string& dir, const SynthOutput& out);

/// Uniform point in a disc of `radius_km` around `center` (local flat-earth
/// offset), for planting tower observations.
GeoPoint uniform_in_disc(const GeoPoint& center, double radius_km, std::mt19937_64& rng);

/// Seeds one stream per (seed, stream id) pair.
std::mt19937_64 derive_stream(std::uint64_t seed, std::uint64_t stream);

/// Uniform double in [0, 1) from 53 random bits.
double unit_uniform(std::mt19937_64& rng);

}  // namespace airmine
