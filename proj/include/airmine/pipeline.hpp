#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "airmine/anchors.hpp"
#include "airmine/cohorts.hpp"
#include "airmine/ingest.hpp"
#include "airmine/model.hpp"
#include "airmine/poi_apps.hpp"
#include "airmine/privacy_report.hpp"
#include "airmine/towers.hpp"

namespace airmine {

inline constexpr std::string_view kToolVersion = "airmine 0.1.0";

struct StageCount {
  std::string stage;
  std::int64_t rows = 0;
  friend bool operator==(const StageCount&, const StageCount&) = default;
};

struct ReportCount {
  std::string name;
  std::int64_t rows = 0;
  std::int64_t suppressed = 0;
};

struct RunManifest {
  std::string tool_version{kToolVersion};
  std::string config_hash;
  int k = 0;
  std::vector<std::string> inputs;
  IngestStats location;
  IngestStats app;
  std::int64_t census_districts = 0;
  std::int64_t pois = 0;
  std::vector<StageCount> funnel;  // user-level reduction chain, nonincreasing
  std::vector<StageCount> stages;  // other stage table sizes
  std::vector<ReportCount> reports;
  std::string failed_stage;

  std::string to_json() const;
};

/// Raised when a stage fails; carries the manifest up to that point.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what, RunManifest manifest);
  const std::string& stage() const { return stage_; }
  const RunManifest& manifest() const { return manifest_; }

 private:
  std::string stage_;
  RunManifest manifest_;
};

struct Dataset {
  LocationData location;
  AppData app;
  std::vector<CensusDistrict> census;
  std::vector<Poi> pois;
};

struct AnalysisOptions {
  int threads = 1;
  std::vector<std::string> apps;  // empty: every app id in the app data
};

struct AnalysisResult {
  RunManifest manifest;
  std::vector<UserAnchors> anchors;
  std::map<UidHash, CohortAssignment> cohorts;
  std::vector<Visit> visits;
  std::vector<AppCommunity> communities;
  TowerMap towers;
  std::vector<Report> reports;
};

/// Runs every analysis stage over an in-memory dataset. Analysis is free of
/// randomness and independent of opts.threads.
AnalysisResult analyze(const Dataset& data, const PipelineConfig& cfg, const AnalysisOptions& opts);

struct PipelineInputs {
  std::vector<std::string> location_files;
  std::vector<std::string> app_files;
  std::optional<std::string> location_store;
  std::optional<std::string> app_store;
  std::optional<std::string> census_file;
  std::optional<std::string> pois_file;
};

/// Files that do not exist count as empty inputs.
PipelineInputs inputs_from_dir(const std::string& dir);

Dataset load_dataset(const PipelineInputs& in, const std::optional<std::string>& salt,
                     int threads);

/// Writes stages/*.csv, reports/<name>.{csv,json} and manifest.json.
void write_outputs(const std::string& out_dir, const AnalysisResult& result, ReportFormat format);

/// load_dataset + analyze + write_outputs. Throws StageError naming the
/// failing stage; manifest.json is written with what was known by then.
RunManifest run_pipeline(const PipelineInputs& in, const PipelineConfig& cfg,
                         const std::optional<std::string>& salt, const AnalysisOptions& opts,
                         const std::string& out_dir, ReportFormat format);

// Report builders shared with the single-stage subcommands. `base` carries
// name-independent metadata (config hash, k, input counts).

ReportMeta base_meta(const PipelineConfig& cfg, const IngestStats& location,
                     const IngestStats& app);

Report funnel_report(const ReportMeta& base, const std::vector<StageCount>& funnel);

/// Cohort shares among `population` (users with an assigned district).
Report cohort_report(const ReportMeta& base, const std::map<UidHash, CohortAssignment>& cohorts,
                     const std::set<UidHash>& population);

Report commuter_report(const ReportMeta& base, const std::map<UidHash, CohortAssignment>& cohorts,
                       const std::set<UidHash>& commuters);

std::vector<Report> work_hours_reports(const ReportMeta& base,
                                       const std::map<std::string, HoursHistogram>& by_cohort);

std::vector<Report> visit_reports(const ReportMeta& base, const std::vector<Visit>& visits);

std::vector<Report> community_reports(const ReportMeta& base,
                                      const std::vector<AppCommunity>& communities,
                                      const std::vector<Visit>& visits, double span_weeks);

Report weekday_report(const ReportMeta& base, const WeekdayHistogram& hist);

/// towers, distances, cdf and opcounts, in that order.
std::vector<Report> tower_reports(const ReportMeta& base, std::span<const UserAppTrace> users,
                                  const TowerMap& towers);

}  // namespace airmine
