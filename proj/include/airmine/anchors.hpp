#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "airmine/ingest.hpp"
#include "airmine/model.hpp"

namespace airmine {

/// Contiguous presence in one anchor-resolution cell. Times are UTC seconds.
struct DwellInterval {
  GridCell cell;
  std::int64_t start = 0;
  std::int64_t end = 0;
  std::int64_t n_obs = 0;

  std::int64_t duration_s() const { return end - start; }
  friend bool operator==(const DwellInterval&, const DwellInterval&) = default;
};

struct UserAnchors {
  UidHash uid;
  std::optional<GridCell> home;
  std::optional<GridCell> work;
  bool is_consistent = false;
  bool is_commuter = false;
};

/// Maximal same-cell runs with inter-observation gaps <= dwell_gap_max.
/// Throws ContractViolation when `fixes` is not sorted by time.
std::vector<DwellInterval> build_dwell_intervals(std::span<const Fix> fixes,
                                                 const PipelineConfig& cfg);

/// Distinct local calendar days (days since epoch) with at least one fix.
std::set<std::int64_t> observed_days(std::span<const Fix> fixes, const PipelineConfig& cfg);

/// Distinct days > consistent_min_days and no run of more than
/// consistent_max_gap_days missing days between consecutive observed days.
bool is_consistent(const std::set<std::int64_t>& days, const PipelineConfig& cfg);

std::set<UidHash> filter_consistent(const std::map<UidHash, std::set<std::int64_t>>& coverage,
                                    const PipelineConfig& cfg);

/// Per-(cell, attribution day) seconds inside a daily window. Interval time
/// is clipped to the window; zero-length intervals contribute nothing.
using WindowTally = std::map<GridCell, std::map<std::int64_t, std::int64_t>>;

WindowTally tally_window(std::span<const DwellInterval> intervals, const DailyWindow& window,
                         bool weekdays_only, const PipelineConfig& cfg);

/// Picks the qualifying cell (>= min_days days with >= min_seconds each) with
/// most qualifying days; ties go to larger total in-window time, then to the
/// lexicographically smallest (lat_index, lon_index).
std::optional<GridCell> select_anchor(const WindowTally& tally, std::int64_t min_seconds,
                                      int min_days);

/// Night criterion: home_min_hours_per_night on home_min_nights nights.
std::optional<GridCell> detect_home(std::span<const DwellInterval> intervals,
                                    const PipelineConfig& cfg);

/// Workday criterion (Mon-Fri, workday_window): work_min_hours_per_day on
/// work_min_workdays days.
std::optional<GridCell> detect_work(std::span<const DwellInterval> intervals,
                                    const PipelineConfig& cfg);

/// Sets is_commuter = home && work && home != work.
void classify_commuters(std::vector<UserAnchors>& anchors);

/// Consistency, home and work for each user; home/work are only searched
/// for consistent users. Output order follows `users`; independent of
/// `threads`.
std::vector<UserAnchors> compute_anchors(std::span<const UserTrace> users,
                                         const PipelineConfig& cfg, int threads);

/// Mean daily in-window hours at `work` over workdays with nonzero presence.
std::optional<double> mean_daily_work_hours(std::span<const DwellInterval> intervals,
                                            const GridCell& work, const PipelineConfig& cfg);

struct HoursHistogram {
  static constexpr double kBinWidth = 0.5;
  static constexpr double kMaxHours = 16.0;
  static constexpr int kBins = 32;

  std::vector<std::int64_t> counts = std::vector<std::int64_t>(kBins, 0);
  std::vector<double> values;  // per-user means, in input order

  std::int64_t total() const;
  double mean() const;  // of `values`; 0 when empty
  bool empty() const { return values.empty(); }
};

/// Bins per-user mean daily work hours into 0.5 h bins on [0, 16); values at
/// or above 16 h land in the last bin.
HoursHistogram work_hours_histogram(std::span<const double> per_user_hours);

/// Per-cohort histograms of commuters' mean daily hours at their work cell.
/// `cohort_of` maps uid to a cohort label; commuters absent from it are
/// skipped.
std::map<std::string, HoursHistogram> work_hours_distribution(
    std::span<const UserAnchors> commuters, std::span<const UserTrace> traces,
    const std::map<UidHash, std::string>& cohort_of, const PipelineConfig& cfg);

/// Stage table (hashed uids):
/// uid,home_lat_idx,home_lon_idx,work_lat_idx,work_lon_idx,is_consistent,is_commuter
void write_anchors_csv(const std::string& path, std::span<const UserAnchors> anchors);
std::vector<UserAnchors> read_anchors_csv(const std::string& path, double resolution);

}  // namespace airmine
