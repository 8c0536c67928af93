#include "airmine/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "airmine/parallel.hpp"
#include "airmine/text.hpp"

namespace airmine {

std::vector<DwellInterval> build_dwell_intervals(std::span<const Fix> fixes,
                                                 const PipelineConfig& cfg) {
  std::vector<DwellInterval> out;
  const std::int64_t gap_max = cfg.dwell_gap_max_s();
  for (std::size_t i = 0; i < fixes.size(); ++i) {
    if (i > 0 && fixes[i].t < fixes[i - 1].t) {
      throw ContractViolation("build_dwell_intervals: fixes not sorted by time");
    }
    const GridCell cell = quantize(fixes[i].pos, cfg.anchor_resolution);
    if (!out.empty()) {
      DwellInterval& cur = out.back();
      if (cur.cell == cell && fixes[i].t - cur.end <= gap_max) {
        cur.end = fixes[i].t;
        ++cur.n_obs;
        continue;
      }
    }
    out.push_back({cell, fixes[i].t, fixes[i].t, 1});
  }
  return out;
}

std::set<std::int64_t> observed_days(std::span<const Fix> fixes, const PipelineConfig& cfg) {
  std::set<std::int64_t> days;
  const auto off = cfg.utc_offset_s();
  for (const auto& f : fixes) days.insert(local_day(to_local_seconds(f.t, off)));
  return days;
}

bool is_consistent(const std::set<std::int64_t>& days, const PipelineConfig& cfg) {
  if (static_cast<std::int64_t>(days.size()) <= cfg.consistent_min_days) return false;
  std::int64_t prev = *days.begin();
  for (auto d : days) {
    if (d - prev - 1 > cfg.consistent_max_gap_days) return false;
    prev = d;
  }
  return true;
}

std::set<UidHash> filter_consistent(const std::map<UidHash, std::set<std::int64_t>>& coverage,
                                    const PipelineConfig& cfg) {
  std::set<UidHash> kept;
  for (const auto& [uid, days] : coverage) {
    if (is_consistent(days, cfg)) kept.insert(uid);
  }
  return kept;
}

WindowTally tally_window(std::span<const DwellInterval> intervals, const DailyWindow& window,
                         bool weekdays_only, const PipelineConfig& cfg) {
  WindowTally tally;
  const auto off = cfg.utc_offset_s();
  for (const auto& iv : intervals) {
    if (iv.end <= iv.start) continue;
    const std::int64_t b = to_local_seconds(iv.start, off);
    const std::int64_t e = to_local_seconds(iv.end, off);
    // A wrapping window attributed to day d reaches into day d+1.
    for (std::int64_t d = local_day(b) - 1; d <= local_day(e); ++d) {
      if (weekdays_only && !is_weekday_mon_fri(d)) continue;
      const std::int64_t s = window_overlap(b, e, d, window);
      if (s > 0) tally[iv.cell][d] += s;
    }
  }
  return tally;
}

std::optional<GridCell> select_anchor(const WindowTally& tally, std::int64_t min_seconds,
                                      int min_days) {
  std::optional<GridCell> best;
  std::int64_t best_days = 0;
  std::int64_t best_total = 0;
  // Map iteration is in (lat_index, lon_index) order, so strict comparisons
  // leave the smallest cell in place on a full tie.
  for (const auto& [cell, per_day] : tally) {
    std::int64_t days = 0;
    std::int64_t total = 0;
    for (const auto& [day, secs] : per_day) {
      total += secs;
      if (secs >= min_seconds) ++days;
    }
    if (days < min_days) continue;
    if (!best || days > best_days || (days == best_days && total > best_total)) {
      best = cell;
      best_days = days;
      best_total = total;
    }
  }
  return best;
}

namespace {

std::int64_t hours_to_s(double h) { return static_cast<std::int64_t>(std::ceil(h * 3600.0)); }

}  // namespace

std::optional<GridCell> detect_home(std::span<const DwellInterval> intervals,
                                    const PipelineConfig& cfg) {
  return select_anchor(tally_window(intervals, cfg.night_window, false, cfg),
                       hours_to_s(cfg.home_min_hours_per_night), cfg.home_min_nights);
}

std::optional<GridCell> detect_work(std::span<const DwellInterval> intervals,
                                    const PipelineConfig& cfg) {
  return select_anchor(tally_window(intervals, cfg.workday_window, true, cfg),
                       hours_to_s(cfg.work_min_hours_per_day), cfg.work_min_workdays);
}

void classify_commuters(std::vector<UserAnchors>& anchors) {
  for (auto& a : anchors) a.is_commuter = a.home && a.work && !(*a.home == *a.work);
}

std::vector<UserAnchors> compute_anchors(std::span<const UserTrace> users,
                                         const PipelineConfig& cfg, int threads) {
  std::vector<UserAnchors> out(users.size());
  parallel_for(users.size(), threads, [&](std::size_t i) {
    const UserTrace& u = users[i];
    UserAnchors& a = out[i];
    a.uid = u.uid;
    a.is_consistent = !u.fixes.empty() && is_consistent(observed_days(u.fixes, cfg), cfg);
    if (!a.is_consistent) return;
    const auto intervals = build_dwell_intervals(u.fixes, cfg);
    a.home = detect_home(intervals, cfg);
    a.work = detect_work(intervals, cfg);
  });
  classify_commuters(out);
  return out;
}

std::optional<double> mean_daily_work_hours(std::span<const DwellInterval> intervals,
                                            const GridCell& work, const PipelineConfig& cfg) {
  const auto tally = tally_window(intervals, cfg.workday_window, true, cfg);
  auto it = tally.find(work);
  if (it == tally.end() || it->second.empty()) return std::nullopt;
  std::int64_t total = 0;
  for (const auto& [day, secs] : it->second) total += secs;
  return static_cast<double>(total) / 3600.0 / static_cast<double>(it->second.size());
}

std::int64_t HoursHistogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

double HoursHistogram::mean() const {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) /
         static_cast<double>(values.size());
}

HoursHistogram work_hours_histogram(std::span<const double> per_user_hours) {
  HoursHistogram h;
  for (double v : per_user_hours) {
    auto bin = static_cast<int>(std::floor(std::max(0.0, v) / HoursHistogram::kBinWidth));
    bin = std::min(bin, HoursHistogram::kBins - 1);
    ++h.counts[static_cast<std::size_t>(bin)];
    h.values.push_back(v);
  }
  return h;
}

std::map<std::string, HoursHistogram> work_hours_distribution(
    std::span<const UserAnchors> commuters, std::span<const UserTrace> traces,
    const std::map<UidHash, std::string>& cohort_of, const PipelineConfig& cfg) {
  std::map<std::string, std::vector<double>> per_cohort;
  for (const auto& a : commuters) {
    if (!a.is_commuter || !a.work) continue;
    auto c = cohort_of.find(a.uid);
    if (c == cohort_of.end()) continue;
    auto t = std::lower_bound(traces.begin(), traces.end(), a.uid,
                              [](const UserTrace& u, const UidHash& id) { return u.uid < id; });
    if (t == traces.end() || !(t->uid == a.uid)) continue;
    const auto intervals = build_dwell_intervals(t->fixes, cfg);
    if (auto h = mean_daily_work_hours(intervals, *a.work, cfg)) {
      per_cohort[c->second].push_back(*h);
    } else {
      per_cohort[c->second];
    }
  }
  std::map<std::string, HoursHistogram> out;
  for (const auto& [cohort, values] : per_cohort) out[cohort] = work_hours_histogram(values);
  return out;
}

// ---- stage table -----------------------------------------------------------

namespace {

constexpr std::string_view kAnchorsHeader =
    "uid,home_lat_idx,home_lon_idx,work_lat_idx,work_lon_idx,is_consistent,is_commuter";

}  // namespace

void write_anchors_csv(const std::string& path, std::span<const UserAnchors> anchors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << kAnchorsHeader << '\n';
  auto cell = [&](const std::optional<GridCell>& c) {
    if (c) {
      out << c->lat_index << ',' << c->lon_index;
    } else {
      out << ',';
    }
  };
  for (const auto& a : anchors) {
    out << a.uid.value() << ',';
    cell(a.home);
    out << ',';
    cell(a.work);
    out << ',' << (a.is_consistent ? 1 : 0) << ',' << (a.is_commuter ? 1 : 0) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<UserAnchors> read_anchors_csv(const std::string& path, double resolution) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open anchors table: " + path);
  std::vector<UserAnchors> out;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string_view> f;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view l = text::trim(line);
    if (l.empty() || l == kAnchorsHeader) continue;
    text::split(l, ',', f);
    auto bad = [&] {
      return std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed anchors row");
    };
    if (f.size() != 7) throw bad();
    UserAnchors a;
    auto uid = UidHash::adopt(f[0]);
    if (!uid) throw bad();
    a.uid = *uid;
    auto read_cell = [&](std::string_view la, std::string_view lo) -> std::optional<GridCell> {
      if (la.empty() && lo.empty()) return std::nullopt;
      auto i = text::to_int(la);
      auto j = text::to_int(lo);
      if (!i || !j) throw bad();
      return GridCell{resolution, *i, *j};
    };
    a.home = read_cell(f[1], f[2]);
    a.work = read_cell(f[3], f[4]);
    a.is_consistent = f[5] == "1";
    a.is_commuter = f[6] == "1";
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace airmine
