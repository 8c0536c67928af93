#include "airmine/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "airmine/config.hpp"
#include "airmine/text.hpp"

namespace airmine {

namespace fs = std::filesystem;

namespace {

using Json = nlohmann::ordered_json;

constexpr const char* kWeekdayKeys[] = {"1_mon", "2_tue", "3_wed", "4_thu",
                                        "5_fri", "6_sat", "7_sun"};

Json stats_json(const IngestStats& s) {
  Json j;
  j["lines_in"] = s.lines_in;
  j["parsed"] = s.parsed;
  j["rejected_total"] = s.rejected_total();
  Json r = Json::object();
  for (const auto& [kind, n] : s.rejected) r[std::string(to_string(kind))] = n;
  j["rejected"] = r;
  return j;
}

ReportMeta named(const ReportMeta& base, std::string name) {
  ReportMeta m = base;
  m.name = std::move(name);
  m.suppressed_rows = 0;
  return m;
}

std::string fixed(const char* fmt, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

double median_of(std::vector<double> v) { return v.empty() ? 0.0 : quantile(std::move(v), 0.5); }

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

StageError::StageError(std::string stage, const std::string& what, RunManifest manifest)
    : std::runtime_error("stage " + stage + " failed: " + what),
      stage_(std::move(stage)),
      manifest_(std::move(manifest)) {
  manifest_.failed_stage = stage_;
}

std::string RunManifest::to_json() const {
  Json j;
  j["tool_version"] = tool_version;
  j["config_hash"] = config_hash;
  j["k"] = k;
  j["inputs"] = inputs;
  j["ingest"] = {{"location", stats_json(location)}, {"app", stats_json(app)}};
  j["census_districts"] = census_districts;
  j["pois"] = pois;
  Json f = Json::array();
  for (const auto& s : funnel) f.push_back({{"stage", s.stage}, {"users", s.rows}});
  j["funnel"] = f;
  Json st = Json::array();
  for (const auto& s : stages) st.push_back({{"stage", s.stage}, {"rows", s.rows}});
  j["stages"] = st;
  Json rp = Json::array();
  for (const auto& r : reports) {
    rp.push_back({{"name", r.name}, {"rows", r.rows}, {"suppressed_rows", r.suppressed}});
  }
  j["reports"] = rp;
  if (!failed_stage.empty()) j["failed_stage"] = failed_stage;
  return j.dump(1) + "\n";
}

// ---- report builders -------------------------------------------------------

ReportMeta base_meta(const PipelineConfig& cfg, const IngestStats& location,
                     const IngestStats& app) {
  ReportMeta m;
  m.config_hash = config_hash(cfg);
  m.k = cfg.k_anonymity;
  m.input_counts = {{"app_lines", app.lines_in},
                    {"app_parsed", app.parsed},
                    {"app_rejected", app.rejected_total()},
                    {"location_lines", location.lines_in},
                    {"location_parsed", location.parsed},
                    {"location_rejected", location.rejected_total()}};
  return m;
}

Report funnel_report(const ReportMeta& base, const std::vector<StageCount>& funnel) {
  std::vector<AggregateRow> rows;
  for (std::size_t i = 0; i < funnel.size(); ++i) {
    if (funnel[i].rows == 0) continue;
    char prefix[8];
    std::snprintf(prefix, sizeof prefix, "%zu_", i + 1);
    rows.push_back({{{"stage", prefix + funnel[i].stage}}, funnel[i].rows, {}});
  }
  return make_report(named(base, "funnel"), {"stage"}, {}, std::move(rows));
}

Report cohort_report(const ReportMeta& base, const std::map<UidHash, CohortAssignment>& cohorts,
                     const std::set<UidHash>& population) {
  std::map<CohortLabel, std::int64_t> counts;
  for (const auto& uid : population) {
    auto it = cohorts.find(uid);
    if (it != cohorts.end()) ++counts[it->second.label];
  }
  const auto denom = static_cast<std::int64_t>(population.size());
  std::vector<AggregateRow> rows;
  for (auto label : {CohortLabel::kPoor, CohortLabel::kMiddle, CohortLabel::kRich}) {
    if (counts[label] == 0) continue;
    rows.push_back({{{"cohort", std::string(to_string(label))}},
                    counts[label],
                    {{"share_pct", share_percent(counts[label], denom)}}});
  }
  return make_report(named(base, "cohorts"), {"cohort"}, {"share_pct"}, std::move(rows));
}

Report commuter_report(const ReportMeta& base, const std::map<UidHash, CohortAssignment>& cohorts,
                       const std::set<UidHash>& commuters) {
  std::map<CohortLabel, std::int64_t> counts;
  for (const auto& uid : commuters) {
    auto it = cohorts.find(uid);
    counts[it != cohorts.end() ? it->second.label : CohortLabel::kUnassigned]++;
  }
  const auto denom = static_cast<std::int64_t>(commuters.size());
  std::vector<AggregateRow> rows;
  for (const auto& [label, n] : counts) {
    rows.push_back({{{"cohort", std::string(to_string(label))}},
                    n,
                    {{"share_pct", share_percent(n, denom)}}});
  }
  return make_report(named(base, "commuters"), {"cohort"}, {"share_pct"}, std::move(rows));
}

std::vector<Report> work_hours_reports(const ReportMeta& base,
                                       const std::map<std::string, HoursHistogram>& by_cohort) {
  std::vector<AggregateRow> bins;
  std::vector<AggregateRow> summary;
  for (const auto& [cohort, h] : by_cohort) {
    for (int b = 0; b < HoursHistogram::kBins; ++b) {
      const auto n = h.counts[static_cast<std::size_t>(b)];
      if (n == 0) continue;
      bins.push_back({{{"cohort", cohort}, {"hours_from", fixed("%04.1f", b * HoursHistogram::kBinWidth)}},
                      n,
                      {}});
    }
    if (h.empty()) continue;
    summary.push_back({{{"cohort", cohort}},
                       static_cast<std::int64_t>(h.values.size()),
                       {{"mean_hours", h.mean()}, {"median_hours", median_of(h.values)}}});
  }
  return {make_report(named(base, "work_hours"), {"cohort", "hours_from"}, {}, std::move(bins)),
          make_report(named(base, "work_hours_summary"), {"cohort"},
                      {"mean_hours", "median_hours"}, std::move(summary))};
}

std::vector<Report> visit_reports(const ReportMeta& base, const std::vector<Visit>& visits) {
  struct Acc {
    std::set<UidHash> uids;
    std::vector<double> minutes;
  };
  std::map<std::pair<std::string, std::string>, Acc> per_poi;
  std::map<std::string, Acc> per_cat;
  for (const auto& v : visits) {
    const std::string cat(to_string(v.category));
    auto& a = per_poi[{cat, v.poi_id}];
    a.uids.insert(v.uid);
    a.minutes.push_back(v.duration_min);
    auto& c = per_cat[cat];
    c.uids.insert(v.uid);
    c.minutes.push_back(v.duration_min);
  }
  std::vector<AggregateRow> poi_rows;
  for (const auto& [key, a] : per_poi) {
    poi_rows.push_back({{{"category", key.first}, {"poi_id", key.second}},
                        static_cast<std::int64_t>(a.uids.size()),
                        {{"visits", static_cast<double>(a.minutes.size())},
                         {"mean_duration_min", mean_of(a.minutes)}}});
  }
  std::vector<AggregateRow> cat_rows;
  for (const auto& [cat, a] : per_cat) {
    cat_rows.push_back({{{"category", cat}},
                        static_cast<std::int64_t>(a.uids.size()),
                        {{"visits", static_cast<double>(a.minutes.size())},
                         {"mean_duration_min", mean_of(a.minutes)},
                         {"median_duration_min", median_of(a.minutes)}}});
  }
  return {make_report(named(base, "visits_by_poi"), {"category", "poi_id"},
                      {"visits", "mean_duration_min"}, std::move(poi_rows)),
          make_report(named(base, "visits_by_category"), {"category"},
                      {"visits", "mean_duration_min", "median_duration_min"}, std::move(cat_rows))};
}

std::vector<Report> community_reports(const ReportMeta& base,
                                      const std::vector<AppCommunity>& communities,
                                      const std::vector<Visit>& visits, double span_weeks) {
  std::vector<Visit> mall_visits;
  std::set<UidHash> mall_visitors;
  for (const auto& v : visits) {
    if (v.category != PoiCategory::kMall) continue;
    mall_visits.push_back(v);
    mall_visitors.insert(v.uid);
  }
  std::vector<AggregateRow> members;
  std::vector<AggregateRow> joined;
  for (const auto& c : communities) {
    if (c.members.empty()) continue;
    std::vector<std::pair<std::string, double>> metrics{{"mean_mall_visits_per_week", 0.0},
                                                        {"median_mall_visits_per_week", 0.0}};
    if (span_weeks > 0.0) {
      const auto rates = community_visit_rates(c, mall_visits, span_weeks);
      metrics = {{"mean_mall_visits_per_week", rates.mean},
                 {"median_mall_visits_per_week", rates.median}};
    }
    members.push_back({{{"app_id", c.app_id}},
                       static_cast<std::int64_t>(c.members.size()),
                       std::move(metrics)});
    std::int64_t both = 0;
    for (const auto& uid : c.members) both += mall_visitors.count(uid) ? 1 : 0;
    if (both > 0) joined.push_back({{{"app_id", c.app_id}}, both, {}});
  }
  return {make_report(named(base, "communities"), {"app_id"},
                      {"mean_mall_visits_per_week", "median_mall_visits_per_week"},
                      std::move(members)),
          make_report(named(base, "community_mall_visitors"), {"app_id"}, {}, std::move(joined))};
}

Report weekday_report(const ReportMeta& base, const WeekdayHistogram& hist) {
  std::vector<AggregateRow> rows;
  for (int d = 0; d < 7; ++d) {
    const auto n = hist.active[static_cast<std::size_t>(d)];
    if (n == 0) continue;
    rows.push_back({{{"weekday", kWeekdayKeys[d]}}, n, {{"percent", hist.percent(d)}}});
  }
  return make_report(named(base, "weekday"), {"weekday"}, {"percent"}, std::move(rows));
}

std::vector<Report> tower_reports(const ReportMeta& base, std::span<const UserAppTrace> users,
                                  const TowerMap& towers) {
  std::vector<AggregateRow> tower_rows;
  std::map<OperatorTech, std::set<std::size_t>> group_uids;
  for (const auto& [key, est] : towers) {
    tower_rows.push_back({{{"operator", key.operator_name},
                           {"cell_id", key.cell_id},
                           {"tech", std::string(to_string(est.tech))}},
                          est.distinct_uids,
                          {{"lat", est.position.lat},
                           {"lon", est.position.lon},
                           {"n_obs", static_cast<double>(est.n_obs)},
                           {"bbox_diag_km", est.bbox_diag_km}}});
  }
  const auto samples = distance_samples(users, towers);
  const auto edges = default_cdf_edges();
  std::vector<AggregateRow> dist_rows;
  std::vector<AggregateRow> cdf_rows;
  for (const auto& [g, group] : samples) {
    const std::string tech(to_string(g.second));
    dist_rows.push_back({{{"operator", g.first}, {"tech", tech}},
                         group.distinct_uids,
                         {{"samples", static_cast<double>(group.km.size())},
                          {"mean_km", mean_of(group.km)},
                          {"median_km", quantile(group.km, 0.5)},
                          {"p95_km", quantile(group.km, 0.95)}}});
    for (const auto& [edge, frac] : empirical_cdf(group.km, edges)) {
      cdf_rows.push_back({{{"operator", g.first}, {"tech", tech}, {"edge_km", fixed("%09.5f", edge)}},
                          group.distinct_uids,
                          {{"fraction", frac}}});
    }
  }
  // Distinct uids behind each operator x tech cell census.
  std::map<TowerKey, std::set<std::size_t>> cell_uids;
  for (std::size_t u = 0; u < users.size(); ++u) {
    for (const auto& ev : users[u].events) {
      if (ev.cell_id) cell_uids[{ev.operator_name, *ev.cell_id}].insert(u);
    }
  }
  for (const auto& [key, uids] : cell_uids) {
    auto it = towers.find(key);
    if (it == towers.end()) continue;
    group_uids[{key.operator_name, it->second.tech}].insert(uids.begin(), uids.end());
  }
  std::vector<AggregateRow> op_rows;
  for (const auto& [g, n] : cells_per_operator(towers)) {
    op_rows.push_back({{{"operator", g.first}, {"tech", std::string(to_string(g.second))}},
                       static_cast<std::int64_t>(group_uids[g].size()),
                       {{"cells", static_cast<double>(n)}}});
  }
  return {make_report(named(base, "towers"), {"operator", "cell_id", "tech"},
                      {"lat", "lon", "n_obs", "bbox_diag_km"}, std::move(tower_rows)),
          make_report(named(base, "distances"), {"operator", "tech"},
                      {"samples", "mean_km", "median_km", "p95_km"}, std::move(dist_rows)),
          make_report(named(base, "cdf"), {"operator", "tech", "edge_km"}, {"fraction"},
                      std::move(cdf_rows)),
          make_report(named(base, "opcounts"), {"operator", "tech"}, {"cells"},
                      std::move(op_rows))};
}

// ---- analysis --------------------------------------------------------------

AnalysisResult analyze(const Dataset& data, const PipelineConfig& cfg,
                       const AnalysisOptions& opts) {
  cfg.validate();
  AnalysisResult r;
  RunManifest& m = r.manifest;
  m.config_hash = config_hash(cfg);
  m.k = cfg.k_anonymity;
  m.location = data.location.stats;
  m.app = data.app.stats;
  m.census_districts = static_cast<std::int64_t>(data.census.size());
  m.pois = static_cast<std::int64_t>(data.pois.size());
  const ReportMeta base = base_meta(cfg, data.location.stats, data.app.stats);
  const int threads = opts.threads;

  auto stage = [&](const char* name, auto&& fn) {
    try {
      fn();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, e.what(), m);
    }
  };
  auto add_reports = [&](std::vector<Report> reps) {
    for (auto& rep : reps) {
      m.reports.push_back({rep.meta.name, static_cast<std::int64_t>(rep.rows.size()),
                           rep.meta.suppressed_rows});
      r.reports.push_back(std::move(rep));
    }
  };

  const auto& loc_users = data.location.users;
  const auto& app_users = data.app.users;

  stage("anchors", [&] {
    r.anchors = compute_anchors(loc_users, cfg, threads);
    m.stages.push_back({"anchors", static_cast<std::int64_t>(r.anchors.size())});
  });

  std::vector<CensusDistrict> eligible;
  stage("cohorts", [&] {
    eligible = filter_districts(data.census, cfg);
    m.stages.push_back({"census_eligible", static_cast<std::int64_t>(eligible.size())});
    const DistrictIndex index(eligible);
    r.cohorts = assign_cohorts(r.anchors, index, cfg);
    m.stages.push_back({"cohorts", static_cast<std::int64_t>(r.cohorts.size())});
  });

  // Funnel: location users, joined with app users (skipped without app
  // data), consistent, homed, district-assigned, with work, commuters.
  std::set<UidHash> app_uids;
  for (const auto& u : app_users) app_uids.insert(u.uid);
  std::set<UidHash> district_set;
  std::set<UidHash> commuter_set;
  std::vector<UserAnchors> funnel_commuters;
  {
    std::int64_t n_loc = 0, n_join = 0, n_cons = 0, n_home = 0, n_dist = 0, n_work = 0, n_comm = 0;
    for (const auto& a : r.anchors) {
      ++n_loc;
      if (!app_uids.empty() && !app_uids.count(a.uid)) continue;
      ++n_join;
      if (!a.is_consistent) continue;
      ++n_cons;
      if (!a.home) continue;
      ++n_home;
      auto c = r.cohorts.find(a.uid);
      if (c == r.cohorts.end() || !c->second.district_id) continue;
      ++n_dist;
      district_set.insert(a.uid);
      if (!a.work) continue;
      ++n_work;
      if (!a.is_commuter) continue;
      ++n_comm;
      commuter_set.insert(a.uid);
      funnel_commuters.push_back(a);
    }
    m.funnel = {{"location_users", n_loc}, {"joined", n_join},      {"consistent", n_cons},
                {"homed", n_home},         {"district", n_dist},    {"with_work", n_work},
                {"commuters", n_comm}};
  }

  add_reports({funnel_report(base, m.funnel), cohort_report(base, r.cohorts, district_set),
               commuter_report(base, r.cohorts, commuter_set)});

  stage("work_hours", [&] {
    std::map<UidHash, std::string> cohort_of;
    for (const auto& uid : commuter_set) {
      cohort_of[uid] = std::string(to_string(r.cohorts.at(uid).label));
    }
    add_reports(work_hours_reports(
        base, work_hours_distribution(funnel_commuters, loc_users, cohort_of, cfg)));
  });

  stage("poi", [&] {
    const PoiIndex index(data.pois);
    r.visits = detect_all_visits(loc_users, index, cfg, threads);
    m.stages.push_back({"visits", static_cast<std::int64_t>(r.visits.size())});
    add_reports(visit_reports(base, r.visits));
  });

  stage("community", [&] {
    std::vector<std::string> apps = opts.apps;
    if (apps.empty()) {
      std::set<std::string> seen;
      for (const auto& u : app_users) {
        for (const auto& ev : u.events) seen.insert(ev.app_id);
      }
      apps.assign(seen.begin(), seen.end());
    }
    for (const auto& app : apps) {
      r.communities.push_back(extract_app_community(app_users, app, cfg.app_min_invocations));
      m.stages.push_back({"community_" + app,
                          static_cast<std::int64_t>(r.communities.back().members.size())});
    }
    add_reports(community_reports(base, r.communities, r.visits, study_span_weeks(loc_users)));
    add_reports({weekday_report(base, weekday_histogram(loc_users, cfg))});
  });

  stage("towers", [&] {
    r.towers = estimate_towers(app_users, threads);
    m.stages.push_back({"towers", static_cast<std::int64_t>(r.towers.size())});
    add_reports(tower_reports(base, app_users, r.towers));
  });
  return r;
}

// ---- I/O -------------------------------------------------------------------

PipelineInputs inputs_from_dir(const std::string& dir) {
  PipelineInputs in;
  const fs::path d(dir);
  auto pick = [&](const char* name) -> std::optional<std::string> {
    if (fs::is_regular_file(d / name)) return (d / name).string();
    return std::nullopt;
  };
  if (auto p = pick("location.csv")) in.location_files.push_back(*p);
  if (auto p = pick("app.csv")) in.app_files.push_back(*p);
  in.census_file = pick("census.csv");
  in.pois_file = pick("pois.csv");
  return in;
}

Dataset load_dataset(const PipelineInputs& in, const std::optional<std::string>& salt,
                     int threads) {
  Dataset d;
  if (in.location_store) {
    d.location = read_location_store(*in.location_store, threads);
  } else {
    d.location = ingest_location_files(in.location_files, salt, threads);
  }
  if (in.app_store) {
    d.app = read_app_store(*in.app_store, threads);
  } else {
    d.app = ingest_app_files(in.app_files, salt, threads);
  }
  if (in.census_file) d.census = load_census_csv(*in.census_file);
  if (in.pois_file) d.pois = load_pois_csv(*in.pois_file);
  return d;
}

namespace {

void write_text(const fs::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << body;
  if (!out) throw std::runtime_error("write failed for " + p.string());
}

std::vector<std::string> input_list(const PipelineInputs& in) {
  std::vector<std::string> v;
  for (const auto& f : in.location_files) v.push_back("location:" + f);
  if (in.location_store) v.push_back("location_store:" + *in.location_store);
  for (const auto& f : in.app_files) v.push_back("app:" + f);
  if (in.app_store) v.push_back("app_store:" + *in.app_store);
  if (in.census_file) v.push_back("census:" + *in.census_file);
  if (in.pois_file) v.push_back("pois:" + *in.pois_file);
  return v;
}

}  // namespace

void write_outputs(const std::string& out_dir, const AnalysisResult& result, ReportFormat format) {
  const fs::path root(out_dir);
  fs::create_directories(root / "stages");
  fs::create_directories(root / "reports");
  write_anchors_csv((root / "stages" / "anchors.csv").string(), result.anchors);
  write_cohorts_csv((root / "stages" / "cohorts.csv").string(), result.cohorts);
  write_visits_csv((root / "stages" / "visits.csv").string(), result.visits);
  for (const auto& c : result.communities) {
    write_community_csv((root / "stages" / ("community_" + c.app_id + ".csv")).string(), c);
  }
  const char* ext = format == ReportFormat::kCsv ? ".csv" : ".json";
  for (const auto& rep : result.reports) {
    emit_report((root / "reports" / (rep.meta.name + ext)).string(), rep, format);
  }
  write_text(root / "manifest.json", result.manifest.to_json());
}

RunManifest run_pipeline(const PipelineInputs& in, const PipelineConfig& cfg,
                         const std::optional<std::string>& salt, const AnalysisOptions& opts,
                         const std::string& out_dir, ReportFormat format) {
  RunManifest partial;
  partial.config_hash = config_hash(cfg);
  partial.k = cfg.k_anonymity;
  partial.inputs = input_list(in);
  auto fail = [&](const std::string& stage, const std::string& what, RunManifest m) -> StageError {
    m.failed_stage = stage;
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "manifest.json", m.to_json());
    return StageError(stage, what, std::move(m));
  };

  Dataset data;
  try {
    data = load_dataset(in, salt, opts.threads);
  } catch (const std::exception& e) {
    throw fail("ingest", e.what(), partial);
  }
  AnalysisResult result;
  try {
    result = analyze(data, cfg, opts);
  } catch (const StageError& e) {
    RunManifest m = e.manifest();
    m.inputs = partial.inputs;
    throw fail(e.stage(), e.what(), std::move(m));
  }
  result.manifest.inputs = partial.inputs;
  try {
    write_outputs(out_dir, result, format);
  } catch (const std::exception& e) {
    throw fail("output", e.what(), result.manifest);
  }
  return result.manifest;
}

}  // namespace airmine
