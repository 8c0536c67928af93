#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "airmine/anchors.hpp"
#include "airmine/cohorts.hpp"
#include "airmine/config.hpp"
#include "airmine/ingest.hpp"
#include "airmine/pipeline.hpp"
#include "airmine/poi_apps.hpp"
#include "airmine/privacy_report.hpp"
#include "airmine/synth.hpp"
#include "airmine/text.hpp"
#include "airmine/towers.hpp"

namespace fs = std::filesystem;
using namespace airmine;

namespace {

struct Globals {
  std::string config;
  int threads = 1;
  std::optional<int> k;
  std::optional<std::string> salt;
};

PipelineConfig resolve_config(const Globals& g, const std::string& fallback = {}) {
  PipelineConfig cfg;
  if (!g.config.empty()) {
    cfg = load_config(g.config);
  } else if (!fallback.empty() && fs::is_regular_file(fallback)) {
    cfg = load_config(fallback);
  }
  if (g.k) cfg.k_anonymity = *g.k;
  cfg.validate();
  return cfg;
}

ReportFormat format_for(const std::string& path) {
  return fs::path(path).extension() == ".json" ? ReportFormat::kJson : ReportFormat::kCsv;
}

void emit_all(const std::vector<Report>& reports, const std::string& path) {
  if (path.empty()) return;
  if (reports.size() == 1) {
    emit_report(path, reports.front(), format_for(path));
    return;
  }
  // Several reports: `path` names a stem; each report gets its own suffix.
  const fs::path p(path);
  for (const auto& r : reports) {
    const fs::path out = p.parent_path() / (p.stem().string() + "_" + r.meta.name +
                                            p.extension().string());
    emit_report(out.string(), r, format_for(path));
  }
}

void print_stats(const char* what, const IngestStats& s) {
  std::cerr << what << ": lines=" << s.lines_in << " parsed=" << s.parsed
            << " rejected=" << s.rejected_total();
  for (const auto& [kind, n] : s.rejected) std::cerr << ' ' << to_string(kind) << '=' << n;
  std::cerr << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"airmine: trace mining over location and application records"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "pipeline key=value config file");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::Range(1, 1024));
  app.add_option("--k", g.k, "k-anonymity threshold for reports")->check(CLI::PositiveNumber);
  app.add_option("--salt", g.salt, "hash raw uids with this salt");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic city with ground truth");
  std::string synth_out;
  std::optional<std::uint64_t> synth_seed;
  std::optional<std::int64_t> synth_users;
  std::optional<int> synth_days;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_seed, "override seed");
  synth->add_option("--users", synth_users, "override n_users");
  synth->add_option("--days", synth_days, "override span_days");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "parse raw CSV into a partitioned store");
  std::string ingest_kind;
  std::vector<std::string> ingest_in;
  std::string ingest_out;
  ingest->add_option("--kind", ingest_kind, "location or app")
      ->required()
      ->check(CLI::IsMember({"location", "app"}));
  ingest->add_option("--in", ingest_in, "input CSV files")->required()->check(CLI::ExistingFile);
  ingest->add_option("--out", ingest_out, "store directory")->required();

  // anchors
  auto* anchors = app.add_subcommand("anchors", "detect consistent users, homes and workplaces");
  std::string anchors_store, anchors_out;
  anchors->add_option("--store", anchors_store, "location store")->required()->check(CLI::ExistingDirectory);
  anchors->add_option("--out", anchors_out, "anchors.csv")->required();

  // cohorts
  auto* cohorts = app.add_subcommand("cohorts", "assign homes to census districts and cohorts");
  std::string cohorts_anchors, cohorts_census, cohorts_out, cohorts_report;
  cohorts->add_option("--anchors", cohorts_anchors, "anchors.csv")->required()->check(CLI::ExistingFile);
  cohorts->add_option("--census", cohorts_census, "census CSV")->required()->check(CLI::ExistingFile);
  cohorts->add_option("--out", cohorts_out, "cohorts.csv")->required();
  cohorts->add_option("--report", cohorts_report, "k-suppressed cohort share report");

  // poi
  auto* poi = app.add_subcommand("poi", "detect POI visits");
  std::string poi_store, poi_pois, poi_bounds, poi_out, poi_report;
  poi->add_option("--store", poi_store, "location store")->required()->check(CLI::ExistingDirectory);
  poi->add_option("--pois", poi_pois, "POI CSV")->required()->check(CLI::ExistingFile);
  poi->add_option("--bounds", poi_bounds, "per-category minutes, e.g. mall=10:360,fastfood=5:120");
  poi->add_option("--out", poi_out, "visits.csv")->required();
  poi->add_option("--report", poi_report, "k-suppressed visit report stem");

  // community
  auto* community = app.add_subcommand("community", "extract an app community");
  std::string comm_store, comm_app, comm_out, comm_report, comm_visits;
  std::optional<int> comm_min;
  community->add_option("--store", comm_store, "app store")->required()->check(CLI::ExistingDirectory);
  community->add_option("--app", comm_app, "app id")->required();
  community->add_option("--min", comm_min, "members need more than this many records");
  community->add_option("--out", comm_out, "community.csv")->required();
  community->add_option("--visits", comm_visits, "visits.csv for the mall-visitor join");
  community->add_option("--report", comm_report, "k-suppressed community report stem");

  // towers
  auto* towers = app.add_subcommand("towers", "estimate tower positions and distance CDFs");
  std::string towers_store, towers_out;
  towers->add_option("--store", towers_store, "app store")->required()->check(CLI::ExistingDirectory);
  towers->add_option("--out", towers_out, "towers.csv,distances.csv,cdf.csv,opcounts.csv")->required();

  // report
  auto* report = app.add_subcommand("report", "run the whole pipeline and emit k-anonymous reports");
  std::string rep_in, rep_out, rep_format = "csv";
  std::string rep_location_store, rep_app_store, rep_census, rep_pois;
  std::vector<std::string> rep_location, rep_app, rep_apps;
  report->add_option("--in", rep_in, "directory with location.csv, app.csv, census.csv, pois.csv");
  report->add_option("--location", rep_location, "location CSV files");
  report->add_option("--app", rep_app, "app CSV files");
  report->add_option("--location-store", rep_location_store, "location store");
  report->add_option("--app-store", rep_app_store, "app store");
  report->add_option("--census", rep_census, "census CSV");
  report->add_option("--pois", rep_pois, "POI CSV");
  report->add_option("--apps", rep_apps, "app ids to extract communities for")->delimiter(',');
  report->add_option("--format", rep_format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  report->add_option("--out", rep_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      SynthConfig sc = g.config.empty() ? SynthConfig{} : load_synth_config(g.config);
      if (synth_seed) sc.seed = *synth_seed;
      if (synth_users) sc.n_users = *synth_users;
      if (synth_days) sc.span_days = *synth_days;
      if (g.salt) sc.salt = *g.salt;
      const auto out = generate(sc, g.threads);
      write_synth(synth_out, out);
      std::cerr << "synth: users=" << out.truth.users.size()
                << " location_records=" << out.location.record_count()
                << " app_records=" << out.app.record_count() << '\n';
    } else if (*ingest) {
      if (ingest_kind == "location") {
        const auto data = ingest_location_files(ingest_in, g.salt, g.threads);
        write_store(ingest_out, data);
        print_stats("ingest location", data.stats);
      } else {
        const auto data = ingest_app_files(ingest_in, g.salt, g.threads);
        write_store(ingest_out, data);
        print_stats("ingest app", data.stats);
      }
    } else if (*anchors) {
      const auto cfg = resolve_config(g);
      const auto data = read_location_store(anchors_store, g.threads);
      const auto result = compute_anchors(data.users, cfg, g.threads);
      write_anchors_csv(anchors_out, result);
      std::cerr << "anchors: users=" << result.size() << '\n';
    } else if (*cohorts) {
      const auto cfg = resolve_config(g);
      const auto anchors_in = read_anchors_csv(cohorts_anchors, cfg.anchor_resolution);
      const DistrictIndex index(filter_districts(load_census_csv(cohorts_census), cfg));
      const auto assigned = assign_cohorts(anchors_in, index, cfg);
      write_cohorts_csv(cohorts_out, assigned);
      if (!cohorts_report.empty()) {
        std::set<UidHash> population;
        for (const auto& [uid, a] : assigned) {
          if (a.district_id) population.insert(uid);
        }
        emit_all({cohort_report(base_meta(cfg, {}, {}), assigned, population)}, cohorts_report);
      }
    } else if (*poi) {
      auto cfg = resolve_config(g);
      if (!poi_bounds.empty()) cfg.visit_bounds = parse_bounds_list(poi_bounds);
      cfg.validate();
      const auto data = read_location_store(poi_store, g.threads);
      const PoiIndex index(load_pois_csv(poi_pois));
      const auto visits = detect_all_visits(data.users, index, cfg, g.threads);
      write_visits_csv(poi_out, visits);
      emit_all(visit_reports(base_meta(cfg, data.stats, {}), visits), poi_report);
      std::cerr << "poi: visits=" << visits.size() << '\n';
    } else if (*community) {
      auto cfg = resolve_config(g);
      if (comm_min) cfg.app_min_invocations = *comm_min;
      cfg.validate();
      const auto data = read_app_store(comm_store, g.threads);
      const auto c = extract_app_community(data.users, comm_app, cfg.app_min_invocations);
      write_community_csv(comm_out, c);
      if (!comm_report.empty()) {
        std::vector<Visit> visits;
        double span = 0.0;
        if (!comm_visits.empty()) {
          visits = read_visits_csv(comm_visits);
          // Without the traces, the visits' own time range stands in for the study span.
          std::int64_t lo = 0, hi = 0;
          for (std::size_t i = 0; i < visits.size(); ++i) {
            lo = i == 0 ? visits[i].start : std::min(lo, visits[i].start);
            hi = i == 0 ? visits[i].end : std::max(hi, visits[i].end);
          }
          span = static_cast<double>(hi - lo) / (7.0 * kSecondsPerDay);
        }
        emit_all(community_reports(base_meta(cfg, {}, data.stats), {c}, visits, span), comm_report);
      }
      std::cerr << "community " << comm_app << ": members=" << c.members.size() << '\n';
    } else if (*towers) {
      const auto cfg = resolve_config(g);
      auto paths = text::split(towers_out, ',');
      if (paths.size() != 4) {
        std::cerr << "towers: --out expects four comma-separated paths\n";
        return 2;
      }
      const auto data = read_app_store(towers_store, g.threads);
      const auto map = estimate_towers(data.users, g.threads);
      const auto reports = tower_reports(base_meta(cfg, {}, data.stats), data.users, map);
      for (std::size_t i = 0; i < 4; ++i) {
        const std::string p(paths[i]);
        emit_report(p, reports[i], format_for(p));
      }
      std::cerr << "towers: cells=" << map.size() << '\n';
    } else if (*report) {
      PipelineInputs in;
      std::string fallback;
      if (!rep_in.empty()) {
        if (!fs::is_directory(rep_in)) {
          std::cerr << "report: --in is not a directory: " << rep_in << '\n';
          return 2;
        }
        in = inputs_from_dir(rep_in);
        fallback = (fs::path(rep_in) / "pipeline.cfg").string();
      }
      if (!rep_location.empty()) in.location_files = rep_location;
      if (!rep_app.empty()) in.app_files = rep_app;
      if (!rep_location_store.empty()) in.location_store = rep_location_store;
      if (!rep_app_store.empty()) in.app_store = rep_app_store;
      if (!rep_census.empty()) in.census_file = rep_census;
      if (!rep_pois.empty()) in.pois_file = rep_pois;
      const auto cfg = resolve_config(g, fallback);
      AnalysisOptions opts;
      opts.threads = g.threads;
      opts.apps = rep_apps;
      const auto manifest = run_pipeline(in, cfg, g.salt, opts, rep_out,
                                         rep_format == "json" ? ReportFormat::kJson : ReportFormat::kCsv);
      std::cerr << "report: funnel";
      for (const auto& s : manifest.funnel) std::cerr << ' ' << s.stage << '=' << s.rows;
      std::cerr << '\n';
    }
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
