#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "airmine/anchors.hpp"
#include "airmine/privacy_report.hpp"
#include "doctest.h"

using namespace airmine;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "airmine_cli_test";

struct Run {
  int status;
  std::string out;
};

Run run(const std::string& args) {
  const auto log = kWork / "stdout.txt";
  const std::string cmd = std::string(AIRMINE_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  std::ifstream in(log);
  std::ostringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, ss.str()};
}

std::string p(const std::string& rel) { return (kWork / rel).string(); }

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    out[fs::relative(e.path(), root).string()] = ss.str();
  }
  return out;
}

// One small city shared by every case.
void ensure_city() {
  static bool done = false;
  if (done) return;
  fs::remove_all(kWork);
  fs::create_directories(kWork);
  const auto r = run("synth --out " + p("city") + " --users 150 --days 35 --seed 5");
  REQUIRE(r.status == 0);
  done = true;
}

}  // namespace

TEST_CASE("help lists every subcommand") {
  ensure_city();
  const auto r = run("--help");
  CHECK(r.status == 0);
  for (const char* sub : {"synth", "ingest", "anchors", "cohorts", "poi", "community", "towers", "report"}) {
    CHECK(r.out.find(sub) != std::string::npos);
  }
}

TEST_CASE("usage errors fail") {
  ensure_city();
  CHECK(run("").status != 0);
  CHECK(run("--threads 0 anchors --store " + p("city") + " --out " + p("x.csv")).status != 0);
  CHECK(run("--threads 1025 anchors --store " + p("city") + " --out " + p("x.csv")).status != 0);
  CHECK(run("anchors --bogus").status != 0);
  CHECK(run("ingest --kind tower --in " + p("city/app.csv") + " --out " + p("s")).status != 0);
  CHECK(run("--k 0 report --in " + p("city") + " --out " + p("k0")).status != 0);
}

TEST_CASE("stage by stage composition") {
  ensure_city();
  REQUIRE(run("ingest --kind location --in " + p("city/location.csv") + " --out " + p("ls")).status == 0);
  REQUIRE(run("ingest --kind app --in " + p("city/app.csv") + " --out " + p("as")).status == 0);
  CHECK(fs::exists(p("ls/store.meta")));

  // A store of the wrong kind is an input error.
  CHECK(run("anchors --store " + p("as") + " --out " + p("wrong.csv")).status == 1);

  const std::string cfg = "--config " + p("city/pipeline.cfg");
  REQUIRE(run(cfg + " anchors --store " + p("ls") + " --out " + p("anchors.csv")).status == 0);
  const auto anchors = read_anchors_csv(p("anchors.csv"), PipelineConfig{}.anchor_resolution);
  CHECK(anchors.size() == 150);

  const auto c = run(cfg + " cohorts --anchors " + p("anchors.csv") + " --census " + p("city/census.csv") +
                     " --out " + p("cohorts.csv") + " --report " + p("cohort_report.csv"));
  CHECK(c.status == 0);
  CHECK(is_report_file(p("cohort_report.csv")));
  for (const auto& row : read_report(p("cohort_report.csv")).rows) CHECK(row.count >= 20);

  const auto v = run(cfg + " poi --store " + p("ls") + " --pois " + p("city/pois.csv") + " --out " + p("visits.csv") +
                     " --report " + p("visit"));
  CHECK(v.status == 0);
  CHECK(fs::exists(p("visits.csv")));

  const auto m = run(cfg + " community --store " + p("as") + " --app pinterest --out " + p("community.csv") +
                     " --visits " + p("visits.csv"));
  CHECK(m.status == 0);
  CHECK(m.out.find("members=") != std::string::npos);

  const std::string four = p("towers.csv") + "," + p("distances.csv") + "," + p("cdf.csv") + "," + p("opcounts.csv");
  CHECK(run(cfg + " towers --store " + p("as") + " --out " + four).status == 0);
  CHECK(is_report_file(p("opcounts.csv")));
  CHECK(run(cfg + " towers --store " + p("as") + " --out " + p("one.csv")).status != 0);
}

TEST_CASE("malformed inputs exit with status 1") {
  ensure_city();
  std::ofstream(p("bad_census.csv")) << "garbage\n";
  REQUIRE(run("ingest --kind location --in " + p("city/location.csv") + " --out " + p("ls2")).status == 0);
  REQUIRE(run("anchors --store " + p("ls2") + " --out " + p("a2.csv")).status == 0);
  const auto r = run("cohorts --anchors " + p("a2.csv") + " --census " + p("bad_census.csv") + " --out " + p("c2.csv"));
  CHECK(r.status == 1);
  CHECK(r.out.find("census") != std::string::npos);
}

TEST_CASE("report runs end to end and is thread-count independent") {
  ensure_city();
  const std::string cfg = "--config " + p("city/pipeline.cfg");
  REQUIRE(run(cfg + " --threads 1 report --in " + p("city") + " --out " + p("r1")).status == 0);
  REQUIRE(run(cfg + " --threads 4 report --in " + p("city") + " --out " + p("r4")).status == 0);
  const auto t1 = tree(p("r1"));
  CHECK(t1 == tree(p("r4")));
  CHECK(t1.count("manifest.json"));
  for (const auto& [name, body] : t1) {
    if (name.rfind("reports/", 0) != 0) continue;
    CHECK(is_report_file(p("r1/" + name)));
    for (const auto& row : read_report(p("r1/" + name)).rows) CHECK(row.count >= 20);
  }

  REQUIRE(run(cfg + " report --in " + p("city") + " --out " + p("rj") + " --format json").status == 0);
  CHECK(fs::exists(p("rj/reports/funnel.json")));
}
