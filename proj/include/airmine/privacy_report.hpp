#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace airmine {

/// One published aggregate. `count` is the number of distinct uids behind it.
struct AggregateRow {
  std::vector<std::pair<std::string, std::string>> group_keys;
  std::int64_t count = 0;
  std::vector<std::pair<std::string, double>> metrics;

  friend bool operator==(const AggregateRow&, const AggregateRow&) = default;
};

struct SuppressionResult {
  std::vector<AggregateRow> kept;
  std::int64_t suppressed = 0;
};

/// Keeps rows with count >= k. Suppressed rows are only counted.
SuppressionResult k_suppress(std::vector<AggregateRow> rows, int k);

struct ReportMeta {
  std::string name;
  std::string config_hash;
  int k = 0;
  std::int64_t suppressed_rows = 0;
  std::map<std::string, std::int64_t> input_counts;

  friend bool operator==(const ReportMeta&, const ReportMeta&) = default;
};

struct Report {
  ReportMeta meta;
  std::vector<std::string> dimensions;
  std::vector<std::string> metrics;
  std::vector<AggregateRow> rows;
};

enum class ReportFormat { kCsv, kJson };

/// Suppresses `rows` at meta.k and packages them; meta.suppressed_rows
/// accumulates the number dropped here.
Report make_report(ReportMeta meta, std::vector<std::string> dimensions,
                   std::vector<std::string> metrics, std::vector<AggregateRow> rows);

/// Writes rows sorted by group_keys with shortest round-trip numbers and a
/// metadata header. Rows must already be suppressed; a row below meta.k is
/// a logic error. I/O failures throw std::runtime_error naming the path.
void emit_report(const std::string& path, const Report& report, ReportFormat format);

std::string render_report(const Report& report, ReportFormat format);

Report parse_report_csv(const std::string& body);
Report parse_report_json(const std::string& body);
Report read_report(const std::string& path);

/// True when the file starts with the report marker.
bool is_report_file(const std::string& path);

}  // namespace airmine
