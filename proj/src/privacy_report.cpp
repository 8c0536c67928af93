#include "airmine/privacy_report.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "airmine/model.hpp"
#include "airmine/text.hpp"

namespace airmine {

namespace {

constexpr std::string_view kCsvMarker = "# airmine report";
constexpr std::string_view kJsonMarker = "\"airmine_report\"";

using Json = nlohmann::ordered_json;

bool keys_less(const AggregateRow& a, const AggregateRow& b) {
  return a.group_keys < b.group_keys;
}

void check_field(const std::string& s) {
  if (s.find_first_of(",\n\r") != std::string::npos) {
    throw InvalidInput("report field contains a separator: '" + s + "'");
  }
}

}  // namespace

SuppressionResult k_suppress(std::vector<AggregateRow> rows, int k) {
  if (k < 1) throw InvalidInput("k_suppress: k must be >= 1");
  SuppressionResult r;
  for (auto& row : rows) {
    if (row.count >= k) {
      r.kept.push_back(std::move(row));
    } else {
      ++r.suppressed;
    }
  }
  return r;
}

Report make_report(ReportMeta meta, std::vector<std::string> dimensions,
                   std::vector<std::string> metrics, std::vector<AggregateRow> rows) {
  auto s = k_suppress(std::move(rows), meta.k);
  meta.suppressed_rows += s.suppressed;
  return {std::move(meta), std::move(dimensions), std::move(metrics), std::move(s.kept)};
}

std::string render_report(const Report& report, ReportFormat format) {
  std::vector<AggregateRow> rows = report.rows;
  std::stable_sort(rows.begin(), rows.end(), keys_less);
  for (const auto& row : rows) {
    if (row.count < report.meta.k) {
      throw std::logic_error("emit_report: row below k in report " + report.meta.name);
    }
    if (row.group_keys.size() != report.dimensions.size() ||
        row.metrics.size() != report.metrics.size()) {
      throw std::logic_error("emit_report: row shape mismatch in report " + report.meta.name);
    }
  }
  const ReportMeta& m = report.meta;

  if (format == ReportFormat::kCsv) {
    std::ostringstream out;
    out << kCsvMarker << '\n'
        << "# name=" << m.name << '\n'
        << "# config_hash=" << m.config_hash << '\n'
        << "# k=" << m.k << '\n'
        << "# suppressed_rows=" << m.suppressed_rows << '\n';
    for (const auto& [key, n] : m.input_counts) out << "# input." << key << '=' << n << '\n';
    for (const auto& d : report.dimensions) {
      check_field(d);
      out << d << ',';
    }
    out << "count";
    for (const auto& name : report.metrics) {
      check_field(name);
      out << ',' << name;
    }
    out << '\n';
    for (const auto& row : rows) {
      for (const auto& [dim, value] : row.group_keys) {
        check_field(value);
        out << value << ',';
      }
      out << row.count;
      for (const auto& [name, value] : row.metrics) out << ',' << text::format_double(value);
      out << '\n';
    }
    return out.str();
  }

  Json j;
  j["airmine_report"] = m.name;
  Json meta;
  meta["config_hash"] = m.config_hash;
  meta["k"] = m.k;
  meta["suppressed_rows"] = m.suppressed_rows;
  Json inputs = Json::object();
  for (const auto& [key, n] : m.input_counts) inputs[key] = n;
  meta["input_counts"] = inputs;
  j["meta"] = meta;
  j["dimensions"] = report.dimensions;
  j["metrics"] = report.metrics;
  Json arr = Json::array();
  for (const auto& row : rows) {
    Json r;
    Json keys = Json::array();
    for (const auto& [dim, value] : row.group_keys) keys.push_back({dim, value});
    r["keys"] = keys;
    r["count"] = row.count;
    Json metrics = Json::array();
    for (const auto& [name, value] : row.metrics) metrics.push_back({name, value});
    r["metrics"] = metrics;
    arr.push_back(r);
  }
  j["rows"] = arr;
  return j.dump(1) + "\n";
}

void emit_report(const std::string& path, const Report& report, ReportFormat format) {
  const std::string body = render_report(report, format);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write report " + path);
  out << body;
  if (!out) throw std::runtime_error("write failed for report " + path);
}

Report parse_report_csv(const std::string& body) {
  Report r;
  std::istringstream in(body);
  std::string line;
  if (!std::getline(in, line) || line != kCsvMarker) {
    throw InvalidInput("not an airmine CSV report");
  }
  bool have_header = false;
  std::vector<std::string_view> f;
  while (std::getline(in, line)) {
    if (line.rfind("# ", 0) == 0) {
      const std::string kv = line.substr(2);
      const auto eq = kv.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = kv.substr(0, eq);
      const std::string value = kv.substr(eq + 1);
      auto as_int = [&] {
        auto v = text::to_int(value);
        if (!v) throw InvalidInput("report header: bad integer for " + key);
        return *v;
      };
      if (key == "name") {
        r.meta.name = value;
      } else if (key == "config_hash") {
        r.meta.config_hash = value;
      } else if (key == "k") {
        r.meta.k = static_cast<int>(as_int());
      } else if (key == "suppressed_rows") {
        r.meta.suppressed_rows = as_int();
      } else if (key.rfind("input.", 0) == 0) {
        r.meta.input_counts[key.substr(6)] = as_int();
      }
      continue;
    }
    if (line.empty()) continue;
    text::split(line, ',', f);
    if (!have_header) {
      auto count_at = std::find(f.begin(), f.end(), std::string_view("count"));
      if (count_at == f.end()) throw InvalidInput("report: header lacks count column");
      for (auto it = f.begin(); it != count_at; ++it) r.dimensions.emplace_back(*it);
      for (auto it = count_at + 1; it != f.end(); ++it) r.metrics.emplace_back(*it);
      have_header = true;
      continue;
    }
    if (f.size() != r.dimensions.size() + 1 + r.metrics.size()) {
      throw InvalidInput("report: row width mismatch");
    }
    AggregateRow row;
    std::size_t i = 0;
    for (; i < r.dimensions.size(); ++i) row.group_keys.emplace_back(r.dimensions[i], f[i]);
    auto c = text::to_int(f[i++]);
    if (!c) throw InvalidInput("report: bad count");
    row.count = *c;
    for (std::size_t m = 0; m < r.metrics.size(); ++m, ++i) {
      auto v = text::to_double(f[i]);
      if (!v) throw InvalidInput("report: bad metric value");
      row.metrics.emplace_back(r.metrics[m], *v);
    }
    r.rows.push_back(std::move(row));
  }
  return r;
}

Report parse_report_json(const std::string& body) {
  const Json j = Json::parse(body);
  Report r;
  r.meta.name = j.at("airmine_report").get<std::string>();
  const Json& meta = j.at("meta");
  r.meta.config_hash = meta.at("config_hash").get<std::string>();
  r.meta.k = meta.at("k").get<int>();
  r.meta.suppressed_rows = meta.at("suppressed_rows").get<std::int64_t>();
  for (const auto& [key, n] : meta.at("input_counts").items()) {
    r.meta.input_counts[key] = n.get<std::int64_t>();
  }
  r.dimensions = j.at("dimensions").get<std::vector<std::string>>();
  r.metrics = j.at("metrics").get<std::vector<std::string>>();
  for (const auto& jr : j.at("rows")) {
    AggregateRow row;
    for (const auto& kv : jr.at("keys")) {
      row.group_keys.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
    }
    row.count = jr.at("count").get<std::int64_t>();
    for (const auto& kv : jr.at("metrics")) {
      row.metrics.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<double>());
    }
    r.rows.push_back(std::move(row));
  }
  return r;
}

Report read_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open report " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string body = ss.str();
  if (body.rfind(kCsvMarker, 0) == 0) return parse_report_csv(body);
  return parse_report_json(body);
}

bool is_report_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::string head(64, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  return head.rfind(kCsvMarker, 0) == 0 || head.find(kJsonMarker) != std::string::npos;
}

}  // namespace airmine
