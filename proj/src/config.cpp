#include "airmine/config.hpp"

#include <functional>
#include <sstream>

#include "airmine/text.hpp"

namespace airmine {

namespace {

double as_double(const std::string& key, const std::string& v) {
  auto d = text::to_double(v);
  if (!d) throw InvalidInput("config: " + key + " expects a number, got '" + v + "'");
  return *d;
}

std::int64_t as_int(const std::string& key, const std::string& v) {
  auto i = text::to_int(v);
  if (!i) throw InvalidInput("config: " + key + " expects an integer, got '" + v + "'");
  return *i;
}

DwellBounds parse_bounds(const std::string& key, std::string_view v) {
  const auto colon = v.find(':');
  if (colon == std::string_view::npos) {
    throw InvalidInput("config: " + key + " expects <min>:<max>");
  }
  auto lo = text::to_double(v.substr(0, colon));
  auto hi = text::to_double(v.substr(colon + 1));
  if (!lo || !hi) throw InvalidInput("config: " + key + " expects <min>:<max>");
  return {*lo, *hi};
}

}  // namespace

std::map<std::string, DwellBounds> parse_bounds_list(const std::string& list) {
  std::map<std::string, DwellBounds> out;
  for (auto item : text::split(list, ',')) {
    item = text::trim(item);
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) throw InvalidInput("bounds: expected category=min:max");
    const std::string cat(text::trim(item.substr(0, eq)));
    out[cat] = parse_bounds(cat, item.substr(eq + 1));
  }
  return out;
}

void apply_config(PipelineConfig& cfg,
                  const std::multimap<std::string, std::string>& kv) {
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters{
      {"anchor_resolution", [&](auto& k, auto& v) { cfg.anchor_resolution = as_double(k, v); }},
      {"raw_resolution", [&](auto& k, auto& v) { cfg.raw_resolution = as_double(k, v); }},
      {"night_window", [&](auto&, auto& v) { cfg.night_window = parse_window(v); }},
      {"workday_window", [&](auto&, auto& v) { cfg.workday_window = parse_window(v); }},
      {"home_min_hours_per_night",
       [&](auto& k, auto& v) { cfg.home_min_hours_per_night = as_double(k, v); }},
      {"home_min_nights",
       [&](auto& k, auto& v) { cfg.home_min_nights = static_cast<int>(as_int(k, v)); }},
      {"work_min_hours_per_day",
       [&](auto& k, auto& v) { cfg.work_min_hours_per_day = as_double(k, v); }},
      {"work_min_workdays",
       [&](auto& k, auto& v) { cfg.work_min_workdays = static_cast<int>(as_int(k, v)); }},
      {"consistent_min_days",
       [&](auto& k, auto& v) { cfg.consistent_min_days = static_cast<int>(as_int(k, v)); }},
      {"consistent_max_gap_days",
       [&](auto& k, auto& v) { cfg.consistent_max_gap_days = static_cast<int>(as_int(k, v)); }},
      {"dwell_gap_max", [&](auto& k, auto& v) { cfg.dwell_gap_max_min = as_double(k, v); }},
      {"poor_income_max", [&](auto& k, auto& v) { cfg.poor_income_max = as_double(k, v); }},
      {"rich_income_min", [&](auto& k, auto& v) { cfg.rich_income_min = as_double(k, v); }},
      {"district_population_min",
       [&](auto& k, auto& v) { cfg.district_population_min = as_int(k, v); }},
      {"app_min_invocations",
       [&](auto& k, auto& v) { cfg.app_min_invocations = static_cast<int>(as_int(k, v)); }},
      {"k_anonymity", [&](auto& k, auto& v) { cfg.k_anonymity = static_cast<int>(as_int(k, v)); }},
      {"utc_offset", [&](auto& k, auto& v) { cfg.utc_offset_hours = as_double(k, v); }},
  };
  for (const auto& [key, value] : kv) {
    if (key.rfind("bounds.", 0) == 0) {
      cfg.visit_bounds[key.substr(7)] = parse_bounds(key, value);
      continue;
    }
    auto it = setters.find(key);
    if (it == setters.end()) throw InvalidInput("config: unknown key '" + key + "'");
    it->second(key, value);
  }
  cfg.validate();
}

PipelineConfig load_config(const std::string& path) {
  PipelineConfig cfg;
  apply_config(cfg, text::read_key_values(path));
  return cfg;
}

std::string canonical_config(const PipelineConfig& c) {
  std::map<std::string, std::string> kv{
      {"anchor_resolution", text::format_double(c.anchor_resolution)},
      {"raw_resolution", text::format_double(c.raw_resolution)},
      {"night_window", format_window(c.night_window)},
      {"workday_window", format_window(c.workday_window)},
      {"home_min_hours_per_night", text::format_double(c.home_min_hours_per_night)},
      {"home_min_nights", std::to_string(c.home_min_nights)},
      {"work_min_hours_per_day", text::format_double(c.work_min_hours_per_day)},
      {"work_min_workdays", std::to_string(c.work_min_workdays)},
      {"consistent_min_days", std::to_string(c.consistent_min_days)},
      {"consistent_max_gap_days", std::to_string(c.consistent_max_gap_days)},
      {"dwell_gap_max", text::format_double(c.dwell_gap_max_min)},
      {"poor_income_max", text::format_double(c.poor_income_max)},
      {"rich_income_min", text::format_double(c.rich_income_min)},
      {"district_population_min", std::to_string(c.district_population_min)},
      {"app_min_invocations", std::to_string(c.app_min_invocations)},
      {"k_anonymity", std::to_string(c.k_anonymity)},
      {"utc_offset", text::format_double(c.utc_offset_hours)},
  };
  for (const auto& [cat, b] : c.visit_bounds) {
    kv["bounds." + cat] = text::format_double(b.min_minutes) + ":" +
                          text::format_double(b.max_minutes);
  }
  std::ostringstream out;
  for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
  return out.str();
}

std::string config_hash(const PipelineConfig& cfg) {
  return text::sha256_hex(canonical_config(cfg)).substr(0, 16);
}

}  // namespace airmine
