#include "airmine/ingest.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "airmine/parallel.hpp"
#include "airmine/text.hpp"

namespace airmine {

namespace fs = std::filesystem;

std::optional<UidHash> UidHash::adopt(std::string_view v) {
  if (v.empty()) return std::nullopt;
  for (char c : v) {
    if (c == ',' || c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '"') {
      return std::nullopt;
    }
  }
  return UidHash(std::string(v));
}

UidHash hash_uid(std::string_view raw_id, std::string_view salt) {
  if (raw_id.empty()) throw InvalidInput("hash_uid: empty raw id");
  std::string buf;
  buf.reserve(salt.size() + raw_id.size());
  buf.append(salt);
  buf.append(raw_id);
  return UidHash(text::sha256_hex(buf));
}

std::string_view to_string(ConnType c) {
  switch (c) {
    case ConnType::kCellular: return "cellular";
    case ConnType::kWifi: return "wifi";
    case ConnType::kOther: return "other";
  }
  return "other";
}

std::string_view to_string(Tech t) {
  switch (t) {
    case Tech::kLTE: return "LTE";
    case Tech::k3G: return "3G";
    case Tech::kOther: return "other";
  }
  return "other";
}

std::optional<ConnType> parse_conn_type(std::string_view s) {
  if (s == "cellular") return ConnType::kCellular;
  if (s == "wifi") return ConnType::kWifi;
  if (s == "other") return ConnType::kOther;
  return std::nullopt;
}

std::optional<Tech> parse_tech(std::string_view s) {
  if (s == "LTE") return Tech::kLTE;
  if (s == "3G") return Tech::k3G;
  if (s == "other") return Tech::kOther;
  return std::nullopt;
}

std::string_view to_string(ParseErrorKind k) {
  switch (k) {
    case ParseErrorKind::kColumnCount: return "column_count";
    case ParseErrorKind::kEmptyField: return "empty_field";
    case ParseErrorKind::kTimestamp: return "timestamp";
    case ParseErrorKind::kNotHourAligned: return "not_hour_aligned";
    case ParseErrorKind::kNumber: return "number";
    case ParseErrorKind::kRange: return "range";
    case ParseErrorKind::kNegative: return "negative";
    case ParseErrorKind::kEnum: return "enum";
    case ParseErrorKind::kMissingCellId: return "missing_cell_id";
  }
  return "unknown";
}

namespace {

constexpr ParseErrorKind kAllErrorKinds[] = {
    ParseErrorKind::kColumnCount, ParseErrorKind::kEmptyField,
    ParseErrorKind::kTimestamp,   ParseErrorKind::kNotHourAligned,
    ParseErrorKind::kNumber,      ParseErrorKind::kRange,
    ParseErrorKind::kNegative,    ParseErrorKind::kEnum,
    ParseErrorKind::kMissingCellId};

ParseError err(ParseErrorKind k, std::string col) { return {k, std::move(col)}; }

std::string_view strip_eol(std::string_view line) {
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.remove_suffix(1);
  return line;
}

// Shared between both schemas: uid, timestamp, lat, lon.
struct CommonFields {
  UidHash uid;
  std::int64_t t = 0;
  GeoPoint pos;
};

std::optional<ParseError> parse_common(const std::vector<std::string_view>& f,
                                       const std::optional<std::string>& salt,
                                       std::string_view ts_name, CommonFields& out) {
  if (f[0].empty()) return err(ParseErrorKind::kEmptyField, "uid");
  if (salt) {
    out.uid = hash_uid(f[0], *salt);
  } else {
    auto uid = UidHash::adopt(f[0]);
    if (!uid) return err(ParseErrorKind::kEmptyField, "uid");
    out.uid = std::move(*uid);
  }
  auto t = parse_iso8601_utc(f[1]);
  if (!t) return err(ParseErrorKind::kTimestamp, std::string(ts_name));
  out.t = *t;
  auto lat = text::to_double(f[2]);
  if (!lat) return err(ParseErrorKind::kNumber, "lat");
  auto lon = text::to_double(f[3]);
  if (!lon) return err(ParseErrorKind::kNumber, "lon");
  if (*lat < -90.0 || *lat > 90.0) return err(ParseErrorKind::kRange, "lat");
  if (*lon < -180.0 || *lon >= 180.0) return err(ParseErrorKind::kRange, "lon");
  out.pos = {*lat, *lon};
  return std::nullopt;
}

}  // namespace

Parsed<ObservationRecord> parse_location_record(std::string_view line,
                                                const std::optional<std::string>& salt) {
  std::vector<std::string_view> f;
  text::split(strip_eol(line), ',', f);
  if (f.size() != 4) return err(ParseErrorKind::kColumnCount, "*");
  CommonFields c;
  if (auto e = parse_common(f, salt, "ts", c)) return *e;
  return ObservationRecord{std::move(c.uid), {c.t, Precision::kSecond}, c.pos};
}

Parsed<AppObservation> parse_app_record(std::string_view line,
                                        const std::optional<std::string>& salt) {
  std::vector<std::string_view> f;
  text::split(strip_eol(line), ',', f);
  if (f.size() != 11) return err(ParseErrorKind::kColumnCount, "*");
  CommonFields c;
  if (auto e = parse_common(f, salt, "hour_ts", c)) return *e;
  if (floor_div(c.t, kSecondsPerHour) * kSecondsPerHour != c.t) {
    return err(ParseErrorKind::kNotHourAligned, "hour_ts");
  }
  AppObservation rec;
  rec.uid = std::move(c.uid);
  AppEvent& ev = rec.event;
  ev.ts = {c.t, Precision::kHour};
  ev.pos = c.pos;
  if (f[4].empty()) return err(ParseErrorKind::kEmptyField, "app_id");
  ev.app_id = std::string(f[4]);
  auto conn = parse_conn_type(f[5]);
  if (!conn) return err(ParseErrorKind::kEnum, "conn_type");
  ev.conn_type = *conn;
  ev.operator_name = std::string(f[6]);
  if (!f[7].empty()) {
    ev.cell_id = std::string(f[7]);
  } else if (ev.conn_type == ConnType::kCellular) {
    return err(ParseErrorKind::kMissingCellId, "cell_id");
  }
  auto tech = parse_tech(f[8]);
  if (!tech) return err(ParseErrorKind::kEnum, "tech");
  ev.tech = *tech;
  auto up = text::to_int(f[9]);
  if (!up) return err(ParseErrorKind::kNumber, "bytes_up");
  if (*up < 0) return err(ParseErrorKind::kNegative, "bytes_up");
  auto down = text::to_int(f[10]);
  if (!down) return err(ParseErrorKind::kNumber, "bytes_down");
  if (*down < 0) return err(ParseErrorKind::kNegative, "bytes_down");
  ev.bytes_up = *up;
  ev.bytes_down = *down;
  return rec;
}

std::string serialize_location(const UidHash& uid, const Fix& fix) {
  std::string out = uid.value();
  out += ',';
  out += format_iso8601_utc(fix.t);
  out += ',';
  out += text::format_double(fix.pos.lat);
  out += ',';
  out += text::format_double(fix.pos.lon);
  return out;
}

std::string serialize_location(const ObservationRecord& rec) {
  return serialize_location(rec.uid, Fix{rec.ts.epoch_seconds, rec.pos});
}

std::string serialize_app(const UidHash& uid, const AppEvent& ev) {
  std::string out = uid.value();
  out += ',';
  out += format_iso8601_utc(ev.ts.epoch_seconds);
  out += ',';
  out += text::format_double(ev.pos.lat);
  out += ',';
  out += text::format_double(ev.pos.lon);
  out += ',';
  out += ev.app_id;
  out += ',';
  out += to_string(ev.conn_type);
  out += ',';
  out += ev.operator_name;
  out += ',';
  if (ev.cell_id) out += *ev.cell_id;
  out += ',';
  out += to_string(ev.tech);
  out += ',';
  out += std::to_string(ev.bytes_up);
  out += ',';
  out += std::to_string(ev.bytes_down);
  return out;
}

std::string serialize_app(const AppObservation& rec) { return serialize_app(rec.uid, rec.event); }

// ---- partitioning ----------------------------------------------------------

namespace {

/// Collects per-uid sequences in arrival order.
template <typename Item>
class Grouper {
 public:
  void add(const UidHash& uid, Item item) {
    auto [it, inserted] = index_.try_emplace(uid.value(), groups_.size());
    if (inserted) groups_.push_back({uid, {}});
    groups_[it->second].second.push_back(std::move(item));
  }

  // Appends `other`'s groups after this one's, preserving arrival order.
  void absorb(Grouper&& other) {
    for (auto& [uid, items] : other.groups_) {
      auto [it, inserted] = index_.try_emplace(uid.value(), groups_.size());
      if (inserted) {
        groups_.push_back({uid, std::move(items)});
      } else {
        auto& dst = groups_[it->second].second;
        dst.insert(dst.end(), std::make_move_iterator(items.begin()),
                   std::make_move_iterator(items.end()));
      }
    }
    other.groups_.clear();
    other.index_.clear();
  }

  template <typename Key>
  std::vector<std::pair<UidHash, std::vector<Item>>> finish(Key&& key) && {
    std::sort(groups_.begin(), groups_.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [uid, items] : groups_) {
      std::stable_sort(items.begin(), items.end(),
                       [&](const Item& a, const Item& b) { return key(a) < key(b); });
    }
    index_.clear();
    return std::move(groups_);
  }

 private:
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::pair<UidHash, std::vector<Item>>> groups_;
};

constexpr auto kFixKey = [](const Fix& f) { return f.t; };
constexpr auto kEventKey = [](const AppEvent& e) { return e.ts.epoch_seconds; };

std::vector<UserTrace> to_traces(Grouper<Fix>&& g) {
  auto groups = std::move(g).finish(kFixKey);
  std::vector<UserTrace> out;
  out.reserve(groups.size());
  for (auto& [uid, fixes] : groups) out.push_back({std::move(uid), std::move(fixes)});
  return out;
}

std::vector<UserAppTrace> to_traces(Grouper<AppEvent>&& g) {
  auto groups = std::move(g).finish(kEventKey);
  std::vector<UserAppTrace> out;
  out.reserve(groups.size());
  for (auto& [uid, events] : groups) out.push_back({std::move(uid), std::move(events)});
  return out;
}

}  // namespace

std::vector<UserTrace> partition_by_user(const std::vector<ObservationRecord>& records) {
  Grouper<Fix> g;
  for (const auto& r : records) g.add(r.uid, Fix{r.ts.epoch_seconds, r.pos});
  return to_traces(std::move(g));
}

std::vector<UserAppTrace> partition_by_user(const std::vector<AppObservation>& records) {
  Grouper<AppEvent> g;
  for (const auto& r : records) g.add(r.uid, r.event);
  return to_traces(std::move(g));
}

// ---- bulk ingest -----------------------------------------------------------

std::int64_t IngestStats::rejected_total() const {
  std::int64_t n = 0;
  for (const auto& [k, v] : rejected) n += v;
  return n;
}

void IngestStats::merge(const IngestStats& o) {
  lines_in += o.lines_in;
  parsed += o.parsed;
  for (const auto& [k, v] : o.rejected) rejected[k] += v;
}

std::size_t LocationData::record_count() const {
  std::size_t n = 0;
  for (const auto& u : users) n += u.fixes.size();
  return n;
}

std::size_t AppData::record_count() const {
  std::size_t n = 0;
  for (const auto& u : users) n += u.events.size();
  return n;
}

namespace {

constexpr std::size_t kChunkBytes = std::size_t{64} << 20;

struct LocationTraits {
  using Item = Fix;
  static constexpr std::string_view kHeader = kLocationHeader;
  static bool parse(std::string_view line, const std::optional<std::string>& salt,
                    Grouper<Fix>& g, IngestStats& st) {
    auto r = parse_location_record(line, salt);
    if (auto* e = std::get_if<ParseError>(&r)) {
      ++st.rejected[e->kind];
      return false;
    }
    auto& rec = std::get<ObservationRecord>(r);
    g.add(rec.uid, Fix{rec.ts.epoch_seconds, rec.pos});
    return true;
  }
};

struct AppTraits {
  using Item = AppEvent;
  static constexpr std::string_view kHeader = kAppHeader;
  static bool parse(std::string_view line, const std::optional<std::string>& salt,
                    Grouper<AppEvent>& g, IngestStats& st) {
    auto r = parse_app_record(line, salt);
    if (auto* e = std::get_if<ParseError>(&r)) {
      ++st.rejected[e->kind];
      return false;
    }
    auto& rec = std::get<AppObservation>(r);
    g.add(rec.uid, std::move(rec.event));
    return true;
  }
};

/// Parses one newline-terminated block into `g`, splitting it across workers.
template <typename Traits>
void parse_block(std::string_view block, const std::optional<std::string>& salt,
                 int threads, Grouper<typename Traits::Item>& g, IngestStats& stats) {
  const std::size_t workers = std::max(1, threads);
  std::vector<std::string_view> shards;
  std::size_t pos = 0;
  for (std::size_t w = 0; w < workers && pos < block.size(); ++w) {
    std::size_t end = w + 1 == workers ? block.size()
                                       : std::min(block.size(), pos + block.size() / workers);
    if (end < block.size()) {
      const auto nl = block.find('\n', end);
      end = nl == std::string_view::npos ? block.size() : nl + 1;
    }
    shards.push_back(block.substr(pos, end - pos));
    pos = end;
  }
  std::vector<Grouper<typename Traits::Item>> groups(shards.size());
  std::vector<IngestStats> st(shards.size());
  parallel_for(shards.size(), threads, [&](std::size_t i) {
    std::string_view rest = shards[i];
    while (!rest.empty()) {
      const auto nl = rest.find('\n');
      std::string_view line = rest.substr(0, nl);
      rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
      line = strip_eol(line);
      if (text::trim(line).empty() || line == Traits::kHeader) continue;
      ++st[i].lines_in;
      if (Traits::parse(line, salt, groups[i], st[i])) ++st[i].parsed;
    }
  });
  for (std::size_t i = 0; i < shards.size(); ++i) {
    g.absorb(std::move(groups[i]));
    stats.merge(st[i]);
  }
}

template <typename Traits>
void ingest_stream(std::istream& in, const std::optional<std::string>& salt, int threads,
                   Grouper<typename Traits::Item>& g, IngestStats& stats) {
  std::string carry;
  std::string buf(kChunkBytes, '\0');
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const auto got = static_cast<std::size_t>(in.gcount());
    if (got == 0) break;
    carry.append(buf.data(), got);
    const auto last_nl = carry.rfind('\n');
    if (last_nl == std::string::npos) continue;
    parse_block<Traits>(std::string_view(carry).substr(0, last_nl + 1), salt, threads, g, stats);
    carry.erase(0, last_nl + 1);
  }
  if (!carry.empty()) parse_block<Traits>(carry, salt, threads, g, stats);
}

template <typename Traits>
void ingest_paths(const std::vector<std::string>& paths, const std::optional<std::string>& salt,
                  int threads, Grouper<typename Traits::Item>& g, IngestStats& stats) {
  for (const auto& p : paths) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open input: " + p);
    ingest_stream<Traits>(in, salt, threads, g, stats);
  }
}

}  // namespace

LocationData ingest_location_files(const std::vector<std::string>& paths,
                                   const std::optional<std::string>& salt, int threads) {
  Grouper<Fix> g;
  LocationData out;
  ingest_paths<LocationTraits>(paths, salt, threads, g, out.stats);
  out.users = to_traces(std::move(g));
  return out;
}

AppData ingest_app_files(const std::vector<std::string>& paths,
                         const std::optional<std::string>& salt, int threads) {
  Grouper<AppEvent> g;
  AppData out;
  ingest_paths<AppTraits>(paths, salt, threads, g, out.stats);
  out.users = to_traces(std::move(g));
  return out;
}

LocationData ingest_location_text(std::string_view body, const std::optional<std::string>& salt,
                                  int threads) {
  Grouper<Fix> g;
  LocationData out;
  parse_block<LocationTraits>(body, salt, threads, g, out.stats);
  out.users = to_traces(std::move(g));
  return out;
}

AppData ingest_app_text(std::string_view body, const std::optional<std::string>& salt,
                        int threads) {
  Grouper<AppEvent> g;
  AppData out;
  parse_block<AppTraits>(body, salt, threads, g, out.stats);
  out.users = to_traces(std::move(g));
  return out;
}

// ---- partitioned store -----------------------------------------------------

std::string store_bucket(const UidHash& uid) {
  std::string b;
  for (std::size_t i = 0; i < 2; ++i) {
    char c = i < uid.value().size() ? uid.value()[i] : '_';
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    const bool ok = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z');
    b += ok ? c : '_';
  }
  return b;
}

namespace {

constexpr const char* kMetaFile = "store.meta";

void write_meta(const fs::path& dir, std::string_view kind, std::size_t users,
                std::size_t records, const IngestStats& st) {
  std::ofstream out(dir / kMetaFile, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (dir / kMetaFile).string());
  out << "kind=" << kind << '\n'
      << "users=" << users << '\n'
      << "records=" << records << '\n'
      << "lines_in=" << st.lines_in << '\n'
      << "parsed=" << st.parsed << '\n';
  for (auto k : kAllErrorKinds) {
    auto it = st.rejected.find(k);
    out << "rejected." << to_string(k) << '=' << (it == st.rejected.end() ? 0 : it->second)
        << '\n';
  }
}

std::multimap<std::string, std::string> read_meta(const fs::path& dir) {
  const auto p = dir / kMetaFile;
  if (!fs::exists(p)) throw std::runtime_error("not a partitioned store (missing store.meta): " + dir.string());
  return text::read_key_values(p.string());
}

IngestStats stats_from_meta(const std::multimap<std::string, std::string>& kv) {
  IngestStats st;
  auto get = [&](const std::string& key) -> std::int64_t {
    auto it = kv.find(key);
    if (it == kv.end()) return 0;
    return text::to_int(it->second).value_or(0);
  };
  st.lines_in = get("lines_in");
  st.parsed = get("parsed");
  for (auto k : kAllErrorKinds) {
    if (auto n = get("rejected." + std::string(to_string(k))); n > 0) st.rejected[k] = n;
  }
  return st;
}

void prepare_dir(const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".csv" || e.path().filename() == kMetaFile) fs::remove(e.path());
  }
}

template <typename Users, typename Rows>
void write_buckets(const fs::path& dir, std::string_view header, const Users& users,
                   Rows&& rows) {
  std::string current;
  std::ofstream out;
  for (const auto& u : users) {
    const std::string bucket = store_bucket(u.uid);
    if (bucket != current) {
      if (out.is_open()) out.close();
      // Users are uid-sorted and the bucket is a uid prefix, except for the
      // '_' fold; reopen in append mode so folded buckets stay whole.
      const auto path = dir / (bucket + ".csv");
      const bool fresh = !fs::exists(path);
      out.open(path, std::ios::binary | std::ios::app);
      if (!out) throw std::runtime_error("cannot write " + path.string());
      if (fresh) out << header << '\n';
      current = bucket;
    }
    rows(out, u);
  }
}

std::vector<std::string> store_files(const fs::path& dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".csv") files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

void write_store(const std::string& dir_s, const LocationData& data) {
  const fs::path dir(dir_s);
  prepare_dir(dir);
  write_buckets(dir, kLocationHeader, data.users, [](std::ofstream& out, const UserTrace& u) {
    for (const auto& f : u.fixes) out << serialize_location(u.uid, f) << '\n';
  });
  write_meta(dir, "location", data.users.size(), data.record_count(), data.stats);
}

void write_store(const std::string& dir_s, const AppData& data) {
  const fs::path dir(dir_s);
  prepare_dir(dir);
  write_buckets(dir, kAppHeader, data.users, [](std::ofstream& out, const UserAppTrace& u) {
    for (const auto& e : u.events) out << serialize_app(u.uid, e) << '\n';
  });
  write_meta(dir, "app", data.users.size(), data.record_count(), data.stats);
}

RecordKind store_kind(const std::string& dir) {
  const auto kv = read_meta(dir);
  auto it = kv.find("kind");
  if (it == kv.end()) throw std::runtime_error("store.meta has no kind: " + dir);
  if (it->second == "location") return RecordKind::kLocation;
  if (it->second == "app") return RecordKind::kApp;
  throw std::runtime_error("store.meta has unknown kind '" + it->second + "'");
}

LocationData read_location_store(const std::string& dir, int threads) {
  if (store_kind(dir) != RecordKind::kLocation) {
    throw InvalidInput("not a location store: " + dir);
  }
  auto data = ingest_location_files(store_files(dir), std::nullopt, threads);
  data.stats = stats_from_meta(read_meta(dir));
  return data;
}

AppData read_app_store(const std::string& dir, int threads) {
  if (store_kind(dir) != RecordKind::kApp) throw InvalidInput("not an app store: " + dir);
  auto data = ingest_app_files(store_files(dir), std::nullopt, threads);
  data.stats = stats_from_meta(read_meta(dir));
  return data;
}

}  // namespace airmine
