#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "airmine/model.hpp"

namespace airmine {

/// Hex digest identifying a device after one-way hashing.
class UidHash {
 public:
  UidHash() = default;

  /// Wraps an identifier that was hashed upstream (e.g. a pre-hashed input
  /// column). Rejects empty values and values containing separators.
  static std::optional<UidHash> adopt(std::string_view already_hashed);

  const std::string& value() const { return value_; }

  friend bool operator==(const UidHash&, const UidHash&) = default;
  friend auto operator<=>(const UidHash&, const UidHash&) = default;

 private:
  explicit UidHash(std::string v) : value_(std::move(v)) {}
  friend UidHash hash_uid(std::string_view raw_id, std::string_view salt);

  std::string value_;
};

inline constexpr std::size_t kUidHashLength = 64;

/// SHA-256 over salt || raw_id, lowercase hex. The same salt must be used for
/// every dataset that will later be joined on uid.
UidHash hash_uid(std::string_view raw_id, std::string_view salt);

enum class ConnType { kCellular, kWifi, kOther };
enum class Tech { kLTE, k3G, kOther };

std::string_view to_string(ConnType c);
std::string_view to_string(Tech t);
std::optional<ConnType> parse_conn_type(std::string_view s);
std::optional<Tech> parse_tech(std::string_view s);

struct ObservationRecord {
  UidHash uid;
  TimeStamp ts;  // second precision
  GeoPoint pos;
};

/// One application-data measurement, minus the owning uid.
struct AppEvent {
  TimeStamp ts;  // hour precision
  GeoPoint pos;
  std::string app_id;
  ConnType conn_type = ConnType::kOther;
  std::string operator_name;
  std::optional<std::string> cell_id;
  Tech tech = Tech::kOther;
  std::int64_t bytes_up = 0;
  std::int64_t bytes_down = 0;

  friend bool operator==(const AppEvent&, const AppEvent&) = default;
};

struct AppObservation {
  UidHash uid;
  AppEvent event;
};

/// Timestamped position with the uid factored out.
struct Fix {
  std::int64_t t = 0;  // UTC epoch seconds
  GeoPoint pos;
  friend bool operator==(const Fix&, const Fix&) = default;
};

struct UserTrace {
  UidHash uid;
  std::vector<Fix> fixes;  // sorted by t, ties in input order
};

struct UserAppTrace {
  UidHash uid;
  std::vector<AppEvent> events;  // sorted by ts, ties in input order
};

enum class ParseErrorKind {
  kColumnCount,
  kEmptyField,
  kTimestamp,
  kNotHourAligned,
  kNumber,
  kRange,
  kNegative,
  kEnum,
  kMissingCellId,
};

std::string_view to_string(ParseErrorKind k);

struct ParseError {
  ParseErrorKind kind = ParseErrorKind::kColumnCount;
  std::string column;
};

template <typename T>
using Parsed = std::variant<T, ParseError>;

inline constexpr std::string_view kLocationHeader = "uid,ts,lat,lon";
inline constexpr std::string_view kAppHeader =
    "uid,hour_ts,lat,lon,app_id,conn_type,operator,cell_id,tech,bytes_up,bytes_down";

/// `salt` set: the uid column is a raw device id and gets hashed. Unset: the
/// column is taken as an already-hashed identifier.
Parsed<ObservationRecord> parse_location_record(
    std::string_view line, const std::optional<std::string>& salt = std::nullopt);
Parsed<AppObservation> parse_app_record(
    std::string_view line, const std::optional<std::string>& salt = std::nullopt);

std::string serialize_location(const UidHash& uid, const Fix& fix);
std::string serialize_location(const ObservationRecord& rec);
std::string serialize_app(const UidHash& uid, const AppEvent& ev);
std::string serialize_app(const AppObservation& rec);

/// Groups records by uid (output sorted by uid) and stably sorts each
/// user's records by timestamp.
std::vector<UserTrace> partition_by_user(const std::vector<ObservationRecord>& records);
std::vector<UserAppTrace> partition_by_user(const std::vector<AppObservation>& records);

struct IngestStats {
  std::int64_t lines_in = 0;  // data lines, headers and blank lines excluded
  std::int64_t parsed = 0;
  std::map<ParseErrorKind, std::int64_t> rejected;

  std::int64_t rejected_total() const;
  void merge(const IngestStats& other);
};

enum class RecordKind { kLocation, kApp };

struct LocationData {
  std::vector<UserTrace> users;  // sorted by uid
  IngestStats stats;
  std::size_t record_count() const;
};

struct AppData {
  std::vector<UserAppTrace> users;  // sorted by uid
  IngestStats stats;
  std::size_t record_count() const;
};

/// Parses CSV text files. Each file is split into line-aligned shards parsed
/// on up to `threads` workers; the result does not depend on `threads`.
LocationData ingest_location_files(const std::vector<std::string>& paths,
                                   const std::optional<std::string>& salt, int threads);
AppData ingest_app_files(const std::vector<std::string>& paths,
                         const std::optional<std::string>& salt, int threads);

/// Same as above over an in-memory CSV body (header optional).
LocationData ingest_location_text(std::string_view body,
                                  const std::optional<std::string>& salt, int threads);
AppData ingest_app_text(std::string_view body, const std::optional<std::string>& salt,
                        int threads);

// Partitioned store: a directory of per-uid-prefix CSV files in the input
// schema plus `store.meta`. Output is byte-for-byte reproducible.
void write_store(const std::string& dir, const LocationData& data);
void write_store(const std::string& dir, const AppData& data);
RecordKind store_kind(const std::string& dir);
LocationData read_location_store(const std::string& dir, int threads);
AppData read_app_store(const std::string& dir, int threads);

/// Bucket file stem for a uid: its first two characters, lowercased, with
/// anything outside [0-9a-z] mapped to '_'.
std::string store_bucket(const UidHash& uid);

}  // namespace airmine
