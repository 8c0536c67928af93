#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace airmine::text {

// Splits on `sep` with no quoting; an empty line yields one empty field.
void split(std::string_view line, char sep, std::vector<std::string_view>& out);
std::vector<std::string_view> split(std::string_view line, char sep);

std::string_view trim(std::string_view s);

// Strict full-field parses; nullopt on trailing garbage or overflow.
std::optional<double> to_double(std::string_view s);
std::optional<std::int64_t> to_int(std::string_view s);

/// Shortest decimal that round-trips to the same double.
std::string format_double(double v);

/// Reads a key=value file. Blank lines and lines starting with '#' are
/// ignored; repeated keys keep every value in order of appearance.
std::multimap<std::string, std::string> read_key_values(const std::string& path);
std::multimap<std::string, std::string> parse_key_values(std::string_view body);

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

}  // namespace airmine::text
