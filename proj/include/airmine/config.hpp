#pragma once

#include <map>
#include <string>

#include "airmine/model.hpp"

namespace airmine {

/// Applies key=value pairs onto `cfg`. Unknown keys throw InvalidInput.
/// Recognized keys mirror the PipelineConfig field names; windows use
/// "HH:MM-HH:MM", visit bounds use `bounds.<category>=<min>:<max>`, and
/// `dwell_gap_max` is in minutes.
void apply_config(PipelineConfig& cfg,
                  const std::multimap<std::string, std::string>& kv);

PipelineConfig load_config(const std::string& path);

/// Parses "mall=10:360,fastfood=5:120".
std::map<std::string, DwellBounds> parse_bounds_list(const std::string& text);

/// Stable key=value rendering, one per line, keys sorted.
std::string canonical_config(const PipelineConfig& cfg);

/// First 16 hex chars of the SHA-256 of canonical_config().
std::string config_hash(const PipelineConfig& cfg);

}  // namespace airmine
