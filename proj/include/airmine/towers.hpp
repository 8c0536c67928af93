#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "airmine/ingest.hpp"
#include "airmine/model.hpp"

namespace airmine {

/// Cell ids are only unique within an operator.
struct TowerKey {
  std::string operator_name;
  std::string cell_id;
  friend auto operator<=>(const TowerKey&, const TowerKey&) = default;
  friend bool operator==(const TowerKey&, const TowerKey&) = default;
};

struct TowerEstimate {
  TowerKey key;
  Tech tech = Tech::kOther;  // majority tech of the observations
  GeoPoint position;         // centroid of all observations naming the cell
  std::int64_t n_obs = 0;
  std::int64_t distinct_uids = 0;
  double bbox_diag_km = 0.0;
  GeoPoint bbox_min;
  GeoPoint bbox_max;

  bool low_confidence() const { return n_obs < 2; }
  friend bool operator==(const TowerEstimate&, const TowerEstimate&) = default;
};

using TowerMap = std::map<TowerKey, TowerEstimate>;

/// Centroid per (operator, cell_id) over every record that carries a cell id.
/// Per-cell sums run in input order, so the result does not depend on
/// `threads`.
TowerMap estimate_towers(std::span<const UserAppTrace> users, int threads);

using OperatorTech = std::pair<std::string, Tech>;

struct DistanceGroup {
  std::vector<double> km;  // input order
  std::int64_t distinct_uids = 0;
};

/// Distance from each cell-bearing observation to its cell's estimate,
/// grouped by operator x tech (tech of the estimate).
std::map<OperatorTech, DistanceGroup> distance_samples(std::span<const UserAppTrace> users,
                                                       const TowerMap& towers);

/// (edge, fraction of samples <= edge) for each edge. Throws InvalidInput on
/// empty samples or edges that are not strictly increasing.
std::vector<std::pair<double, double>> empirical_cdf(std::span<const double> samples,
                                                     std::span<const double> edges);

/// 60 log-spaced edges from 0.01 km to 30 km.
std::vector<double> default_cdf_edges();

/// Distinct cells per operator x tech.
std::map<OperatorTech, std::int64_t> cells_per_operator(const TowerMap& towers);

/// Linear-interpolated quantile (q in [0, 1]) of unsorted samples.
double quantile(std::vector<double> samples, double q);

}  // namespace airmine
