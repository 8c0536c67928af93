#include "airmine/towers.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "airmine/parallel.hpp"

namespace airmine {

TowerMap estimate_towers(std::span<const UserAppTrace> users, int threads) {
  // Gather each cell's observations in input order before reducing.
  std::map<TowerKey, std::vector<std::pair<std::size_t, std::size_t>>> members;
  for (std::size_t u = 0; u < users.size(); ++u) {
    const auto& events = users[u].events;
    for (std::size_t e = 0; e < events.size(); ++e) {
      if (!events[e].cell_id) continue;
      members[{events[e].operator_name, *events[e].cell_id}].emplace_back(u, e);
    }
  }
  std::vector<const std::pair<const TowerKey, std::vector<std::pair<std::size_t, std::size_t>>>*>
      cells;
  cells.reserve(members.size());
  for (const auto& kv : members) cells.push_back(&kv);

  std::vector<TowerEstimate> estimates(cells.size());
  parallel_for(cells.size(), threads, [&](std::size_t i) {
    const auto& [key, obs] = *cells[i];
    TowerEstimate& est = estimates[i];
    est.key = key;
    double lat = 0.0;
    double lon = 0.0;
    std::array<std::int64_t, 3> tech_votes{};
    std::set<std::size_t> uids;
    est.bbox_min = est.bbox_max = users[obs.front().first].events[obs.front().second].pos;
    for (const auto& [u, e] : obs) {
      const AppEvent& ev = users[u].events[e];
      lat += ev.pos.lat;
      lon += ev.pos.lon;
      ++tech_votes[static_cast<std::size_t>(ev.tech)];
      uids.insert(u);
      est.bbox_min.lat = std::min(est.bbox_min.lat, ev.pos.lat);
      est.bbox_min.lon = std::min(est.bbox_min.lon, ev.pos.lon);
      est.bbox_max.lat = std::max(est.bbox_max.lat, ev.pos.lat);
      est.bbox_max.lon = std::max(est.bbox_max.lon, ev.pos.lon);
    }
    const auto n = static_cast<double>(obs.size());
    est.position = {lat / n, lon / n};
    // Rounding can nudge a mean of identical values just outside the box.
    est.position.lat = std::clamp(est.position.lat, est.bbox_min.lat, est.bbox_max.lat);
    est.position.lon = std::clamp(est.position.lon, est.bbox_min.lon, est.bbox_max.lon);
    est.n_obs = static_cast<std::int64_t>(obs.size());
    est.distinct_uids = static_cast<std::int64_t>(uids.size());
    est.bbox_diag_km = haversine_km(est.bbox_min, est.bbox_max);
    est.tech = static_cast<Tech>(std::max_element(tech_votes.begin(), tech_votes.end()) -
                                 tech_votes.begin());
  });

  TowerMap out;
  for (auto& est : estimates) {
    auto key = est.key;
    out.emplace(std::move(key), std::move(est));
  }
  return out;
}

std::map<OperatorTech, DistanceGroup> distance_samples(std::span<const UserAppTrace> users,
                                                       const TowerMap& towers) {
  std::map<OperatorTech, DistanceGroup> out;
  std::map<OperatorTech, std::set<std::size_t>> uids;
  for (std::size_t u = 0; u < users.size(); ++u) {
    for (const auto& ev : users[u].events) {
      if (!ev.cell_id) continue;
      auto it = towers.find({ev.operator_name, *ev.cell_id});
      if (it == towers.end()) continue;  // unreachable for a map built from the same records
      const OperatorTech g{it->first.operator_name, it->second.tech};
      out[g].km.push_back(haversine_km(ev.pos, it->second.position));
      uids[g].insert(u);
    }
  }
  for (auto& [g, group] : out) group.distinct_uids = static_cast<std::int64_t>(uids[g].size());
  return out;
}

std::vector<std::pair<double, double>> empirical_cdf(std::span<const double> samples,
                                                     std::span<const double> edges) {
  if (samples.empty()) throw InvalidInput("empirical_cdf: empty samples");
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) {
      throw InvalidInput("empirical_cdf: edges must be strictly increasing");
    }
  }
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::pair<double, double>> out;
  out.reserve(edges.size());
  const auto n = static_cast<double>(sorted.size());
  for (double e : edges) {
    const auto le = std::upper_bound(sorted.begin(), sorted.end(), e) - sorted.begin();
    out.emplace_back(e, static_cast<double>(le) / n);
  }
  return out;
}

std::vector<double> default_cdf_edges() {
  constexpr int kEdges = 60;
  const double lo = std::log(0.01);
  const double hi = std::log(30.0);
  std::vector<double> edges(kEdges);
  for (int i = 0; i < kEdges; ++i) {
    edges[static_cast<std::size_t>(i)] = std::exp(lo + (hi - lo) * i / (kEdges - 1));
  }
  edges.front() = 0.01;
  edges.back() = 30.0;
  return edges;
}

std::map<OperatorTech, std::int64_t> cells_per_operator(const TowerMap& towers) {
  std::map<OperatorTech, std::int64_t> out;
  for (const auto& [key, est] : towers) ++out[{key.operator_name, est.tech}];
  return out;
}

double quantile(std::vector<double> samples, double q) {
  if (samples.empty()) throw InvalidInput("quantile: empty samples");
  q = std::clamp(q, 0.0, 1.0);
  std::sort(samples.begin(), samples.end());
  const double pos = q * static_cast<double>(samples.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(i);
  if (i + 1 >= samples.size()) return samples.back();
  return samples[i] + frac * (samples[i + 1] - samples[i]);
}

}  // namespace airmine
