#ifndef HFL_TOPOLOGY_HPP_
#define HFL_TOPOLOGY_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "hfl/data.hpp"
#include "hfl/error.hpp"
#include "hfl/rng.hpp"

namespace hfl {

struct Point2 {
  double x = 0.0;  // km
  double y = 0.0;  // km

  bool operator==(const Point2&) const = default;
};

inline double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct ClientSite {
  ClientId id = 0;
  Point2 position;
  double residual_energy = 0.0;  // joules
};

struct Cluster {
  std::vector<ClientId> members;
  Point2 centroid;
  std::optional<ClientId> core;

  bool operator==(const Cluster&) const = default;
};

// Every live client belongs to exactly one cluster; DBSCAN noise points are
// one-member clusters. The cluster id is the position in `clusters`.
struct ClusterMap {
  std::vector<Cluster> clusters;

  std::size_t client_count() const {
    std::size_t n = 0;
    for (const auto& c : clusters) n += c.members.size();
    return n;
  }

  bool operator==(const ClusterMap&) const = default;
};

namespace detail {

inline std::unordered_map<ClientId, const ClientSite*> index_sites(std::span<const ClientSite> sites) {
  std::unordered_map<ClientId, const ClientSite*> out;
  out.reserve(sites.size());
  for (const auto& s : sites) out.emplace(s.id, &s);
  return out;
}

inline const ClientSite& lookup(const std::unordered_map<ClientId, const ClientSite*>& index,
                                ClientId id) {
  auto it = index.find(id);
  if (it == index.end()) throw InternalError("unknown client id " + std::to_string(id));
  return *it->second;
}

}  // namespace detail

inline Point2 centroid_of(std::span<const ClientId> members, std::span<const ClientSite> sites) {
  const auto index = detail::index_sites(sites);
  Point2 c;
  for (auto id : members) {
    const auto& s = detail::lookup(index, id);
    c.x += s.position.x;
    c.y += s.position.y;
  }
  const double n = static_cast<double>(members.size());
  return {c.x / n, c.y / n};
}

inline constexpr int kNoise = -1;

// Plain DBSCAN over Euclidean distance. Returns one label per site (cluster
// index in discovery order, or kNoise). A point's neighbourhood contains the
// point itself; it is a core point when the neighbourhood has >= p_min sites.
inline std::vector<int> dbscan_labels(std::span<const Point2> points, double r_neighbor,
                                      std::size_t p_min) {
  if (!(r_neighbor > 0.0)) throw UsageError("dbscan: r_neighbor must be > 0");
  if (p_min < 1) throw UsageError("dbscan: p_min must be >= 1");
  const std::size_t n = points.size();
  auto neighbours = [&](std::size_t i) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < n; ++j) {
      if (distance(points[i], points[j]) <= r_neighbor) out.push_back(j);
    }
    return out;
  };

  constexpr int kUnvisited = -2;
  std::vector<int> label(n, kUnvisited);
  int next_cluster = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] != kUnvisited) continue;
    auto seeds = neighbours(i);
    if (seeds.size() < p_min) {
      label[i] = kNoise;
      continue;
    }
    const int cid = next_cluster++;
    label[i] = cid;
    std::deque<std::size_t> queue(seeds.begin(), seeds.end());
    while (!queue.empty()) {
      const std::size_t j = queue.front();
      queue.pop_front();
      if (label[j] == kNoise) label[j] = cid;  // border point
      if (label[j] != kUnvisited) continue;
      label[j] = cid;
      auto more = neighbours(j);
      if (more.size() >= p_min) queue.insert(queue.end(), more.begin(), more.end());
    }
  }
  return label;
}

// Clusters the sites, appending noise points as singleton clusters in input
// order. Cores are left unset.
inline ClusterMap dbscan_cluster(std::span<const ClientSite> sites, double r_neighbor,
                                 std::size_t p_min) {
  if (sites.empty()) throw UsageError("dbscan_cluster: no sites");
  std::vector<Point2> points;
  points.reserve(sites.size());
  for (const auto& s : sites) points.push_back(s.position);
  const auto labels = dbscan_labels(points, r_neighbor, p_min);
  const int cluster_count = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;

  ClusterMap map;
  map.clusters.resize(static_cast<std::size_t>(std::max(cluster_count, 0)));
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (labels[i] != kNoise) map.clusters[static_cast<std::size_t>(labels[i])].members.push_back(sites[i].id);
  }
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (labels[i] == kNoise) map.clusters.push_back({{sites[i].id}, {}, std::nullopt});
  }
  for (auto& c : map.clusters) c.centroid = centroid_of(c.members, sites);
  return map;
}

// Every client placed in its own cluster (flat, server-direct topology).
inline ClusterMap singleton_clusters(std::span<const ClientSite> sites) {
  ClusterMap map;
  for (const auto& s : sites) map.clusters.push_back({{s.id}, s.position, s.id});
  return map;
}

struct ClusterStats {
  double mean_energy = 0.0;
  double mean_distance = 0.0;
  Point2 centroid;
};

inline ClusterStats cluster_stats(const Cluster& cluster, std::span<const ClientSite> sites) {
  const auto index = detail::index_sites(sites);
  ClusterStats st;
  st.centroid = cluster.centroid;
  for (auto id : cluster.members) {
    const auto& s = detail::lookup(index, id);
    st.mean_energy += s.residual_energy;
    st.mean_distance += distance(s.position, cluster.centroid);
  }
  const double n = static_cast<double>(cluster.members.size());
  st.mean_energy /= n;
  st.mean_distance /= n;
  return st;
}

// Rounds per rotation epoch, ceil(1/p).
inline std::uint64_t rotation_period(double p) {
  return static_cast<std::uint64_t>(std::ceil(1.0 / p - 1e-12));
}

// Core-election threshold
//   T = p / (1 - p (u mod ceil(1/p))) * (E_rest / E_avg) * (1 - d_cen / d_avg),
// zero for clients that already served this epoch and clamped at zero when the
// client lies farther from the centroid than average.
inline double core_threshold(const ClientSite& site, const ClusterStats& stats, std::uint64_t round,
                             double p, bool served_in_epoch) {
  if (!(p > 0.0 && p < 1.0)) throw UsageError("core_threshold: p must lie in (0, 1)");
  if (served_in_epoch) return 0.0;
  const double phase = static_cast<double>(round % rotation_period(p));
  const double randomization = p / (1.0 - p * phase);
  const double energy = stats.mean_energy == 0.0 ? 1.0 : site.residual_energy / stats.mean_energy;
  const double d_cen = distance(site.position, stats.centroid);
  const double proximity = stats.mean_distance == 0.0 ? 1.0 : 1.0 - d_cen / stats.mean_distance;
  return std::max(0.0, randomization * energy * proximity);
}

// Tracks which clients have served as core since the epoch began.
class CoreRotation {
 public:
  explicit CoreRotation(double p = 0.1) : period_(rotation_period(p)) {}

  // Clears the served set when round starts a new epoch.
  void begin_round(std::uint64_t round) {
    if (round % period_ == 0) served_.clear();
  }
  void mark_served(ClientId id) {
    if (!served(id)) served_.push_back(id);
  }
  bool served(ClientId id) const {
    return std::find(served_.begin(), served_.end(), id) != served_.end();
  }
  std::uint64_t period() const { return period_; }

 private:
  std::uint64_t period_;
  std::vector<ClientId> served_;
};

// The draw s_ij depends only on (seed, round, client) so it is unaffected by
// cluster composition.
inline double core_draw(std::uint64_t seed, std::uint64_t round, ClientId id) {
  Rng rng(mix_seed({seed, round, id}));
  return rng.uniform();
}

namespace detail {

// Residual energies closer than this relative gap count as equal so that
// accumulated rounding does not decide ties.
inline bool energy_greater(double a, double b) {
  return a > b && (a - b) > 1e-12 * std::max(std::abs(a), std::abs(b));
}

}  // namespace detail

// Picks one core per cluster. Among members with s < T the largest margin
// T - s wins; otherwise the largest positive T; otherwise the highest residual
// energy. Remaining ties go to the lowest client id.
inline ClusterMap select_cores(ClusterMap map, std::span<const ClientSite> sites, std::uint64_t round,
                               double p, std::uint64_t seed, const CoreRotation& rotation) {
  const auto index = detail::index_sites(sites);
  for (auto& cluster : map.clusters) {
    if (cluster.members.empty()) throw InternalError("select_cores: empty cluster");
    if (cluster.members.size() == 1) {
      cluster.core = cluster.members.front();
      continue;
    }
    const auto stats = cluster_stats(cluster, sites);
    std::optional<ClientId> best_pass;
    double best_margin = 0.0;
    std::optional<ClientId> best_threshold;
    double max_threshold = 0.0;
    std::optional<ClientId> best_energy;
    double max_energy = 0.0;
    for (auto id : cluster.members) {
      const auto& site = detail::lookup(index, id);
      const double t = core_threshold(site, stats, round, p, rotation.served(id));
      const double s = core_draw(seed, round, id);
      auto better = [id](std::optional<ClientId> cur, double value, double best) {
        return !cur || value > best || (value == best && id < *cur);
      };
      if (s < t && better(best_pass, t - s, best_margin)) {
        best_pass = id;
        best_margin = t - s;
      }
      if (t > 0.0 && better(best_threshold, t, max_threshold)) {
        best_threshold = id;
        max_threshold = t;
      }
      const double e = site.residual_energy;
      if (!best_energy || detail::energy_greater(e, max_energy) ||
          (!detail::energy_greater(max_energy, e) && id < *best_energy)) {
        best_energy = id;
        max_energy = e;
      }
    }
    cluster.core = best_pass ? best_pass : best_threshold ? best_threshold : best_energy;
  }
  return map;
}

// Uniformly random core per cluster (ablation baseline).
inline ClusterMap select_random_cores(ClusterMap map, std::uint64_t round, std::uint64_t seed) {
  for (std::size_t i = 0; i < map.clusters.size(); ++i) {
    auto& cluster = map.clusters[i];
    if (cluster.members.empty()) throw InternalError("select_random_cores: empty cluster");
    Rng rng(mix_seed({seed, round, i, 0x726e64ULL}));
    cluster.core = cluster.members[rng.index(cluster.members.size())];
  }
  return map;
}

// Drops members not in `live`, recomputes centroids, removes empty clusters.
// The returned vector maps each surviving cluster to its original id.
inline std::vector<std::size_t> prune_clusters(ClusterMap& map, std::span<const ClientSite> live) {
  const auto index = detail::index_sites(live);
  std::vector<Cluster> kept;
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < map.clusters.size(); ++i) {
    auto c = map.clusters[i];
    std::erase_if(c.members, [&](ClientId id) { return !index.contains(id); });
    if (c.members.empty()) continue;
    if (c.core && !index.contains(*c.core)) c.core.reset();
    c.centroid = centroid_of(c.members, live);
    kept.push_back(std::move(c));
    ids.push_back(i);
  }
  map.clusters = std::move(kept);
  return ids;
}

// Positions file: one "id x_km y_km" triple per line; '#' starts a comment.
inline std::vector<std::pair<ClientId, Point2>> read_positions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open positions file " + path);
  std::vector<std::pair<ClientId, Point2>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    long long id = 0;
    Point2 p;
    if (!(ss >> id)) continue;
    std::string rest;
    if (id < 0 || !(ss >> p.x >> p.y) || (ss >> rest) || !std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected 'id x_km y_km'");
    }
    out.emplace_back(static_cast<ClientId>(id), p);
  }
  return out;
}

inline void write_positions(const std::string& path, std::span<const std::pair<ClientId, Point2>> rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write positions file " + path);
  out.precision(17);
  for (const auto& [id, p] : rows) out << id << ' ' << p.x << ' ' << p.y << '\n';
}

// Clients scattered around `hotspots` centres placed uniformly in a square of
// side area_km; each client picks a centre uniformly and adds N(0, spread^2)
// offsets per axis, clipped to the square.
inline std::vector<Point2> hotspot_layout(std::size_t clients, double area_km, std::size_t hotspots,
                                          double spread_km, std::uint64_t seed) {
  if (hotspots == 0) throw UsageError("hotspot_layout: need at least one hotspot");
  Rng rng(seed);
  std::vector<Point2> centres(hotspots);
  for (auto& c : centres) {
    c.x = rng.uniform(0.0, area_km);
    c.y = rng.uniform(0.0, area_km);
  }
  std::vector<Point2> out(clients);
  for (auto& p : out) {
    const auto& c = centres[rng.index(hotspots)];
    p.x = std::clamp(c.x + spread_km * rng.normal(), 0.0, area_km);
    p.y = std::clamp(c.y + spread_km * rng.normal(), 0.0, area_km);
  }
  return out;
}

}  // namespace hfl

#endif  // HFL_TOPOLOGY_HPP_
