#ifndef HFL_SIMULATION_HPP_
#define HFL_SIMULATION_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hfl/codec.hpp"
#include "hfl/config.hpp"
#include "hfl/data.hpp"
#include "hfl/energy.hpp"
#include "hfl/error.hpp"
#include "hfl/nn.hpp"
#include "hfl/recovery.hpp"
#include "hfl/rng.hpp"
#include "hfl/topology.hpp"

namespace hfl {

struct RoundMetrics {
  std::uint64_t round = 0;
  std::size_t clusters = 0;
  std::size_t live_clients = 0;  // participants at round start
  std::size_t dead_clients = 0;  // after this round's charges
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  double loss = std::numeric_limits<double>::quiet_NaN();
  double cost_client = 0.0;
  double cost_core = 0.0;
  double cost_total = 0.0;
  double cumulative_cost = 0.0;
  std::vector<double> recovery_residuals;  // worst layer feasibility per cluster
  // Largest error of a recovered cluster body against the true (sparsified,
  // normalised) aggregate, measured with recovery_error. Simulator-only.
  double max_recovery_error = 0.0;
  std::size_t nonconverged_layers = 0;
  std::size_t at_risk_layers = 0;  // aggregate support estimate above g/2
};

// Salts keeping the per-purpose random streams apart when seeds coincide.
namespace salt {
inline constexpr std::uint64_t kLayout = 0x6c61796fULL;
inline constexpr std::uint64_t kCoreDraw = 0x636f7265ULL;
inline constexpr std::uint64_t kRandomCore = 0x72636f72ULL;
inline constexpr std::uint64_t kTrain = 0x7472616eULL;
inline constexpr std::uint64_t kInit = 0x696e6974ULL;
inline constexpr std::uint64_t kSplit = 0x73706c74ULL;
}  // namespace salt

struct ClientState {
  ClientId id = 0;
  Point2 position;
  Dataset data;
  LayerBlock head;  // private output layer
};

inline std::vector<std::size_t> model_widths(const ExperimentConfig& cfg, std::size_t features, std::size_t classes) {
  std::vector<std::size_t> w{features};
  w.insert(w.end(), cfg.training.hidden.begin(), cfg.training.hidden.end());
  w.push_back(classes);
  return w;
}

inline std::vector<Point2> client_positions(const ExperimentConfig& cfg) {
  if (cfg.topology.positions_file.empty()) {
    const auto& l = cfg.topology.layout;
    return hotspot_layout(cfg.clients, l.area_km, l.hotspots, l.spread_km,
                          mix_seed({cfg.seeds.topology, salt::kLayout}));
  }
  auto rows = read_positions(cfg.topology.positions_file);
  if (rows.size() != cfg.clients) {
    throw ConfigError("positions file lists " + std::to_string(rows.size()) + " clients, config expects " +
                      std::to_string(cfg.clients));
  }
  std::vector<Point2> out(cfg.clients);
  std::vector<bool> seen(cfg.clients, false);
  for (const auto& [id, p] : rows) {
    if (id >= cfg.clients || seen[id]) throw ConfigError("positions file ids must be 0.." + std::to_string(cfg.clients - 1));
    seen[id] = true;
    out[id] = p;
  }
  return out;
}

// One synchronous federated round per call: cluster (when scheduled), elect
// cores, train and compress locally, LC-aggregate at cores, charge radio
// energy, recover per cluster, aggregate globally, evaluate.
class Simulation {
 public:
  explicit Simulation(ExperimentConfig cfg) : cfg_(std::move(cfg)), rotation_(cfg_.topology.core_fraction) {
    cfg_.validate();
    const auto positions = client_positions(cfg_);
    std::vector<ClientId> ids(cfg_.clients);
    std::iota(ids.begin(), ids.end(), ClientId{0});
    ledger_ = EnergyLedger(ids, cfg_.initial_energy);

    Dataset pool;
    if (cfg_.data.source == "synthetic") {
      const auto& d = cfg_.data;
      auto all = synth_generate(cfg_.seeds.data, d.train_samples + d.test_samples, d.features, d.classes, d.spread);
      std::vector<std::size_t> train_idx(d.train_samples);
      std::vector<std::size_t> test_idx(d.test_samples);
      std::iota(train_idx.begin(), train_idx.end(), std::size_t{0});
      std::iota(test_idx.begin(), test_idx.end(), d.train_samples);
      pool = all.subset(train_idx);
      holdout_ = all.subset(test_idx);
    } else {
      const auto& d = cfg_.data;
      pool = load_idx(d.idx_train_images, d.idx_train_labels, d.train_samples);
      holdout_ = load_idx(d.idx_test_images, d.idx_test_labels, d.test_samples);
      const std::size_t classes = std::max(pool.class_count, holdout_.class_count);
      pool.class_count = holdout_.class_count = classes;
      if (holdout_.width != pool.width) throw ConfigError("IDX train and test images differ in size");
    }
    if (pool.size() < cfg_.clients) throw ConfigError("fewer training samples than clients");
    auto partition = partition_iid(pool, ids, mix_seed({cfg_.seeds.data, salt::kSplit}));

    const auto widths = model_widths(cfg_, pool.width, pool.class_count);
    ModelParams init = cfg_.training.zero_init
                           ? make_zero_mlp(widths)
                           : make_mlp(widths, mix_seed({cfg_.seeds.training, salt::kInit}));
    global_body_.assign(init.layers.begin(), init.layers.end() - 1);
    for (std::size_t i = 0; i < cfg_.clients; ++i) {
      clients_.push_back({ids[i], positions[i], std::move(partition.shards[i].data), init.layers.back()});
    }
    for (const auto& l : global_body_) {
      full_reals_ += l.param_count();
      projected_reals_ += projected_length(l.param_count(), cfg_.codec.ratio);
    }
  }

  const ExperimentConfig& config() const { return cfg_; }
  std::uint64_t round() const { return round_; }
  bool finished() const { return ledger_.live_clients().empty(); }
  const std::vector<LayerBlock>& global_body() const { return global_body_; }
  const std::vector<ClientState>& clients() const { return clients_; }
  const EnergyLedger& ledger() const { return ledger_; }
  const ClusterMap& last_map() const { return last_map_; }
  const std::vector<std::string>& topology_log() const { return topology_log_; }
  const Dataset& holdout() const { return holdout_; }

  // Reals each client sends per round (compressed or dense body).
  std::size_t transmitted_reals() const { return uses_compression(cfg_.scheme) ? projected_reals_ : full_reals_; }

  ModelParams client_model(const ClientState& c) const {
    ModelParams m;
    m.layers = global_body_;
    m.layers.push_back(c.head);
    return m;
  }

  RoundMetrics run_round() {
    const std::uint64_t u = round_;
    RoundMetrics metrics;
    metrics.round = u;

    const auto live_ids = ledger_.live_clients();
    if (live_ids.empty()) throw InternalError("run_round: every client is dead");
    std::vector<ClientSite> sites;
    for (auto id : live_ids) sites.push_back({id, clients_[id].position, ledger_.residual(id)});

    const bool recluster = !base_map_ || (cfg_.topology.recluster_period > 0 && u % cfg_.topology.recluster_period == 0);
    if (recluster) build_topology(sites);

    ClusterMap map = *base_map_;
    const auto cluster_ids = prune_clusters(map, sites);
    rotation_.begin_round(u);
    switch (cfg_.scheme) {
      case Scheme::proposed:
      case Scheme::no_compression:
        map = select_cores(std::move(map), sites, u, cfg_.topology.core_fraction,
                           mix_seed({cfg_.seeds.topology, salt::kCoreDraw}), rotation_);
        break;
      case Scheme::random_core:
        map = select_random_cores(std::move(map), u, mix_seed({cfg_.seeds.topology, salt::kRandomCore}));
        break;
      case Scheme::flat_fedavg:
        break;
    }
    for (std::size_t i = 0; i < map.clusters.size(); ++i) {
      const auto& c = map.clusters[i];
      rotation_.mark_served(*c.core);
      std::ostringstream line;
      line << "round " << u << " cluster " << cluster_ids[i] << " core " << *c.core << " members";
      for (std::size_t m = 0; m < c.members.size(); ++m) line << (m == 0 ? " " : ",") << c.members[m];
      topology_log_.push_back(line.str());
    }
    metrics.clusters = map.clusters.size();
    metrics.live_clients = live_ids.size();

    if (cfg_.simulate_learning) learn(map, cluster_ids, metrics);

    const double bits = payload_bits(transmitted_reals());
    const auto breakdown = round_cost(bits, bits, map, cfg_.radio);
    ledger_.charge_and_reap(breakdown);
    cumulative_cost_ += breakdown.total();
    metrics.cost_client = breakdown.cost_client;
    metrics.cost_core = breakdown.cost_core;
    metrics.cost_total = breakdown.total();
    metrics.cumulative_cost = cumulative_cost_;
    metrics.dead_clients = ledger_.dead_clients().size();
    last_map_ = std::move(map);
    ++round_;
    return metrics;
  }

 private:
  void build_topology(std::span<const ClientSite> sites) {
    if (cfg_.scheme == Scheme::flat_fedavg) {
      base_map_ = singleton_clusters(sites);
    } else {
      base_map_ = dbscan_cluster(sites, cfg_.topology.r_neighbor_km, cfg_.topology.p_min);
    }
    if (uses_compression(cfg_.scheme)) {
      std::vector<std::size_t> lengths;
      for (const auto& l : global_body_) lengths.push_back(l.param_count());
      std::vector<ClusterId> ids(base_map_->clusters.size());
      std::iota(ids.begin(), ids.end(), ClusterId{0});
      bank_ = gen_bank(lengths, ids, cfg_.codec.ratio, cfg_.seeds.bank);
      cache_.reset();
    }
  }

  void learn(const ClusterMap& map, std::span<const std::size_t> cluster_ids, RoundMetrics& metrics) {
    const TrainConfig base{cfg_.training.lr, cfg_.training.local_epochs, cfg_.training.batch_size, 0};
    const bool normalize = !cfg_.recovery.unnormalized_sum;
    std::vector<LayerBlock> next_body = global_body_;
    for (auto& l : next_body) std::fill(l.values.begin(), l.values.end(), 0.0);

    std::size_t total_samples = 0;
    for (const auto& c : map.clusters) {
      for (auto id : c.members) total_samples += clients_[id].data.size();
    }

    for (std::size_t i = 0; i < map.clusters.size(); ++i) {
      const auto& cluster = map.clusters[i];
      const ClusterId cid = cluster_ids[i];
      std::vector<ModelParams> locals;
      std::size_t cluster_samples = 0;
      for (auto id : cluster.members) {
        auto& client = clients_[id];
        TrainConfig tc = base;
        tc.seed = mix_seed({cfg_.seeds.training, salt::kTrain, round_, id});
        auto trained = train_local(client_model(client), client.data, tc);
        client.head = trained.layers.back();
        locals.push_back(std::move(trained));
        cluster_samples += client.data.size();
      }

      std::vector<LayerBlock> cluster_body;
      if (uses_compression(cfg_.scheme)) {
        std::vector<CompressedModel> compressed;
        for (const auto& m : locals) compressed.push_back(compress_model(m, bank_, cid, cfg_.codec.sparsification));
        count_at_risk(locals, metrics);
        const auto aggregated = lc_aggregate(compressed);
        auto rec = recover_cluster(aggregated, bank_, cache_, locals.size(), normalize, cfg_.recovery.admm);
        for (const auto& r : rec.layers) metrics.nonconverged_layers += r.converged ? 0 : 1;
        metrics.recovery_residuals.push_back(rec.max_feasibility());
        const auto truth = sparse_aggregate(locals, normalize);
        for (std::size_t k = 0; k < truth.size(); ++k) {
          metrics.max_recovery_error =
              std::max(metrics.max_recovery_error, recovery_error(rec.body[k].values, truth[k].values));
        }
        cluster_body = std::move(rec.body);
      } else if (cfg_.codec.baseline_sparsify) {
        cluster_body = sparse_aggregate(locals, normalize);
      } else {
        cluster_body = dense_aggregate(locals, normalize);
      }

      const double weight = static_cast<double>(cluster_samples) / static_cast<double>(total_samples);
      for (std::size_t k = 0; k < next_body.size(); ++k) {
        for (std::size_t p = 0; p < next_body[k].values.size(); ++p) {
          next_body[k].values[p] += weight * cluster_body[k].values[p];
        }
      }
    }
    global_body_ = std::move(next_body);

    double acc = 0.0;
    double loss = 0.0;
    std::size_t n = 0;
    for (const auto& c : map.clusters) {
      for (auto id : c.members) {
        const auto ev = evaluate(client_model(clients_[id]), holdout_);
        acc += ev.accuracy;
        loss += ev.mean_loss;
        ++n;
      }
    }
    metrics.accuracy = acc / static_cast<double>(n);
    metrics.loss = loss / static_cast<double>(n);
  }

  // Member bodies summed (and divided by the member count when normalize).
  std::vector<LayerBlock> dense_aggregate(std::span<const ModelParams> locals, bool normalize,
                                          bool sparse = false) const {
    std::vector<LayerBlock> body = global_body_;
    for (auto& l : body) std::fill(l.values.begin(), l.values.end(), 0.0);
    for (const auto& m : locals) {
      for (std::size_t k = 0; k < body.size(); ++k) {
        const auto& src = m.layers[k].values;
        const auto kept = sparse ? sparsify(src, cfg_.codec.sparsification.threshold_for(src)).values : src;
        for (std::size_t p = 0; p < kept.size(); ++p) body[k].values[p] += kept[p];
      }
    }
    if (normalize) {
      const double inv = 1.0 / static_cast<double>(locals.size());
      for (auto& l : body) {
        for (auto& v : l.values) v *= inv;
      }
    }
    return body;
  }

  std::vector<LayerBlock> sparse_aggregate(std::span<const ModelParams> locals, bool normalize) const {
    return dense_aggregate(locals, normalize, true);
  }

  // Flags layers whose expected aggregate support c * s * G exceeds g / 2,
  // using each member's actual kept fraction as s.
  void count_at_risk(std::span<const ModelParams> locals, RoundMetrics& metrics) const {
    for (std::size_t k = 0; k < global_body_.size(); ++k) {
      const std::size_t full = global_body_[k].param_count();
      double kept = 0.0;
      for (const auto& m : locals) {
        const auto& v = m.layers[k].values;
        const double mu = cfg_.codec.sparsification.threshold_for(v);
        kept += static_cast<double>(std::count_if(v.begin(), v.end(), [mu](double x) { return std::abs(x) >= mu && x != 0.0; }));
      }
      const double density = kept / (static_cast<double>(locals.size()) * static_cast<double>(full));
      if (recovery_at_risk(locals.size(), density, full, projected_length(full, cfg_.codec.ratio))) {
        ++metrics.at_risk_layers;
      }
    }
  }

  ExperimentConfig cfg_;
  std::vector<ClientState> clients_;
  Dataset holdout_;
  std::vector<LayerBlock> global_body_;
  EnergyLedger ledger_;
  CoreRotation rotation_;
  std::optional<ClusterMap> base_map_;
  ClusterMap last_map_;
  CompressionBank bank_;
  RecoveryCache cache_;
  std::vector<std::string> topology_log_;
  std::uint64_t round_ = 0;
  double cumulative_cost_ = 0.0;
  std::size_t full_reals_ = 0;
  std::size_t projected_reals_ = 0;
};

// ---------------------------------------------------------------------------
// Experiment driver and output files.

inline constexpr const char* kMetricsHeader =
    "round,scheme,clusters,live_clients,dead_clients,accuracy,loss,cost_client,cost_core,cost_total,"
    "cumulative_cost,max_recovery_residual,max_recovery_error,nonconverged_layers,at_risk_layers,recovery_residuals";

inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_metrics_row(const RoundMetrics& m, Scheme scheme) {
  std::ostringstream out;
  double worst = 0.0;
  for (double r : m.recovery_residuals) worst = std::max(worst, r);
  out << m.round << ',' << scheme_name(scheme) << ',' << m.clusters << ',' << m.live_clients << ','
      << m.dead_clients << ',' << format_real(m.accuracy) << ',' << format_real(m.loss) << ','
      << format_real(m.cost_client) << ',' << format_real(m.cost_core) << ',' << format_real(m.cost_total) << ','
      << format_real(m.cumulative_cost) << ',' << format_real(worst) << ',' << format_real(m.max_recovery_error) << ','
      << m.nonconverged_layers << ','
      << m.at_risk_layers << ',';
  for (std::size_t i = 0; i < m.recovery_residuals.size(); ++i) {
    out << (i == 0 ? "" : ";") << format_real(m.recovery_residuals[i]);
  }
  return out.str();
}

struct ExperimentResult {
  std::vector<RoundMetrics> rounds;
  std::vector<std::string> topology_log;
  std::size_t dead_clients = 0;
  bool all_dead = false;

  const RoundMetrics& last() const { return rounds.back(); }
};

// Runs cfg.rounds rounds in memory, stopping early when every client is dead.
inline ExperimentResult simulate(const ExperimentConfig& cfg) {
  Simulation sim(cfg);
  ExperimentResult result;
  while (sim.round() < cfg.rounds && !sim.finished()) result.rounds.push_back(sim.run_round());
  result.topology_log = sim.topology_log();
  result.dead_clients = sim.ledger().dead_clients().size();
  result.all_dead = sim.finished();
  return result;
}

inline std::string format_summary(const ExperimentConfig& cfg, const ExperimentResult& r) {
  std::ostringstream out;
  out << "scheme: " << scheme_name(cfg.scheme) << '\n';
  out << "rounds_requested: " << cfg.rounds << '\n';
  out << "rounds_completed: " << r.rounds.size() << '\n';
  out << "terminated_all_dead: " << (r.all_dead ? "yes" : "no") << '\n';
  if (!r.rounds.empty()) {
    const auto& m = r.last();
    out << "final_accuracy: " << format_real(m.accuracy) << '\n';
    out << "final_loss: " << format_real(m.loss) << '\n';
    out << "cumulative_cost_j: " << format_real(m.cumulative_cost) << '\n';
    out << "final_clusters: " << m.clusters << '\n';
    std::size_t nonconverged = 0;
    std::size_t at_risk = 0;
    for (const auto& x : r.rounds) {
      nonconverged += x.nonconverged_layers;
      at_risk += x.at_risk_layers;
    }
    out << "nonconverged_layer_solves: " << nonconverged << '\n';
    out << "at_risk_layer_solves: " << at_risk << '\n';
  }
  out << "dead_clients: " << r.dead_clients << '\n';
  return out.str();
}

// Writes metrics.csv, summary.txt and topology.log under out_dir. The files
// are opened before any simulation work.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  std::ofstream metrics(out_dir / "metrics.csv");
  std::ofstream summary(out_dir / "summary.txt");
  std::ofstream topology(out_dir / "topology.log");
  if (!metrics || !summary || !topology) throw IoError("cannot write outputs under " + out_dir.string());

  const auto result = simulate(cfg);
  metrics << kMetricsHeader << '\n';
  for (const auto& m : result.rounds) metrics << format_metrics_row(m, cfg.scheme) << '\n';
  summary << format_summary(cfg, result);
  for (const auto& line : result.topology_log) topology << line << '\n';
  if (!metrics || !summary || !topology) throw IoError("failed writing outputs under " + out_dir.string());
  return result;
}

struct RadiusPoint {
  double radius_km = 0.0;
  double total_cost = 0.0;
  std::size_t clusters = 0;  // at round 0
};

// Reruns the experiment once per neighbourhood radius with identical seeds.
inline std::vector<RadiusPoint> sweep_radius(const ExperimentConfig& cfg, std::span<const double> radii) {
  std::vector<RadiusPoint> out;
  for (double r : radii) {
    auto c = cfg;
    c.topology.r_neighbor_km = r;
    const auto result = simulate(c);
    out.push_back({r, result.last().cumulative_cost, result.rounds.front().clusters});
  }
  return out;
}

struct BenchRow {
  std::size_t sparsity = 0;
  std::size_t successes = 0;
  std::size_t trials = 0;
  double mean_iterations = 0.0;
  double rate() const { return trials == 0 ? 0.0 : static_cast<double>(successes) / static_cast<double>(trials); }
};

// k-sparse vector with +-1 entries on a uniformly random support.
inline std::vector<double> planted_sparse(std::size_t length, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(length);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<double> x(length, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(idx[i], idx[i + rng.index(length - i)]);
    x[idx[i]] = rng.uniform() < 0.5 ? -1.0 : 1.0;
  }
  return x;
}

inline constexpr double kRecoverySuccessTol = 1e-4;

// Planted recovery success rate (relative error < 1e-4) per sparsity level.
inline std::vector<BenchRow> bench_recovery(std::size_t full_length, std::size_t projected, std::span<const std::size_t> ks,
                                            std::size_t trials, std::uint64_t seed, const AdmmSettings& settings = {}) {
  if (projected == 0 || projected >= full_length) throw UsageError("bench_recovery: need 0 < g < G");
  std::vector<BenchRow> rows;
  for (auto k : ks) {
    if (k > full_length) throw UsageError("bench_recovery: k exceeds G");
    BenchRow row{k, 0, trials, 0.0};
    double iterations = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      const auto phi = gaussian_matrix(projected, full_length, mix_seed({seed, k, t, 0x70686900ULL}));
      Rng rng(mix_seed({seed, k, t, 0x78300000ULL}));
      const auto x0 = planted_sparse(full_length, k, rng);
      const Eigen::Map<const Eigen::VectorXd> xv(x0.data(), static_cast<Eigen::Index>(full_length));
      const Eigen::VectorXd y = phi * xv;
      const auto res = basis_pursuit(phi, std::span<const double>(y.data(), projected), settings);
      iterations += res.iterations;
      if (recovery_error(res.x_hat, x0) < kRecoverySuccessTol) ++row.successes;
    }
    row.mean_iterations = trials == 0 ? 0.0 : iterations / static_cast<double>(trials);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace hfl

#endif  // HFL_SIMULATION_HPP_
