#ifndef HFL_CONFIG_HPP_
#define HFL_CONFIG_HPP_

#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "hfl/codec.hpp"
#include "hfl/energy.hpp"
#include "hfl/error.hpp"
#include "hfl/recovery.hpp"

namespace hfl {

enum class Scheme { proposed, no_compression, flat_fedavg, random_core };

inline std::string_view scheme_name(Scheme s) {
  switch (s) {
    case Scheme::proposed: return "proposed";
    case Scheme::no_compression: return "no-compression-hierarchical";
    case Scheme::flat_fedavg: return "flat-fedavg";
    case Scheme::random_core: return "random-core";
  }
  return "?";
}

inline Scheme parse_scheme(std::string_view name) {
  for (auto s : {Scheme::proposed, Scheme::no_compression, Scheme::flat_fedavg, Scheme::random_core}) {
    if (scheme_name(s) == name) return s;
  }
  throw ConfigError("unknown scheme '" + std::string(name) +
                    "' (expected proposed, no-compression-hierarchical, flat-fedavg or random-core)");
}

inline bool uses_compression(Scheme s) { return s == Scheme::proposed || s == Scheme::random_core; }

struct LayoutConfig {
  double area_km = 20.0;
  std::size_t hotspots = 4;
  double spread_km = 1.5;
};

struct TopologyConfig {
  double r_neighbor_km = 5.0;
  std::size_t p_min = 5;
  double core_fraction = 0.1;
  std::size_t recluster_period = 0;  // 0: cluster once at round 0
  std::string positions_file;        // empty: generated hotspot layout
  LayoutConfig layout;
};

struct TrainingConfig {
  double lr = 0.01;
  std::size_t local_epochs = 10;
  std::size_t batch_size = 32;
  std::vector<std::size_t> hidden = {32};
  bool zero_init = false;
};

struct CodecConfig {
  double ratio = 0.25;
  Sparsification sparsification{Sparsification::Mode::density, 0.05};
  // Apply the same sparsification in the dense baselines.
  bool baseline_sparsify = false;
};

struct RecoveryConfig {
  AdmmSettings admm;
  // true: sum per cluster and weight by dataset share without dividing by the
  // member count.
  bool unnormalized_sum = false;
};

struct SeedConfig {
  std::uint64_t data = 1;
  std::uint64_t topology = 2;
  std::uint64_t bank = 3;
  std::uint64_t training = 4;

  void set_all(std::uint64_t s) { data = topology = bank = training = s; }
};

struct DataConfig {
  std::string source = "synthetic";  // synthetic | idx
  std::size_t train_samples = 3000;
  std::size_t test_samples = 1000;
  std::size_t features = 16;
  std::size_t classes = 10;
  double spread = 0.5;
  std::string idx_train_images;
  std::string idx_train_labels;
  std::string idx_test_images;
  std::string idx_test_labels;
};

struct ExperimentConfig {
  Scheme scheme = Scheme::proposed;
  std::size_t rounds = 100;
  std::size_t clients = 30;
  bool simulate_learning = true;
  double initial_energy = 1e-2;  // joules per client
  std::string output_dir = "out";
  TopologyConfig topology;
  TrainingConfig training;
  CodecConfig codec;
  RecoveryConfig recovery;
  RadioConfig radio;
  SeedConfig seeds;
  DataConfig data;

  void validate() const;
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out, std::string_view where) {
  if (!j.contains(key)) return;
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!j.at(key).is_number_integer() || j.at(key).get<long long>() < 0) {
        throw ConfigError(std::string(where) + "." + key + ": expected a non-negative integer");
      }
    }
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(where) + "." + key + ": " + e.what());
  }
}

inline void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

inline bool positive(double v) { return v > 0.0 && std::isfinite(v); }

}  // namespace detail

inline void ExperimentConfig::validate() const {
  using detail::positive;
  using detail::require;
  require(rounds >= 1, "rounds must be >= 1");
  require(clients >= 1, "clients must be >= 1");
  require(initial_energy >= 0.0 && std::isfinite(initial_energy), "energy.initial_joules must be >= 0");
  require(positive(topology.r_neighbor_km), "topology.r_neighbor_km must be > 0");
  require(topology.p_min >= 1, "topology.p_min must be >= 1");
  require(topology.core_fraction > 0.0 && topology.core_fraction < 1.0, "topology.core_fraction must lie in (0, 1)");
  require(positive(topology.layout.area_km), "topology.layout.area_km must be > 0");
  require(topology.layout.hotspots >= 1, "topology.layout.hotspots must be >= 1");
  require(topology.layout.spread_km >= 0.0, "topology.layout.spread_km must be >= 0");
  require(training.lr >= 0.0 && std::isfinite(training.lr), "training.lr must be >= 0");
  require(training.batch_size >= 1, "training.batch_size must be >= 1");
  require(!training.hidden.empty(), "training.hidden needs at least one hidden layer");
  for (auto h : training.hidden) require(h >= 1, "training.hidden widths must be >= 1");
  require(codec.ratio > 0.0 && codec.ratio < 1.0, "codec.ratio must lie in (0, 1)");
  if (codec.sparsification.mode == Sparsification::Mode::density) {
    require(codec.sparsification.value > 0.0 && codec.sparsification.value <= 1.0, "codec.density must lie in (0, 1]");
  } else {
    require(codec.sparsification.value >= 0.0 && std::isfinite(codec.sparsification.value), "codec.mu must be >= 0");
  }
  require(positive(recovery.admm.penalty), "recovery.penalty must be > 0");
  require(positive(recovery.admm.tol_primal) && positive(recovery.admm.tol_dual), "recovery tolerances must be > 0");
  require(recovery.admm.max_iter >= 1, "recovery.max_iter must be >= 1");
  radio.validate();
  require(data.source == "synthetic" || data.source == "idx", "data.source must be 'synthetic' or 'idx'");
  require(data.train_samples >= clients, "data.train_samples must be >= clients");
  require(data.test_samples >= 1, "data.test_samples must be >= 1");
  if (data.source == "synthetic") {
    require(data.features >= 1 && data.classes >= 1, "data.features and data.classes must be >= 1");
    require(data.spread >= 0.0 && std::isfinite(data.spread), "data.spread must be >= 0");
  } else {
    require(!data.idx_train_images.empty() && !data.idx_train_labels.empty() && !data.idx_test_images.empty() &&
                !data.idx_test_labels.empty(),
            "data.source = idx needs idx_train_images, idx_train_labels, idx_test_images, idx_test_labels");
  }
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::check_keys;
  using detail::read;
  ExperimentConfig c;
  check_keys(j, "config", {"scheme", "rounds", "clients", "simulate_learning", "output_dir", "topology", "training",
                           "codec", "recovery", "radio", "energy", "seeds", "data"});
  if (j.contains("scheme")) {
    if (!j["scheme"].is_string()) throw ConfigError("config.scheme: expected a string");
    c.scheme = parse_scheme(j["scheme"].get<std::string>());
  }
  read(j, "rounds", c.rounds, "config");
  read(j, "clients", c.clients, "config");
  read(j, "simulate_learning", c.simulate_learning, "config");
  read(j, "output_dir", c.output_dir, "config");

  if (j.contains("topology")) {
    const auto& t = j["topology"];
    check_keys(t, "topology", {"r_neighbor_km", "p_min", "core_fraction", "recluster_period", "positions_file", "layout"});
    read(t, "r_neighbor_km", c.topology.r_neighbor_km, "topology");
    read(t, "p_min", c.topology.p_min, "topology");
    read(t, "core_fraction", c.topology.core_fraction, "topology");
    read(t, "recluster_period", c.topology.recluster_period, "topology");
    read(t, "positions_file", c.topology.positions_file, "topology");
    if (t.contains("layout")) {
      const auto& l = t["layout"];
      check_keys(l, "topology.layout", {"area_km", "hotspots", "spread_km"});
      read(l, "area_km", c.topology.layout.area_km, "topology.layout");
      read(l, "hotspots", c.topology.layout.hotspots, "topology.layout");
      read(l, "spread_km", c.topology.layout.spread_km, "topology.layout");
    }
  }
  if (j.contains("training")) {
    const auto& t = j["training"];
    check_keys(t, "training", {"lr", "local_epochs", "batch_size", "hidden", "zero_init"});
    read(t, "lr", c.training.lr, "training");
    read(t, "local_epochs", c.training.local_epochs, "training");
    read(t, "batch_size", c.training.batch_size, "training");
    read(t, "hidden", c.training.hidden, "training");
    read(t, "zero_init", c.training.zero_init, "training");
  }
  if (j.contains("codec")) {
    const auto& t = j["codec"];
    check_keys(t, "codec", {"ratio", "sparsify", "density", "mu", "baseline_sparsify"});
    read(t, "ratio", c.codec.ratio, "codec");
    std::string mode = "density";
    read(t, "sparsify", mode, "codec");
    if (mode == "density") {
      c.codec.sparsification.mode = Sparsification::Mode::density;
      read(t, "density", c.codec.sparsification.value, "codec");
    } else if (mode == "threshold") {
      c.codec.sparsification.mode = Sparsification::Mode::threshold;
      c.codec.sparsification.value = 0.0;
      read(t, "mu", c.codec.sparsification.value, "codec");
    } else {
      throw ConfigError("codec.sparsify must be 'density' or 'threshold'");
    }
    read(t, "baseline_sparsify", c.codec.baseline_sparsify, "codec");
  }
  if (j.contains("recovery")) {
    const auto& t = j["recovery"];
    check_keys(t, "recovery", {"penalty", "tol_primal", "tol_dual", "max_iter", "unnormalized_sum"});
    read(t, "penalty", c.recovery.admm.penalty, "recovery");
    read(t, "tol_primal", c.recovery.admm.tol_primal, "recovery");
    read(t, "tol_dual", c.recovery.admm.tol_dual, "recovery");
    read(t, "max_iter", c.recovery.admm.max_iter, "recovery");
    read(t, "unnormalized_sum", c.recovery.unnormalized_sum, "recovery");
  }
  if (j.contains("radio")) {
    const auto& t = j["radio"];
    check_keys(t, "radio", {"bandwidth", "noise", "gain", "p_cluster", "p_server"});
    read(t, "bandwidth", c.radio.bandwidth, "radio");
    read(t, "noise", c.radio.noise, "radio");
    read(t, "gain", c.radio.gain, "radio");
    read(t, "p_cluster", c.radio.p_cluster, "radio");
    read(t, "p_server", c.radio.p_server, "radio");
  }
  if (j.contains("energy")) {
    const auto& t = j["energy"];
    check_keys(t, "energy", {"initial_joules"});
    read(t, "initial_joules", c.initial_energy, "energy");
  }
  if (j.contains("seeds")) {
    const auto& t = j["seeds"];
    check_keys(t, "seeds", {"data", "topology", "bank", "training"});
    read(t, "data", c.seeds.data, "seeds");
    read(t, "topology", c.seeds.topology, "seeds");
    read(t, "bank", c.seeds.bank, "seeds");
    read(t, "training", c.seeds.training, "seeds");
  }
  if (j.contains("data")) {
    const auto& t = j["data"];
    check_keys(t, "data", {"source", "train_samples", "test_samples", "features", "classes", "spread",
                           "idx_train_images", "idx_train_labels", "idx_test_images", "idx_test_labels"});
    read(t, "source", c.data.source, "data");
    read(t, "train_samples", c.data.train_samples, "data");
    read(t, "test_samples", c.data.test_samples, "data");
    read(t, "features", c.data.features, "data");
    read(t, "classes", c.data.classes, "data");
    read(t, "spread", c.data.spread, "data");
    read(t, "idx_train_images", c.data.idx_train_images, "data");
    read(t, "idx_train_labels", c.data.idx_train_labels, "data");
    read(t, "idx_test_images", c.data.idx_test_images, "data");
    read(t, "idx_test_labels", c.data.idx_test_labels, "data");
  }
  c.validate();
  return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  const bool density = c.codec.sparsification.mode == Sparsification::Mode::density;
  nlohmann::json codec = {{"ratio", c.codec.ratio},
                          {"sparsify", density ? "density" : "threshold"},
                          {"baseline_sparsify", c.codec.baseline_sparsify}};
  codec[density ? "density" : "mu"] = c.codec.sparsification.value;
  return {
      {"scheme", std::string(scheme_name(c.scheme))},
      {"rounds", c.rounds},
      {"clients", c.clients},
      {"simulate_learning", c.simulate_learning},
      {"output_dir", c.output_dir},
      {"topology",
       {{"r_neighbor_km", c.topology.r_neighbor_km},
        {"p_min", c.topology.p_min},
        {"core_fraction", c.topology.core_fraction},
        {"recluster_period", c.topology.recluster_period},
        {"positions_file", c.topology.positions_file},
        {"layout",
         {{"area_km", c.topology.layout.area_km},
          {"hotspots", c.topology.layout.hotspots},
          {"spread_km", c.topology.layout.spread_km}}}}},
      {"training",
       {{"lr", c.training.lr},
        {"local_epochs", c.training.local_epochs},
        {"batch_size", c.training.batch_size},
        {"hidden", c.training.hidden},
        {"zero_init", c.training.zero_init}}},
      {"codec", codec},
      {"recovery",
       {{"penalty", c.recovery.admm.penalty},
        {"tol_primal", c.recovery.admm.tol_primal},
        {"tol_dual", c.recovery.admm.tol_dual},
        {"max_iter", c.recovery.admm.max_iter},
        {"unnormalized_sum", c.recovery.unnormalized_sum}}},
      {"radio",
       {{"bandwidth", c.radio.bandwidth},
        {"noise", c.radio.noise},
        {"gain", c.radio.gain},
        {"p_cluster", c.radio.p_cluster},
        {"p_server", c.radio.p_server}}},
      {"energy", {{"initial_joules", c.initial_energy}}},
      {"seeds",
       {{"data", c.seeds.data}, {"topology", c.seeds.topology}, {"bank", c.seeds.bank}, {"training", c.seeds.training}}},
      {"data",
       {{"source", c.data.source},
        {"train_samples", c.data.train_samples},
        {"test_samples", c.data.test_samples},
        {"features", c.data.features},
        {"classes", c.data.classes},
        {"spread", c.data.spread},
        {"idx_train_images", c.data.idx_train_images},
        {"idx_train_labels", c.data.idx_train_labels},
        {"idx_test_images", c.data.idx_test_images},
        {"idx_test_labels", c.data.idx_test_labels}}},
  };
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace hfl

#endif  // HFL_CONFIG_HPP_
