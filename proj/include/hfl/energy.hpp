#ifndef HFL_ENERGY_HPP_
#define HFL_ENERGY_HPP_

#include <algorithm>
#include <cmath>
#include <numbers>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hfl/error.hpp"
#include "hfl/topology.hpp"

namespace hfl {

struct RadioConfig {
  double bandwidth = 40e6;  // B, bits/s
  double noise = 1e-10;     // N0, W
  double gain = 1.0;        // h
  double p_cluster = 1e-4;  // client -> core transmit power, W
  double p_server = 1e-2;   // core -> server transmit power, W

  void validate() const {
    for (double v : {bandwidth, noise, gain, p_cluster, p_server}) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("radio constants must be positive and finite");
    }
  }
};

// Shannon rate B log2(1 + h^2 p / N0) in bits/s.
inline double tx_rate(double bandwidth, double gain, double power, double noise) {
  if (!(bandwidth > 0.0 && gain > 0.0 && power > 0.0 && noise > 0.0)) {
    throw UsageError("tx_rate: all inputs must be positive");
  }
  return bandwidth * std::log1p(gain * gain * power / noise) / std::numbers::ln2;
}

inline double cluster_rate(const RadioConfig& r) { return tx_rate(r.bandwidth, r.gain, r.p_cluster, r.noise); }
inline double server_rate(const RadioConfig& r) { return tx_rate(r.bandwidth, r.gain, r.p_server, r.noise); }

inline constexpr double kBitsPerReal = 64.0;

inline double payload_bits(std::size_t reals) { return kBitsPerReal * static_cast<double>(reals); }

struct Charge {
  ClientId client = 0;
  double joules = 0.0;
};

struct CostBreakdown {
  std::vector<Charge> charges;
  double cost_client = 0.0;  // intra-cluster uplinks of non-core members
  double cost_core = 0.0;    // core -> server uplinks
  double total() const { return cost_client + cost_core; }
};

// Transmission energy of one round: every non-core member pays
// p_cluster * S_ij / v_cluster, every core pays p_server * S_i / v_server.
// Cores do not pay for their own model.
inline CostBreakdown round_cost(double member_bits, double core_bits, const ClusterMap& map,
                                const RadioConfig& radio) {
  if (!(member_bits >= 0.0 && core_bits >= 0.0)) throw UsageError("round_cost: sizes must be >= 0");
  const double member_j = radio.p_cluster * member_bits / cluster_rate(radio);
  const double core_j = radio.p_server * core_bits / server_rate(radio);
  CostBreakdown out;
  for (const auto& cluster : map.clusters) {
    if (!cluster.core) throw InternalError("round_cost: cluster without a core");
    for (auto id : cluster.members) {
      if (id == *cluster.core) {
        out.charges.push_back({id, core_j});
        out.cost_core += core_j;
      } else {
        out.charges.push_back({id, member_j});
        out.cost_client += member_j;
      }
    }
  }
  return out;
}

// Residual energy per client. Charges are clamped at the remaining energy, so
// `drawn()` always equals initial total minus current total.
class EnergyLedger {
 public:
  EnergyLedger() = default;
  EnergyLedger(std::span<const ClientId> clients, double initial_joules) {
    for (auto id : clients) {
      residual_[id] = initial_joules;
      initial_total_ += initial_joules;
      if (!(initial_joules > 0.0)) dead_.push_back(id);
    }
  }

  double residual(ClientId id) const {
    auto it = residual_.find(id);
    if (it == residual_.end()) throw InternalError("ledger: unknown client " + std::to_string(id));
    return it->second;
  }
  bool dead(ClientId id) const { return std::find(dead_.begin(), dead_.end(), id) != dead_.end(); }
  const std::vector<ClientId>& dead_clients() const { return dead_; }
  std::vector<ClientId> live_clients() const {
    std::vector<ClientId> out;
    for (const auto& [id, e] : residual_) {
      if (!dead(id)) out.push_back(id);
    }
    return out;
  }
  double initial_total() const { return initial_total_; }
  double residual_total() const {
    double s = 0.0;
    for (const auto& [id, e] : residual_) s += e;
    return s;
  }
  double drawn() const { return drawn_; }

  // Subtracts each charge; returns clients that died in this call.
  std::vector<ClientId> charge_and_reap(const CostBreakdown& breakdown) {
    for (const auto& c : breakdown.charges) {
      if (!residual_.contains(c.client)) throw InternalError("ledger: unknown client " + std::to_string(c.client));
    }
    std::vector<ClientId> newly_dead;
    for (const auto& c : breakdown.charges) {
      auto& e = residual_[c.client];
      const double take = std::min(e, c.joules);
      e -= take;
      drawn_ += take;
      if (e <= 0.0) {
        e = 0.0;
        if (!dead(c.client)) {
          dead_.push_back(c.client);
          newly_dead.push_back(c.client);
        }
      }
    }
    return newly_dead;
  }

 private:
  std::map<ClientId, double> residual_;
  std::vector<ClientId> dead_;
  double initial_total_ = 0.0;
  double drawn_ = 0.0;
};

}  // namespace hfl

#endif  // HFL_ENERGY_HPP_
