#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "hfl/codec.hpp"
#include "hfl/energy.hpp"

using namespace hfl;

namespace {

// B log2(1 + h^2 p / N0) evaluated in long double with log1p.
long double rate_oracle(long double b, long double h, long double p, long double n0) {
  return b * std::log1p(h * h * p / n0) / std::log(2.0L);
}

ClusterMap two_clusters() {
  return ClusterMap{{Cluster{{0, 1, 2}, {}, 1}, Cluster{{3, 4}, {}, 4}}};
}

}  // namespace

TEST(Rate, ReferenceConstants) {
  const RadioConfig r;
  EXPECT_NEAR(server_rate(r), 1.0630e9, 1e5);
  EXPECT_NEAR(cluster_rate(r), 7.9726e8, 1e5);
  EXPECT_NEAR(server_rate(r), static_cast<double>(rate_oracle(40e6L, 1.0L, 1e-2L, 1e-10L)), 1e-3);
  EXPECT_NEAR(cluster_rate(r), static_cast<double>(rate_oracle(40e6L, 1.0L, 1e-4L, 1e-10L)), 1e-3);
}

TEST(Rate, VanishingGain) {
  EXPECT_LT(tx_rate(40e6, 1e-12, 1e-2, 1e-10), 1.0);
  EXPECT_GT(tx_rate(40e6, 1e-12, 1e-2, 1e-10), 0.0);
}

TEST(Rate, MonotoneInPowerAndBandwidth) {
  double prev = 0.0;
  for (double p = 1e-6; p < 1.0; p *= 1.7) {
    const double v = tx_rate(40e6, 1.0, p, 1e-10);
    EXPECT_GT(v, prev);
    prev = v;
  }
  prev = 0.0;
  for (double b = 1e3; b < 1e9; b *= 2.3) {
    const double v = tx_rate(b, 1.0, 1e-4, 1e-10);
    EXPECT_GT(v, prev);
    prev = v;
  }
  EXPECT_THROW(tx_rate(0.0, 1.0, 1.0, 1.0), UsageError);
  EXPECT_THROW(tx_rate(1.0, 1.0, -1.0, 1.0), UsageError);
}

TEST(RoundCost, OneSecondOfClusterAirtime) {
  const RadioConfig r;
  ClusterMap map{{Cluster{{0, 1}, {}, 0}}};
  const auto cost = round_cost(cluster_rate(r), 0.0, map, r);
  EXPECT_NEAR(cost.cost_client, 1e-4, 1e-18);
  EXPECT_EQ(cost.cost_core, 0.0);
}

TEST(RoundCost, SingletonsPayOnlyCoreUplink) {
  const RadioConfig r;
  ClusterMap map{{Cluster{{0}, {}, 0}, Cluster{{1}, {}, 1}}};
  const auto cost = round_cost(1000.0, 5000.0, map, r);
  EXPECT_EQ(cost.cost_client, 0.0);
  EXPECT_NEAR(cost.cost_core, 2.0 * 1e-2 * 5000.0 / server_rate(r), 1e-20);
}

TEST(RoundCost, HandSummedTwoClusterLayout) {
  const RadioConfig r;
  const double s_member = payload_bits(136);
  const double s_core = payload_bits(136);
  const auto cost = round_cost(s_member, s_core, two_clusters(), r);
  // Three non-core members, two cores.
  const double v_c = 40e6 * std::log2(1.0 + 1e-4 / 1e-10);
  const double v_s = 40e6 * std::log2(1.0 + 1e-2 / 1e-10);
  const double member = 1e-4 * 64.0 * 136.0 / v_c;
  const double core = 1e-2 * 64.0 * 136.0 / v_s;
  EXPECT_NEAR(cost.cost_client, 3.0 * member, 1e-12);
  EXPECT_NEAR(cost.cost_core, 2.0 * core, 1e-12);
  EXPECT_NEAR(cost.total(), 3.0 * member + 2.0 * core, 1e-12);
  ASSERT_EQ(cost.charges.size(), 5u);
  EXPECT_NEAR(cost.charges[1].joules, core, 1e-20);
  EXPECT_NEAR(cost.charges[0].joules, member, 1e-20);
}

TEST(RoundCost, CompressionIsCheaperOnIntraClusterLinks) {
  const RadioConfig r;
  for (double ratio : {0.1, 0.25, 0.5, 0.9}) {
    const std::size_t G = 544;
    const auto dense = round_cost(payload_bits(G), payload_bits(G), two_clusters(), r);
    const auto comp =
        round_cost(payload_bits(projected_length(G, ratio)), payload_bits(projected_length(G, ratio)), two_clusters(), r);
    EXPECT_LT(comp.cost_client, dense.cost_client);
  }
}

TEST(Ledger, ZeroCostRoundChangesNothing) {
  const std::vector<ClientId> ids{0, 1, 2, 3, 4};
  EnergyLedger ledger(ids, 1e-3);
  CostBreakdown none;
  for (auto id : ids) none.charges.push_back({id, 0.0});
  EXPECT_TRUE(ledger.charge_and_reap(none).empty());
  for (auto id : ids) EXPECT_EQ(ledger.residual(id), 1e-3);
}

TEST(Ledger, OverdrawnClientDiesAtZero) {
  const std::vector<ClientId> ids{7};
  EnergyLedger ledger(ids, 1e-6);
  CostBreakdown c;
  c.charges.push_back({7, 2e-6});
  EXPECT_EQ(ledger.charge_and_reap(c), std::vector<ClientId>{7});
  EXPECT_EQ(ledger.residual(7), 0.0);
  EXPECT_TRUE(ledger.dead(7));
  EXPECT_TRUE(ledger.live_clients().empty());
  CostBreakdown unknown;
  unknown.charges.push_back({8, 1.0});
  EXPECT_THROW(ledger.charge_and_reap(unknown), InternalError);
}

// 500 rounds of random cores and payloads replayed with plain arrays.
TEST(Ledger, MatchesIndependentReplayAndConservesEnergy) {
  const RadioConfig r;
  std::vector<ClientId> ids(12);
  for (ClientId i = 0; i < 12; ++i) ids[i] = i;
  const double e0 = 5e-6;
  EnergyLedger ledger(ids, e0);

  std::vector<double> replay(12, e0);
  std::vector<bool> replay_dead(12, false);
  double charged = 0.0;
  Rng rng(31);
  const double v_c = 40e6 * std::log2(1.0 + 1e-4 / 1e-10);
  const double v_s = 40e6 * std::log2(1.0 + 1e-2 / 1e-10);

  for (std::uint64_t u = 0; u < 500; ++u) {
    ClusterMap map{{Cluster{}, Cluster{}}};
    for (ClientId id : ledger.live_clients()) map.clusters[id % 2].members.push_back(id);
    std::erase_if(map.clusters, [](const Cluster& c) { return c.members.empty(); });
    if (map.clusters.empty()) break;
    map = select_random_cores(map, u, 99);
    const double s_member = payload_bits(100 + rng.index(400));
    const double s_core = payload_bits(100 + rng.index(400));
    const auto cost = round_cost(s_member, s_core, map, r);
    ledger.charge_and_reap(cost);

    for (const auto& c : map.clusters) {
      for (auto id : c.members) {
        const double j = id == *c.core ? 1e-2 * s_core / v_s : 1e-4 * s_member / v_c;
        const double take = std::min(replay[id], j);
        replay[id] -= take;
        charged += take;
        if (replay[id] <= 0.0) replay_dead[id] = true;
      }
    }
    EXPECT_NEAR(ledger.initial_total() - ledger.residual_total(), ledger.drawn(), 1e-9);
  }
  std::size_t dead = 0;
  for (bool d : replay_dead) dead += d ? 1 : 0;
  EXPECT_GT(dead, 0u);
  EXPECT_EQ(ledger.dead_clients().size(), dead);
  EXPECT_NEAR(ledger.drawn(), charged, 1e-12);
  for (ClientId id : ids) EXPECT_NEAR(ledger.residual(id), replay[id], 1e-15);
}
