#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "hfl/simulation.hpp"

using namespace hfl;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.rounds = 5;
  c.clients = 10;
  c.topology.p_min = 3;
  c.topology.layout = {8.0, 2, 1.0};
  c.training.hidden = {8};
  c.training.local_epochs = 2;
  c.data.train_samples = 300;
  c.data.test_samples = 100;
  c.data.features = 5;
  c.data.classes = 4;
  c.codec.ratio = 0.5;
  return c;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / "hfl_test_sim" / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double max_rel_gap(const std::vector<LayerBlock>& a, const std::vector<LayerBlock>& b) {
  double diff = 0.0;
  double norm = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (std::size_t i = 0; i < a[k].values.size(); ++i) {
      diff += (a[k].values[i] - b[k].values[i]) * (a[k].values[i] - b[k].values[i]);
      norm += b[k].values[i] * b[k].values[i];
    }
  }
  return std::sqrt(diff) / std::max(std::sqrt(norm), 1e-300);
}

}  // namespace

// With one client, compression plus exact recovery reduces to plain local SGD
// on the same sparsified body.
TEST(Simulation, SingleClientMatchesUncompressedRun) {
  auto c = small_config();
  c.clients = 1;
  c.data.train_samples = 60;
  c.codec.ratio = 0.9;
  c.codec.sparsification = {Sparsification::Mode::density, 0.2};
  auto baseline = c;
  baseline.scheme = Scheme::no_compression;
  baseline.codec.baseline_sparsify = true;
  const auto a = simulate(c);
  const auto b = simulate(baseline);
  ASSERT_EQ(a.rounds.size(), b.rounds.size());
  for (std::size_t u = 0; u < a.rounds.size(); ++u) {
    EXPECT_EQ(a.rounds[u].nonconverged_layers, 0u);
    EXPECT_NEAR(a.rounds[u].accuracy, b.rounds[u].accuracy, 1e-3) << "round " << u;
  }
}

TEST(Simulation, ZeroModelIsAFixedPoint) {
  auto c = small_config();
  c.training.zero_init = true;
  c.training.local_epochs = 0;
  Simulation sim(c);
  for (int u = 0; u < 3; ++u) {
    sim.run_round();
    for (const auto& l : sim.global_body()) EXPECT_EQ(l.values, std::vector<double>(l.values.size(), 0.0));
  }
}

// Two clusters of two: hierarchical compressed aggregation against flat
// averaging with the same sparsification.
TEST(Simulation, FlatAndProposedBodiesAgree) {
  const auto dir = temp_dir("flat");
  const auto pos = (dir / "pos.txt").string();
  std::ofstream(pos) << "0 0 0\n1 0.5 0\n2 100 0\n3 100.5 0\n";
  auto c = small_config();
  c.clients = 4;
  c.topology.positions_file = pos;
  c.topology.p_min = 2;
  // 16 -> 16 gives a 272-entry body, large enough that the two members'
  // supports overlap and the summed layer stays recoverable.
  c.training.hidden = {16};
  c.training.local_epochs = 1;
  c.data.features = 16;
  c.data.train_samples = 80;
  c.codec.ratio = 0.9;
  c.codec.sparsification = {Sparsification::Mode::density, 0.5};
  auto flat = c;
  flat.scheme = Scheme::flat_fedavg;
  flat.codec.baseline_sparsify = true;

  Simulation p(c);
  Simulation f(flat);
  for (int u = 0; u < 5; ++u) {
    const auto mp = p.run_round();
    f.run_round();
    EXPECT_EQ(mp.clusters, 2u);
    EXPECT_LT(max_rel_gap(p.global_body(), f.global_body()), 1e-3) << "round " << u;
  }
}

TEST(Simulation, AblationSharesTopologyDecisions) {
  auto c = small_config();
  c.rounds = 12;
  auto nc = c;
  nc.scheme = Scheme::no_compression;
  EXPECT_EQ(simulate(c).topology_log, simulate(nc).topology_log);
}

TEST(Simulation, LiveClientBookkeeping) {
  auto c = small_config();
  c.rounds = 400;
  c.simulate_learning = false;
  c.initial_energy = 3e-8;
  Simulation sim(c);
  std::size_t prev_dead = 0;
  double prev_cost = 0.0;
  while (sim.round() < c.rounds && !sim.finished()) {
    const auto live_before = sim.ledger().live_clients();
    const std::set<ClientId> live(live_before.begin(), live_before.end());
    const auto m = sim.run_round();
    for (const auto& cl : sim.last_map().clusters) {
      for (auto id : cl.members) EXPECT_TRUE(live.contains(id));
    }
    EXPECT_EQ(m.live_clients, live.size());
    EXPECT_GE(m.dead_clients, prev_dead);
    EXPECT_GE(m.cumulative_cost, prev_cost);
    EXPECT_GE(m.clusters, 1u);
    // Charges are clamped at the remaining energy, so the ledger can draw less
    // than the nominal transmission cost in a client's final round.
    EXPECT_NEAR(sim.ledger().initial_total() - sim.ledger().residual_total(), sim.ledger().drawn(), 1e-9);
    EXPECT_LE(sim.ledger().drawn(), m.cumulative_cost * (1.0 + 1e-12));
    prev_dead = m.dead_clients;
    prev_cost = m.cumulative_cost;
  }
  EXPECT_GT(prev_dead, 0u);
}

TEST(Simulation, AllDeadTerminatesWithSummary) {
  auto c = small_config();
  c.rounds = 100000;
  c.simulate_learning = false;
  c.initial_energy = 1e-7;
  const auto r = simulate(c);
  EXPECT_TRUE(r.all_dead);
  EXPECT_LT(r.rounds.size(), c.rounds);
  EXPECT_NE(format_summary(c, r).find("terminated_all_dead: yes"), std::string::npos);
}

TEST(Simulation, CompressedRoundsCostLess) {
  auto c = small_config();
  c.simulate_learning = false;
  auto nc = c;
  nc.scheme = Scheme::no_compression;
  auto fl = c;
  fl.scheme = Scheme::flat_fedavg;
  const double p = simulate(c).last().cumulative_cost;
  const double n = simulate(nc).last().cumulative_cost;
  const double f = simulate(fl).last().cumulative_cost;
  EXPECT_LT(p, n);
  EXPECT_LT(n, f);
}

TEST(Experiment, WritesByteIdenticalOutputs) {
  const auto a = temp_dir("run_a");
  const auto b = temp_dir("run_b");
  const auto c = small_config();
  run_experiment(c, a);
  run_experiment(c, b);
  const auto metrics = slurp(a / "metrics.csv");
  EXPECT_EQ(metrics, slurp(b / "metrics.csv"));
  EXPECT_EQ(slurp(a / "topology.log"), slurp(b / "topology.log"));
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), kMetricsHeader);
  std::size_t lines = 0;
  for (char ch : metrics) lines += ch == '\n' ? 1 : 0;
  EXPECT_EQ(lines, 6u);
  EXPECT_NE(slurp(a / "summary.txt").find("rounds_completed: 5"), std::string::npos);
}

TEST(Experiment, UnwritableOutputFailsBeforeCompute) {
  const auto dir = temp_dir("blocked");
  std::ofstream(dir / "file") << "x";
  auto c = small_config();
  c.rounds = 1000000;  // would take far too long if it ran
  EXPECT_THROW(run_experiment(c, dir / "file" / "sub"), IoError);
}

TEST(Experiment, SweepRadiusMergesClusters) {
  auto c = small_config();
  c.rounds = 3;
  c.simulate_learning = false;
  const std::vector<double> radii{0.01, 100.0};
  const auto pts = sweep_radius(c, radii);
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[0].clusters, c.clients);
  EXPECT_EQ(pts[1].clusters, 1u);
  EXPECT_GT(pts[0].total_cost, pts[1].total_cost);
}

TEST(Bench, PlantedRecoveryRates) {
  const std::vector<std::size_t> ks{5, 40};
  const auto rows = bench_recovery(200, 60, ks, 20, 1);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_GE(rows[0].rate(), 0.95);
  EXPECT_LE(rows[1].rate(), rows[0].rate());
  EXPECT_THROW(bench_recovery(10, 10, ks, 1, 1), UsageError);
}
