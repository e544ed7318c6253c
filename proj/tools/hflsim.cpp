// Command-line front end for the hierarchical federated learning simulator.
//
//   hflsim run --config <path> [--seed N] [--out <dir>] [--scheme <name>]
//   hflsim sweep-radius --config <path> --radii 1,2,5,10,20
//   hflsim bench-recovery --G 200 --g 60 --kmax 30 --trials 100
//   hflsim validate-config --config <path>
//
// Exit status: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hfl/hfl.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

hfl::ExperimentConfig load_with_overrides(const std::string& path, std::optional<std::uint64_t> seed,
                                          const std::string& out, const std::string& scheme) {
  auto cfg = hfl::load_config(path);
  if (seed) cfg.seeds.set_all(*seed);
  if (!out.empty()) cfg.output_dir = out;
  if (!scheme.empty()) cfg.scheme = hfl::parse_scheme(scheme);
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical federated learning simulator with compressed LC aggregation"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string scheme;

  auto* run = app.add_subcommand("run", "Run one experiment and write metrics.csv, summary.txt, topology.log");
  run->add_option("--config", config_path, "Experiment configuration (JSON)")->required();
  run->add_option("--seed", seed, "Use this value for every seed");
  run->add_option("--out", out_dir, "Output directory (overrides output_dir)");
  run->add_option("--scheme", scheme, "proposed | no-compression-hierarchical | flat-fedavg | random-core");

  std::vector<double> radii;
  auto* sweep = app.add_subcommand("sweep-radius", "Total energy cost per neighbourhood radius");
  sweep->add_option("--config", config_path, "Experiment configuration (JSON)")->required();
  sweep->add_option("--radii", radii, "Comma separated radii in km")->required()->delimiter(',');
  sweep->add_option("--out", out_dir, "Also write sweep.csv here");

  std::size_t full_length = 200;
  std::size_t projected = 60;
  std::size_t kmax = 30;
  std::size_t kstep = 5;
  std::size_t trials = 100;
  std::uint64_t bench_seed = 1;
  auto* bench = app.add_subcommand("bench-recovery", "Planted sparse recovery success rates");
  bench->add_option("--G", full_length, "Signal length")->capture_default_str();
  bench->add_option("--g", projected, "Measurements")->capture_default_str();
  bench->add_option("--kmax", kmax, "Largest sparsity level")->capture_default_str();
  bench->add_option("--kstep", kstep, "Sparsity grid step")->capture_default_str();
  bench->add_option("--trials", trials, "Trials per sparsity level")->capture_default_str();
  bench->add_option("--seed", bench_seed, "Seed")->capture_default_str();

  auto* validate = app.add_subcommand("validate-config", "Parse and validate a configuration file");
  validate->add_option("--config", config_path, "Experiment configuration (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*run) {
      const auto cfg = load_with_overrides(config_path, seed, out_dir, scheme);
      const auto result = hfl::run_experiment(cfg, cfg.output_dir);
      std::cout << hfl::format_summary(cfg, result);
    } else if (*sweep) {
      const auto cfg = load_with_overrides(config_path, std::nullopt, "", "");
      const auto points = hfl::sweep_radius(cfg, radii);
      std::string table = "radius_km,total_cost_j,clusters\n";
      for (const auto& p : points) {
        table += hfl::format_real(p.radius_km) + "," + hfl::format_real(p.total_cost) + "," +
                 std::to_string(p.clusters) + "\n";
      }
      std::cout << table;
      if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream f(std::filesystem::path(out_dir) / "sweep.csv");
        if (!(f << table)) throw hfl::IoError("cannot write sweep.csv under " + out_dir);
      }
    } else if (*bench) {
      if (kstep == 0) throw hfl::UsageError("--kstep must be positive");
      std::vector<std::size_t> ks;
      for (std::size_t k = kstep; k <= kmax; k += kstep) ks.push_back(k);
      if (ks.empty()) ks.push_back(kmax);
      const auto rows = hfl::bench_recovery(full_length, projected, ks, trials, bench_seed);
      std::cout << "G,g,k,successes,trials,success_rate,mean_iterations\n";
      for (const auto& r : rows) {
        std::cout << full_length << ',' << projected << ',' << r.sparsity << ',' << r.successes << ',' << r.trials
                  << ',' << hfl::format_real(r.rate()) << ',' << hfl::format_real(r.mean_iterations) << '\n';
      }
    } else if (*validate) {
      const auto cfg = hfl::load_config(config_path);
      std::cout << hfl::config_to_json(cfg).dump(2) << '\n';
    }
  } catch (const hfl::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const hfl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
