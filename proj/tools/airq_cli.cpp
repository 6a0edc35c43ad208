// Command-line front end: run experiments, dump worlds, recompute metrics.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "airq/config.hpp"
#include "airq/harness.hpp"
#include "airq/synth.hpp"

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kBadConfig = 2, kRuntime = 3 };

template <typename F>
int guarded(F&& f) {
  try {
    f();
    return kOk;
  } catch (const airq::ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kBadConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Privacy-preserving truth discovery for vehicular air-quality sensing"};
  app.set_version_flag("--version", std::string(airq::version()));
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  unsigned workers = 1;
  auto* run = app.add_subcommand("run", "Run the configured algorithms and write metric tables");
  run->add_option("--config", config_path, "JSON config file")->required();
  run->add_option("--seed", seed, "Override the master seed");
  run->add_option("--out", out_dir, "Output directory (default: the config's output_dir)");
  run->add_option("--workers", workers, "Threads for vehicle-side work")->check(CLI::Range(1u, 256u));

  std::string world_out;
  auto* gen = app.add_subcommand("gen-world", "Write the synthetic world as JSON lines");
  gen->add_option("--config", config_path, "JSON config file")->required();
  gen->add_option("--out", world_out, "Output file")->required();

  std::string metrics_in;
  auto* met = app.add_subcommand("metrics", "Recompute metric tables from a truths.csv dump");
  met->add_option("--in", metrics_in, "Run output directory")->required();

  auto* val = app.add_subcommand("validate-config", "Check a config file and print its canonical form");
  val->add_option("path", config_path, "JSON config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  if (*run) {
    return guarded([&] {
      auto cfg = airq::load_config(config_path);
      if (seed) cfg.seed = *seed;
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      airq::RunOptions opt;
      opt.workers = workers;
      const auto rec = airq::run_experiment(cfg, opt);
      airq::write_outputs(cfg.output_dir, cfg, rec);
      std::cout << "config " << rec.config_hash << ", seed " << rec.seed << ", wrote " << cfg.output_dir.string()
                << '\n';
    });
  }
  if (*gen) {
    return guarded([&] {
      const auto cfg = airq::load_config(config_path);
      const auto world = airq::build_world(cfg);
      std::ofstream os(world_out, std::ios::binary);
      if (!os) throw std::runtime_error("cannot write " + world_out);
      airq::synth::write_world_jsonl(os, world);
    });
  }
  if (*met) {
    return guarded([&] { airq::recompute_metrics(metrics_in); });
  }
  if (*val) {
    return guarded([&] { std::cout << airq::config_to_json(airq::load_config(config_path)) << '\n'; });
  }
  return kUsage;
}
