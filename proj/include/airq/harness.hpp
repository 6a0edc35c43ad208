#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "airq/config.hpp"
#include "airq/metrics.hpp"
#include "airq/synth.hpp"
#include "airq/truthdisc.hpp"

namespace airq {

struct RunOptions {
  /// Threads for vehicle-side work within a cycle; results do not depend on it.
  unsigned workers = 1;
  /// Keep every CycleResult in the record (memory heavy on long runs).
  bool keep_cycle_results = false;
};

/// Event counters, summed over cycles.
struct EventCounters {
  std::uint64_t clamp_events = 0;
  std::uint64_t floor_events = 0;
  std::uint64_t negative_distance_events = 0;
  std::uint64_t unestimated = 0;
  std::uint64_t carried_forward = 0;
  std::uint64_t iterations = 0;
  std::uint64_t max_iterations_hit = 0;
  std::uint64_t dropped = 0;
  std::uint64_t imitated = 0;
  std::uint64_t fallback_global_mean = 0;
  std::uint64_t fallback_constant = 0;
  std::uint64_t sst_grids = 0;
  std::uint64_t masking_additions = 0;
  std::uint64_t masking_multiplications = 0;
  std::uint64_t unknown_histories = 0;
};

struct AlgorithmRun {
  Algorithm algo{};
  Eigen::MatrixXd estimates;  // grids x cycles, NaN when unestimated
  EventCounters counters;
  std::vector<td::CycleResult> cycles;  // only with keep_cycle_results
};

struct RunRecord {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<AlgorithmRun> runs;
  metrics::TruthDump dump;
  metrics::MetricsTable table;

  const AlgorithmRun& run(Algorithm a) const;
};

/// Runs every configured algorithm over the same world, cycle by cycle.
/// Each algorithm has its own histories and randomness streams.
RunRecord run_experiment(const ExperimentConfig& cfg, const RunOptions& opt = {});

/// As above on a prebuilt world (tests use this to control the inputs).
RunRecord run_experiment(const ExperimentConfig& cfg, const synth::World& world, const RunOptions& opt = {});

synth::World build_world(const ExperimentConfig& cfg);

/// CSV tables plus manifest.json (config hash, seed, version, counters).
void write_outputs(const std::filesystem::path& dir, const ExperimentConfig& cfg, const RunRecord& rec);

/// Recomputes the metric tables from a truths.csv in `dir` and rewrites them.
metrics::MetricsTable recompute_metrics(const std::filesystem::path& dir);

std::string_view version() noexcept;

}  // namespace airq
