#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "airq/random.hpp"
#include "airq/types.hpp"

namespace airq::privacy {

struct PerturbationParams {
  double p1 = 0.2;       // removal probability
  double p2 = 0.05;      // imitation probability
  double lambda1 = 1.5;  // Laplace scale for imitated values
  double lambda2 = 2.0;  // Laplace scale for value noise
  /// Used for imitated values when no grid has a previous truth.
  double fallback_truth = 75.0;
};

void validate(const PerturbationParams& p);

/// Inverse-CDF transform of a uniform draw u in (0, 1) to L(0, scale).
double laplace_from_uniform(double u, double scale);
double laplace_sample(double scale, KeyedStream& stream);

/// Keys the per-(grid) randomness of one vehicle in one cycle.
struct PerturbKey {
  std::uint64_t seed = 0;
  std::uint64_t source = 0;
  Cycle cycle = 0;
};

struct PerturbedEntry {
  GridId grid{};
  double value = 0.0;
  bool imitated = false;  // instrumentation only, never serialized
};

struct PerturbStats {
  std::size_t dropped = 0;
  std::size_t imitated = 0;
  std::size_t uncovered = 0;          // imitation opportunities
  std::size_t fallback_global_mean = 0;
  std::size_t fallback_constant = 0;
};

/// Randomized-response grid perturbation. Each observation is dropped with
/// probability p1; each grid not covered after dropping gets, with probability
/// p2, an imitated value prev_truth + L(0, lambda1). Grids without a previous
/// truth use the mean of the available ones, or fallback_truth if there are none.
/// Output is ordered by grid.
std::vector<PerturbedEntry> grid_perturb(std::span<const Observation> obs, std::size_t grids,
                                         std::span<const std::optional<double>> prev_truths,
                                         const PerturbationParams& p, const PerturbKey& key,
                                         PerturbStats* stats = nullptr);

/// Adds independent L(0, lambda2) noise to every entry, real and imitated.
std::vector<PerturbedEntry> value_perturb(std::vector<PerturbedEntry> entries, double lambda2, const PerturbKey& key);

struct PerturbedValue {
  GridId grid{};
  double value = 0.0;
};

struct PerturbedReport {
  std::string pseudo_id;
  Cycle cycle = 0;
  std::vector<PerturbedValue> values;  // at most one per grid
};

PerturbedReport make_report(std::string pseudo_id, Cycle cycle, std::span<const PerturbedEntry> entries);

/// JSON-lines, one record per value: {"pseudo_id","cycle","grid_id","value"}.
void write_jsonl(std::ostream& os, std::span<const PerturbedReport> reports);
std::vector<PerturbedReport> read_jsonl(std::istream& is);

}  // namespace airq::privacy
