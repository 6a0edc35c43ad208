#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "airq/geo.hpp"
#include "airq/temporal.hpp"
#include "airq/types.hpp"

namespace airq::td {

struct SolverParams {
  double tolerance = 1e-6;
  int max_iterations = 100;
  double distance_floor = 1e-12;
  double weight_cap = 50.0;
  /// Temporary weight before the first update; 1/n when <= 0.
  double initial_weight = 0.0;
  /// Collect objective and constraint values after every half-step.
  bool record_trace = false;
};

void validate(const SolverParams& p);

enum class EstimateStatus : std::uint8_t { unestimated, estimated, carried_forward };

struct SolverStats {
  int iterations = 0;
  std::size_t clamp_events = 0;
  std::size_t floor_events = 0;
  std::size_t negative_distance_events = 0;
  std::size_t carried_forward = 0;
  std::size_t unestimated = 0;
};

/// Per-half-step diagnostics: objective after each weight and truth update,
/// and sum_s exp(-combined weight) before clamping, after each weight update.
struct SolverTrace {
  std::vector<double> objective;
  std::vector<double> constraint_sum;
};

struct CycleResult {
  Eigen::VectorXd truths;   // per grid; NaN when unestimated
  std::vector<EstimateStatus> status;
  Eigen::VectorXd weights;  // per source; NaN for sources without observations
  SolverStats stats;
  SolverTrace trace;

  bool has_truth(GridId g) const { return !std::isnan(truths[static_cast<Eigen::Index>(index(g))]); }
  bool has_weight(SourceId s) const { return !std::isnan(weights[static_cast<Eigen::Index>(index(s))]); }
};

/// One cycle of plaintext observations over a world of `sources` x `grids` slots.
struct CycleInput {
  std::span<const Observation> observations;
  std::size_t sources = 0;
  std::size_t grids = 0;
  Cycle cycle = 0;
};

/// Throws ProtocolError on out-of-range ids or a repeated (source, grid) pair.
void validate(const CycleInput& in);

/// An observation routed to a target grid with its spatial coefficient.
struct ReuseEntry {
  std::uint32_t source = 0;
  std::uint32_t target = 0;
  double theta = 0.0;
  double value = 0.0;
};

/// Expands every observation over the nonzero theta row of its grid.
std::vector<ReuseEntry> expand(std::span<const Observation> obs, const geo::ThetaTable& thetas);
/// Same-grid entries only (theta = 1); the SST / TD view of the data.
std::vector<ReuseEntry> own_grid_entries(std::span<const Observation> obs);

using DeltaList = std::vector<temporal::DeltaCoeffs>;

DeltaList weight_deltas(std::span<const temporal::WeightHistory> hist, const temporal::TemporalParams& p, Cycle t);
DeltaList truth_deltas(std::span<const temporal::TruthHistory> hist, const temporal::TemporalParams& p, Cycle t);
/// (0, 1) for every slot.
DeltaList identity_deltas(std::size_t count);

/// sum_s sum_g sum_j Fa(w'_s) theta (v - Fb(v*'_g))^2 with squared-L2 truth distance.
/// Entries whose target truth is NaN are skipped.
double objective(std::span<const ReuseEntry> entries, const Eigen::VectorXd& temp_weights,
                 const Eigen::VectorXd& temp_truths, const DeltaList& weight_d, const DeltaList& truth_d);

/// ST objective evaluated from observations and the theta table.
double st_objective(const CycleInput& in, const geo::ThetaTable& thetas, const Eigen::VectorXd& temp_weights,
                    const Eigen::VectorXd& temp_truths, const DeltaList& weight_d, const DeltaList& truth_d);
/// SST objective: same-grid reports only, no truth combination.
double sst_objective(const CycleInput& in, const Eigen::VectorXd& temp_weights, const Eigen::VectorXd& truths,
                     const DeltaList& weight_d);

/// KKT truth update. Grids without any routed entry come back NaN. When every
/// contributor to a grid has weight zero (a lone source), the update is 0/0 and
/// the equal-weight limit sum theta (v - d1) / (d2 sum theta) is used instead.
Eigen::VectorXd st_update_truths(const CycleInput& in, const geo::ThetaTable& thetas,
                                 const Eigen::VectorXd& temp_weights, const DeltaList& weight_d,
                                 const DeltaList& truth_d, const Eigen::VectorXd& current);

/// KKT weight update; returns temporary weights w' (NaN for absent sources).
Eigen::VectorXd st_update_weights(const CycleInput& in, const geo::ThetaTable& thetas,
                                  const Eigen::VectorXd& temp_truths, const DeltaList& truth_d,
                                  const DeltaList& weight_d, const SolverParams& p, SolverStats* stats = nullptr);

Eigen::VectorXd sst_update_truths(const CycleInput& in, const Eigen::VectorXd& temp_weights,
                                  const DeltaList& weight_d, const Eigen::VectorXd& current);

Eigen::VectorXd sst_update_weights(const CycleInput& in, const Eigen::VectorXd& truths, const DeltaList& weight_d,
                                   const SolverParams& p, SolverStats* stats = nullptr);

/// Spatio-temporal truth discovery for one cycle. History appends are the caller's duty.
CycleResult run_st(const CycleInput& in, const geo::ThetaTable& thetas,
                   std::span<const temporal::WeightHistory> weight_hist,
                   std::span<const temporal::TruthHistory> truth_hist, const temporal::TemporalParams& tp,
                   const SolverParams& sp);

/// Simplified ST: no spatial reuse, no truth history.
CycleResult run_sst(const CycleInput& in, std::span<const temporal::WeightHistory> weight_hist,
                    const temporal::TemporalParams& tp, const SolverParams& sp);

/// CRH-style baseline: run_sst without any temporal correlation.
CycleResult run_baseline_td(const CycleInput& in, const SolverParams& sp);

namespace detail {

/// Computes combined weights log(total / dist_s) from per-source distances,
/// applying the floor and cap; returns temporary weights through the deltas.
/// Absent sources (NaN distance) stay NaN.
Eigen::VectorXd weights_from_distances(const Eigen::VectorXd& dist, const DeltaList& weight_d,
                                       const SolverParams& p, SolverStats* stats, double* constraint_sum);

Eigen::VectorXd combined(const Eigen::VectorXd& temp, const DeltaList& d);

/// max_g |a - b| / max(|a|, 1) over grids where both are finite.
double max_relative_change(const Eigen::VectorXd& next, const Eigen::VectorXd& prev);

/// Alternating block-coordinate loop shared by the plaintext and masked solvers.
/// Model must provide:
///   Eigen::VectorXd distances(const Eigen::VectorXd& combined_truths) const;
///   Eigen::VectorXd truths(const Eigen::VectorXd& combined_weights, const Eigen::VectorXd& current) const;
///   double objective(const Eigen::VectorXd& combined_weights, const Eigen::VectorXd& combined_truths) const;
template <typename Model>
void iterate(const Model& model, Eigen::VectorXd& temp_truths, Eigen::VectorXd& temp_weights,
             const DeltaList& weight_d, const DeltaList& truth_d, const SolverParams& p, SolverStats& stats,
             SolverTrace& trace) {
  Eigen::VectorXd fb = combined(temp_truths, truth_d);
  for (int it = 1; it <= p.max_iterations; ++it) {
    stats.iterations = it;
    double csum = 0.0;
    temp_weights = weights_from_distances(model.distances(fb), weight_d, p, &stats, &csum);
    const Eigen::VectorXd fa = combined(temp_weights, weight_d);
    if (p.record_trace) {
      trace.constraint_sum.push_back(csum);
      trace.objective.push_back(model.objective(fa, fb));
    }
    Eigen::VectorXd next = model.truths(fa, temp_truths);
    Eigen::VectorXd next_fb = combined(next, truth_d);
    if (p.record_trace) trace.objective.push_back(model.objective(fa, next_fb));
    const double change = max_relative_change(next_fb, fb);
    temp_truths = std::move(next);
    fb = std::move(next_fb);
    if (change < p.tolerance) break;
  }
}

}  // namespace detail

}  // namespace airq::td
