#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "airq/fixed_point.hpp"
#include "airq/geo.hpp"
#include "airq/random.hpp"
#include "airq/temporal.hpp"
#include "airq/truthdisc.hpp"
#include "airq/types.hpp"

namespace airq::secmask {

/// The three masked value kinds: theta*v, theta*v^2, theta.
enum class ValueKind : std::uint32_t { theta_v = 1, theta_v2 = 2, theta = 3 };

/// Identifies one one-time-pad stream. Only the owning source can regenerate it.
struct MaskKey {
  std::uint64_t seed = 0;
  std::uint64_t source = 0;  // real id of the owning vehicle
  Cycle cycle = 0;
  ValueKind kind = ValueKind::theta_v;
  GridId grid{};

  std::uint64_t stream_key() const noexcept;
  KeyedStream stream() const noexcept { return KeyedStream(stream_key()); }
};

/// Vehicle-side operation counts (Table-style cost accounting).
struct MaskingCost {
  std::uint64_t additions = 0;
  std::uint64_t multiplications = 0;
};

/// out_j = x_j + sum_{j<j'} a_{j,j'} - sum_{j'<j} a_{j',j} over the ring, with one
/// fresh a per pair drawn from `masks` in (j, j') lexicographic order.
/// The sum of the outputs equals the sum of the inputs exactly.
std::vector<FixedPoint> mask_sequence(std::span<const FixedPoint> values, KeyedStream& masks,
                                      MaskingCost* cost = nullptr);

struct MaskedGridBlock {
  GridId grid{};
  std::vector<FixedPoint> beta1;  // masked theta * v
  std::vector<FixedPoint> beta2;  // masked theta * v^2
  std::vector<FixedPoint> beta3;  // masked theta
};

struct MaskedReport {
  std::string pseudo_id;
  Cycle cycle = 0;
  std::vector<MaskedGridBlock> blocks;  // ascending grid order
};

/// Theta as the vehicle uses it: quantized to the ring scale before any product,
/// so chi3 is exact and theta*v, theta*v^2 carry a single rounding each.
double quantized_theta(double theta);

/// Builds one vehicle's masked upload. `obs` are that vehicle's observations in
/// this cycle (distinct grids). Throws ProtocolError if a grid has no theta row.
MaskedReport build_masked_report(std::span<const Observation> obs, const geo::ThetaTable& thetas,
                                 std::uint64_t seed, std::uint64_t real_id, Cycle cycle, std::string pseudo_id,
                                 MaskingCost* cost = nullptr);

struct ChiEntry {
  GridId grid{};
  FixedPoint raw1, raw2, raw3;  // ring sums of the beta sequences
  double chi1 = 0.0;            // sum theta * v
  double chi2 = 0.0;            // sum theta * v^2
  double chi3 = 0.0;            // sum theta
  std::size_t terms = 0;        // sequence length c
};

struct ChiSums {
  std::string pseudo_id;
  std::vector<ChiEntry> entries;
};

/// Throws ProtocolError ("report rejected") on mismatched sequence lengths.
ChiSums aggregate_chi(const MaskedReport& report);

/// Server-side per-grid truth update on chi sums. Grids no source reaches come
/// back NaN; grids whose contributors all have weight zero take the equal-weight limit.
Eigen::VectorXd masked_update_truths(std::span<const ChiSums> chis, std::size_t grids,
                                     const Eigen::VectorXd& temp_weights, const td::DeltaList& weight_d,
                                     const td::DeltaList& truth_d, const Eigen::VectorXd& current);

/// Server-side weight update; distances within fixed-point resolution of zero are
/// treated as zero, and negative ones are counted and floored.
Eigen::VectorXd masked_update_weights(std::span<const ChiSums> chis, const Eigen::VectorXd& temp_truths,
                                      const td::DeltaList& truth_d, const td::DeltaList& weight_d,
                                      const td::SolverParams& p, td::SolverStats* stats = nullptr);

/// Eq.-(10) objective evaluated from chi sums.
double masked_objective(std::span<const ChiSums> chis, const Eigen::VectorXd& temp_weights,
                        const Eigen::VectorXd& temp_truths, const td::DeltaList& weight_d,
                        const td::DeltaList& truth_d);

struct AirqOptions {
  std::uint64_t seed = 0;          // keys the random initialization
  std::string init_site = "airq-init";
  double random_init_low = 0.0;
  double random_init_high = 500.0;
  /// Explicit starting truths per grid, replacing the rule above where finite.
  /// Lets tests separate the masked arithmetic from the choice of start.
  Eigen::VectorXd start;
};

/// Full ST loop in the masked domain. Result slots follow `reports` order;
/// weight_hist[i] belongs to reports[i]. Reports are processed in pseudo-id
/// order internally, so the outcome does not depend on arrival order.
td::CycleResult run_airq(std::span<const MaskedReport> reports, std::span<const temporal::WeightHistory> weight_hist,
                         std::span<const temporal::TruthHistory> truth_hist, const temporal::TemporalParams& tp,
                         const td::SolverParams& sp, Cycle t, const AirqOptions& opt = {});

/// Same as run_airq on already-aggregated chi sums.
td::CycleResult run_airq_chi(std::span<const ChiSums> chis, std::span<const temporal::WeightHistory> weight_hist,
                             std::span<const temporal::TruthHistory> truth_hist, const temporal::TemporalParams& tp,
                             const td::SolverParams& sp, Cycle t, const AirqOptions& opt = {});

/// JSON-lines, one record per (report, grid):
/// {"pseudo_id","cycle","grid_id","beta1":[...],"beta2":[...],"beta3":[...]}
/// Ring elements are unsigned decimal integers. A report without blocks is one
/// record with "grid_id": null and empty arrays.
void write_jsonl(std::ostream& os, std::span<const MaskedReport> reports);
std::vector<MaskedReport> read_jsonl(std::istream& is);

}  // namespace airq::secmask
