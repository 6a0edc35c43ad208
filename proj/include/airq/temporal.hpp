#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "airq/types.hpp"

namespace airq::temporal {

struct HistoryEntry {
  Cycle cycle = 0;
  double value = 0.0;
};

/// Time series of past weights (per source) or truths (per grid).
/// Cycle indices are strictly increasing.
class History {
 public:
  History() = default;
  explicit History(std::vector<HistoryEntry> entries);

  /// Throws ProtocolError if cycle is not after the last recorded cycle.
  void append(Cycle cycle, double value);

  bool empty() const noexcept { return entries_.empty(); }
  std::size_t size() const noexcept { return entries_.size(); }
  std::span<const HistoryEntry> entries() const noexcept { return entries_; }
  std::optional<HistoryEntry> last() const noexcept;

 private:
  std::vector<HistoryEntry> entries_;
};

using WeightHistory = History;
using TruthHistory = History;

struct TemporalParams {
  double rho_w = 2.0;
  double rho_t = 2.0;
  /// Past cycles consulted: entries with cycle >= t - history_window.
  Cycle history_window = 96;
};

void validate(const TemporalParams& p);

/// Affine form of a temporal combiner: combined = offset + scale * temporary.
/// For truths this is (delta1, delta2); for weights (delta3, delta4).
struct DeltaCoeffs {
  double offset = 0.0;
  double scale = 1.0;

  template <typename Scalar>
  Scalar apply(Scalar temporary) const {
    return Scalar(offset) + Scalar(scale) * temporary;
  }
  /// Inverse of apply(); scale is always > 0.
  template <typename Scalar>
  Scalar invert(Scalar combined) const {
    return (combined - Scalar(offset)) / Scalar(scale);
  }
};

/// (current - past) + 1; the current cycle itself has distance 1.
/// Throws ProtocolError if past > current.
Cycle temporal_distance(Cycle current, Cycle past);

/// Inverse-distance-weighting coefficient 1 / distance^rho.
template <typename Scalar>
Scalar idw_coefficient(Cycle current, Cycle past, Scalar rho) {
  using std::pow;
  return Scalar(1) / pow(Scalar(temporal_distance(current, past)), rho);
}

/// Affine coefficients of the combiner for the history seen from cycle t.
DeltaCoeffs deltas(const History& hist, double rho, Cycle window, Cycle t);

inline DeltaCoeffs delta_for_truth(const TruthHistory& h, const TemporalParams& p, Cycle t) {
  return deltas(h, p.rho_t, p.history_window, t);
}
inline DeltaCoeffs delta_for_weight(const WeightHistory& h, const TemporalParams& p, Cycle t) {
  return deltas(h, p.rho_w, p.history_window, t);
}

/// Direct evaluation of the inverse-distance-weighted combination
/// (sum k_i x_i + k_t x_temp) / (sum k_i + k_t), or x_temp for an empty history.
double combine(double temporary, const History& hist, double rho, Cycle window, Cycle t);

inline double combine_weight(double w_temp, const WeightHistory& h, const TemporalParams& p, Cycle t) {
  return combine(w_temp, h, p.rho_w, p.history_window, t);
}
inline double combine_truth(double v_temp, const TruthHistory& h, const TemporalParams& p, Cycle t) {
  return combine(v_temp, h, p.rho_t, p.history_window, t);
}

}  // namespace airq::temporal
