#include "airq/temporal.hpp"

#include <string>

namespace airq::temporal {

History::History(std::vector<HistoryEntry> entries) : entries_(std::move(entries)) {
  for (std::size_t i = 1; i < entries_.size(); ++i)
    if (entries_[i].cycle <= entries_[i - 1].cycle)
      throw ProtocolError("history cycles must be strictly increasing");
}

void History::append(Cycle cycle, double value) {
  if (!entries_.empty() && cycle <= entries_.back().cycle)
    throw ProtocolError("history already has an entry at or after cycle " + std::to_string(cycle));
  entries_.push_back({cycle, value});
}

std::optional<HistoryEntry> History::last() const noexcept {
  if (entries_.empty()) return std::nullopt;
  return entries_.back();
}

void validate(const TemporalParams& p) {
  if (!(p.rho_w > 0.0)) throw ConfigError("temporal.rho_w must be > 0");
  if (!(p.rho_t > 0.0)) throw ConfigError("temporal.rho_t must be > 0");
  if (p.history_window < 0) throw ConfigError("temporal.history_window must be >= 0");
}

Cycle temporal_distance(Cycle current, Cycle past) {
  if (past > current)
    throw ProtocolError("temporal distance: past cycle " + std::to_string(past) +
                        " is after current cycle " + std::to_string(current));
  return (current - past) + 1;
}

namespace {

// Weighted sums over the in-window part of the history; k_t = 1 is excluded.
struct WindowSums {
  double k = 0.0;
  double kx = 0.0;
  bool any = false;
};

WindowSums window_sums(const History& hist, double rho, Cycle window, Cycle t) {
  WindowSums s;
  for (const auto& e : hist.entries()) {
    if (e.cycle < t - window) continue;
    if (e.cycle >= t) throw ProtocolError("history entry at cycle " + std::to_string(e.cycle) +
                                          " is not before cycle " + std::to_string(t));
    const double k = idw_coefficient(t, e.cycle, rho);
    s.k += k;
    s.kx += k * e.value;
    s.any = true;
  }
  return s;
}

}  // namespace

DeltaCoeffs deltas(const History& hist, double rho, Cycle window, Cycle t) {
  const auto s = window_sums(hist, rho, window, t);
  if (!s.any) return {};
  const double kt = idw_coefficient(t, t, rho);
  const double denom = s.k + kt;
  return {s.kx / denom, kt / denom};
}

double combine(double temporary, const History& hist, double rho, Cycle window, Cycle t) {
  const auto s = window_sums(hist, rho, window, t);
  if (!s.any) return temporary;
  const double kt = idw_coefficient(t, t, rho);
  return (s.kx + kt * temporary) / (s.k + kt);
}

}  // namespace airq::temporal
