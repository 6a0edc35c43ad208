#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "airq/privacy.hpp"
#include "airq/secmask.hpp"
#include "airq/temporal.hpp"
#include "airq/truthdisc.hpp"

namespace airq::parties {

using RealId = std::uint64_t;

struct SourceProfile {
  RealId rid = 0;
  double kappa = 1.0;  // multiplicative reliability deviation
  bool bad = false;    // test-only label
};

struct PseudoId {
  std::string token;
  Cycle issued = 0;
};

struct HandlingParams {
  /// Per-grid report-count threshold; grids with at least tau perturbed
  /// reports are estimated by SST. May be +infinity.
  double tau = 10.0;
};

void validate(const HandlingParams& p);

struct AppendOutcome {
  std::size_t appended = 0;
  std::size_t unknown_pid = 0;
  std::size_t duplicate = 0;
};

/// Weight-history query/response exchanged between the server and the TM.
/// A missing (nullopt) history marks a stale or unknown pseudo-id.
struct HistoryRequest {
  std::vector<std::string> pids;
};
struct HistoryResponse {
  std::vector<std::optional<std::vector<temporal::HistoryEntry>>> histories;
};

std::string to_json(const HistoryRequest& r);
std::string to_json(const HistoryResponse& r);
HistoryRequest request_from_json(const std::string& s);
HistoryResponse response_from_json(const std::string& s);

/// Trusted manager: issues per-cycle pseudonyms and keeps every vehicle's
/// weight history keyed by real id. Real ids never appear in its responses.
class TrustedManager {
 public:
  /// Application-layer adjustment of a history before it is shared; no-op unless set.
  using AdjustmentHook = std::function<void(RealId, temporal::WeightHistory&, Cycle)>;

  explicit TrustedManager(std::uint64_t secret_seed) : seed_(secret_seed) {}

  void register_vehicle(RealId rid);
  bool registered(RealId rid) const { return ledger_.contains(rid); }

  /// Starts cycle t: the pseudonym map of the previous cycle is discarded.
  void begin_cycle(Cycle t);
  Cycle current_cycle() const noexcept { return cycle_; }

  /// Throws ProtocolError for unregistered vehicles or a cycle other than the current one.
  PseudoId issue_pseudo_id(RealId rid, Cycle t);

  HistoryResponse resolve_weight_histories(const HistoryRequest& req);
  std::string handle_request_json(const std::string& request);

  /// Appends the final weight of every known pseudo-id at cycle t.
  /// Unknown pseudo-ids are skipped; a second append in the same cycle is rejected.
  AppendOutcome append_final_weights(std::span<const std::pair<std::string, double>> weights, Cycle t);

  void set_adjustment_hook(AdjustmentHook hook) { hook_ = std::move(hook); }

  std::size_t total_entries() const;
  std::size_t protocol_errors() const noexcept { return protocol_errors_; }
  /// TM-internal view, for tests and reporting.
  const temporal::WeightHistory* history_of(RealId rid) const;

 private:
  std::uint64_t seed_;
  Cycle cycle_ = -1;
  std::map<RealId, temporal::WeightHistory> ledger_;
  std::unordered_map<std::string, RealId> current_;
  std::unordered_set<std::string> ever_issued_;
  AdjustmentHook hook_;
  std::size_t protocol_errors_ = 0;
};

/// Order-preserving batching through RSUs. RSUs read routing metadata only.
template <typename Report>
std::vector<Report> rsu_collect(std::span<const std::vector<Report>> per_rsu) {
  std::vector<Report> out;
  for (const auto& batch : per_rsu) out.insert(out.end(), batch.begin(), batch.end());
  return out;
}

template <typename Report>
std::vector<Report> rsu_collect(std::span<const Report> reports) {
  return {reports.begin(), reports.end()};
}

enum class Provenance : std::uint8_t { unestimated, sst, st_masked, carried_forward };

struct EairqInput {
  std::span<const secmask::MaskedReport> masked;
  std::span<const privacy::PerturbedReport> perturbed;
  std::size_t grids = 0;
  Cycle cycle = 0;
};

struct EairqResult {
  td::CycleResult result;           // truths per grid; weights per slot in `pids`
  std::vector<std::string> pids;    // sorted union of pseudo-ids of both report families
  std::vector<Provenance> provenance;
  std::vector<std::size_t> report_counts;  // perturbed values per grid
  td::CycleResult st;                      // masked ST over `masked` (slot order of `masked`)
  td::CycleResult sst;                     // SST over `perturbed` (slot order of `perturbed`)
  AppendOutcome appended;
  std::size_t unknown_histories = 0;
};

/// Server-side data handling of one EAirQ cycle. Weight histories come from the
/// TM by pseudo-id, and the fused weights are appended back through it. The
/// caller appends the returned truths to the truth histories.
EairqResult eairq_handle_cycle(const EairqInput& in, TrustedManager& tm,
                               std::span<const temporal::TruthHistory> truth_hist,
                               const temporal::TemporalParams& tp, const td::SolverParams& sp,
                               const HandlingParams& hp, const secmask::AirqOptions& init = {});

}  // namespace airq::parties
