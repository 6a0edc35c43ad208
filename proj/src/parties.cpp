#include "airq/parties.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

namespace airq::parties {

void validate(const HandlingParams& p) {
  if (!(p.tau >= 1.0)) throw ConfigError("handling.tau must be >= 1");
}

std::string to_json(const HistoryRequest& r) { return nlohmann::json{{"pids", r.pids}}.dump(); }

std::string to_json(const HistoryResponse& r) {
  nlohmann::json hs = nlohmann::json::array();
  for (const auto& h : r.histories) {
    if (!h) {
      hs.push_back(nullptr);
      continue;
    }
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : *h) entries.push_back(nlohmann::json::array({e.cycle, e.value}));
    hs.push_back(std::move(entries));
  }
  return nlohmann::json{{"histories", std::move(hs)}}.dump();
}

HistoryRequest request_from_json(const std::string& s) {
  try {
    return {nlohmann::json::parse(s).at("pids").get<std::vector<std::string>>()};
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed history request: ") + e.what());
  }
}

HistoryResponse response_from_json(const std::string& s) {
  try {
    HistoryResponse r;
    const auto doc = nlohmann::json::parse(s);
    for (const auto& h : doc.at("histories")) {
      if (h.is_null()) {
        r.histories.emplace_back(std::nullopt);
        continue;
      }
      std::vector<temporal::HistoryEntry> entries;
      for (const auto& e : h) entries.push_back({e.at(0).get<Cycle>(), e.at(1).get<double>()});
      r.histories.emplace_back(std::move(entries));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed history response: ") + e.what());
  }
}

void TrustedManager::register_vehicle(RealId rid) { ledger_.try_emplace(rid); }

void TrustedManager::begin_cycle(Cycle t) {
  if (t <= cycle_) throw ProtocolError("trusted manager: cycles must advance");
  cycle_ = t;
  current_.clear();
}

PseudoId TrustedManager::issue_pseudo_id(RealId rid, Cycle t) {
  if (!ledger_.contains(rid)) throw ProtocolError("pseudo-id requested by unregistered vehicle");
  if (t != cycle_) throw ProtocolError("pseudo-id requested for a cycle other than the current one");
  for (std::uint64_t attempt = 0;; ++attempt) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(derive_key(seed_, "pseudo-id", rid, t, attempt)));
    std::string token(buf);
    if (ever_issued_.insert(token).second) {
      current_.emplace(token, rid);
      return {std::move(token), t};
    }
  }
}

HistoryResponse TrustedManager::resolve_weight_histories(const HistoryRequest& req) {
  HistoryResponse out;
  out.histories.reserve(req.pids.size());
  for (const auto& pid : req.pids) {
    const auto it = current_.find(pid);
    if (it == current_.end()) {
      ++protocol_errors_;
      out.histories.emplace_back(std::nullopt);
      continue;
    }
    auto& hist = ledger_.at(it->second);
    if (hook_) hook_(it->second, hist, cycle_);
    out.histories.emplace_back(std::vector<temporal::HistoryEntry>(hist.entries().begin(), hist.entries().end()));
  }
  return out;
}

std::string TrustedManager::handle_request_json(const std::string& request) {
  return to_json(resolve_weight_histories(request_from_json(request)));
}

AppendOutcome TrustedManager::append_final_weights(std::span<const std::pair<std::string, double>> weights, Cycle t) {
  AppendOutcome out;
  for (const auto& [pid, w] : weights) {
    const auto it = current_.find(pid);
    if (it == current_.end() || t != cycle_) {
      ++out.unknown_pid;
      ++protocol_errors_;
      continue;
    }
    auto& hist = ledger_.at(it->second);
    if (const auto last = hist.last(); last && last->cycle >= t) {
      ++out.duplicate;
      continue;
    }
    hist.append(t, w);
    ++out.appended;
  }
  return out;
}

std::size_t TrustedManager::total_entries() const {
  std::size_t n = 0;
  for (const auto& [rid, h] : ledger_) n += h.size();
  return n;
}

const temporal::WeightHistory* TrustedManager::history_of(RealId rid) const {
  const auto it = ledger_.find(rid);
  return it == ledger_.end() ? nullptr : &it->second;
}

EairqResult eairq_handle_cycle(const EairqInput& in, TrustedManager& tm,
                               std::span<const temporal::TruthHistory> truth_hist,
                               const temporal::TemporalParams& tp, const td::SolverParams& sp,
                               const HandlingParams& hp, const secmask::AirqOptions& init) {
  if (truth_hist.size() != in.grids) throw ProtocolError("eairq: one truth history per grid required");
  EairqResult out;

  for (const auto& r : in.masked) out.pids.push_back(r.pseudo_id);
  for (const auto& r : in.perturbed) out.pids.push_back(r.pseudo_id);
  std::sort(out.pids.begin(), out.pids.end());
  out.pids.erase(std::unique(out.pids.begin(), out.pids.end()), out.pids.end());

  // Weight histories by pseudo-id; the TM never reveals real ids.
  const auto response = tm.resolve_weight_histories(HistoryRequest{out.pids});
  std::map<std::string, temporal::WeightHistory> hist_by_pid;
  for (std::size_t i = 0; i < out.pids.size(); ++i) {
    if (response.histories[i])
      hist_by_pid.emplace(out.pids[i], temporal::WeightHistory(*response.histories[i]));
    else {
      hist_by_pid.emplace(out.pids[i], temporal::WeightHistory{});
      ++out.unknown_histories;
    }
  }

  // Masked ST over the raw (masked) data.
  std::vector<temporal::WeightHistory> st_hist;
  for (const auto& r : in.masked) st_hist.push_back(hist_by_pid.at(r.pseudo_id));
  out.st = secmask::run_airq(in.masked, st_hist, truth_hist, tp, sp, in.cycle, init);

  // SST over the perturbed data.
  std::vector<Observation> obs;
  std::vector<temporal::WeightHistory> sst_hist;
  out.report_counts.assign(in.grids, 0);
  for (std::size_t s = 0; s < in.perturbed.size(); ++s) {
    sst_hist.push_back(hist_by_pid.at(in.perturbed[s].pseudo_id));
    for (const auto& v : in.perturbed[s].values) {
      if (index(v.grid) >= in.grids) throw ProtocolError("perturbed value for unknown grid");
      obs.push_back({source_id(s), v.grid, v.value, in.cycle});
      ++out.report_counts[index(v.grid)];
    }
  }
  out.sst = td::run_sst(td::CycleInput{obs, in.perturbed.size(), in.grids, in.cycle}, sst_hist, tp, sp);

  // Per-grid choice by report count.
  auto& r = out.result;
  r.truths = out.st.truths;
  r.status = out.st.status;
  out.provenance.assign(in.grids, Provenance::unestimated);
  for (std::size_t g = 0; g < in.grids; ++g) {
    const auto i = static_cast<Eigen::Index>(g);
    if (static_cast<double>(out.report_counts[g]) >= hp.tau && !std::isnan(out.sst.truths[i])) {
      r.truths[i] = out.sst.truths[i];
      r.status[g] = td::EstimateStatus::estimated;
      out.provenance[g] = Provenance::sst;
    } else if (out.st.status[g] == td::EstimateStatus::estimated) {
      out.provenance[g] = Provenance::st_masked;
    } else if (out.st.status[g] == td::EstimateStatus::carried_forward) {
      out.provenance[g] = Provenance::carried_forward;
    }
  }

  // Fused weight: mean of the two algorithms, or the single one available.
  std::map<std::string, std::pair<double, int>> fused;
  const auto collect = [&](const auto& reports, const td::CycleResult& res) {
    for (std::size_t s = 0; s < reports.size(); ++s) {
      const double w = res.weights[static_cast<Eigen::Index>(s)];
      if (std::isnan(w)) continue;
      auto& [sum, count] = fused[reports[s].pseudo_id];
      sum += w;
      ++count;
    }
  };
  collect(in.masked, out.st);
  collect(in.perturbed, out.sst);

  r.weights = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(out.pids.size()),
                                        std::numeric_limits<double>::quiet_NaN());
  std::vector<std::pair<std::string, double>> final_weights;
  for (std::size_t k = 0; k < out.pids.size(); ++k) {
    const auto it = fused.find(out.pids[k]);
    if (it == fused.end()) continue;
    const double w = it->second.second == 2 ? (it->second.first) / 2.0 : it->second.first;
    r.weights[static_cast<Eigen::Index>(k)] = w;
    final_weights.emplace_back(out.pids[k], w);
  }
  out.appended = tm.append_final_weights(final_weights, in.cycle);

  r.stats = out.st.stats;
  r.stats.iterations = std::max(out.st.stats.iterations, out.sst.stats.iterations);
  r.stats.clamp_events += out.sst.stats.clamp_events;
  r.stats.floor_events += out.sst.stats.floor_events;
  r.stats.negative_distance_events += out.sst.stats.negative_distance_events;
  r.stats.carried_forward = 0;
  r.stats.unestimated = 0;
  for (auto p : out.provenance) {
    if (p == Provenance::carried_forward) ++r.stats.carried_forward;
    if (p == Provenance::unestimated) ++r.stats.unestimated;
  }
  return out;
}

}  // namespace airq::parties
