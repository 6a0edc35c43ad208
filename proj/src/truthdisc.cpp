#include "airq/truthdisc.hpp"

#include <algorithm>
#include <string>

namespace airq::td {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Eigen::VectorXd nan_vector(std::size_t n) { return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), kNaN); }

// Plaintext model over routed entries (ST with theta reuse, or same-grid entries for SST/TD).
class EntryModel {
 public:
  EntryModel(std::span<const ReuseEntry> entries, std::size_t sources, std::size_t grids, const DeltaList& truth_d)
      : entries_(entries), sources_(sources), grids_(grids), truth_d_(truth_d) {}

  Eigen::VectorXd distances(const Eigen::VectorXd& fb) const {
    Eigen::VectorXd dist = nan_vector(sources_);
    for (const auto& e : entries_) {
      double& d = dist[e.source];
      if (std::isnan(d)) d = 0.0;
      const double r = e.value - fb[e.target];
      d += e.theta * r * r;
    }
    return dist;
  }

  Eigen::VectorXd truths(const Eigen::VectorXd& fa, const Eigen::VectorXd& current) const {
    const auto m = static_cast<Eigen::Index>(grids_);
    Eigen::VectorXd num = Eigen::VectorXd::Zero(m), den = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd flat_num = Eigen::VectorXd::Zero(m), flat_den = Eigen::VectorXd::Zero(m);
    for (const auto& e : entries_) {
      const double f = fa[e.source];
      const double r = e.value - truth_d_[e.target].offset;
      num[e.target] += f * e.theta * r;
      den[e.target] += f * e.theta;
      flat_num[e.target] += e.theta * r;
      flat_den[e.target] += e.theta;
    }
    Eigen::VectorXd out = current;
    for (std::size_t g = 0; g < grids_; ++g) {
      if (std::isnan(current[g])) continue;
      if (den[g] > 0.0)
        out[g] = num[g] / (truth_d_[g].scale * den[g]);
      else if (flat_den[g] > 0.0)
        out[g] = flat_num[g] / (truth_d_[g].scale * flat_den[g]);
    }
    return out;
  }

  double objective(const Eigen::VectorXd& fa, const Eigen::VectorXd& fb) const {
    double total = 0.0;
    for (const auto& e : entries_) {
      if (std::isnan(fb[e.target])) continue;
      const double r = e.value - fb[e.target];
      total += fa[e.source] * e.theta * r * r;
    }
    return total;
  }

 private:
  std::span<const ReuseEntry> entries_;
  std::size_t sources_;
  std::size_t grids_;
  const DeltaList& truth_d_;
};

// Routed-mass marker: grids with no entries stay NaN.
Eigen::VectorXd mass_marker(std::span<const ReuseEntry> entries, std::size_t grids) {
  Eigen::VectorXd out = nan_vector(grids);
  for (const auto& e : entries) out[e.target] = 0.0;
  return out;
}

// Average of the observations provided for each grid; for grids reached only
// through neighbours, the theta-weighted average of the routed values.
Eigen::VectorXd initial_truths(const CycleInput& in, std::span<const ReuseEntry> entries) {
  const auto m = static_cast<Eigen::Index>(in.grids);
  Eigen::VectorXd own_sum = Eigen::VectorXd::Zero(m), own_cnt = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd nb_sum = Eigen::VectorXd::Zero(m), nb_mass = Eigen::VectorXd::Zero(m);
  for (const auto& o : in.observations) {
    own_sum[index(o.grid)] += o.value;
    own_cnt[index(o.grid)] += 1.0;
  }
  for (const auto& e : entries) {
    nb_sum[e.target] += e.theta * e.value;
    nb_mass[e.target] += e.theta;
  }
  Eigen::VectorXd out = nan_vector(in.grids);
  for (Eigen::Index g = 0; g < m; ++g) {
    if (own_cnt[g] > 0.0)
      out[g] = own_sum[g] / own_cnt[g];
    else if (nb_mass[g] > 0.0)
      out[g] = nb_sum[g] / nb_mass[g];
  }
  return out;
}

CycleResult finalize(const Eigen::VectorXd& temp_truths, const Eigen::VectorXd& temp_weights,
                     const DeltaList& weight_d, const DeltaList& truth_d, SolverStats stats, SolverTrace trace) {
  CycleResult r;
  r.truths = detail::combined(temp_truths, truth_d);
  r.weights = detail::combined(temp_weights, weight_d);
  r.status.assign(static_cast<std::size_t>(r.truths.size()), EstimateStatus::unestimated);
  for (Eigen::Index g = 0; g < r.truths.size(); ++g) {
    if (!std::isnan(r.truths[g]))
      r.status[static_cast<std::size_t>(g)] = EstimateStatus::estimated;
    else
      ++stats.unestimated;
  }
  r.stats = stats;
  r.trace = std::move(trace);
  return r;
}

void carry_forward(CycleResult& r, std::span<const temporal::TruthHistory> truth_hist) {
  for (std::size_t g = 0; g < r.status.size(); ++g) {
    if (r.status[g] != EstimateStatus::unestimated) continue;
    if (g < truth_hist.size()) {
      if (auto last = truth_hist[g].last()) {
        r.truths[static_cast<Eigen::Index>(g)] = last->value;
        r.status[g] = EstimateStatus::carried_forward;
        ++r.stats.carried_forward;
        --r.stats.unestimated;
      }
    }
  }
}

Eigen::VectorXd initial_weights(const CycleInput& in, const SolverParams& p) {
  std::vector<std::uint8_t> active(in.sources, 0);
  for (const auto& o : in.observations) active[index(o.source)] = 1;
  const auto n = std::count(active.begin(), active.end(), std::uint8_t{1});
  const double w0 = p.initial_weight > 0.0 ? p.initial_weight : (n > 0 ? 1.0 / static_cast<double>(n) : 0.0);
  Eigen::VectorXd w = nan_vector(in.sources);
  for (std::size_t s = 0; s < in.sources; ++s)
    if (active[s]) w[static_cast<Eigen::Index>(s)] = w0;
  return w;
}

CycleResult solve_entries(const CycleInput& in, std::span<const ReuseEntry> entries, Eigen::VectorXd temp_truths,
                          const DeltaList& weight_d, const DeltaList& truth_d, const SolverParams& sp) {
  SolverStats stats;
  SolverTrace trace;
  Eigen::VectorXd temp_weights = initial_weights(in, sp);
  if (!entries.empty()) {
    const EntryModel model(entries, in.sources, in.grids, truth_d);
    detail::iterate(model, temp_truths, temp_weights, weight_d, truth_d, sp, stats, trace);
  }
  return finalize(temp_truths, temp_weights, weight_d, truth_d, stats, std::move(trace));
}

}  // namespace

void validate(const SolverParams& p) {
  if (!(p.tolerance > 0.0)) throw ConfigError("solver.tolerance must be > 0");
  if (p.max_iterations < 1) throw ConfigError("solver.max_iterations must be >= 1");
  if (!(p.distance_floor > 0.0)) throw ConfigError("solver.distance_floor must be > 0");
  if (!(p.weight_cap > 0.0)) throw ConfigError("solver.weight_cap must be > 0");
}

void validate(const CycleInput& in) {
  std::vector<std::uint8_t> seen;
  seen.assign(in.sources * in.grids, 0);
  for (const auto& o : in.observations) {
    const auto s = index(o.source), g = index(o.grid);
    if (s >= in.sources) throw ProtocolError("observation source " + std::to_string(s) + " out of range");
    if (g >= in.grids) throw ProtocolError("observation grid " + std::to_string(g) + " out of range");
    if (!std::isfinite(o.value)) throw ProtocolError("non-finite observation value");
    auto& flag = seen[s * in.grids + g];
    if (flag)
      throw ProtocolError("source " + std::to_string(s) + " reported grid " + std::to_string(g) + " twice");
    flag = 1;
  }
}

std::vector<ReuseEntry> expand(std::span<const Observation> obs, const geo::ThetaTable& thetas) {
  std::vector<ReuseEntry> out;
  out.reserve(obs.size() * 4);
  for (const auto& o : obs) {
    if (index(o.grid) >= thetas.grid_count()) throw ProtocolError("observation grid has no theta row");
    thetas.for_each_target(o.grid, [&](GridId target, double theta) {
      out.push_back({static_cast<std::uint32_t>(index(o.source)), static_cast<std::uint32_t>(index(target)), theta,
                     o.value});
    });
  }
  return out;
}

std::vector<ReuseEntry> own_grid_entries(std::span<const Observation> obs) {
  std::vector<ReuseEntry> out;
  out.reserve(obs.size());
  for (const auto& o : obs)
    out.push_back({static_cast<std::uint32_t>(index(o.source)), static_cast<std::uint32_t>(index(o.grid)), 1.0,
                   o.value});
  return out;
}

DeltaList weight_deltas(std::span<const temporal::WeightHistory> hist, const temporal::TemporalParams& p, Cycle t) {
  DeltaList out;
  out.reserve(hist.size());
  for (const auto& h : hist) out.push_back(temporal::delta_for_weight(h, p, t));
  return out;
}

DeltaList truth_deltas(std::span<const temporal::TruthHistory> hist, const temporal::TemporalParams& p, Cycle t) {
  DeltaList out;
  out.reserve(hist.size());
  for (const auto& h : hist) out.push_back(temporal::delta_for_truth(h, p, t));
  return out;
}

DeltaList identity_deltas(std::size_t count) { return DeltaList(count); }

double objective(std::span<const ReuseEntry> entries, const Eigen::VectorXd& temp_weights,
                 const Eigen::VectorXd& temp_truths, const DeltaList& weight_d, const DeltaList& truth_d) {
  const EntryModel model(entries, static_cast<std::size_t>(temp_weights.size()),
                         static_cast<std::size_t>(temp_truths.size()), truth_d);
  return model.objective(detail::combined(temp_weights, weight_d), detail::combined(temp_truths, truth_d));
}

double st_objective(const CycleInput& in, const geo::ThetaTable& thetas, const Eigen::VectorXd& temp_weights,
                    const Eigen::VectorXd& temp_truths, const DeltaList& weight_d, const DeltaList& truth_d) {
  const auto entries = expand(in.observations, thetas);
  return objective(entries, temp_weights, temp_truths, weight_d, truth_d);
}

double sst_objective(const CycleInput& in, const Eigen::VectorXd& temp_weights, const Eigen::VectorXd& truths,
                     const DeltaList& weight_d) {
  const auto entries = own_grid_entries(in.observations);
  return objective(entries, temp_weights, truths, weight_d, identity_deltas(in.grids));
}

Eigen::VectorXd st_update_truths(const CycleInput& in, const geo::ThetaTable& thetas,
                                 const Eigen::VectorXd& temp_weights, const DeltaList& weight_d,
                                 const DeltaList& truth_d, const Eigen::VectorXd& current) {
  const auto entries = expand(in.observations, thetas);
  const EntryModel model(entries, in.sources, in.grids, truth_d);
  Eigen::VectorXd cur = mass_marker(entries, in.grids);
  for (Eigen::Index g = 0; g < cur.size(); ++g)
    if (!std::isnan(cur[g])) cur[g] = g < current.size() ? current[g] : 0.0;
  return model.truths(detail::combined(temp_weights, weight_d), cur);
}

Eigen::VectorXd st_update_weights(const CycleInput& in, const geo::ThetaTable& thetas,
                                  const Eigen::VectorXd& temp_truths, const DeltaList& truth_d,
                                  const DeltaList& weight_d, const SolverParams& p, SolverStats* stats) {
  const auto entries = expand(in.observations, thetas);
  const EntryModel model(entries, in.sources, in.grids, truth_d);
  return detail::weights_from_distances(model.distances(detail::combined(temp_truths, truth_d)), weight_d, p, stats,
                                        nullptr);
}

Eigen::VectorXd sst_update_truths(const CycleInput& in, const Eigen::VectorXd& temp_weights,
                                  const DeltaList& weight_d, const Eigen::VectorXd& current) {
  const auto entries = own_grid_entries(in.observations);
  const auto truth_d = identity_deltas(in.grids);
  const EntryModel model(entries, in.sources, in.grids, truth_d);
  Eigen::VectorXd cur = mass_marker(entries, in.grids);
  for (Eigen::Index g = 0; g < cur.size(); ++g)
    if (!std::isnan(cur[g])) cur[g] = g < current.size() ? current[g] : 0.0;
  return model.truths(detail::combined(temp_weights, weight_d), cur);
}

Eigen::VectorXd sst_update_weights(const CycleInput& in, const Eigen::VectorXd& truths, const DeltaList& weight_d,
                                   const SolverParams& p, SolverStats* stats) {
  const auto entries = own_grid_entries(in.observations);
  const auto truth_d = identity_deltas(in.grids);
  const EntryModel model(entries, in.sources, in.grids, truth_d);
  return detail::weights_from_distances(model.distances(truths), weight_d, p, stats, nullptr);
}

CycleResult run_st(const CycleInput& in, const geo::ThetaTable& thetas,
                   std::span<const temporal::WeightHistory> weight_hist,
                   std::span<const temporal::TruthHistory> truth_hist, const temporal::TemporalParams& tp,
                   const SolverParams& sp) {
  validate(in);
  if (weight_hist.size() != in.sources) throw ProtocolError("run_st: one weight history per source required");
  if (truth_hist.size() != in.grids) throw ProtocolError("run_st: one truth history per grid required");
  const auto entries = expand(in.observations, thetas);
  const auto wd = weight_deltas(weight_hist, tp, in.cycle);
  const auto tdl = truth_deltas(truth_hist, tp, in.cycle);
  auto r = solve_entries(in, entries, initial_truths(in, entries), wd, tdl, sp);
  carry_forward(r, truth_hist);
  return r;
}

CycleResult run_sst(const CycleInput& in, std::span<const temporal::WeightHistory> weight_hist,
                    const temporal::TemporalParams& tp, const SolverParams& sp) {
  validate(in);
  if (weight_hist.size() != in.sources) throw ProtocolError("run_sst: one weight history per source required");
  const auto entries = own_grid_entries(in.observations);
  const auto wd = weight_deltas(weight_hist, tp, in.cycle);
  return solve_entries(in, entries, initial_truths(in, entries), wd, identity_deltas(in.grids), sp);
}

CycleResult run_baseline_td(const CycleInput& in, const SolverParams& sp) {
  validate(in);
  const auto entries = own_grid_entries(in.observations);
  return solve_entries(in, entries, initial_truths(in, entries), identity_deltas(in.sources),
                       identity_deltas(in.grids), sp);
}

namespace detail {

Eigen::VectorXd weights_from_distances(const Eigen::VectorXd& dist, const DeltaList& weight_d,
                                       const SolverParams& p, SolverStats* stats, double* constraint_sum) {
  Eigen::VectorXd d = dist;
  double total = 0.0;
  for (Eigen::Index s = 0; s < d.size(); ++s) {
    if (std::isnan(d[s])) continue;
    if (d[s] < 0.0) {
      d[s] = p.distance_floor;
      if (stats) ++stats->negative_distance_events;
    } else if (d[s] < p.distance_floor) {
      d[s] = p.distance_floor;
      if (stats) ++stats->floor_events;
    }
    total += d[s];
  }
  Eigen::VectorXd out = nan_vector(static_cast<std::size_t>(d.size()));
  double csum = 0.0;
  for (Eigen::Index s = 0; s < d.size(); ++s) {
    if (std::isnan(d[s])) continue;
    double w = std::log(total / d[s]);
    csum += std::exp(-w);
    if (w > p.weight_cap || w < 0.0) {
      w = std::clamp(w, 0.0, p.weight_cap);
      if (stats) ++stats->clamp_events;
    }
    out[s] = weight_d[static_cast<std::size_t>(s)].invert(w);
  }
  if (constraint_sum) *constraint_sum = csum;
  return out;
}

Eigen::VectorXd combined(const Eigen::VectorXd& temp, const DeltaList& d) {
  Eigen::VectorXd out(temp.size());
  for (Eigen::Index i = 0; i < temp.size(); ++i) out[i] = d[static_cast<std::size_t>(i)].apply(temp[i]);
  return out;
}

double max_relative_change(const Eigen::VectorXd& next, const Eigen::VectorXd& prev) {
  double worst = 0.0;
  for (Eigen::Index g = 0; g < next.size(); ++g) {
    if (std::isnan(next[g]) || std::isnan(prev[g])) continue;
    worst = std::max(worst, std::abs(next[g] - prev[g]) / std::max(std::abs(next[g]), 1.0));
  }
  return worst;
}

}  // namespace detail

}  // namespace airq::td
