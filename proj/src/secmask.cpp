#include "airq/secmask.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>

#include <json.hpp>

namespace airq::secmask {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kHalfUlp = 0.5 / static_cast<double>(FixedPoint::kScale);

Eigen::VectorXd nan_vector(std::size_t n) { return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), kNaN); }

class ChiModel {
 public:
  ChiModel(std::span<const ChiSums> chis, std::size_t grids, const td::DeltaList& truth_d)
      : chis_(chis), grids_(grids), truth_d_(truth_d) {}

  Eigen::VectorXd distances(const Eigen::VectorXd& fb) const {
    Eigen::VectorXd dist = nan_vector(chis_.size());
    for (std::size_t s = 0; s < chis_.size(); ++s) {
      if (chis_[s].entries.empty()) continue;
      double d = 0.0, resolution = 0.0;
      for (const auto& e : chis_[s].entries) {
        const double f = fb[index(e.grid)];
        d += e.chi2 - 2.0 * f * e.chi1 + f * f * e.chi3;
        resolution += static_cast<double>(e.terms) * kHalfUlp * (1.0 + 2.0 * std::abs(f));
      }
      dist[static_cast<Eigen::Index>(s)] = std::abs(d) <= resolution ? 0.0 : d;
    }
    return dist;
  }

  Eigen::VectorXd truths(const Eigen::VectorXd& fa, const Eigen::VectorXd& current) const {
    const auto m = static_cast<Eigen::Index>(grids_);
    Eigen::VectorXd num = Eigen::VectorXd::Zero(m), den = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd flat_num = Eigen::VectorXd::Zero(m), flat_den = Eigen::VectorXd::Zero(m);
    for (std::size_t s = 0; s < chis_.size(); ++s) {
      const double w = fa[static_cast<Eigen::Index>(s)];
      for (const auto& e : chis_[s].entries) {
        const auto g = index(e.grid);
        const double r = e.chi1 - truth_d_[g].offset * e.chi3;
        num[g] += w * r;
        den[g] += w * e.chi3;
        flat_num[g] += r;
        flat_den[g] += e.chi3;
      }
    }
    Eigen::VectorXd out = current;
    for (std::size_t g = 0; g < grids_; ++g) {
      const auto i = static_cast<Eigen::Index>(g);
      if (std::isnan(current[i])) continue;
      if (den[i] > 0.0)
        out[i] = num[i] / (truth_d_[g].scale * den[i]);
      else if (flat_den[i] > 0.0)
        out[i] = flat_num[i] / (truth_d_[g].scale * flat_den[i]);
    }
    return out;
  }

  double objective(const Eigen::VectorXd& fa, const Eigen::VectorXd& fb) const {
    double total = 0.0;
    for (std::size_t s = 0; s < chis_.size(); ++s) {
      for (const auto& e : chis_[s].entries) {
        const double f = fb[index(e.grid)];
        if (std::isnan(f)) continue;
        total += fa[static_cast<Eigen::Index>(s)] * (e.chi2 - 2.0 * f * e.chi1 + f * f * e.chi3);
      }
    }
    return total;
  }

 private:
  std::span<const ChiSums> chis_;
  std::size_t grids_;
  const td::DeltaList& truth_d_;
};

Eigen::VectorXd mass_marker(std::span<const ChiSums> chis, std::size_t grids) {
  Eigen::VectorXd out = nan_vector(grids);
  for (const auto& c : chis)
    for (const auto& e : c.entries) {
      if (index(e.grid) >= grids) throw ProtocolError("chi entry for unknown grid");
      if (e.chi3 > 0.0) out[static_cast<Eigen::Index>(index(e.grid))] = 0.0;
    }
  return out;
}

}  // namespace

std::uint64_t MaskKey::stream_key() const noexcept {
  const std::uint64_t extra = (static_cast<std::uint64_t>(kind) << 32) | static_cast<std::uint64_t>(index(grid));
  return derive_key(seed, "mask", source, cycle, extra);
}

std::vector<FixedPoint> mask_sequence(std::span<const FixedPoint> values, KeyedStream& masks, MaskingCost* cost) {
  const std::size_t c = values.size();
  std::vector<FixedPoint> out(values.begin(), values.end());
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t k = j + 1; k < c; ++k) {
      const FixedPoint alpha{masks()};
      out[j] += alpha;
      out[k] -= alpha;
    }
  }
  if (cost && c > 0) cost->additions += c * (c - 1);
  return out;
}

double quantized_theta(double theta) { return FixedPoint::encode(theta).decode(); }

MaskedReport build_masked_report(std::span<const Observation> obs, const geo::ThetaTable& thetas,
                                 std::uint64_t seed, std::uint64_t real_id, Cycle cycle, std::string pseudo_id,
                                 MaskingCost* cost) {
  MaskedReport report;
  report.pseudo_id = std::move(pseudo_id);
  report.cycle = cycle;
  const std::size_t c = obs.size();

  // theta row per observation, as handed out by the nearest RSU
  std::map<std::size_t, std::vector<double>> rows;  // target grid -> theta per observation
  for (std::size_t j = 0; j < c; ++j) {
    if (index(obs[j].grid) >= thetas.grid_count())
      throw ProtocolError("no theta row for grid " + std::to_string(index(obs[j].grid)));
    thetas.for_each_target(obs[j].grid, [&](GridId target, double theta) {
      auto& row = rows[index(target)];
      if (row.empty()) row.assign(c, 0.0);
      row[j] = quantized_theta(theta);
    });
  }

  std::vector<FixedPoint> x1(c), x2(c), x3(c);
  for (const auto& [target, theta] : rows) {
    for (std::size_t j = 0; j < c; ++j) {
      const double v = obs[j].value;
      const double tv = theta[j] * v;
      x1[j] = FixedPoint::encode(tv);
      x2[j] = FixedPoint::encode(tv * v);
      x3[j] = FixedPoint::encode(theta[j]);
    }
    if (cost) cost->multiplications += 2 * c;
    MaskedGridBlock block;
    block.grid = grid_id(target);
    const auto mask_with = [&](ValueKind kind, const std::vector<FixedPoint>& x) {
      auto stream = MaskKey{seed, real_id, cycle, kind, block.grid}.stream();
      return mask_sequence(x, stream, cost);
    };
    block.beta1 = mask_with(ValueKind::theta_v, x1);
    block.beta2 = mask_with(ValueKind::theta_v2, x2);
    block.beta3 = mask_with(ValueKind::theta, x3);
    report.blocks.push_back(std::move(block));
  }
  return report;
}

ChiSums aggregate_chi(const MaskedReport& report) {
  ChiSums out;
  out.pseudo_id = report.pseudo_id;
  out.entries.reserve(report.blocks.size());
  for (const auto& b : report.blocks) {
    const std::size_t c = b.beta1.size();
    if (c == 0 || b.beta2.size() != c || b.beta3.size() != c)
      throw ProtocolError("report rejected: malformed beta sequences for grid " + std::to_string(index(b.grid)));
    ChiEntry e;
    e.grid = b.grid;
    e.terms = c;
    for (std::size_t j = 0; j < c; ++j) {
      e.raw1 += b.beta1[j];
      e.raw2 += b.beta2[j];
      e.raw3 += b.beta3[j];
    }
    e.chi1 = e.raw1.decode();
    e.chi2 = e.raw2.decode();
    e.chi3 = e.raw3.decode();
    out.entries.push_back(e);
  }
  return out;
}

Eigen::VectorXd masked_update_truths(std::span<const ChiSums> chis, std::size_t grids,
                                     const Eigen::VectorXd& temp_weights, const td::DeltaList& weight_d,
                                     const td::DeltaList& truth_d, const Eigen::VectorXd& current) {
  const ChiModel model(chis, grids, truth_d);
  Eigen::VectorXd cur = mass_marker(chis, grids);
  for (Eigen::Index g = 0; g < cur.size(); ++g)
    if (!std::isnan(cur[g])) cur[g] = g < current.size() ? current[g] : 0.0;
  return model.truths(td::detail::combined(temp_weights, weight_d), cur);
}

Eigen::VectorXd masked_update_weights(std::span<const ChiSums> chis, const Eigen::VectorXd& temp_truths,
                                      const td::DeltaList& truth_d, const td::DeltaList& weight_d,
                                      const td::SolverParams& p, td::SolverStats* stats) {
  const ChiModel model(chis, static_cast<std::size_t>(temp_truths.size()), truth_d);
  return td::detail::weights_from_distances(model.distances(td::detail::combined(temp_truths, truth_d)), weight_d, p,
                                            stats, nullptr);
}

double masked_objective(std::span<const ChiSums> chis, const Eigen::VectorXd& temp_weights,
                        const Eigen::VectorXd& temp_truths, const td::DeltaList& weight_d,
                        const td::DeltaList& truth_d) {
  const ChiModel model(chis, static_cast<std::size_t>(temp_truths.size()), truth_d);
  return model.objective(td::detail::combined(temp_weights, weight_d), td::detail::combined(temp_truths, truth_d));
}

td::CycleResult run_airq_chi(std::span<const ChiSums> chis, std::span<const temporal::WeightHistory> weight_hist,
                             std::span<const temporal::TruthHistory> truth_hist, const temporal::TemporalParams& tp,
                             const td::SolverParams& sp, Cycle t, const AirqOptions& opt) {
  if (weight_hist.size() != chis.size()) throw ProtocolError("run_airq: one weight history per report required");
  const std::size_t m = truth_hist.size();
  const auto wd = td::weight_deltas(weight_hist, tp, t);
  const auto tdl = td::truth_deltas(truth_hist, tp, t);

  // Historical truth where available, otherwise a keyed uniform draw.
  Eigen::VectorXd temp_truths = mass_marker(chis, m);
  for (std::size_t g = 0; g < m; ++g) {
    const auto i = static_cast<Eigen::Index>(g);
    if (std::isnan(temp_truths[i])) continue;
    if (opt.start.size() == temp_truths.size() && std::isfinite(opt.start[i])) {
      temp_truths[i] = opt.start[i];
    } else if (auto last = truth_hist[g].last()) {
      temp_truths[i] = last->value;
    } else {
      KeyedStream rng(derive_key(opt.seed, opt.init_site, g, t));
      temp_truths[i] = opt.random_init_low + (opt.random_init_high - opt.random_init_low) * rng.uniform();
    }
  }

  std::size_t active = 0;
  for (const auto& c : chis) active += c.entries.empty() ? 0 : 1;
  Eigen::VectorXd temp_weights = nan_vector(chis.size());
  for (std::size_t s = 0; s < chis.size(); ++s)
    if (!chis[s].entries.empty())
      temp_weights[static_cast<Eigen::Index>(s)] =
          sp.initial_weight > 0.0 ? sp.initial_weight : 1.0 / static_cast<double>(active);

  td::SolverStats stats;
  td::SolverTrace trace;
  if (active > 0) {
    const ChiModel model(chis, m, tdl);
    td::detail::iterate(model, temp_truths, temp_weights, wd, tdl, sp, stats, trace);
  }

  td::CycleResult r;
  r.truths = td::detail::combined(temp_truths, tdl);
  r.weights = td::detail::combined(temp_weights, wd);
  r.status.assign(m, td::EstimateStatus::unestimated);
  for (std::size_t g = 0; g < m; ++g) {
    const auto i = static_cast<Eigen::Index>(g);
    if (!std::isnan(r.truths[i])) {
      r.status[g] = td::EstimateStatus::estimated;
    } else if (auto last = truth_hist[g].last()) {
      r.truths[i] = last->value;
      r.status[g] = td::EstimateStatus::carried_forward;
      ++stats.carried_forward;
    } else {
      ++stats.unestimated;
    }
  }
  r.stats = stats;
  r.trace = std::move(trace);
  return r;
}

td::CycleResult run_airq(std::span<const MaskedReport> reports, std::span<const temporal::WeightHistory> weight_hist,
                         std::span<const temporal::TruthHistory> truth_hist, const temporal::TemporalParams& tp,
                         const td::SolverParams& sp, Cycle t, const AirqOptions& opt) {
  if (weight_hist.size() != reports.size()) throw ProtocolError("run_airq: one weight history per report required");
  std::vector<std::size_t> order(reports.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return reports[a].pseudo_id < reports[b].pseudo_id; });
  for (std::size_t i = 1; i < order.size(); ++i)
    if (reports[order[i]].pseudo_id == reports[order[i - 1]].pseudo_id)
      throw ProtocolError("duplicate pseudo-id in cycle: " + reports[order[i]].pseudo_id);

  std::vector<ChiSums> chis;
  std::vector<temporal::WeightHistory> hist;
  chis.reserve(order.size());
  hist.reserve(order.size());
  for (auto i : order) {
    if (reports[i].cycle != t) throw ProtocolError("report for cycle " + std::to_string(reports[i].cycle) +
                                                   " submitted in cycle " + std::to_string(t));
    chis.push_back(aggregate_chi(reports[i]));
    hist.push_back(weight_hist[i]);
  }
  auto r = run_airq_chi(chis, hist, truth_hist, tp, sp, t, opt);
  Eigen::VectorXd weights = nan_vector(reports.size());
  for (std::size_t k = 0; k < order.size(); ++k)
    weights[static_cast<Eigen::Index>(order[k])] = r.weights[static_cast<Eigen::Index>(k)];
  r.weights = std::move(weights);
  return r;
}

void write_jsonl(std::ostream& os, std::span<const MaskedReport> reports) {
  const auto raws = [](const std::vector<FixedPoint>& seq) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& f : seq) arr.push_back(f.raw);
    return arr;
  };
  for (const auto& r : reports) {
    if (r.blocks.empty()) {
      nlohmann::json j{{"pseudo_id", r.pseudo_id}, {"cycle", r.cycle}, {"grid_id", nullptr},
                       {"beta1", nlohmann::json::array()}, {"beta2", nlohmann::json::array()},
                       {"beta3", nlohmann::json::array()}};
      os << j.dump() << '\n';
      continue;
    }
    for (const auto& b : r.blocks) {
      nlohmann::json j{{"pseudo_id", r.pseudo_id}, {"cycle", r.cycle},        {"grid_id", index(b.grid)},
                       {"beta1", raws(b.beta1)},   {"beta2", raws(b.beta2)}, {"beta3", raws(b.beta3)}};
      os << j.dump() << '\n';
    }
  }
}

std::vector<MaskedReport> read_jsonl(std::istream& is) {
  std::vector<MaskedReport> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("masked report: ") + e.what(), lineno);
    }
    try {
      const auto pid = j.at("pseudo_id").get<std::string>();
      const auto cycle = j.at("cycle").get<Cycle>();
      if (out.empty() || out.back().pseudo_id != pid || out.back().cycle != cycle)
        out.push_back(MaskedReport{pid, cycle, {}});
      if (j.at("grid_id").is_null()) continue;
      MaskedGridBlock b;
      b.grid = grid_id(j.at("grid_id").get<std::size_t>());
      for (auto v : j.at("beta1")) b.beta1.push_back({v.get<std::uint64_t>()});
      for (auto v : j.at("beta2")) b.beta2.push_back({v.get<std::uint64_t>()});
      for (auto v : j.at("beta3")) b.beta3.push_back({v.get<std::uint64_t>()});
      out.back().blocks.push_back(std::move(b));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("masked report: ") + e.what(), lineno);
    }
  }
  return out;
}

}  // namespace airq::secmask
