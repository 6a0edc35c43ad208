#include "airq/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include <json.hpp>

namespace airq::privacy {

void validate(const PerturbationParams& p) {
  if (!(p.p1 >= 0.0 && p.p1 <= 1.0)) throw ConfigError("perturbation.p1 must be in [0, 1]");
  if (!(p.p2 >= 0.0 && p.p2 <= 1.0)) throw ConfigError("perturbation.p2 must be in [0, 1]");
  if (!(p.lambda1 > 0.0)) throw ConfigError("perturbation.lambda1 must be > 0");
  if (!(p.lambda2 > 0.0)) throw ConfigError("perturbation.lambda2 must be > 0");
  if (!std::isfinite(p.fallback_truth)) throw ConfigError("perturbation.fallback_truth must be finite");
}

double laplace_from_uniform(double u, double scale) {
  const double c = u - 0.5;
  if (c == 0.0) return 0.0;
  return -scale * std::copysign(1.0, c) * std::log1p(-2.0 * std::abs(c));
}

double laplace_sample(double scale, KeyedStream& stream) { return laplace_from_uniform(stream.uniform_open(), scale); }

std::vector<PerturbedEntry> grid_perturb(std::span<const Observation> obs, std::size_t grids,
                                         std::span<const std::optional<double>> prev_truths,
                                         const PerturbationParams& p, const PerturbKey& key, PerturbStats* stats) {
  std::vector<PerturbedEntry> out;
  std::vector<std::uint8_t> covered(grids, 0);
  for (const auto& o : obs) {
    const auto g = index(o.grid);
    if (g >= grids) throw ProtocolError("grid_perturb: observation grid out of range");
    KeyedStream rng(derive_key(key.seed, "grid-drop", key.source, key.cycle, g));
    if (rng.uniform() < p.p1) {
      if (stats) ++stats->dropped;
      continue;
    }
    covered[g] = 1;
    out.push_back({o.grid, o.value, false});
  }

  double sum = 0.0;
  std::size_t known = 0;
  for (const auto& t : prev_truths)
    if (t) {
      sum += *t;
      ++known;
    }
  const double global_mean = known > 0 ? sum / static_cast<double>(known) : p.fallback_truth;

  for (std::size_t g = 0; g < grids; ++g) {
    if (covered[g]) continue;
    if (stats) ++stats->uncovered;
    KeyedStream rng(derive_key(key.seed, "grid-imitate", key.source, key.cycle, g));
    if (!(rng.uniform() < p.p2)) continue;
    double base;
    if (g < prev_truths.size() && prev_truths[g]) {
      base = *prev_truths[g];
    } else {
      base = global_mean;
      if (stats) ++(known > 0 ? stats->fallback_global_mean : stats->fallback_constant);
    }
    out.push_back({grid_id(g), base + laplace_sample(p.lambda1, rng), true});
    if (stats) ++stats->imitated;
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return index(a.grid) < index(b.grid); });
  return out;
}

std::vector<PerturbedEntry> value_perturb(std::vector<PerturbedEntry> entries, double lambda2, const PerturbKey& key) {
  for (auto& e : entries) {
    KeyedStream rng(derive_key(key.seed, "value-noise", key.source, key.cycle, index(e.grid)));
    e.value += laplace_sample(lambda2, rng);
  }
  return entries;
}

PerturbedReport make_report(std::string pseudo_id, Cycle cycle, std::span<const PerturbedEntry> entries) {
  PerturbedReport r{std::move(pseudo_id), cycle, {}};
  r.values.reserve(entries.size());
  for (const auto& e : entries) {
    if (!std::isfinite(e.value)) throw ProtocolError("non-finite perturbed value");
    if (!r.values.empty() && index(r.values.back().grid) >= index(e.grid))
      throw ProtocolError("perturbed entries must be grid-ordered and unique");
    r.values.push_back({e.grid, e.value});
  }
  return r;
}

void write_jsonl(std::ostream& os, std::span<const PerturbedReport> reports) {
  for (const auto& r : reports)
    for (const auto& v : r.values) {
      nlohmann::json j{{"pseudo_id", r.pseudo_id}, {"cycle", r.cycle}, {"grid_id", index(v.grid)}, {"value", v.value}};
      os << j.dump() << '\n';
    }
}

std::vector<PerturbedReport> read_jsonl(std::istream& is) {
  std::vector<PerturbedReport> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto pid = j.at("pseudo_id").get<std::string>();
      const auto cycle = j.at("cycle").get<Cycle>();
      if (out.empty() || out.back().pseudo_id != pid || out.back().cycle != cycle)
        out.push_back(PerturbedReport{pid, cycle, {}});
      out.back().values.push_back({grid_id(j.at("grid_id").get<std::size_t>()), j.at("value").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("perturbed report: ") + e.what(), lineno);
    }
  }
  return out;
}

}  // namespace airq::privacy
