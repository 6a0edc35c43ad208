#include "airq/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include <Eigen/Cholesky>
#include <json.hpp>

namespace airq::synth {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  for (auto& f : out) {
    while (!f.empty() && (f.back() == '\r' || f.back() == ' ')) f.pop_back();
    while (!f.empty() && f.front() == ' ') f.erase(f.begin());
  }
  return out;
}

double parse_number(const std::string& s, std::size_t line, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(std::string("invalid ") + what + " '" + s + "'", line);
  }
}

// Linear fill of interior gaps, nearest-value fill at the edges; max_gap hours.
std::size_t fill_gaps(std::vector<double>& v, std::size_t max_gap, const std::string& station) {
  std::size_t filled = 0;
  const std::size_t n = v.size();
  std::size_t i = 0;
  while (i < n) {
    if (!std::isnan(v[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && std::isnan(v[j])) ++j;
    const std::size_t len = j - i;
    if (len > max_gap || (i == 0 && j == n))
      throw ConfigError("station " + station + ": gap of " + std::to_string(len) + " hours exceeds " +
                        std::to_string(max_gap));
    for (std::size_t k = i; k < j; ++k) {
      if (i == 0)
        v[k] = v[j];
      else if (j == n)
        v[k] = v[i - 1];
      else
        v[k] = v[i - 1] + (v[j] - v[i - 1]) * static_cast<double>(k - i + 1) / static_cast<double>(len + 1);
    }
    filled += len;
    i = j;
  }
  return filled;
}

}  // namespace

void validate(const WorldParams& p) {
  if (p.sources < 1) throw ConfigError("world.sources must be >= 1");
  if (p.grids < 1) throw ConfigError("world.grids must be >= 1");
  if (p.cycles < 1) throw ConfigError("world.cycles must be >= 1");
  if (!(p.zipf_exponent >= 0.0)) throw ConfigError("world.zipf_exponent must be >= 0");
  if (!(p.bad_fraction >= 0.0 && p.bad_fraction <= 1.0)) throw ConfigError("world.bad_fraction must be in [0, 1]");
  if (!(p.noise_variance >= 0.0)) throw ConfigError("world.noise_variance must be >= 0");
  for (const auto* tn : {&p.good, &p.bad}) {
    if (!(tn->lower < tn->upper)) throw ConfigError("truncated normal: lower must be < upper");
    if (!(tn->sigma >= 0.0)) throw ConfigError("truncated normal: sigma must be >= 0");
    if (!(tn->lower > 0.0)) throw ConfigError("truncated normal: kappa must stay > 0");
  }
  if (!(p.region_km > 0.0)) throw ConfigError("world.region_km must be > 0");
  const auto& tm = p.truth;
  if (!(tm.length_km > 0.0)) throw ConfigError("world.truth.length_km must be > 0");
  if (!(tm.base_sd >= 0.0 && tm.regional_sd >= 0.0 && tm.local_sd >= 0.0 && tm.nugget_sd >= 0.0))
    throw ConfigError("world.truth: standard deviations must be >= 0");
  if (!(std::abs(tm.regional_phi) < 1.0 && std::abs(tm.local_phi) < 1.0))
    throw ConfigError("world.truth: AR coefficients must lie in (-1, 1)");
}

std::vector<double> interpolate_quarter_hours(std::span<const double> hourly) {
  std::vector<double> out;
  if (hourly.empty()) return out;
  out.reserve(4 * (hourly.size() - 1) + 1);
  for (std::size_t i = 0; i + 1 < hourly.size(); ++i) {
    const double a = hourly[i], b = hourly[i + 1];
    out.push_back(a);
    for (int k = 1; k <= 3; ++k) out.push_back(a + (b - a) * k / 4.0);
  }
  out.push_back(hourly.back());
  return out;
}

Dataset parse_aqi_dataset(std::istream& is) {
  struct Station {
    std::string id;
    double lat, lon;
    std::map<std::string, double> values;
  };
  std::vector<Station> stations;
  std::map<std::string, std::size_t> by_id;
  std::map<std::string, int> timestamps;

  std::string line;
  std::size_t lineno = 0;
  bool header = true;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    if (header) {
      header = false;
      const auto cols = split_csv(line);
      if (cols.size() != 5 || cols[0] != "station_id")
        throw ParseError("expected header station_id,lat,lon,timestamp,aqi", lineno);
      continue;
    }
    const auto f = split_csv(line);
    if (f.size() != 5) throw ParseError("expected 5 fields, got " + std::to_string(f.size()), lineno);
    if (f[0].empty()) throw ParseError("empty station_id", lineno);
    if (f[3].empty()) throw ParseError("empty timestamp", lineno);
    const double lat = parse_number(f[1], lineno, "latitude");
    const double lon = parse_number(f[2], lineno, "longitude");
    double aqi = std::numeric_limits<double>::quiet_NaN();
    if (!f[4].empty() && f[4] != "NaN" && f[4] != "nan" && f[4] != "NA") aqi = parse_number(f[4], lineno, "aqi");
    if (!std::isnan(aqi) && aqi < 0.0) throw ParseError("negative aqi", lineno);

    auto [it, fresh] = by_id.try_emplace(f[0], stations.size());
    if (fresh) stations.push_back({f[0], lat, lon, {}});
    auto& st = stations[it->second];
    if (!fresh && (st.lat != lat || st.lon != lon))
      throw ParseError("station " + f[0] + " changes coordinates", lineno);
    if (!st.values.emplace(f[3], aqi).second) throw ParseError("duplicate timestamp for " + f[0], lineno);
    timestamps.emplace(f[3], 0);
  }
  if (stations.empty()) throw ParseError("dataset has no records", lineno);

  Dataset ds;
  ds.hourly_records = timestamps.size();
  std::vector<std::vector<double>> series;
  for (std::size_t s = 0; s < stations.size(); ++s) {
    auto& st = stations[s];
    geo::Grid g{grid_id(s), st.lat, st.lon, st.id};
    try {
      geo::validate(g);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), 0);
    }
    ds.grids.push_back(std::move(g));
    std::vector<double> hourly;
    hourly.reserve(timestamps.size());
    for (const auto& [ts, unused] : timestamps) {
      const auto it = st.values.find(ts);
      hourly.push_back(it == st.values.end() ? std::numeric_limits<double>::quiet_NaN() : it->second);
    }
    ds.filled_gaps += fill_gaps(hourly, 4, st.id);
    series.push_back(interpolate_quarter_hours(hourly));
  }
  const auto cycles = static_cast<Eigen::Index>(series.front().size());
  ds.truths.resize(static_cast<Eigen::Index>(series.size()), cycles);
  for (std::size_t g = 0; g < series.size(); ++g)
    ds.truths.row(static_cast<Eigen::Index>(g)) = Eigen::Map<const Eigen::RowVectorXd>(series[g].data(), cycles);
  return ds;
}

Dataset load_aqi_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset " + path.string());
  return parse_aqi_dataset(in);
}

std::vector<geo::Grid> synth_grids(const WorldParams& p, std::uint64_t seed) {
  KeyedStream rng(derive_key(seed, "grid-placement", 0, 0));
  const double km_per_deg_lat = geo::kEarthRadiusKm * std::numbers::pi / 180.0;
  const double km_per_deg_lon = km_per_deg_lat * std::cos(p.center_lat * std::numbers::pi / 180.0);
  std::vector<geo::Grid> grids;
  grids.reserve(p.grids);
  for (std::size_t g = 0; g < p.grids; ++g) {
    const double dx = (rng.uniform() - 0.5) * p.region_km;
    const double dy = (rng.uniform() - 0.5) * p.region_km;
    grids.push_back({grid_id(g), p.center_lat + dy / km_per_deg_lat, p.center_lon + dx / km_per_deg_lon,
                     "grid-" + std::to_string(g)});
  }
  return grids;
}

TruthTable synth_truth_series(std::span<const geo::Grid> grids, Cycle cycles, std::uint64_t seed,
                              const TruthModel& model) {
  const auto m = static_cast<Eigen::Index>(grids.size());
  const double kLengthKm = model.length_km;
  const double kRegionalPhi = model.regional_phi, kRegionalSd = model.regional_sd;
  const double kLocalPhi = model.local_phi, kLocalSd = model.local_sd;
  const double kBaseSd = model.base_sd, kDiurnalAmp = model.diurnal_amplitude;

  // Neighbour-correlated innovations through the Cholesky factor of a distance kernel.
  Eigen::MatrixXd kernel(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b) {
      const double d = geo::geographical_distance(grids[static_cast<std::size_t>(a)], grids[static_cast<std::size_t>(b)]);
      kernel(a, b) = std::exp(-d * d / (2.0 * kLengthKm * kLengthKm));
    }
  kernel.diagonal().array() += 1e-6;
  const Eigen::MatrixXd chol = kernel.llt().matrixL();

  std::normal_distribution<double> normal;
  const auto correlated = [&](KeyedStream& rng) {
    Eigen::VectorXd z(m);
    for (Eigen::Index i = 0; i < m; ++i) z[i] = normal(rng);
    return Eigen::VectorXd(chol * z);
  };

  KeyedStream base_rng(derive_key(seed, "truth-base", 0, 0));
  const Eigen::VectorXd base = Eigen::VectorXd::Constant(m, model.base_mean) + kBaseSd * correlated(base_rng);
  Eigen::VectorXd local = kLocalSd * correlated(base_rng);
  Eigen::VectorXd nugget(m);
  for (Eigen::Index i = 0; i < m; ++i) nugget[i] = model.nugget_sd * normal(base_rng);
  double regional = kRegionalSd * normal(base_rng);

  TruthTable out(m, static_cast<Eigen::Index>(cycles));
  for (Cycle t = 0; t < cycles; ++t) {
    KeyedStream rng(derive_key(seed, "truth-step", 0, t));
    if (t > 0) {
      regional = kRegionalPhi * regional + kRegionalSd * std::sqrt(1.0 - kRegionalPhi * kRegionalPhi) * normal(rng);
      const double keep = std::sqrt(1.0 - kLocalPhi * kLocalPhi);
      local = kLocalPhi * local + kLocalSd * keep * correlated(rng);
      for (Eigen::Index i = 0; i < m; ++i) nugget[i] = kLocalPhi * nugget[i] + model.nugget_sd * keep * normal(rng);
    }
    const double diurnal = kDiurnalAmp * std::sin(2.0 * std::numbers::pi * static_cast<double>(t % 96) / 96.0);
    out.col(static_cast<Eigen::Index>(t)) =
        (base.array() + regional + diurnal + local.array() + nugget.array()).min(100.0).max(20.0).matrix();
  }
  return out;
}

Eigen::VectorXd zipf_expected_counts(std::size_t m, double exponent, double total) {
  Eigen::VectorXd w(static_cast<Eigen::Index>(m));
  for (std::size_t r = 1; r <= m; ++r) w[static_cast<Eigen::Index>(r - 1)] = std::pow(static_cast<double>(r), -exponent);
  return total * w / w.sum();
}

std::vector<std::vector<SourceId>> draw_passersby(const Eigen::VectorXd& expected, std::size_t sources, Cycle cycle,
                                                  std::uint64_t seed) {
  std::vector<std::vector<SourceId>> out(static_cast<std::size_t>(expected.size()));
  std::vector<std::uint32_t> pool(sources);
  for (Eigen::Index g = 0; g < expected.size(); ++g) {
    if (!(expected[g] > 0.0)) continue;
    KeyedStream rng(derive_key(seed, "passersby", static_cast<std::uint64_t>(g), cycle));
    std::poisson_distribution<std::size_t> poisson(expected[g]);
    const std::size_t count = std::min(poisson(rng), sources);
    // Partial Fisher-Yates: the first `count` slots are a uniform sample without replacement.
    std::iota(pool.begin(), pool.end(), 0u);
    auto& list = out[static_cast<std::size_t>(g)];
    list.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, sources - 1);
      std::swap(pool[i], pool[pick(rng)]);
      list.push_back(source_id(pool[i]));
    }
  }
  return out;
}

double sample_truncated_normal(const TruncatedNormal& tn, KeyedStream& rng) {
  if (tn.sigma == 0.0) return std::clamp(tn.mean, tn.lower, tn.upper);
  std::normal_distribution<double> normal(tn.mean, tn.sigma);
  for (;;) {
    const double x = normal(rng);
    if (x >= tn.lower && x <= tn.upper) return x;
  }
}

std::vector<parties::SourceProfile> draw_reliability(const WorldParams& p, std::uint64_t seed) {
  const std::size_t n = p.sources;
  const auto n_bad = static_cast<std::size_t>(std::llround(p.bad_fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  KeyedStream pick(derive_key(seed, "bad-sources", 0, 0));
  std::shuffle(order.begin(), order.end(), pick);
  std::vector<std::uint8_t> bad(n, 0);
  for (std::size_t i = 0; i < n_bad; ++i) bad[order[i]] = 1;

  std::vector<parties::SourceProfile> out;
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    KeyedStream rng(derive_key(seed, "reliability", s, 0));
    out.push_back({s, sample_truncated_normal(bad[s] ? p.bad : p.good, rng), bad[s] != 0});
  }
  return out;
}

double gen_observation(double truth, double kappa, double variance, KeyedStream& rng) {
  if (variance == 0.0) return kappa * truth;
  std::normal_distribution<double> normal(kappa * truth, std::sqrt(variance));
  return normal(rng);
}

World make_world(const WorldParams& p, std::uint64_t seed, const Dataset* dataset) {
  World w;
  w.params = p;
  w.seed = seed;
  if (dataset) {
    if (dataset->grids.size() != p.grids)
      throw ConfigError("dataset has " + std::to_string(dataset->grids.size()) + " grids, config expects " +
                        std::to_string(p.grids));
    if (dataset->truths.cols() < p.cycles)
      throw ConfigError("dataset has only " + std::to_string(dataset->truths.cols()) + " cycles");
    w.grids = dataset->grids;
    w.truths = dataset->truths.leftCols(static_cast<Eigen::Index>(p.cycles));
  } else {
    w.grids = synth_grids(p, seed);
    w.truths = synth_truth_series(w.grids, p.cycles, seed, p.truth);
  }
  w.sources = draw_reliability(p, seed);
  w.expected = zipf_expected_counts(p.grids, p.zipf_exponent, p.passbys());
  return w;
}

std::vector<Observation> build_cycle(const World& world, Cycle cycle) {
  const auto lists = draw_passersby(world.expected, world.params.sources, cycle, world.seed);
  std::vector<Observation> out;
  for (std::size_t g = 0; g < lists.size(); ++g) {
    const double truth = world.truths(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(cycle));
    for (auto s : lists[g]) {
      KeyedStream rng(derive_key(world.seed, "observation", index(s), cycle, g));
      out.push_back({s, grid_id(g), gen_observation(truth, world.sources[index(s)].kappa,
                                                    world.params.noise_variance, rng),
                     cycle});
    }
  }
  std::sort(out.begin(), out.end(), [](const Observation& a, const Observation& b) {
    return std::pair(index(a.source), index(a.grid)) < std::pair(index(b.source), index(b.grid));
  });
  return out;
}

void write_world_jsonl(std::ostream& os, const World& world) {
  using nlohmann::json;
  for (const auto& g : world.grids)
    os << json{{"type", "grid"}, {"id", index(g.id)}, {"lat", g.latitude}, {"lon", g.longitude}, {"label", g.label},
               {"expected", world.expected[static_cast<Eigen::Index>(index(g.id))]}}
              .dump()
       << '\n';
  for (const auto& s : world.sources)
    os << json{{"type", "source"}, {"id", s.rid}, {"kappa", s.kappa}, {"bad", s.bad}}.dump() << '\n';
  for (Cycle t = 0; t < world.params.cycles; ++t) {
    for (std::size_t g = 0; g < world.grids.size(); ++g)
      os << json{{"type", "truth"}, {"cycle", t}, {"grid", g},
                 {"value", world.truths(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(t))}}
                .dump()
         << '\n';
    for (const auto& o : build_cycle(world, t))
      os << json{{"type", "obs"}, {"cycle", t}, {"source", index(o.source)}, {"grid", index(o.grid)},
                 {"value", o.value}}
                .dump()
         << '\n';
  }
}

}  // namespace airq::synth
