#include "airq/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "airq/random.hpp"

namespace airq {

using nlohmann::json;

namespace {

constexpr std::string_view kNames[] = {"TD", "ST-plain", "AirQ", "SST-plain", "EAirQ"};

// Reads keys out of one JSON object and complains about leftovers.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.push_back(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  void get_number(const char* key, double& out, bool allow_inf = false) {
    seen_.push_back(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    if (allow_inf && it->is_string() && (*it == "inf" || *it == "infinity")) {
      out = std::numeric_limits<double>::infinity();
      return;
    }
    if (!it->is_number()) throw ConfigError(where(key) + " must be a number");
    out = it->get<double>();
  }

  void get_count(const char* key, std::size_t& out) {
    seen_.push_back(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_number_integer() || it->get<std::int64_t>() < 0)
      throw ConfigError(where(key) + " must be a non-negative integer");
    out = it->get<std::size_t>();
  }

  Section sub(const char* key) {
    seen_.push_back(key);
    const auto it = j_.find(key);
    static const json empty = json::object();
    return Section(it == j_.end() ? empty : *it, where(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (std::find(seen_.begin(), seen_.end(), k) == seen_.end()) throw ConfigError("unknown key " + where(k));
  }

 private:
  std::string where(std::string_view key = {}) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  const json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

void read_tn(Section s, synth::TruncatedNormal& tn) {
  s.get_number("upper", tn.upper);
  s.get_number("lower", tn.lower);
  s.get_number("mean", tn.mean);
  s.get_number("sigma", tn.sigma);
  s.finish();
}

json tn_json(const synth::TruncatedNormal& tn) {
  return {{"upper", tn.upper}, {"lower", tn.lower}, {"mean", tn.mean}, {"sigma", tn.sigma}};
}

json number_or_inf(double v) { return std::isinf(v) ? json("inf") : json(v); }

}  // namespace

std::string_view name(Algorithm a) noexcept { return kNames[static_cast<std::size_t>(a)]; }

Algorithm algorithm_from_name(std::string_view s) {
  for (auto a : kAllAlgorithms)
    if (name(a) == s) return a;
  throw ConfigError("unknown algorithm '" + std::string(s) + "'");
}

bool ExperimentConfig::runs(Algorithm a) const {
  return std::find(algorithms.begin(), algorithms.end(), a) != algorithms.end();
}

void validate(const ExperimentConfig& c) {
  synth::validate(c.world);
  geo::validate(c.spatial);
  temporal::validate(c.temporal);
  td::validate(c.solver);
  privacy::validate(c.perturbation);
  parties::validate(c.handling);
  if (c.algorithms.empty()) throw ConfigError("at least one algorithm is required");
  for (std::size_t i = 1; i < c.algorithms.size(); ++i)
    if (c.algorithms[i] <= c.algorithms[i - 1]) throw ConfigError("algorithms must be distinct");
  if (c.dataset && !std::filesystem::exists(*c.dataset))
    throw ConfigError("dataset not found: " + c.dataset->string());
}

ExperimentConfig config_from_json(const std::string& text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  Section root(j, "");

  root.get("seed", c.seed);
  {
    std::vector<std::string> names;
    root.get("algorithms", names);
    if (j.contains("algorithms")) {
      c.algorithms.clear();
      for (const auto& n : names) c.algorithms.push_back(algorithm_from_name(n));
      std::sort(c.algorithms.begin(), c.algorithms.end());
      if (std::adjacent_find(c.algorithms.begin(), c.algorithms.end()) != c.algorithms.end())
        throw ConfigError("algorithms: duplicate entry");
    }
  }
  {
    json ds = nullptr;
    root.get("dataset", ds);
    if (!ds.is_null() && !ds.is_string()) throw ConfigError("dataset must be a path or null");
    if (ds.is_string() && !ds.get<std::string>().empty()) {
      std::filesystem::path p(ds.get<std::string>());
      c.dataset = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    }
    std::string out = c.output_dir.string();
    root.get("output_dir", out);
    c.output_dir = out;
  }

  auto w = root.sub("world");
  w.get_count("sources", c.world.sources);
  w.get_count("grids", c.world.grids);
  w.get("cycles", c.world.cycles);
  w.get_number("zipf_exponent", c.world.zipf_exponent);
  w.get_number("total_passbys", c.world.total_passbys);
  read_tn(w.sub("good"), c.world.good);
  read_tn(w.sub("bad"), c.world.bad);
  w.get_number("bad_fraction", c.world.bad_fraction);
  w.get_number("noise_variance", c.world.noise_variance);
  w.get_number("center_lat", c.world.center_lat);
  w.get_number("center_lon", c.world.center_lon);
  w.get_number("region_km", c.world.region_km);
  {
    auto tr = w.sub("truth");
    auto& m = c.world.truth;
    tr.get_number("base_mean", m.base_mean);
    tr.get_number("base_sd", m.base_sd);
    tr.get_number("length_km", m.length_km);
    tr.get_number("regional_sd", m.regional_sd);
    tr.get_number("regional_phi", m.regional_phi);
    tr.get_number("local_sd", m.local_sd);
    tr.get_number("local_phi", m.local_phi);
    tr.get_number("nugget_sd", m.nugget_sd);
    tr.get_number("diurnal_amplitude", m.diurnal_amplitude);
    tr.finish();
  }
  w.finish();

  auto s = root.sub("spatial");
  s.get_number("omega_km", c.spatial.omega);
  s.get_number("u_km", c.spatial.u);
  s.finish();

  auto t = root.sub("temporal");
  t.get_number("rho_w", c.temporal.rho_w);
  t.get_number("rho_t", c.temporal.rho_t);
  t.get("history_window", c.temporal.history_window);
  t.finish();

  auto so = root.sub("solver");
  so.get_number("tolerance", c.solver.tolerance);
  so.get("max_iterations", c.solver.max_iterations);
  so.get_number("distance_floor", c.solver.distance_floor);
  so.get_number("weight_cap", c.solver.weight_cap);
  so.get_number("initial_weight", c.solver.initial_weight);
  so.finish();

  auto p = root.sub("perturbation");
  p.get_number("p1", c.perturbation.p1);
  p.get_number("p2", c.perturbation.p2);
  p.get_number("lambda1", c.perturbation.lambda1);
  p.get_number("lambda2", c.perturbation.lambda2);
  p.get_number("fallback_truth", c.perturbation.fallback_truth);
  p.finish();

  auto h = root.sub("handling");
  h.get_number("tau", c.handling.tau, true);
  h.finish();

  root.finish();
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str(), path.parent_path());
}

namespace {

json to_json_object(const ExperimentConfig& c) {
  json algos = json::array();
  for (auto a : c.algorithms) algos.push_back(std::string(name(a)));
  return {
      {"seed", c.seed},
      {"algorithms", algos},
      {"dataset", c.dataset ? json(c.dataset->string()) : json(nullptr)},
      {"output_dir", c.output_dir.string()},
      {"world",
       {{"sources", c.world.sources},
        {"grids", c.world.grids},
        {"cycles", c.world.cycles},
        {"zipf_exponent", c.world.zipf_exponent},
        {"total_passbys", c.world.total_passbys},
        {"good", tn_json(c.world.good)},
        {"bad", tn_json(c.world.bad)},
        {"bad_fraction", c.world.bad_fraction},
        {"noise_variance", c.world.noise_variance},
        {"center_lat", c.world.center_lat},
        {"center_lon", c.world.center_lon},
        {"region_km", c.world.region_km},
        {"truth",
         {{"base_mean", c.world.truth.base_mean},
          {"base_sd", c.world.truth.base_sd},
          {"length_km", c.world.truth.length_km},
          {"regional_sd", c.world.truth.regional_sd},
          {"regional_phi", c.world.truth.regional_phi},
          {"local_sd", c.world.truth.local_sd},
          {"local_phi", c.world.truth.local_phi},
          {"nugget_sd", c.world.truth.nugget_sd},
          {"diurnal_amplitude", c.world.truth.diurnal_amplitude}}}}},
      {"spatial", {{"omega_km", c.spatial.omega}, {"u_km", c.spatial.u}}},
      {"temporal",
       {{"rho_w", c.temporal.rho_w}, {"rho_t", c.temporal.rho_t}, {"history_window", c.temporal.history_window}}},
      {"solver",
       {{"tolerance", c.solver.tolerance},
        {"max_iterations", c.solver.max_iterations},
        {"distance_floor", c.solver.distance_floor},
        {"weight_cap", c.solver.weight_cap},
        {"initial_weight", c.solver.initial_weight}}},
      {"perturbation",
       {{"p1", c.perturbation.p1},
        {"p2", c.perturbation.p2},
        {"lambda1", c.perturbation.lambda1},
        {"lambda2", c.perturbation.lambda2},
        {"fallback_truth", c.perturbation.fallback_truth}}},
      {"handling", {{"tau", number_or_inf(c.handling.tau)}}},
  };
}

}  // namespace

std::string config_to_json(const ExperimentConfig& c, int indent) { return to_json_object(c).dump(indent); }

std::string config_hash(const ExperimentConfig& c) {
  auto j = to_json_object(c);
  j.erase("output_dir");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

}  // namespace airq
