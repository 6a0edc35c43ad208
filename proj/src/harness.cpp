#include "airq/harness.hpp"

#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <optional>
#include <limits>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "airq/parties.hpp"
#include "airq/privacy.hpp"
#include "airq/random.hpp"
#include "airq/secmask.hpp"

#ifndef AIRQ_VERSION
#define AIRQ_VERSION "0.0.0"
#endif

namespace airq {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Static chunking; every item writes only its own slot, so the outcome is
// independent of the worker count.
template <typename F>
void parallel_for(std::size_t count, unsigned workers, F&& f) {
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += workers) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void add_stats(EventCounters& c, const td::SolverStats& s, int max_iterations) {
  c.clamp_events += s.clamp_events;
  c.floor_events += s.floor_events;
  c.negative_distance_events += s.negative_distance_events;
  c.unestimated += s.unestimated;
  c.carried_forward += s.carried_forward;
  c.iterations += static_cast<std::uint64_t>(s.iterations);
  if (s.iterations >= max_iterations) ++c.max_iterations_hit;
}

void append_truths(const td::CycleResult& r, std::vector<temporal::TruthHistory>& hist, Cycle t) {
  for (std::size_t g = 0; g < hist.size(); ++g)
    if (r.status[g] == td::EstimateStatus::estimated) hist[g].append(t, r.truths[static_cast<Eigen::Index>(g)]);
}

void append_weights(const Eigen::VectorXd& w, std::span<const std::size_t> slots,
                    std::vector<temporal::WeightHistory>& hist, Cycle t) {
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const double v = w[static_cast<Eigen::Index>(k)];
    if (!std::isnan(v)) hist[slots[k]].append(t, v);
  }
}

std::string stable_token(std::size_t s) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "v%08zu", s);
  return buf;
}

// Per-algorithm mutable state across cycles.
struct State {
  Algorithm algo;
  std::vector<temporal::WeightHistory> weights;
  std::vector<temporal::TruthHistory> truths;
  std::optional<parties::TrustedManager> tm;
  std::vector<std::optional<double>> prev_truths;
  std::uint64_t mask_seed = 0, perturb_seed = 0, init_seed = 0;
  AlgorithmRun run;
};

struct CycleData {
  std::span<const Observation> obs;
  // Sources with at least one observation, ascending, and their observation ranges.
  std::vector<std::size_t> active;
  std::vector<std::span<const Observation>> per_source;
};

CycleData group_by_source(std::span<const Observation> obs) {
  CycleData d{obs, {}, {}};
  std::size_t i = 0;
  while (i < obs.size()) {
    std::size_t j = i;
    while (j < obs.size() && obs[j].source == obs[i].source) ++j;
    d.active.push_back(index(obs[i].source));
    d.per_source.push_back(obs.subspan(i, j - i));
    i = j;
  }
  return d;
}

td::CycleResult run_airq_cycle(State& st, const CycleData& d, const geo::ThetaTable& thetas,
                               const ExperimentConfig& cfg, const RunOptions& opt, Cycle t) {
  const std::size_t k = d.active.size();
  std::vector<secmask::MaskedReport> reports(k);
  std::vector<secmask::MaskingCost> costs(k);
  parallel_for(k, opt.workers, [&](std::size_t i) {
    reports[i] = secmask::build_masked_report(d.per_source[i], thetas, st.mask_seed, d.active[i], t,
                                              stable_token(d.active[i]), &costs[i]);
  });
  for (const auto& c : costs) {
    st.run.counters.masking_additions += c.additions;
    st.run.counters.masking_multiplications += c.multiplications;
  }
  std::vector<temporal::WeightHistory> hist;
  hist.reserve(k);
  for (auto s : d.active) hist.push_back(st.weights[s]);
  secmask::AirqOptions init;
  init.seed = st.init_seed;
  auto r = secmask::run_airq(reports, hist, st.truths, cfg.temporal, cfg.solver, t, init);
  append_weights(r.weights, d.active, st.weights, t);
  append_truths(r, st.truths, t);
  return r;
}

td::CycleResult run_eairq_cycle(State& st, const CycleData& d, const geo::ThetaTable& thetas,
                                const ExperimentConfig& cfg, const RunOptions& opt, Cycle t) {
  auto& tm = *st.tm;
  tm.begin_cycle(t);
  const std::size_t k = d.active.size();
  std::vector<std::string> pids(k);
  for (std::size_t i = 0; i < k; ++i) pids[i] = tm.issue_pseudo_id(d.active[i], t).token;

  std::vector<secmask::MaskedReport> masked(k);
  std::vector<privacy::PerturbedReport> perturbed(k);
  std::vector<secmask::MaskingCost> costs(k);
  std::vector<privacy::PerturbStats> pstats(k);
  const std::size_t m = st.truths.size();
  parallel_for(k, opt.workers, [&](std::size_t i) {
    masked[i] = secmask::build_masked_report(d.per_source[i], thetas, st.mask_seed, d.active[i], t, pids[i],
                                             &costs[i]);
    const privacy::PerturbKey key{st.perturb_seed, d.active[i], t};
    auto entries = privacy::grid_perturb(d.per_source[i], m, st.prev_truths, cfg.perturbation, key, &pstats[i]);
    entries = privacy::value_perturb(std::move(entries), cfg.perturbation.lambda2, key);
    perturbed[i] = privacy::make_report(pids[i], t, entries);
  });
  auto& c = st.run.counters;
  for (std::size_t i = 0; i < k; ++i) {
    c.masking_additions += costs[i].additions;
    c.masking_multiplications += costs[i].multiplications;
    c.dropped += pstats[i].dropped;
    c.imitated += pstats[i].imitated;
    c.fallback_global_mean += pstats[i].fallback_global_mean;
    c.fallback_constant += pstats[i].fallback_constant;
  }

  secmask::AirqOptions init;
  init.seed = st.init_seed;
  auto res = parties::eairq_handle_cycle(parties::EairqInput{masked, perturbed, m, t}, tm, st.truths, cfg.temporal,
                                         cfg.solver, cfg.handling, init);
  c.unknown_histories += res.unknown_histories;
  for (auto p : res.provenance) c.sst_grids += p == parties::Provenance::sst ? 1 : 0;
  append_truths(res.result, st.truths, t);
  for (std::size_t g = 0; g < m; ++g) {
    const double v = res.result.truths[static_cast<Eigen::Index>(g)];
    st.prev_truths[g] = std::isnan(v) ? std::nullopt : std::optional<double>(v);
  }
  return std::move(res.result);
}

}  // namespace

std::string_view version() noexcept { return AIRQ_VERSION; }

const AlgorithmRun& RunRecord::run(Algorithm a) const {
  for (const auto& r : runs)
    if (r.algo == a) return r;
  throw std::out_of_range("algorithm not in run: " + std::string(name(a)));
}

synth::World build_world(const ExperimentConfig& cfg) {
  if (cfg.dataset) {
    const auto ds = synth::load_aqi_dataset(*cfg.dataset);
    return synth::make_world(cfg.world, cfg.seed, &ds);
  }
  return synth::make_world(cfg.world, cfg.seed);
}

RunRecord run_experiment(const ExperimentConfig& cfg, const RunOptions& opt) {
  validate(cfg);
  return run_experiment(cfg, build_world(cfg), opt);
}

RunRecord run_experiment(const ExperimentConfig& cfg, const synth::World& world, const RunOptions& opt) {
  validate(cfg);
  const std::size_t n = world.sources.size();
  const std::size_t m = world.grids.size();
  const Cycle cycles = static_cast<Cycle>(world.truths.cols());
  const auto thetas = geo::build_theta_table(world.grids, cfg.spatial);

  std::vector<State> states;
  for (auto a : cfg.algorithms) {
    State st{a, {}, {}, std::nullopt, {}, 0, 0, 0, {}};
    const auto label = std::string(name(a));
    st.mask_seed = derive_key(cfg.seed, label + "/mask", 0, 0);
    st.perturb_seed = derive_key(cfg.seed, label + "/perturb", 0, 0);
    st.init_seed = derive_key(cfg.seed, label + "/init", 0, 0);
    st.weights.resize(n);
    st.truths.resize(m);
    if (a == Algorithm::eairq) {
      st.tm.emplace(derive_key(cfg.seed, label + "/tm", 0, 0));
      for (std::size_t s = 0; s < n; ++s) st.tm->register_vehicle(s);
      st.prev_truths.assign(m, std::nullopt);
    }
    st.run.algo = a;
    st.run.estimates = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(m), cycles, kNaN);
    states.push_back(std::move(st));
  }

  for (Cycle t = 0; t < cycles; ++t) {
    try {
      const auto obs = synth::build_cycle(world, t);
      const auto data = group_by_source(obs);
      const td::CycleInput in{obs, n, m, t};
      for (auto& st : states) {
        td::CycleResult r;
        switch (st.algo) {
          case Algorithm::td:
            r = td::run_baseline_td(in, cfg.solver);
            break;
          case Algorithm::st_plain: {
            r = td::run_st(in, thetas, st.weights, st.truths, cfg.temporal, cfg.solver);
            std::vector<std::size_t> all(n);
            std::iota(all.begin(), all.end(), std::size_t{0});
            append_weights(r.weights, all, st.weights, t);
            append_truths(r, st.truths, t);
            break;
          }
          case Algorithm::sst_plain: {
            r = td::run_sst(in, st.weights, cfg.temporal, cfg.solver);
            std::vector<std::size_t> all(n);
            std::iota(all.begin(), all.end(), std::size_t{0});
            append_weights(r.weights, all, st.weights, t);
            append_truths(r, st.truths, t);
            break;
          }
          case Algorithm::airq:
            r = run_airq_cycle(st, data, thetas, cfg, opt, t);
            break;
          case Algorithm::eairq:
            r = run_eairq_cycle(st, data, thetas, cfg, opt, t);
            break;
        }
        add_stats(st.run.counters, r.stats, cfg.solver.max_iterations);
        st.run.estimates.col(static_cast<Eigen::Index>(t)) = r.truths;
        if (opt.keep_cycle_results) st.run.cycles.push_back(std::move(r));
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("cycle " + std::to_string(t) + ": " + e.what());
    }
  }

  RunRecord rec;
  rec.config_hash = config_hash(cfg);
  rec.seed = cfg.seed;
  rec.dump.real = world.truths;
  for (auto& st : states) {
    rec.dump.algos.emplace_back(name(st.algo));
    rec.dump.estimates.push_back(st.run.estimates);
    rec.runs.push_back(std::move(st.run));
  }
  rec.table = metrics::compute(rec.dump);
  return rec;
}

void write_outputs(const std::filesystem::path& dir, const ExperimentConfig& cfg, const RunRecord& rec) {
  metrics::write_all(dir, rec.dump, rec.table);
  nlohmann::ordered_json counters = nlohmann::ordered_json::object();
  for (const auto& r : rec.runs) {
    const auto& c = r.counters;
    counters[std::string(name(r.algo))] = {
        {"clamp_events", c.clamp_events},
        {"floor_events", c.floor_events},
        {"negative_distance_events", c.negative_distance_events},
        {"unestimated", c.unestimated},
        {"carried_forward", c.carried_forward},
        {"iterations", c.iterations},
        {"max_iterations_hit", c.max_iterations_hit},
        {"dropped", c.dropped},
        {"imitated", c.imitated},
        {"fallback_global_mean", c.fallback_global_mean},
        {"fallback_constant", c.fallback_constant},
        {"sst_grids", c.sst_grids},
        {"masking_additions", c.masking_additions},
        {"masking_multiplications", c.masking_multiplications},
        {"unknown_histories", c.unknown_histories},
    };
  }
  // The output location is not part of the run, so it stays out of the manifest.
  auto config = nlohmann::json::parse(config_to_json(cfg));
  config.erase("output_dir");
  nlohmann::ordered_json manifest = {
      {"version", std::string(version())},
      {"config_hash", rec.config_hash},
      {"seed", rec.seed},
      {"grids", rec.dump.real.rows()},
      {"cycles", rec.dump.real.cols()},
      {"config", std::move(config)},
      {"counters", counters},
  };
  std::ofstream os(dir / "manifest.json", std::ios::binary);
  if (!os) throw std::runtime_error("cannot write manifest");
  os << manifest.dump(2) << '\n';
}

metrics::MetricsTable recompute_metrics(const std::filesystem::path& dir) {
  std::ifstream in(dir / "truths.csv", std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + (dir / "truths.csv").string());
  const auto dump = metrics::read_truths_csv(in);
  auto table = metrics::compute(dump);
  metrics::write_tables(dir, table);
  return table;
}

}  // namespace airq
