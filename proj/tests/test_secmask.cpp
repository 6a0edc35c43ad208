#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "airq/secmask.hpp"
#include "instances.hpp"

using namespace airq;
using namespace airq::secmask;

namespace {

Observation ob(std::size_t s, std::size_t g, double v, Cycle c = 0) { return {source_id(s), grid_id(g), v, c}; }

std::vector<geo::Grid> cluster(std::size_t m, std::uint64_t seed, double spread = 0.03) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> off(-spread, spread);
  std::vector<geo::Grid> g;
  for (std::size_t i = 0; i < m; ++i) g.push_back({grid_id(i), 39.9 + off(rng), 116.4 + off(rng), {}});
  return g;
}

}  // namespace

TEST_CASE("fixed-point encoding") {
  CHECK(fx_encode(0.0).raw == 0);
  CHECK(fx_decode(fx_encode(0.0)) == 0.0);
  CHECK(fx_encode(1.5).raw == 1'500'000);
  CHECK(fx_decode(fx_encode(1.5)) == 1.5);
  CHECK(fx_decode(fx_encode(0.1) + fx_encode(0.2)) == 0.3);
  CHECK(fx_decode(fx_encode(-2.25)) == -2.25);
  CHECK((fx_encode(3.0) - fx_encode(5.0)).decode() == -2.0);
  CHECK_THROWS_AS(fx_encode(2e6), EncodingError);
  CHECK_THROWS_AS(fx_encode(std::nan("")), EncodingError);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 10000; ++i) {
    const double v = u(rng);
    CHECK(std::abs(fx_decode(fx_encode(v)) - v) <= 5e-7 + 1e-9);
  }
}

TEST_CASE("mask sequences cancel exactly") {
  KeyedStream s1(derive_key(1, "t", 0, 0));
  const std::vector<FixedPoint> one{fx_encode(42.0)};
  CHECK(mask_sequence(one, s1) == one);

  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-5000, 5000);
  for (std::size_t c = 1; c <= 16; ++c) {
    std::vector<FixedPoint> x(c);
    FixedPoint sum;
    for (auto& v : x) {
      v = fx_encode(u(rng));
      sum += v;
    }
    KeyedStream masks(derive_key(2, "t", c, 0));
    MaskingCost cost;
    const auto y = mask_sequence(x, masks, &cost);
    FixedPoint masked_sum;
    for (auto v : y) masked_sum += v;
    CHECK(masked_sum == sum);
    CHECK(cost.additions == c * (c - 1));
    CHECK(masks.draws() == c * (c - 1) / 2);
    if (c >= 3)
      for (std::size_t j = 0; j < c; ++j) CHECK(y[j] != x[j]);
  }
}

TEST_CASE("a single masked element looks uniform on the ring") {
  constexpr int kSamples = 100000;
  constexpr int kBuckets = 256;
  std::vector<double> counts(kBuckets, 0.0);
  const std::vector<FixedPoint> x{fx_encode(55.0), fx_encode(61.0)};
  for (int i = 0; i < kSamples; ++i) {
    auto stream = MaskKey{9, 4, i, ValueKind::theta_v, grid_id(0)}.stream();
    counts[mask_sequence(x, stream)[0].raw >> 56] += 1.0;
  }
  const double expected = static_cast<double>(kSamples) / kBuckets;
  double stat = 0.0;
  for (double c : counts) stat += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared dist(kBuckets - 1);
  CHECK(boost::math::cdf(boost::math::complement(dist, stat)) > 0.01);
}

TEST_CASE("mask keys are distinct across cycles, kinds and grids") {
  std::set<std::uint64_t> keys;
  for (Cycle t = 0; t < 20; ++t)
    for (auto k : {ValueKind::theta_v, ValueKind::theta_v2, ValueKind::theta})
      for (std::size_t g = 0; g < 10; ++g)
        for (std::uint64_t s = 0; s < 5; ++s) keys.insert(MaskKey{1, s, t, k, grid_id(g)}.stream_key());
  CHECK(keys.size() == 20 * 3 * 10 * 5);
}

TEST_CASE("masked report construction") {
  SUBCASE("single isolated observation is unmasked") {
    const std::vector<geo::Grid> g{{grid_id(0), 39.9, 116.4, {}}, {grid_id(1), 40.9, 116.4, {}}};
    const auto th = geo::build_theta_table(g, {3.0, 8.0});
    const std::vector<Observation> obs{ob(0, 1, 61.25)};
    const auto r = build_masked_report(obs, th, 5, 0, 0, "p");
    REQUIRE(r.blocks.size() == 1);
    CHECK(r.blocks[0].grid == grid_id(1));
    CHECK(r.blocks[0].beta1[0] == fx_encode(61.25));
    CHECK(r.blocks[0].beta2[0] == fx_encode(61.25 * 61.25));
    CHECK(r.blocks[0].beta3[0] == fx_encode(1.0));
    const auto chi = aggregate_chi(r);
    CHECK(chi.entries[0].chi1 == 61.25);
    CHECK(chi.entries[0].chi2 == 61.25 * 61.25);
    CHECK(chi.entries[0].chi3 == 1.0);
  }
  SUBCASE("empty report") {
    const std::vector<geo::Grid> g{{grid_id(0), 39.9, 116.4, {}}};
    const auto th = geo::build_theta_table(g, {3.0, 8.0});
    const auto r = build_masked_report({}, th, 5, 0, 0, "p");
    CHECK(r.blocks.empty());
    CHECK(aggregate_chi(r).entries.empty());
  }
  SUBCASE("missing theta row") {
    const std::vector<geo::Grid> g{{grid_id(0), 39.9, 116.4, {}}};
    const auto th = geo::build_theta_table(g, {3.0, 8.0});
    const std::vector<Observation> obs{ob(0, 4, 1.0)};
    CHECK_THROWS_AS(build_masked_report(obs, th, 5, 0, 0, "p"), ProtocolError);
  }
  SUBCASE("malformed report is rejected") {
    MaskedReport bad{"p", 0, {MaskedGridBlock{grid_id(0), {fx_encode(1)}, {fx_encode(1)}, {}}}};
    CHECK_THROWS_AS(aggregate_chi(bad), ProtocolError);
  }
}

TEST_CASE("chi sums equal plaintext sums bit for bit") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> val(10.0, 150.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 3 + trial % 8;
    const auto grids = cluster(m, 100 + trial);
    const auto th = geo::build_theta_table(grids, {3.0, 8.0});
    std::vector<Observation> obs;
    for (std::size_t g = 0; g < m; ++g)
      if (rng() % 2) obs.push_back(ob(0, g, val(rng)));
    MaskingCost cost;
    const auto r = build_masked_report(obs, th, 77, 0, trial, "p", &cost);
    const auto chi = aggregate_chi(r);
    std::size_t blocks = 0;
    for (std::size_t g = 0; g < m; ++g) {
      FixedPoint p1, p2, p3;
      double mass = 0.0;
      for (const auto& o : obs) {
        const double q = quantized_theta(th(o.grid, grid_id(g)));
        p1 += fx_encode(q * o.value);
        p2 += fx_encode(q * o.value * o.value);
        p3 += fx_encode(q);
        mass += q;
      }
      if (mass == 0.0) continue;
      REQUIRE(blocks < chi.entries.size());
      const auto& e = chi.entries[blocks++];
      CHECK(e.grid == grid_id(g));
      CHECK(e.raw1 == p1);
      CHECK(e.raw2 == p2);
      CHECK(e.raw3 == p3);
      CHECK(e.terms == obs.size());
    }
    CHECK(blocks == chi.entries.size());
    CHECK(cost.multiplications == 2 * obs.size() * blocks);
  }
}

TEST_CASE("masked updates agree with the plaintext updates") {
  temporal::TemporalParams tp;
  td::SolverParams sp;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto in = inst::make(seed, {});
    const std::size_t n = in.sources, m = in.grids.size();
    const auto th = geo::build_theta_table(in.grids, {3.0, 8.0});
    const auto& obs = in.cycles[0];
    std::vector<ChiSums> chis(n);
    for (std::size_t s = 0; s < n; ++s) {
      std::vector<Observation> mine;
      for (const auto& o : obs)
        if (index(o.source) == s) mine.push_back(o);
      chis[s] = aggregate_chi(build_masked_report(mine, th, 1, s, 0, std::to_string(s)));
    }
    const td::CycleInput ci{obs, n, m, 0};
    Eigen::VectorXd w = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), std::nan(""));
    for (const auto& o : obs) w[static_cast<Eigen::Index>(index(o.source))] = 0.3 + 0.1 * static_cast<double>(index(o.source));
    Eigen::VectorXd v = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(m), 50.0);
    const auto wd = td::identity_deltas(n), tdl = td::identity_deltas(m);
    const auto pt = td::st_update_truths(ci, th, w, wd, tdl, v);
    const auto mt = masked_update_truths(chis, m, w, wd, tdl, v);
    for (Eigen::Index g = 0; g < pt.size(); ++g) CHECK(inst::close(mt[g], pt[g], 1e-4));
    const auto pw = td::st_update_weights(ci, th, v, tdl, wd, sp);
    const auto mw = masked_update_weights(chis, v, tdl, wd, sp);
    for (Eigen::Index s = 0; s < pw.size(); ++s) CHECK(inst::close(mw[s], pw[s], 1e-4));
  }
}

TEST_CASE("masked weight update on an exact observation floors the distance") {
  const std::vector<geo::Grid> g{{grid_id(0), 39.9, 116.4, {}}};
  const auto th = geo::build_theta_table(g, {3.0, 8.0});
  const std::vector<Observation> a{ob(0, 0, 48.0)};
  const std::vector<Observation> b{ob(1, 0, 48.0)};
  std::vector<ChiSums> chis{aggregate_chi(build_masked_report(a, th, 1, 0, 0, "a")),
                            aggregate_chi(build_masked_report(b, th, 1, 1, 0, "b"))};
  td::SolverStats stats;
  const Eigen::VectorXd v = Eigen::VectorXd::Constant(1, 48.0);
  const auto w = masked_update_weights(chis, v, td::identity_deltas(1), td::identity_deltas(2), {}, &stats);
  CHECK(stats.floor_events == 2);
  CHECK(w[0] == doctest::Approx(std::log(2.0)));
  CHECK(w[0] == w[1]);
}

TEST_CASE("run_airq behaviour") {
  temporal::TemporalParams tp;
  td::SolverParams sp;
  SUBCASE("no reports carries history forward") {
    std::vector<temporal::TruthHistory> trh(2);
    trh[1].append(0, 44.0);
    const auto r = run_airq({}, {}, trh, tp, sp, 1);
    CHECK(r.status[0] == td::EstimateStatus::unestimated);
    CHECK(r.status[1] == td::EstimateStatus::carried_forward);
    CHECK(r.truths[1] == 44.0);
  }
  SUBCASE("order of arrival does not matter") {
    const auto in = inst::make(5, {});
    const std::size_t n = in.sources, m = in.grids.size();
    const auto th = geo::build_theta_table(in.grids, {3.0, 8.0});
    std::vector<MaskedReport> reports;
    for (std::size_t s = 0; s < n; ++s) {
      std::vector<Observation> mine;
      for (const auto& o : in.cycles[0])
        if (index(o.source) == s) mine.push_back(o);
      reports.push_back(build_masked_report(mine, th, 1, s, 0, "v" + std::to_string(s)));
    }
    std::vector<temporal::WeightHistory> wh(n);
    std::vector<temporal::TruthHistory> trh(m);
    const auto a = run_airq(reports, wh, trh, tp, sp, 0);
    std::reverse(reports.begin(), reports.end());
    const auto b = run_airq(reports, wh, trh, tp, sp, 0);
    CHECK(a.truths.isApprox(b.truths, 0.0));
    for (std::size_t s = 0; s < n; ++s)
      CHECK(inst::close(a.weights[static_cast<Eigen::Index>(s)], b.weights[static_cast<Eigen::Index>(n - 1 - s)], 0.0));
  }
  SUBCASE("a lone source does not depend on the starting point") {
    const std::vector<geo::Grid> g{{grid_id(0), 39.90, 116.40, {}}, {grid_id(1), 39.91, 116.40, {}}};
    const auto th = geo::build_theta_table(g, {3.0, 8.0});
    const std::vector<Observation> obs{ob(0, 0, 40.0), ob(0, 1, 70.0)};
    const std::vector<MaskedReport> reports{build_masked_report(obs, th, 1, 0, 0, "only")};
    std::vector<temporal::WeightHistory> wh(1);
    std::vector<temporal::TruthHistory> trh(2);
    const auto plain = td::run_st(td::CycleInput{obs, 1, 2, 0}, th, wh, trh, tp, sp);
    for (std::uint64_t seed : {1, 2, 3}) {
      AirqOptions opt;
      opt.seed = seed;
      const auto r = run_airq(reports, wh, trh, tp, sp, 0, opt);
      for (Eigen::Index k = 0; k < 2; ++k) CHECK(inst::close(r.truths[k], plain.truths[k], 1e-6));
    }
  }
  SUBCASE("protocol violations") {
    std::vector<temporal::TruthHistory> trh(1);
    std::vector<temporal::WeightHistory> wh(2);
    std::vector<MaskedReport> dup{{"x", 0, {}}, {"x", 0, {}}};
    CHECK_THROWS_AS(run_airq(dup, wh, trh, tp, sp, 0), ProtocolError);
    std::vector<MaskedReport> stale{{"x", 0, {}}, {"y", 1, {}}};
    CHECK_THROWS_AS(run_airq(stale, wh, trh, tp, sp, 1), ProtocolError);
  }
}

TEST_CASE("masked reports round-trip through JSON lines") {
  const auto grids = cluster(5, 8);
  const auto th = geo::build_theta_table(grids, {3.0, 8.0});
  const std::vector<Observation> obs{ob(0, 0, 51.0), ob(0, 3, 63.5)};
  std::vector<MaskedReport> reports{build_masked_report(obs, th, 3, 0, 2, "aa"), MaskedReport{"bb", 2, {}}};
  std::stringstream ss;
  write_jsonl(ss, reports);
  const auto back = read_jsonl(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[0].pseudo_id == "aa");
  CHECK(back[1].blocks.empty());
  REQUIRE(back[0].blocks.size() == reports[0].blocks.size());
  for (std::size_t b = 0; b < back[0].blocks.size(); ++b) {
    CHECK(back[0].blocks[b].grid == reports[0].blocks[b].grid);
    CHECK(back[0].blocks[b].beta1 == reports[0].blocks[b].beta1);
    CHECK(back[0].blocks[b].beta2 == reports[0].blocks[b].beta2);
    CHECK(back[0].blocks[b].beta3 == reports[0].blocks[b].beta3);
  }
  std::stringstream bad("{\"pseudo_id\": 3}\n");
  CHECK_THROWS_AS(read_jsonl(bad), ParseError);
}
