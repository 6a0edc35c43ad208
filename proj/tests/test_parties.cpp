#include <doctest.h>

#include <cmath>
#include <set>

#include <json.hpp>

#include "airq/parties.hpp"
#include "instances.hpp"

using namespace airq;
using namespace airq::parties;

TEST_CASE("pseudo-ids") {
  TrustedManager tm(99);
  tm.register_vehicle(1);
  tm.register_vehicle(2);
  tm.begin_cycle(0);
  const auto a0 = tm.issue_pseudo_id(1, 0);
  const auto b0 = tm.issue_pseudo_id(2, 0);
  CHECK(a0.token != b0.token);
  CHECK(a0.issued == 0);
  tm.begin_cycle(1);
  const auto a1 = tm.issue_pseudo_id(1, 1);
  CHECK(a1.token != a0.token);

  CHECK_THROWS_AS(tm.issue_pseudo_id(7, 1), ProtocolError);
  CHECK_THROWS_AS(tm.issue_pseudo_id(1, 0), ProtocolError);
  CHECK_THROWS_AS(tm.begin_cycle(1), ProtocolError);

  SUBCASE("ten thousand issuances never collide") {
    TrustedManager big(5);
    for (RealId r = 0; r < 100; ++r) big.register_vehicle(r);
    std::set<std::string> seen;
    for (Cycle t = 0; t < 100; ++t) {
      big.begin_cycle(t);
      for (RealId r = 0; r < 100; ++r) seen.insert(big.issue_pseudo_id(r, t).token);
    }
    CHECK(seen.size() == 10000);
  }
}

TEST_CASE("weight histories through the trusted manager") {
  TrustedManager tm(3);
  tm.register_vehicle(10);
  tm.register_vehicle(11);
  for (Cycle t = 0; t < 3; ++t) {
    tm.begin_cycle(t);
    const auto p = tm.issue_pseudo_id(10, t);
    const std::vector<std::pair<std::string, double>> w{{p.token, 0.1 * double(t + 1)}};
    CHECK(tm.append_final_weights(w, t).appended == 1);
  }
  tm.begin_cycle(3);
  const auto old = tm.issue_pseudo_id(10, 3);
  const auto fresh = tm.issue_pseudo_id(11, 3);
  const auto resp = tm.resolve_weight_histories({{old.token, fresh.token, "stale"}});
  REQUIRE(resp.histories.size() == 3);
  REQUIRE(resp.histories[0]);
  REQUIRE(resp.histories[0]->size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK((*resp.histories[0])[i].cycle == Cycle(i));
    CHECK((*resp.histories[0])[i].value == doctest::Approx(0.1 * double(i + 1)));
  }
  REQUIRE(resp.histories[1]);
  CHECK(resp.histories[1]->empty());
  CHECK_FALSE(resp.histories[2]);
  CHECK(tm.protocol_errors() == 1);

  SUBCASE("JSON exchange carries no real id") {
    const std::string req = to_json(HistoryRequest{{old.token, fresh.token}});
    const auto j = nlohmann::json::parse(tm.handle_request_json(req));
    CHECK(j.size() == 1);
    CHECK(j.contains("histories"));
    CHECK(j.dump().find("rid") == std::string::npos);
    const auto back = response_from_json(j.dump());
    CHECK(back.histories.size() == 2);
    CHECK(back.histories[0]->size() == 3);
    CHECK(request_from_json(req).pids.size() == 2);
    CHECK_THROWS_AS(request_from_json("{\"x\":1}"), ProtocolError);
  }

  SUBCASE("appends") {
    const std::vector<std::pair<std::string, double>> w{{old.token, 0.4}, {"nobody", 0.2}};
    const auto out = tm.append_final_weights(w, 3);
    CHECK(out.appended == 1);
    CHECK(out.unknown_pid == 1);
    CHECK(tm.history_of(10)->size() == 4);
    const std::vector<std::pair<std::string, double>> again{{old.token, 0.5}};
    CHECK(tm.append_final_weights(again, 3).duplicate == 1);
    CHECK(tm.history_of(10)->size() == 4);
  }

  SUBCASE("previous cycle pseudonyms expire") {
    tm.begin_cycle(4);
    const auto r = tm.resolve_weight_histories({{old.token}});
    CHECK_FALSE(r.histories[0]);
  }
}

TEST_CASE("five hundred appends extend five hundred histories") {
  TrustedManager tm(1);
  for (RealId r = 0; r < 500; ++r) tm.register_vehicle(r);
  tm.begin_cycle(0);
  std::vector<std::pair<std::string, double>> w;
  for (RealId r = 0; r < 500; ++r) w.emplace_back(tm.issue_pseudo_id(r, 0).token, 0.5);
  CHECK(tm.append_final_weights(w, 0).appended == 500);
  CHECK(tm.total_entries() == 500);
}

TEST_CASE("adjustment hook is a no-op by default") {
  TrustedManager tm(1);
  tm.register_vehicle(0);
  tm.begin_cycle(0);
  auto p = tm.issue_pseudo_id(0, 0);
  const std::vector<std::pair<std::string, double>> w{{p.token, 1.0}};
  tm.append_final_weights(w, 0);
  tm.begin_cycle(1);
  p = tm.issue_pseudo_id(0, 1);
  CHECK((*tm.resolve_weight_histories({{p.token}}).histories[0])[0].value == 1.0);
  tm.set_adjustment_hook([](RealId, temporal::WeightHistory& h, Cycle) { h = temporal::WeightHistory{}; });
  CHECK(tm.resolve_weight_histories({{p.token}}).histories[0]->empty());
}

TEST_CASE("RSU batching is a pass-through") {
  const std::vector<int> none;
  CHECK(rsu_collect<int>(std::span<const int>(none)).empty());
  const std::vector<int> k{4, 1, 3};
  CHECK(rsu_collect<int>(std::span<const int>(k)) == k);
  const std::vector<std::vector<int>> per{{1, 2}, {}, {3}};
  CHECK(rsu_collect<int>(std::span<const std::vector<int>>(per)) == std::vector<int>{1, 2, 3});
}

TEST_CASE("handling parameters") {
  CHECK_NOTHROW(validate(HandlingParams{}));
  CHECK_NOTHROW(validate(HandlingParams{INFINITY}));
  CHECK_THROWS_AS(validate(HandlingParams{0.5}), ConfigError);
}

namespace {

struct Scenario {
  inst::Instance in;
  geo::ThetaTable theta;
  TrustedManager tm{42};
  std::vector<temporal::TruthHistory> truths;
  std::size_t participations = 0;
  std::vector<std::string> last_pids;

  explicit Scenario(std::uint64_t seed)
      : in(inst::make(seed, {8, 6, 4, 0.04, 0.5, true, 3})), theta(geo::build_theta_table(in.grids, {3.0, 8.0})) {
    for (std::size_t s = 0; s < in.sources; ++s) tm.register_vehicle(s);
    truths.resize(in.grids.size());
  }

  // One EAirQ cycle with unperturbed values; returns the handled result.
  EairqResult step(std::size_t c, double tau) {
    const Cycle t = static_cast<Cycle>(c);
    tm.begin_cycle(t);
    std::vector<secmask::MaskedReport> masked;
    std::vector<privacy::PerturbedReport> perturbed;
    last_pids.clear();
    for (std::size_t s = 0; s < in.sources; ++s) {
      std::vector<Observation> mine;
      for (const auto& o : in.cycles[c])
        if (index(o.source) == s) mine.push_back(o);
      if (mine.empty()) continue;
      const auto pid = tm.issue_pseudo_id(s, t).token;
      last_pids.push_back(pid);
      masked.push_back(secmask::build_masked_report(mine, theta, 1, s, t, pid));
      std::vector<privacy::PerturbedEntry> e;
      for (const auto& o : mine) e.push_back({o.grid, o.value, false});
      perturbed.push_back(privacy::make_report(pid, t, e));
      ++participations;
    }
    auto r = eairq_handle_cycle({masked, perturbed, in.grids.size(), t}, tm, truths, {}, {}, HandlingParams{tau});
    for (std::size_t g = 0; g < in.grids.size(); ++g)
      if (r.result.status[g] == td::EstimateStatus::estimated) truths[g].append(t, r.result.truths[Eigen::Index(g)]);
    return r;
  }
};

}  // namespace

TEST_CASE("EAirQ threshold extremes") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Scenario a(seed), b(seed);
    for (std::size_t c = 0; c < a.in.cycles.size(); ++c) {
      const auto ra = a.step(c, 1.0);
      const auto rb = b.step(c, INFINITY);
      for (std::size_t g = 0; g < a.in.grids.size(); ++g) {
        const auto i = Eigen::Index(g);
        if (ra.report_counts[g] > 0) {
          CHECK(ra.provenance[g] == Provenance::sst);
          CHECK(ra.result.truths[i] == ra.sst.truths[i]);
        }
        CHECK(rb.provenance[g] != Provenance::sst);
        CHECK(inst::close(rb.result.truths[i], rb.st.truths[i], 0.0));
      }
    }
    CHECK(a.tm.total_entries() == a.participations);
    CHECK(b.tm.total_entries() == b.participations);
  }
}

TEST_CASE("fused weights are the mean of the two algorithms") {
  Scenario sc(7);
  for (std::size_t c = 0; c < sc.in.cycles.size(); ++c) {
    const auto r = sc.step(c, 3.0);
    // Both families are built in the same vehicle order; fused slots follow sorted pseudo-ids.
    REQUIRE(r.st.weights.size() == r.sst.weights.size());
    for (Eigen::Index s = 0; s < r.st.weights.size(); ++s) {
      const double ws = r.st.weights[s], wss = r.sst.weights[s];
      if (std::isnan(ws) || std::isnan(wss)) continue;
      const auto& pid = sc.last_pids[std::size_t(s)];
      const auto k = std::find(r.pids.begin(), r.pids.end(), pid) - r.pids.begin();
      CHECK(r.result.weights[k] == (ws + wss) / 2.0);
    }
    for (std::size_t g = 0; g < sc.in.grids.size(); ++g) {
      const auto p = r.provenance[g];
      CHECK((p == Provenance::sst || p == Provenance::st_masked || p == Provenance::carried_forward ||
             p == Provenance::unestimated));
      if (p == Provenance::sst) CHECK(r.report_counts[g] >= 3);
    }
  }
}

TEST_CASE("a source present in one family keeps its single weight") {
  const std::vector<geo::Grid> g{{grid_id(0), 39.9, 116.4, {}}};
  const auto th = geo::build_theta_table(g, {3.0, 8.0});
  TrustedManager tm(1);
  for (RealId r = 0; r < 3; ++r) tm.register_vehicle(r);
  tm.begin_cycle(0);
  std::vector<std::string> pid;
  for (RealId r = 0; r < 3; ++r) pid.push_back(tm.issue_pseudo_id(r, 0).token);
  const double vals[] = {50.0, 54.0, 61.0};
  std::vector<secmask::MaskedReport> masked;
  std::vector<privacy::PerturbedReport> perturbed;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::vector<Observation> o{{source_id(s), grid_id(0), vals[s], 0}};
    masked.push_back(secmask::build_masked_report(o, th, 1, s, 0, pid[s]));
    if (s < 2) {
      const std::vector<privacy::PerturbedEntry> e{{grid_id(0), vals[s], false}};
      perturbed.push_back(privacy::make_report(pid[s], 0, e));
    }
  }
  std::vector<temporal::TruthHistory> truths(1);
  const auto r = eairq_handle_cycle({masked, perturbed, 1, 0}, tm, truths, {}, {}, HandlingParams{1.0});
  const auto k = std::find(r.pids.begin(), r.pids.end(), pid[2]) - r.pids.begin();
  CHECK(r.result.weights[k] == r.st.weights[2]);
  CHECK(r.appended.appended == 3);
  CHECK(tm.history_of(2)->last()->value == r.st.weights[2]);
}

TEST_CASE("server-visible artifacts never repeat a token across cycles") {
  Scenario sc(11);
  std::set<std::string> seen;
  for (std::size_t c = 0; c < sc.in.cycles.size(); ++c) {
    const auto r = sc.step(c, 2.0);
    for (const auto& p : r.pids) CHECK(seen.insert(p).second);
  }
}
