#include <doctest.h>

#include <cmath>
#include <random>

#include "airq/temporal.hpp"

using namespace airq;
using namespace airq::temporal;

TEST_CASE("temporal distance convention") {
  CHECK(temporal_distance(5, 5) == 1);
  CHECK(temporal_distance(10, 9) == 2);
  CHECK(temporal_distance(10, 1) == 10);
  CHECK_THROWS_AS(temporal_distance(3, 4), ProtocolError);
}

TEST_CASE("history ordering") {
  History h;
  h.append(1, 0.5);
  h.append(3, 0.6);
  CHECK_THROWS_AS(h.append(3, 0.7), ProtocolError);
  CHECK_THROWS_AS(h.append(2, 0.7), ProtocolError);
  CHECK(h.last()->cycle == 3);
  CHECK(History{}.last() == std::nullopt);
}

TEST_CASE("combine weight examples") {
  TemporalParams p;
  p.rho_w = 1.0;
  CHECK(combine_weight(0.7, WeightHistory{}, p, 5) == 0.7);
  WeightHistory h;
  h.append(1, 0.5);
  CHECK(combine_weight(1.0, h, p, 2) == doctest::Approx(1.25 / 1.5).epsilon(1e-15));
  p.rho_w = 60.0;
  CHECK(combine_weight(1.0, h, p, 2) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("combine truth examples") {
  TemporalParams p;
  p.rho_t = 1.0;
  CHECK(combine_truth(42.0, TruthHistory{}, p, 0) == 42.0);
  TruthHistory h;
  h.append(1, 100.0);
  CHECK(combine_truth(40.0, h, p, 2) == doctest::Approx(60.0).epsilon(1e-15));
  TruthHistory flat;
  for (Cycle c = 0; c < 5; ++c) flat.append(c, 37.5);
  CHECK(combine_truth(37.5, flat, p, 5) == doctest::Approx(37.5).epsilon(1e-15));
}

TEST_CASE("delta coefficients examples") {
  TemporalParams p;
  p.rho_t = p.rho_w = 1.0;
  const auto e = delta_for_truth(TruthHistory{}, p, 3);
  CHECK(e.offset == 0.0);
  CHECK(e.scale == 1.0);
  TruthHistory t;
  t.append(1, 100.0);
  const auto dt = delta_for_truth(t, p, 2);
  CHECK(dt.offset == doctest::Approx(100.0 / 3.0).epsilon(1e-14));
  CHECK(dt.scale == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  WeightHistory w;
  w.append(1, 0.5);
  const auto dw = delta_for_weight(w, p, 2);
  CHECK(dw.offset == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
  CHECK(dw.scale == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("window limits the consulted history") {
  TemporalParams p;
  p.rho_t = 1.0;
  p.history_window = 2;
  TruthHistory h;
  h.append(0, 1000.0);  // outside the window seen from t = 5
  h.append(4, 10.0);
  TruthHistory only_recent;
  only_recent.append(4, 10.0);
  CHECK(combine_truth(20.0, h, p, 5) == combine_truth(20.0, only_recent, p, 5));
  p.history_window = 0;
  CHECK(combine_truth(20.0, h, p, 5) == 20.0);
}

TEST_CASE("affine consistency, convexity and recency over random histories") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> val(0.0, 200.0), rho(0.2, 4.0);
  for (int trial = 0; trial < 200; ++trial) {
    TemporalParams p;
    p.rho_t = rho(rng);
    p.history_window = 1000;
    TruthHistory h;
    Cycle c = 0;
    double lo = 1e300, hi = -1e300;
    const int len = static_cast<int>(rng() % 12);
    for (int i = 0; i < len; ++i) {
      c += 1 + static_cast<Cycle>(rng() % 3);
      const double v = val(rng);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      h.append(c, v);
    }
    const Cycle t = c + 1 + static_cast<Cycle>(rng() % 4);
    const auto d = delta_for_truth(h, p, t);
    CHECK(d.scale > 0.0);
    for (int k = 0; k < 100; ++k) {
      const double v = val(rng);
      const double direct = combine_truth(v, h, p, t);
      CHECK(d.apply(v) == doctest::Approx(direct).epsilon(1e-12));
      CHECK(d.invert(d.apply(v)) == doctest::Approx(v).epsilon(1e-9));
      CHECK(direct >= std::min(lo, v) - 1e-9);
      CHECK(direct <= std::max(hi, v) + 1e-9);
    }
    if (len >= 2) {
      const auto& e = h.entries();
      CHECK(idw_coefficient(t, e.back().cycle, p.rho_t) > idw_coefficient(t, e.front().cycle, p.rho_t));
    }
  }
}

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS(validate(TemporalParams{0.0, 1.0, 10}), ConfigError);
  CHECK_THROWS_AS(validate(TemporalParams{1.0, -1.0, 10}), ConfigError);
  CHECK_THROWS_AS(validate(TemporalParams{1.0, 1.0, -1}), ConfigError);
  CHECK_NOTHROW(validate(TemporalParams{}));
}
