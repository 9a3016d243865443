#include <tmsopt/objective.hpp>

#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

using namespace tmsopt;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

SampledPulse with_voltage(std::vector<double> v) {
  SampledPulse p = SampledPulse::from_current(std::vector<double>(v.size() + 1, 0.0), 1.0, CoilParams{});
  p.voltage = std::move(v);
  return p;
}

SplineWaveform sine_lobes(std::size_t n, double amplitude, int lobes) {
  std::vector<double> k(n);
  for (std::size_t i = 0; i < n; ++i)
    k[i] = amplitude *
           std::sin(lobes * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
  k.front() = k.back() = 0.0;
  return SplineWaveform(k);
}

SplineWaveform random_waveform(std::mt19937_64& rng, std::size_t n, double sd) {
  std::normal_distribution<double> nd(0.0, sd);
  std::vector<double> free(n - 2);
  for (auto& x : free) x = nd(rng);
  return SplineWaveform::from_free(free);
}

}  // namespace

TEST_CASE("constant 100 V overshoot for 1 ms integrates to 0.1 V s") {
  const VoltageLimits lim(1000.0, -500.0);
  std::vector<double> v(3000, 200.0);
  for (std::size_t j = 500; j < 1500; ++j) v[j] = 1100.0;
  REQUIRE_THAT(penalty_integral(with_voltage(v), lim), WithinAbs(0.1, 1e-9));
}

TEST_CASE("overshoot and undershoot areas add") {
  const VoltageLimits lim(1000.0, -500.0);
  std::vector<double> v(3000, 0.0);
  for (std::size_t j = 100; j < 300; ++j) v[j] = 1050.0;
  for (std::size_t j = 1000; j < 1100; ++j) v[j] = -520.0;
  REQUIRE_THAT(penalty_integral(with_voltage(v), lim), WithinAbs(0.012, 1e-9));
}

TEST_CASE("zero waveform costs nothing and does not activate") {
  ObjectiveConfig cfg{VoltageLimits(1000.0, -1000.0)};
  const auto c = cost(SplineWaveform::zeros(30), cfg);
  REQUIRE(c.total == 0.0);
  REQUIRE(c.energy == 0.0);
  REQUIRE(c.penalty_integral == 0.0);
  REQUIRE(c.margin < 0.0);
  REQUIRE_FALSE(c.activated);
  REQUIRE_FALSE(c.feasible);
}

TEST_CASE("unbounded limits leave the energy term alone") {
  std::mt19937_64 rng(2);
  const Objective obj(ObjectiveConfig{VoltageLimits::unbounded()});
  for (int trial = 0; trial < 5; ++trial) {
    const auto c = obj.cost(random_waveform(rng, 40, 2000.0));
    REQUIRE(c.penalty_integral == 0.0);
    REQUIRE(c.total == c.energy);
  }
}

TEST_CASE("cost breakdown invariants") {
  std::mt19937_64 rng(8);
  const Objective obj(ObjectiveConfig{VoltageLimits(800.0, -300.0)});
  for (int trial = 0; trial < 8; ++trial) {
    const auto c = obj.cost(random_waveform(rng, 30 + 5 * trial, 1500.0));
    REQUIRE_THAT(c.total, WithinRel(c.energy + c.penalty_integral * c.penalty_integral, 1e-15));
    REQUIRE(c.feasible == (c.penalty_integral == 0.0 && c.margin > 0.0));
  }
}

TEST_CASE("doubling the amplitude quadruples the energy") {
  const Objective obj(ObjectiveConfig{VoltageLimits::unbounded()});
  const auto w = sine_lobes(60, 700.0, 3);
  REQUIRE_THAT(obj.cost(w.scaled(2.0)).energy, WithinRel(4.0 * obj.cost(w).energy, 1e-12));
}

TEST_CASE("smooth activation constraint bounds the hard peak") {
  const Objective obj(ObjectiveConfig{VoltageLimits(4000.0, -4000.0)});
  for (double amp : {200.0, 900.0, 1500.0}) {
    const auto w = sine_lobes(40, amp, 1).scaled(1.0);
    const auto c = obj.cost(w);
    const double hard = c.margin + 10.0;
    const double g = obj.activation_constraint(w);
    const auto p = sample(w, CoilParams{});
    const double samples = static_cast<double>(p.efield.size() + 2001);
    REQUIRE(g <= 10.0 - hard + 1e-12);
    REQUIRE(g >= 10.0 - hard - std::log(samples) / obj.config().beta - 1e-12);
    REQUIRE(std::abs(obj.activation_constraint(w, 1e4) - (10.0 - hard)) < 0.01);
  }
}

TEST_CASE("cost gradient matches central differences") {
  std::mt19937_64 rng(13);
  const Objective obj(ObjectiveConfig{VoltageLimits(60.0, -25.0)});
  for (int trial = 0; trial < 3; ++trial) {
    const auto w = random_waveform(rng, 20 + 9 * trial, 600.0);
    REQUIRE(obj.cost(w).penalty_integral > 0.0);
    const auto g = obj.cost_gradient(w);
    const auto f = w.free_knots();
    for (std::size_t k = 0; k < f.size(); ++k) {
      std::vector<double> up(f.begin(), f.end()), dn = up;
      const double h = 1e-4 * (1.0 + std::abs(f[k]));
      up[k] += h;
      dn[k] -= h;
      const double fd = (obj.cost(SplineWaveform::from_free(up)).total -
                         obj.cost(SplineWaveform::from_free(dn)).total) /
                        (2.0 * h);
      INFO("trial " << trial << " knot " << k);
      REQUIRE_THAT(g[k], WithinRel(fd, 1e-3) || WithinAbs(fd, 1e-12));
    }
  }
}

TEST_CASE("penalty vanishes exactly when every sample is inside the limits") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const VoltageLimits lim(1000.0, -400.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(500);
    const double spread = trial % 2 ? 380.0 : 1500.0;
    for (auto& x : v) x = spread * u(rng);
    if (trial % 7 == 0) v[static_cast<std::size_t>(trial) % v.size()] = 1000.0;  // on the boundary
    bool inside = true;
    for (double x : v) inside = inside && x <= lim.v_max() && x >= lim.v_min();
    REQUIRE((penalty_integral(with_voltage(v), lim) == 0.0) == inside);
  }
}

TEST_CASE("cost is stable under knot refinement") {
  const Objective obj(ObjectiveConfig{VoltageLimits(3000.0, -3000.0)});
  std::vector<double> k(50);
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double x = static_cast<double>(i) / 49.0;
    k[i] = 1200.0 * std::sin(std::numbers::pi * x) * std::exp(-3.0 * x);
  }
  k.back() = 0.0;
  const SplineWaveform w(k);
  REQUIRE_THAT(obj.cost(resample_dof(w, 200)).total, WithinRel(obj.cost(w).total, 5e-3));
}

TEST_CASE("threshold titration of a waveform shape") {
  ObjectiveConfig cfg{VoltageLimits(4000.0, -4000.0)};
  const auto w = sine_lobes(30, 100.0, 1);
  const auto t = titrate_threshold(w, cfg);
  const Objective obj(cfg);
  REQUIRE(obj.cost(w.scaled(t.scale)).activated);
  REQUIRE_FALSE(obj.cost(w.scaled(t.lower)).activated);
}

TEST_CASE("invalid objective configuration is rejected") {
  ObjectiveConfig cfg{VoltageLimits(100.0, -100.0)};
  cfg.lambda = 0.0;
  REQUIRE_THROWS_AS(Objective(cfg), Error);
  cfg.lambda = 1.0;
  cfg.dt_us = -1.0;
  REQUIRE_THROWS_AS(Objective(cfg), Error);
}
