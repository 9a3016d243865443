#include <tmsopt/optimizer.hpp>
#include <tmsopt/qp.hpp>

#include <catch_amalgamated.hpp>

#include "support.hpp"

#include <cmath>
#include <random>

using namespace tmsopt;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Eigen::MatrixXd random_spd(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXd g(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) g(i, j) = nd(rng);
  return g * g.transpose() / n + 0.2 * Eigen::MatrixXd::Identity(n, n);
}

// Current with a constant positive field for rise_us, then a slow linear return.
SplineWaveform ramp_shape(std::size_t n, double rise_us, double fall_us) {
  std::vector<double> k(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = 3000.0 * static_cast<double>(i) / static_cast<double>(n - 1);
    k[i] = t < rise_us ? t / rise_us : std::max(0.0, 1.0 - (t - rise_us) / fall_us);
  }
  k.back() = 0.0;
  return SplineWaveform(k);
}

SwarmConfig tiny_swarm(std::uint64_t seed) {
  SwarmConfig s;
  s.n_particles = 3;
  s.max_iterations = 3;
  s.dof_min = 12;
  s.dof_max = 18;
  s.local_evaluations = 300;
  s.rng_seed = seed;
  return s;
}

}  // namespace

TEST_CASE("SQP solves a quadratic with a linear gauge in closed form") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 10;
    SqpProblem pr;
    pr.H = random_spd(rng, n);
    pr.c = Eigen::VectorXd::Zero(n);
    pr.A.resize(0, n);
    pr.b.resize(0);
    const Eigen::VectorXd a = Eigen::VectorXd::NullaryExpr(n, [&] { return nd(rng); });
    pr.gauge = [a](const Eigen::VectorXd& x) { return GaugeValue{a.dot(x), a, 1}; };
    const Eigen::VectorXd hinv_a = pr.H.ldlt().solve(a);
    const Eigen::VectorXd x_star = hinv_a / a.dot(hinv_a);
    const auto r = solve_sqp(pr, Eigen::VectorXd::Constant(n, 1.0).cwiseProduct(a.cwiseSign()));
    REQUIRE(r.feasible);
    REQUIRE_THAT(r.objective, WithinRel(0.5 / a.dot(hinv_a), 1e-4));
    REQUIRE((r.x - x_star).norm() < 1e-2 * x_star.norm());
  }
}

TEST_CASE("SQP with active rows matches the equivalent QP") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> nd;
  const int n = 8, m = 6;
  SqpProblem pr;
  pr.H = random_spd(rng, n);
  pr.c = Eigen::VectorXd::Zero(n);
  pr.A = Eigen::MatrixXd::NullaryExpr(m, n, [&] { return nd(rng); });
  pr.b = Eigen::VectorXd::Constant(m, 0.3);
  const Eigen::VectorXd a = Eigen::VectorXd::Constant(n, 1.0);
  pr.gauge = [a](const Eigen::VectorXd& x) { return GaugeValue{a.dot(x), a, 1}; };
  QuadraticProgram qp{pr.H, pr.c, Eigen::MatrixXd(m + 1, n), Eigen::VectorXd(m + 1), {}, {}};
  qp.A << pr.A, -a.transpose();
  qp.b << pr.b, -1.0;
  const auto ref = solve_qp(qp);
  REQUIRE(ref.status == QpStatus::optimal);
  const auto r = solve_sqp(pr, 2.0 * ref.x);
  REQUIRE(r.feasible);
  REQUIRE_THAT(r.objective, WithinRel(ref.objective, 1e-4));
}

TEST_CASE("local optimization lowers the energy of a feasible ramp") {
  ObjectiveConfig cfg{VoltageLimits(2000.0, -500.0)};
  const Objective obj(cfg);
  const auto shape = ramp_shape(40, 100.0, 600.0);
  const double thr = titrate_threshold(shape, cfg).scale;
  const auto start = shape.scaled(2.0 * thr);
  const auto c0 = obj.cost(start);
  REQUIRE(c0.feasible);
  const auto r = local_optimize(start, obj);
  REQUIRE(r.cost.feasible);
  REQUIRE(r.cost.penalty_integral == 0.0);
  REQUIRE(r.cost.energy < 0.5 * c0.energy);
  // restarting at the solution stays there
  const auto again = local_optimize(r.waveform, obj);
  REQUIRE(again.cost.feasible);
  REQUIRE(std::abs(again.cost.total - r.cost.total) < 1e-3 * r.cost.total);
}

TEST_CASE("local optimization of an unreachable target reports the best attempt") {
  ObjectiveConfig cfg{VoltageLimits(1.0, -1.0)};
  const Objective obj(cfg);
  LocalOptions lo;
  lo.max_evaluations = 200;
  const auto start = ramp_shape(20, 100.0, 600.0).scaled(1.0);
  try {
    (void)local_optimize(start, obj, lo);
    FAIL("expected an infeasible result");
  } catch (const InfeasibleResult& e) {
    REQUIRE(e.kind() == ErrorKind::infeasible_result);
    REQUIRE(e.best_attempt().n_dof() == 20);
  }
}

TEST_CASE("swarm step leaves a particle at rest on both bests") {
  SwarmConfig cfg;
  const auto w = ramp_shape(30, 100.0, 600.0).scaled(50.0);
  std::vector<Particle> ps;
  ps.push_back(Particle{w, std::vector<double>(28, 0.0), ScoredWaveform{w, {}}, std::mt19937_64(1)});
  swarm_step(ps, w, cfg);
  REQUIRE(ps[0].position == w);
  for (double v : ps[0].velocity) REQUIRE(v == 0.0);
}

TEST_CASE("swarm step without attraction is pure inertia") {
  SwarmConfig cfg;
  cfg.c1 = 0.0;
  cfg.c2 = 0.0;
  const auto w = ramp_shape(30, 100.0, 600.0).scaled(50.0);
  std::vector<double> v(28);
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = std::sin(static_cast<double>(k));
  std::vector<Particle> ps;
  ps.push_back(Particle{w, v, std::nullopt, std::mt19937_64(1)});
  swarm_step(ps, SplineWaveform::zeros(57), cfg);
  const auto x = ps[0].position.free_knots();
  const auto x0 = w.free_knots();
  for (std::size_t k = 0; k < v.size(); ++k) {
    REQUIRE(ps[0].velocity[k] == 0.9 * v[k]);
    REQUIRE(x[k] == x0[k] + 0.9 * v[k]);
  }
  REQUIRE(ps[0].position.knots().front() == 0.0);
  REQUIRE(ps[0].position.knots().back() == 0.0);
}

TEST_CASE("knot count grows only on converged improvement") {
  SwarmConfig cfg;
  REQUIRE(adapt_dof(50, true, true, cfg) == 55);
  REQUIRE(adapt_dof(50, true, false, cfg) == 50);
  REQUIRE(adapt_dof(50, false, true, cfg) == 50);
  REQUIRE(adapt_dof(998, true, true, cfg) == 1000);
  REQUIRE(adapt_dof(1000, true, true, cfg) == 1000);
}

TEST_CASE("swarm configuration is validated") {
  SwarmConfig cfg;
  cfg.dof_min = 3;
  REQUIRE(error_kind([&] { cfg.validate(); }) == ErrorKind::invalid_parameters);
  cfg = SwarmConfig{};
  cfg.inertia = 1.5;
  REQUIRE(error_kind([&] { cfg.validate(); }) == ErrorKind::invalid_parameters);
  cfg = SwarmConfig{};
  cfg.n_particles = 0;
  REQUIRE(error_kind([&] { cfg.validate(); }) == ErrorKind::invalid_parameters);
}

TEST_CASE("basis cache keeps a bounded number of knot counts") {
  BasisCache cache(CoilParams{}, 3000.0, 1.0, 3);
  const auto a = cache.get(10);
  (void)cache.get(11);
  (void)cache.get(12);
  REQUIRE(cache.get(10) == a);  // 10 is now the most recent
  (void)cache.get(13);          // evicts 11
  REQUIRE(cache.size() == 3);
  REQUIRE(cache.get(10) == a);
  REQUIRE(a->sampling.cols() == 8);
}

TEST_CASE("small optimization runs are reproducible and satisfy the run invariants") {
  const VoltageLimits lim(1500.0, -500.0);
  ObjectiveConfig cfg{lim};
  auto sc = tiny_swarm(42);
  const auto a = run_optimization(lim, cfg, sc);
  const auto b = run_optimization(lim, cfg, sc);
  REQUIRE(a.best.waveform == b.best.waveform);
  REQUIRE(a.best.cost.total == b.best.cost.total);
  REQUIRE(a.history.size() == b.history.size());

  sc.threads = 2;
  const auto c = run_optimization(lim, cfg, sc);
  REQUIRE(c.best.waveform == a.best.waveform);

  REQUIRE(a.best.cost.feasible);
  REQUIRE(a.best.cost.penalty_integral <= 1e-9);
  const auto recheck = Objective(cfg).cost(a.best.waveform);
  REQUIRE(recheck.activated);
  REQUIRE(recheck.total == a.best.cost.total);
  for (std::size_t i = 1; i < a.history.size(); ++i)
    REQUIRE(a.history[i].best_cost <= a.history[i - 1].best_cost);

  const auto d = run_optimization(lim, cfg, tiny_swarm(43));
  REQUIRE_FALSE(d.best.waveform == a.best.waveform);
}

TEST_CASE("unreachable voltage limits fail the run") {
  const VoltageLimits lim(1.0, -1.0);
  auto sc = tiny_swarm(5);
  sc.max_iterations = 1;
  sc.local_evaluations = 100;
  REQUIRE(error_kind([&] { (void)run_optimization(lim, ObjectiveConfig{lim}, sc); }) ==
          ErrorKind::optimization_failed);
}
