#pragma once

// Hybrid global-local waveform search. Particles of a swarm each run a local
// constrained solve; the swarm combines their minima and adapts the number of
// spline knots.
//
// Local solve. Energy is a convex quadratic in the free knots and the voltage
// limits are linear, so only activation is nonlinear. It is expressed through
// the threshold gauge phi(x) = 1 / s*(x), s* being the titrated threshold
// factor of shape x. phi is positively homogeneous of degree one, which makes
// its linearization at x_k simply grad(phi)(x_k) . x >= target. Each outer
// step solves the QP (energy, hard voltage limits, linearized activation,
// box trust region) by interior point, then rescales the step onto the
// activation level set.

#include <tmsopt/error.hpp>
#include <tmsopt/objective.hpp>
#include <tmsopt/qp.hpp>
#include <tmsopt/waveform.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace tmsopt {

/// Raised when a local solve cannot reach feasibility; carries the best attempt.
class InfeasibleResult : public Error {
 public:
  InfeasibleResult(const std::string& what, SplineWaveform best)
      : Error(ErrorKind::infeasible_result, what), best_(std::move(best)) {}
  [[nodiscard]] const SplineWaveform& best_attempt() const noexcept { return best_; }

 private:
  SplineWaveform best_;
};

// ---------------------------------------------------------------------------
// Generic sequential QP on a quadratic objective

struct GaugeValue {
  double value = 0.0;
  Eigen::VectorXd gradient;
  int evaluations = 0;
};

/// minimize 0.5 x'Hx + c'x  s.t.  A x <= b  and, if a gauge is set,
/// gauge(x) >= gauge_target. The gauge must be positively homogeneous of
/// degree one and b >= 0, so rescaling moves along activation level sets.
struct SqpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd c;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  std::function<GaugeValue(const Eigen::VectorXd&)> gauge;
  double gauge_target = 1.0;
};

struct SqpOptions {
  int max_evaluations = 2000;
  int max_iterations = 200;
  double reduction_tol = 1e-6;   // stop when the predicted decrease is this relative
  double initial_radius = 0.5;   // box radius relative to max |x|
  double row_screen = 0.5;       // rows within this fraction of their bound enter the QP
  double elastic_weight = 100.0;
};

struct SqpResult {
  Eigen::VectorXd x;
  double objective = 0.0;
  bool feasible = false;
  bool converged = false;
  double first_order = std::numeric_limits<double>::infinity();  // last predicted decrease
  int iterations = 0;
  int evaluations = 0;
  std::string stop_reason;
};

inline SqpResult solve_sqp(const SqpProblem& pr, Eigen::VectorXd x, const SqpOptions& opt = {}) {
  using Eigen::VectorXd;
  const Eigen::Index n = x.size();
  const Eigen::Index m = pr.A.rows();
  const bool has_gauge = static_cast<bool>(pr.gauge);
  const double target = pr.gauge_target;
  const auto f = [&](const VectorXd& y) { return 0.5 * y.dot(pr.H * y) + pr.c.dot(y); };
  const auto rows_ok = [&](const VectorXd& y) {
    return m == 0 || (pr.A * y - pr.b).maxCoeff() <= 0.0;
  };

  SqpResult out;
  GaugeValue gk;
  const auto gauge_at = [&](const VectorXd& y) {
    auto g = pr.gauge(y);
    out.evaluations += g.evaluations;
    return g;
  };

  bool feasible = true;
  if (has_gauge) {
    if (m > 0) {
      // scale into the (conic) linear constraints
      double worst = 0.0;
      const VectorXd ax = pr.A * x;
      for (Eigen::Index i = 0; i < m; ++i)
        if (pr.b[i] > 0.0) worst = std::max(worst, ax[i] / pr.b[i]);
      if (worst > 1.0) x /= worst;
    }
    gk = gauge_at(x);
    const VectorXd z = x * (target / gk.value);
    feasible = rows_ok(z);
    if (feasible || gk.value > target) x = z;
  }

  std::vector<char> in_set(static_cast<std::size_t>(m), 0);
  double radius = opt.initial_radius;
  for (int it = 0; it < opt.max_iterations; ++it) {
    out.iterations = it;
    if (out.evaluations >= opt.max_evaluations) {
      out.stop_reason = "budget";
      break;
    }
    const double sigma = std::max(x.lpNorm<Eigen::Infinity>(), 1e-300);
    const double fk = f(x);
    const VectorXd grad = pr.H * x + pr.c;
    const double fs =
        std::max({std::abs(fk), sigma * grad.lpNorm<Eigen::Infinity>(), 1e-300});
    const VectorXd y0 = x / sigma;
    const bool elastic = has_gauge && !feasible;
    const Eigen::Index nv = n + (elastic ? 1 : 0);

    if (m > 0) {
      const VectorXd ax = pr.A * x;
      for (Eigen::Index i = 0; i < m; ++i)
        if (ax[i] >= (1.0 - opt.row_screen) * pr.b[i]) in_set[static_cast<std::size_t>(i)] = 1;
    }

    QuadraticProgram qp;
    VectorXd y;
    for (int round = 0; round < 8; ++round) {
      std::vector<Eigen::Index> rows;
      for (Eigen::Index i = 0; i < m; ++i)
        if (in_set[static_cast<std::size_t>(i)]) rows.push_back(i);
      const Eigen::Index nr = static_cast<Eigen::Index>(rows.size()) + (has_gauge ? 1 : 0);
      qp.H = Eigen::MatrixXd::Zero(nv, nv);
      qp.H.topLeftCorner(n, n) = pr.H * (sigma * sigma / fs);
      qp.c = VectorXd::Zero(nv);
      qp.c.head(n) = pr.c * (sigma / fs);
      qp.A = Eigen::MatrixXd::Zero(nr, nv);
      qp.b = VectorXd::Zero(nr);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const Eigen::Index i = rows[r];
        const double scale = std::max(std::abs(pr.b[i]), 1e-300);
        qp.A.row(static_cast<Eigen::Index>(r)).head(n) = pr.A.row(i) * (sigma / scale);
        qp.b[static_cast<Eigen::Index>(r)] = pr.b[i] / scale;
      }
      if (has_gauge) {
        const Eigen::Index r = nr - 1;
        qp.A.row(r).head(n) = -gk.gradient.transpose() * (sigma / target);
        qp.b[r] = -1.0;
        if (elastic) {
          qp.A(r, n) = -1.0;
          qp.c[n] = opt.elastic_weight;
        }
      }
      qp.lb = VectorXd::Constant(nv, -std::numeric_limits<double>::infinity());
      qp.ub = VectorXd::Constant(nv, std::numeric_limits<double>::infinity());
      qp.lb.head(n) = y0.array() - radius;
      qp.ub.head(n) = y0.array() + radius;
      if (elastic) qp.lb[n] = 0.0;
      VectorXd start = VectorXd::Zero(nv);
      start.head(n) = y0;
      if (elastic) start[n] = 1.0;
      const auto res = solve_qp(qp, {}, &start);
      y = res.x;
      // rows outside the working set that the step violates join it
      bool added = false;
      if (m > 0) {
        const VectorXd ax = pr.A * (y.head(n) * sigma);
        for (Eigen::Index i = 0; i < m; ++i) {
          if (!in_set[static_cast<std::size_t>(i)] && ax[i] > pr.b[i]) {
            in_set[static_cast<std::size_t>(i)] = 1;
            added = true;
          }
        }
      }
      if (!added) break;
    }

    VectorXd xh = y.head(n) * sigma;
    if (m > 0) {
      // clip residual QP infeasibility by scaling (b >= 0)
      double worst = 0.0;
      const VectorXd ax = pr.A * xh;
      for (Eigen::Index i = 0; i < m; ++i)
        if (pr.b[i] > 0.0) worst = std::max(worst, ax[i] / pr.b[i]);
      if (worst > 1.0) xh /= worst;
    }
    const double pred = fk - f(xh);
    const bool box_active =
        ((y.head(n) - y0).cwiseAbs().array() >= 0.99 * radius).any();

    if (!has_gauge) {
      if (!rows_ok(xh) || f(xh) > fk) {
        radius *= 0.25;
      } else {
        x = xh;
        out.first_order = pred;
        if (box_active) radius = std::min(2.0 * radius, 4.0);
      }
      if (pred <= opt.reduction_tol * std::max(std::abs(fk), 1e-300) && !box_active) {
        out.converged = true;
        out.first_order = pred;
        out.stop_reason = "converged";
        break;
      }
      if (radius < 1e-10) {
        out.stop_reason = "radius";
        break;
      }
      continue;
    }

    if (feasible && pred <= opt.reduction_tol * std::max(std::abs(fk), 1e-300)) {
      out.converged = true;
      out.first_order = std::max(pred, 0.0);
      out.stop_reason = "converged";
      break;
    }

    GaugeValue gh;
    try {
      gh = gauge_at(xh);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::non_excitable_shape) throw;
      radius *= 0.25;
      if (radius < 1e-8) {
        out.stop_reason = "radius";
        break;
      }
      continue;
    }
    const VectorXd z = xh * (target / gh.value);
    const bool z_ok = rows_ok(z);
    if (feasible) {
      const double fz = f(z);
      if (z_ok && fz < fk) {
        const double ratio = pred > 0.0 ? (fk - fz) / pred : 0.0;
        x = z;
        gk = gh;
        out.first_order = pred;
        if (ratio > 0.75 && box_active) radius = std::min(2.0 * radius, 4.0);
        if (ratio < 0.25) radius *= 0.5;
      } else {
        radius *= 0.25;
      }
    } else {
      if (z_ok) {
        x = z;
        gk = gh;
        feasible = true;
      } else if (gh.value > gk.value) {
        x = gh.value > target ? z : xh;
        gk = gh;
      } else {
        radius *= 0.5;
      }
    }
    if (radius < 1e-8) {
      out.stop_reason = "radius";
      break;
    }
    out.iterations = it + 1;
  }
  if (out.stop_reason.empty()) out.stop_reason = "iterations";
  out.x = x;
  out.objective = f(x);
  out.feasible = feasible;
  return out;
}

// ---------------------------------------------------------------------------
// Discretized operators per knot count

struct KnotBasis {
  Eigen::MatrixXd sampling;    // current samples from free knots
  Eigen::MatrixXd voltage;     // voltage samples from free knots
  Eigen::MatrixXd energy_hessian;  // W(x) = 0.5 x' H x
};

/// Thread-safe cache of basis matrices keyed by knot count. At most
/// `capacity` entries are kept; the least recently used one is dropped first
/// (a basis at N = 250 is about 12 MB).
class BasisCache {
 public:
  BasisCache(CoilParams coil, double window_us, double dt_us, std::size_t capacity = 16)
      : coil_(coil), window_us_(window_us), dt_us_(dt_us), capacity_(std::max<std::size_t>(1, capacity)) {}

  std::shared_ptr<const KnotBasis> get(std::size_t n_dof) {
    std::lock_guard<std::mutex> lock(mu_);
    ++clock_;
    auto it = cache_.find(n_dof);
    if (it != cache_.end()) {
      it->second.last_use = clock_;
      return it->second.basis;
    }
    auto b = std::make_shared<KnotBasis>();
    b->sampling = sampling_matrix(n_dof, window_us_, dt_us_);
    const Eigen::Index m = b->sampling.rows();
    b->voltage = (b->sampling.bottomRows(m - 1) - b->sampling.topRows(m - 1)) *
                 (coil_.inductance_uH / dt_us_);
    const auto w = simpson_weights(static_cast<std::size_t>(m));
    Eigen::MatrixXd weighted = b->sampling;
    for (Eigen::Index j = 0; j < m; ++j)
      weighted.row(j) *= std::sqrt(w[static_cast<std::size_t>(j)]);
    b->energy_hessian = 2.0 * coil_.resistance_mOhm * dt_us_ * 1e-9 *
                        (weighted.transpose() * weighted);
    if (cache_.size() >= capacity_) {
      auto oldest = cache_.begin();
      for (auto e = cache_.begin(); e != cache_.end(); ++e)
        if (e->second.last_use < oldest->second.last_use) oldest = e;
      cache_.erase(oldest);
    }
    cache_.emplace(n_dof, Entry{b, clock_});
    return b;
  }

  [[nodiscard]] std::size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.size();
  }

 private:
  struct Entry {
    std::shared_ptr<const KnotBasis> basis;
    std::uint64_t last_use = 0;
  };
  CoilParams coil_;
  double window_us_;
  double dt_us_;
  std::size_t capacity_;
  std::uint64_t clock_ = 0;
  mutable std::mutex mu_;
  std::map<std::size_t, Entry> cache_;
};

struct LocalOptions {
  int max_evaluations = 2000;   // neuron simulations
  double activation_margin = 1e-4;  // relative amplitude headroom at the solution
  double limit_margin = 1e-6;       // relative tightening of the voltage limits
  double reduction_tol = 1e-6;
};

struct LocalResult {
  SplineWaveform waveform;
  CostBreakdown cost;
  bool converged = false;
  double first_order = 0.0;  // J
  int evaluations = 0;
  int iterations = 0;
};

/// Local constrained descent from `start`. Infeasible starts are first
/// restored (rescaling along the titration direction, then elastic steps).
inline LocalResult local_optimize(const SplineWaveform& start, const Objective& obj,
                                  BasisCache& cache, const LocalOptions& opt = {}) {
  const auto& cfg = obj.config();
  const auto basis = cache.get(start.n_dof());
  const Eigen::Index n = static_cast<Eigen::Index>(start.n_free());
  const Eigen::Index mv = basis->voltage.rows();

  SqpProblem pr;
  pr.H = basis->energy_hessian;
  pr.c = Eigen::VectorXd::Zero(n);
  if (std::isfinite(cfg.limits.v_max()) && std::isfinite(cfg.limits.v_min())) {
    pr.A.resize(2 * mv, n);
    pr.A.topRows(mv) = basis->voltage;
    pr.A.bottomRows(mv) = -basis->voltage;
    pr.b.resize(2 * mv);
    pr.b.head(mv).setConstant(cfg.limits.v_max() * (1.0 - opt.limit_margin));
    pr.b.tail(mv).setConstant(-cfg.limits.v_min() * (1.0 - opt.limit_margin));
  }
  pr.gauge_target = 1.0 + opt.activation_margin;
  const double field_per_volt = cfg.coil.field_map / cfg.coil.inductance_uH;
  struct Hint {
    double scale = 0.0;
    Eigen::VectorXd gradient;
  };
  auto hint = std::make_shared<Hint>();
  pr.gauge = [&, basis, hint, field_per_volt](const Eigen::VectorXd& x) {
    const Eigen::VectorXd e = basis->voltage * x * field_per_volt;
    double guess = 0.0;
    if (hint->gradient.size() == x.size()) {
      const double phi = hint->gradient.dot(x);
      if (phi > 0.0) guess = 1.0 / phi;
    }
    const auto ts = threshold_sensitivity(obj.model(), std::span<const double>(e.data(), e.size()),
                                          cfg.dt_us, cfg.v_threshold, guess, cfg.sim);
    GaugeValue g;
    g.value = 1.0 / ts.scale;
    const Eigen::Map<const Eigen::VectorXd> de(ts.d_inverse_scale.data(),
                                               static_cast<Eigen::Index>(ts.d_inverse_scale.size()));
    g.gradient = basis->voltage.transpose() * de * field_per_volt;
    g.evaluations = ts.simulations;
    hint->scale = ts.scale;
    hint->gradient = g.gradient;
    return g;
  };

  SqpOptions so;
  so.max_evaluations = opt.max_evaluations;
  so.reduction_tol = opt.reduction_tol;
  const auto free = start.free_knots();
  Eigen::VectorXd x0 = Eigen::Map<const Eigen::VectorXd>(free.data(), n);
  const auto res = solve_sqp(pr, x0, so);

  auto to_wave = [&](const Eigen::VectorXd& x) {
    return SplineWaveform::from_free(std::span<const double>(x.data(), x.size()),
                                     start.window_us());
  };
  if (!res.feasible)
    throw InfeasibleResult("local solve ended without an activating waveform", to_wave(res.x));
  LocalResult out{to_wave(res.x), {}, false, 0.0, res.evaluations, res.iterations};
  out.cost = obj.cost(out.waveform);
  for (int k = 0; k < 4 && !out.cost.feasible; ++k) {
    // rounding at the activation boundary: give a little more amplitude
    const auto bumped = out.waveform.scaled(1.0 + opt.activation_margin);
    const auto c = obj.cost(bumped);
    if (c.penalty_integral > 0.0) break;
    out.waveform = bumped;
    out.cost = c;
  }
  if (!out.cost.feasible)
    throw InfeasibleResult("local solution fails the activation check", out.waveform);
  out.first_order = std::max(0.0, res.first_order);
  out.converged =
      res.converged && out.first_order < 1e-3 * (1.0 + std::abs(out.cost.total));
  return out;
}

inline LocalResult local_optimize(const SplineWaveform& start, const Objective& obj,
                                  const LocalOptions& opt = {}) {
  BasisCache cache(obj.config().coil, start.window_us(), obj.config().dt_us);
  return local_optimize(start, obj, cache, opt);
}

// ---------------------------------------------------------------------------
// Swarm layer

struct SwarmConfig {
  int n_particles = 8;
  double inertia = 0.9;
  double c1 = 1.2;
  double c2 = 0.12;
  int dof_min = 25;
  int dof_max = 100;
  int dof_increment = 5;
  int dof_cap = 1000;
  int max_iterations = 30;
  double restart_noise_scale = 0.05;
  std::uint64_t rng_seed = 1;
  int local_evaluations = 2000;
  /// Initial knot SD: false = V_max T / (L N) amperes, true = N amperes.
  bool literal_initial_sd = false;
  int threads = 1;  // 0 = hardware concurrency

  void validate() const {
    if (n_particles < 1) throw Error(ErrorKind::invalid_parameters, "need at least one particle");
    if (!(inertia > 0.0 && inertia <= 1.0))
      throw Error(ErrorKind::invalid_parameters, "inertia must lie in (0, 1]");
    if (!(c1 >= 0.0 && c2 >= 0.0))
      throw Error(ErrorKind::invalid_parameters, "acceleration weights must be non-negative");
    if (dof_min < 4 || dof_max > 1000 || dof_min > dof_max || dof_cap > 1000 || dof_cap < dof_max)
      throw Error(ErrorKind::invalid_parameters, "DOF range must lie within [4, 1000]");
    if (dof_increment < 0 || max_iterations < 1 || local_evaluations < 1 ||
        restart_noise_scale < 0.0)
      throw Error(ErrorKind::invalid_parameters, "invalid swarm budget");
  }
};

struct ScoredWaveform {
  SplineWaveform waveform;
  CostBreakdown cost;
};

struct Particle {
  SplineWaveform position;
  std::vector<double> velocity;  // free-knot space
  std::optional<ScoredWaveform> personal_best;
  std::mt19937_64 rng;
  bool converged = false;
  bool improved = false;

  [[nodiscard]] std::size_t n_dof() const noexcept { return position.n_dof(); }
};

struct HistoryEntry {
  int iteration = 0;
  double best_cost = 0.0;
  int best_dof = 0;
  int feasible_particles = 0;
};

struct OptimizationRun {
  VoltageLimits limits;
  SwarmConfig config;
  ScoredWaveform best;
  std::vector<HistoryEntry> history;
  std::string terminated_reason;
};

namespace detail {

inline std::mt19937_64 particle_stream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x7a3cu};
  return std::mt19937_64(seq);
}

/// Free-knot vector resampled to another knot count (as a spline).
inline std::vector<double> resample_free(std::span<const double> free, std::size_t n_dof,
                                         double window_us) {
  const auto w = resample_dof(SplineWaveform::from_free(free, window_us), n_dof);
  const auto f = w.free_knots();
  return {f.begin(), f.end()};
}

inline double knot_rms(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return v.empty() ? 0.0 : std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace detail

/// v <- w v + c1 r1 (pbest - x) + c2 r2 (gbest - x); x <- x + v. Bests are
/// resampled to each particle's knot count; end knots stay zero.
inline void swarm_step(std::vector<Particle>& particles, const SplineWaveform& global_best,
                       const SwarmConfig& cfg) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (auto& p : particles) {
    const std::size_t n = p.n_dof();
    const double window = p.position.window_us();
    const auto g = resample_dof(global_best, n);
    const auto pb = p.personal_best ? resample_dof(p.personal_best->waveform, n) : p.position;
    const auto x = p.position.free_knots();
    const auto gf = g.free_knots();
    const auto pf = pb.free_knots();
    std::vector<double> nx(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double r1 = unit(p.rng);
      const double r2 = unit(p.rng);
      p.velocity[k] = cfg.inertia * p.velocity[k] + cfg.c1 * r1 * (pf[k] - x[k]) +
                      cfg.c2 * r2 * (gf[k] - x[k]);
      nx[k] = x[k] + p.velocity[k];
    }
    p.position = SplineWaveform::from_free(nx, window);
  }
}

/// Knot-count update: +increment (up to the cap) when the particle's local
/// solve converged and improved on its personal best.
inline std::size_t adapt_dof(std::size_t n, bool converged, bool improved, const SwarmConfig& cfg) {
  if (!(converged && improved)) return n;
  return std::min<std::size_t>(n + static_cast<std::size_t>(cfg.dof_increment),
                               static_cast<std::size_t>(cfg.dof_cap));
}

inline OptimizationRun run_optimization(const VoltageLimits& limits, ObjectiveConfig ocfg,
                                        const SwarmConfig& swarm,
                                        double window_us = SplineWaveform::default_window_us) {
  swarm.validate();
  ocfg.limits = limits;
  const Objective obj(ocfg);
  BasisCache cache(ocfg.coil, window_us, ocfg.dt_us,
                   2 * static_cast<std::size_t>(swarm.n_particles));

  std::vector<Particle> particles;
  particles.reserve(static_cast<std::size_t>(swarm.n_particles));
  for (int i = 0; i < swarm.n_particles; ++i) {
    auto rng = detail::particle_stream(swarm.rng_seed, static_cast<std::uint64_t>(i));
    std::uniform_int_distribution<int> dof(swarm.dof_min, swarm.dof_max);
    const int n = dof(rng);
    const double sd = swarm.literal_initial_sd
                          ? static_cast<double>(n)
                          : limits.v_max() * window_us / (ocfg.coil.inductance_uH * n);
    std::normal_distribution<double> nd(0.0, sd);
    std::vector<double> free(static_cast<std::size_t>(n - 2));
    for (auto& v : free) v = nd(rng);
    particles.push_back(Particle{SplineWaveform::from_free(free, window_us),
                                 std::vector<double>(free.size(), 0.0), std::nullopt,
                                 std::move(rng)});
  }

  LocalOptions lo;
  lo.max_evaluations = swarm.local_evaluations;
  std::optional<ScoredWaveform> gbest;
  std::size_t gbest_owner = 0;
  OptimizationRun run{limits, swarm, {SplineWaveform::zeros(4, window_us), {}}, {}, {}};
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned threads =
      swarm.threads > 0 ? static_cast<unsigned>(swarm.threads) : hw;

  for (int iter = 0; iter < swarm.max_iterations; ++iter) {
    std::vector<std::optional<LocalResult>> results(particles.size());
    const auto solve = [&](std::size_t i) {
      try {
        results[i] = local_optimize(particles[i].position, obj, cache, lo);
      } catch (const InfeasibleResult& e) {
        particles[i].position = e.best_attempt();
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::non_excitable_shape &&
            e.kind() != ErrorKind::integration_failure &&
            e.kind() != ErrorKind::optimization_failed)
          throw;
      }
    };
    if (threads <= 1) {
      for (std::size_t i = 0; i < particles.size(); ++i) solve(i);
    } else {
      for (std::size_t b = 0; b < particles.size(); b += threads) {
        std::vector<std::future<void>> jobs;
        for (std::size_t i = b; i < std::min(particles.size(), b + threads); ++i)
          jobs.push_back(std::async(std::launch::async, solve, i));
        for (auto& j : jobs) j.get();
      }
    }

    // barrier: personal and global bests in particle order
    int feasible_count = 0;
    for (std::size_t i = 0; i < particles.size(); ++i) {
      auto& p = particles[i];
      p.converged = false;
      p.improved = false;
      if (!results[i]) continue;
      ++feasible_count;
      const auto& r = *results[i];
      p.position = r.waveform;
      p.converged = r.converged;
      if (!p.personal_best || r.cost.total < p.personal_best->cost.total) {
        p.improved = true;
        p.personal_best = ScoredWaveform{r.waveform, r.cost};
      }
      if (!gbest || r.cost.total < gbest->cost.total) {
        gbest = ScoredWaveform{r.waveform, r.cost};
        gbest_owner = i;
      }
    }
    if (gbest) {
      run.history.push_back({iter, gbest->cost.total, static_cast<int>(gbest->waveform.n_dof()),
                             feasible_count});
    }

    for (auto& p : particles) {
      const std::size_t n = adapt_dof(p.n_dof(), p.converged, p.improved, swarm);
      if (n != p.n_dof()) {
        p.velocity = detail::resample_free(p.velocity, n, window_us);
        p.position = resample_dof(p.position, n);
      }
    }
    if (!gbest) continue;
    if (iter + 1 == swarm.max_iterations) break;
    swarm_step(particles, gbest->waveform, swarm);

    // restart: the particle holding the global best restarts from it with
    // velocity-rule noise
    auto& owner = particles[gbest_owner];
    const auto g = resample_dof(gbest->waveform, owner.n_dof());
    const auto gf = g.free_knots();
    std::normal_distribution<double> nd(0.0, swarm.restart_noise_scale * detail::knot_rms(gf));
    std::vector<double> nx(gf.size());
    for (std::size_t k = 0; k < gf.size(); ++k) {
      owner.velocity[k] = swarm.inertia * owner.velocity[k] + nd(owner.rng);
      nx[k] = gf[k] + owner.velocity[k];
    }
    owner.position = SplineWaveform::from_free(nx, window_us);
  }
  if (!gbest)
    throw Error(ErrorKind::optimization_failed,
                "no particle reached an activating waveform within the voltage limits");
  run.best = *gbest;
  run.terminated_reason = "max_iterations";
  return run;
}

}  // namespace tmsopt
