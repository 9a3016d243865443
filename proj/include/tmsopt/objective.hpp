#pragma once

// Optimization cost J = W + lambda * P^2: ohmic loss W plus the squared
// voltage-limit violation integral P. Activation is reported alongside (and
// enforced by the optimizer), never folded into J.

#include <tmsopt/error.hpp>
#include <tmsopt/neuron.hpp>
#include <tmsopt/waveform.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

namespace tmsopt {

struct CostBreakdown {
  double total = 0.0;             // J
  double energy = 0.0;            // J
  double penalty_integral = 0.0;  // V*s
  double penalty_term = 0.0;      // J
  double margin = 0.0;            // peak v_m minus threshold, mV
  bool activated = false;
  bool feasible = false;
};

struct ObjectiveConfig {
  VoltageLimits limits;
  CoilParams coil{};
  NeuronParams neuron{};
  double lambda = 1.0;  // S/s
  double v_threshold = 10.0;
  double beta = 2.0;  // smooth-max sharpness, 1/mV
  SimulationOptions sim{};
  double dt_us = 1.0;

  void validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda))
      throw Error(ErrorKind::invalid_parameters, "penalty multiplier must be positive");
    if (!(beta > 0.0)) throw Error(ErrorKind::invalid_parameters, "beta must be positive");
    if (!(dt_us > 0.0)) throw Error(ErrorKind::invalid_parameters, "dt must be positive");
    coil.validate();
    neuron.validate();
  }
};

/// Area of the voltage excursions beyond the limits, in V*s.
inline double penalty_integral(const SampledPulse& p, const VoltageLimits& limits) {
  double acc = 0.0;
  for (double v : p.voltage) acc += std::max({0.0, v - limits.v_max(), limits.v_min() - v});
  return acc * p.dt_us * 1e-6;
}

/// Evaluator holding the neuron model built for one configuration.
class Objective {
 public:
  explicit Objective(ObjectiveConfig cfg)
      : cfg_(std::move(cfg)), model_(std::make_shared<const MembraneModel>(cfg_.neuron)) {
    cfg_.validate();
  }

  [[nodiscard]] const ObjectiveConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] const MembraneModel& model() const noexcept { return *model_; }

  [[nodiscard]] CostBreakdown cost(const SplineWaveform& w) const {
    return cost(sample(w, cfg_.coil, cfg_.dt_us));
  }

  [[nodiscard]] CostBreakdown cost(const SampledPulse& p) const {
    CostBreakdown c;
    c.energy = energy_loss(p);
    c.penalty_integral = penalty_integral(p, cfg_.limits);
    c.penalty_term = cfg_.lambda * c.penalty_integral * c.penalty_integral;
    c.total = c.energy + c.penalty_term;
    const auto act = check_activation(model_->simulate(p.efield, p.dt_us, cfg_.sim),
                                      cfg_.v_threshold);
    c.margin = act.margin;
    c.activated = act.activated;
    c.feasible = c.penalty_integral == 0.0 && c.activated;
    return c;
  }

  /// v_threshold minus the log-sum-exp smooth maximum of the potential. The
  /// smooth maximum exceeds the hard one by at most ln(samples)/beta.
  [[nodiscard]] double activation_constraint(const SplineWaveform& w) const {
    return activation_constraint(w, cfg_.beta);
  }

  [[nodiscard]] double activation_constraint(const SplineWaveform& w, double beta) const {
    const auto p = sample(w, cfg_.coil, cfg_.dt_us);
    const auto tr = model_->simulate(p.efield, p.dt_us, cfg_.sim);
    double vmax = -std::numeric_limits<double>::infinity();
    for (double v : tr.v_m) vmax = std::max(vmax, v);
    double z = 0.0;
    for (double v : tr.v_m) z += std::exp(beta * (v - vmax));
    return cfg_.v_threshold - (vmax + std::log(z) / beta);
  }

  /// Gradient of J with respect to the free knots (the penalty's kinks take
  /// the one-sided derivative of the active branch).
  [[nodiscard]] std::vector<double> cost_gradient(const SplineWaveform& w) const {
    const auto p = sample(w, cfg_.coil, cfg_.dt_us);
    const std::size_t m = p.current.size();
    const auto weights = simpson_weights(m);
    const double pen = penalty_integral(p, cfg_.limits);
    Eigen::VectorXd d_current(m);
    const double e_scale = 2.0 * cfg_.coil.resistance_mOhm * p.dt_us * 1e-9;
    for (std::size_t j = 0; j < m; ++j) d_current[j] = e_scale * weights[j] * p.current[j];
    // dJ/dV_j = 2 lambda P dP/dV_j, dP/dV_j = +-dt*1e-6 outside the limits
    const double pen_scale = 2.0 * cfg_.lambda * pen * p.dt_us * 1e-6;
    const double dv_di = cfg_.coil.inductance_uH / p.dt_us;
    for (std::size_t j = 0; j + 1 < m; ++j) {
      const double v = p.voltage[j];
      double s = 0.0;
      if (v > cfg_.limits.v_max())
        s = 1.0;
      else if (v < cfg_.limits.v_min())
        s = -1.0;
      if (s == 0.0) continue;
      d_current[j + 1] += pen_scale * s * dv_di;
      d_current[j] -= pen_scale * s * dv_di;
    }
    const Eigen::MatrixXd b = sampling_matrix(w.n_dof(), w.window_us(), cfg_.dt_us);
    const Eigen::VectorXd g = b.transpose() * d_current;
    return {g.data(), g.data() + g.size()};
  }

 private:
  ObjectiveConfig cfg_;
  std::shared_ptr<const MembraneModel> model_;
};

inline CostBreakdown cost(const SplineWaveform& w, const ObjectiveConfig& cfg) {
  return Objective(cfg).cost(w);
}

inline double activation_constraint(const SplineWaveform& w, const ObjectiveConfig& cfg) {
  return Objective(cfg).activation_constraint(w);
}

/// Binary-titrated threshold factor of a waveform shape.
inline TitrationResult titrate_threshold(const SplineWaveform& shape, const ObjectiveConfig& cfg,
                                         TitrationOptions opt = {}) {
  const auto p = sample(shape, cfg.coil, cfg.dt_us);
  opt.v_threshold = cfg.v_threshold;
  opt.sim = cfg.sim;
  return titrate_efield(MembraneModel(cfg.neuron), p.efield, p.dt_us, opt);
}

}  // namespace tmsopt
