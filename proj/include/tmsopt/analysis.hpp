#pragma once

// Waveform features: phase segmentation of the coil current, the leading
// exponential, FWHM durations, ratios, regressions across conditions, and
// loss comparisons between pulses.

#include <tmsopt/error.hpp>
#include <tmsopt/neuron.hpp>
#include <tmsopt/waveform.hpp>

#include <boost/math/tools/minima.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tmsopt {

/// Sample indices separating leading | rising | falling | decay.
struct PhaseBoundaries {
  std::size_t rise_start = 0;  // leading-phase minimum (or pulse onset if none)
  std::size_t peak = 0;
  std::size_t fall_end = 0;
  std::size_t size = 0;
  bool leading_degenerate = true;

  [[nodiscard]] bool four_phases() const noexcept {
    return !leading_degenerate && rise_start > 0 && peak > rise_start && fall_end > peak &&
           fall_end + 1 < size;
  }
};

struct LeadingFit {
  bool defined = false;
  double tau_us = std::numeric_limits<double>::quiet_NaN();
  double r2 = std::numeric_limits<double>::quiet_NaN();
  std::size_t samples = 0;
};

struct FwhmDurations {
  double t_rise_us = 0.0;
  double t_fall_us = 0.0;
  double t_pulse_us = 0.0;
};

struct PulseMetrics {
  double t_init_us = 0.0;
  double tau_init_us = std::numeric_limits<double>::quiet_NaN();
  double fit_r2_init = std::numeric_limits<double>::quiet_NaN();
  double t_rise_us = 0.0;
  double t_fall_us = 0.0;
  double t_pulse_us = 0.0;
  double i_max = 0.0;
  double i_min = 0.0;
  double v_max = 0.0;
  double v_min = 0.0;
  double r_i = 0.0;
  double r_v = 0.0;
  double energy = 0.0;
  bool four_phases = false;
};

/// Leading phase: start to the current minimum preceding the global maximum.
/// Rising: minimum to maximum. Falling: maximum until the voltage leaves the
/// region below half its post-peak minimum. Decay: the rest.
inline PhaseBoundaries segment_phases(const SampledPulse& p) {
  const auto& i = p.current;
  const auto& v = p.voltage;
  const std::size_t m = i.size();
  PhaseBoundaries b;
  b.size = m;
  const auto peak_it = std::max_element(i.begin(), i.end());
  b.peak = static_cast<std::size_t>(peak_it - i.begin());
  if (!(*peak_it > 0.0) || b.peak == 0 || b.peak + 1 >= m)
    throw Error(ErrorKind::segmentation_failed, "current has no interior positive peak");

  const auto min_it = std::min_element(i.begin(), i.begin() + static_cast<std::ptrdiff_t>(b.peak));
  if (*min_it < 0.0) {
    b.rise_start = static_cast<std::size_t>(min_it - i.begin());
    b.leading_degenerate = false;
  } else {
    // no dip: the rise starts at the last non-positive sample before the peak
    std::size_t k = b.peak;
    while (k > 0 && i[k - 1] > 0.0) --k;
    b.rise_start = k > 0 ? k - 1 : 0;
  }

  double v_low = 0.0;
  for (std::size_t j = b.peak; j < v.size(); ++j) v_low = std::min(v_low, v[j]);
  if (!(v_low < 0.0))
    throw Error(ErrorKind::segmentation_failed, "current does not fall after its peak");
  const double level = 0.5 * v_low;
  std::size_t j = b.peak;
  while (j < v.size() && v[j] > level) ++j;
  while (j < v.size() && v[j] <= level) ++j;
  b.fall_end = std::min(j, m - 1);
  return b;
}

/// Least-squares fit of I(t) = I_min exp((t - T_init) / tau) over the leading
/// phase (the pinned zero sample at t = 0 excluded). R^2 in linear space.
inline LeadingFit fit_leading_tau(const SampledPulse& p, const PhaseBoundaries& b) {
  LeadingFit fit;
  if (b.leading_degenerate || b.rise_start < 10) return fit;
  const std::size_t k0 = 1;
  const std::size_t k1 = b.rise_start;
  const double i_min = p.current[k1];
  const double t_init = static_cast<double>(k1) * p.dt_us;
  const auto sse = [&](double log_tau) {
    const double tau = std::exp(log_tau);
    double acc = 0.0;
    for (std::size_t k = k0; k <= k1; ++k) {
      const double t = static_cast<double>(k) * p.dt_us;
      const double r = p.current[k] - i_min * std::exp((t - t_init) / tau);
      acc += r * r;
    }
    return acc;
  };
  // coarse log grid, then Brent around the best cell
  const double lo = std::log(0.1 * p.dt_us);
  const double hi = std::log(1e3 * p.duration_us());
  constexpr int cells = 120;
  int best = 0;
  double best_val = std::numeric_limits<double>::infinity();
  for (int c = 0; c <= cells; ++c) {
    const double val = sse(lo + (hi - lo) * c / cells);
    if (val < best_val) best_val = val, best = c;
  }
  const double step = (hi - lo) / cells;
  const auto [log_tau, val] = boost::math::tools::brent_find_minima(
      sse, lo + step * std::max(0, best - 1), lo + step * std::min(cells, best + 1), 52);
  double mean = 0.0;
  for (std::size_t k = k0; k <= k1; ++k) mean += p.current[k];
  mean /= static_cast<double>(k1 - k0 + 1);
  double sst = 0.0;
  for (std::size_t k = k0; k <= k1; ++k) sst += (p.current[k] - mean) * (p.current[k] - mean);
  fit.defined = true;
  fit.tau_us = std::exp(log_tau);
  fit.r2 = sst > 0.0 ? 1.0 - val / sst : (val == 0.0 ? 1.0 : -std::numeric_limits<double>::infinity());
  fit.samples = k1 - k0 + 1;
  return fit;
}

/// Time the voltage spends at or above half its positive peak (rise) and at
/// or below half its negative peak (fall).
inline FwhmDurations fwhm_duration(const SampledPulse& p) {
  const auto& v = p.voltage;
  if (v.empty() || std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; }))
    throw Error(ErrorKind::undefined_metric, "pulse duration undefined for a zero voltage trace");
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  FwhmDurations d;
  if (*hi_it > 0.0) {
    const double level = 0.5 * *hi_it;
    d.t_rise_us = p.dt_us * static_cast<double>(
                                std::count_if(v.begin(), v.end(), [&](double x) { return x >= level; }));
  }
  if (*lo_it < 0.0) {
    const double level = 0.5 * *lo_it;
    d.t_fall_us = p.dt_us * static_cast<double>(
                                std::count_if(v.begin(), v.end(), [&](double x) { return x <= level; }));
  }
  d.t_pulse_us = d.t_rise_us + d.t_fall_us;
  return d;
}

/// Feature set of one pulse. Segmentation failures propagate.
inline PulseMetrics measure(const SampledPulse& p) {
  PulseMetrics m;
  const auto b = segment_phases(p);
  const auto fit = fit_leading_tau(p, b);
  const auto d = fwhm_duration(p);
  m.four_phases = b.four_phases();
  m.t_init_us = b.leading_degenerate ? 0.0 : static_cast<double>(b.rise_start) * p.dt_us;
  m.tau_init_us = fit.tau_us;
  m.fit_r2_init = fit.r2;
  m.t_rise_us = d.t_rise_us;
  m.t_fall_us = d.t_fall_us;
  m.t_pulse_us = d.t_pulse_us;
  const auto [ilo, ihi] = std::minmax_element(p.current.begin(), p.current.end());
  const auto [vlo, vhi] = std::minmax_element(p.voltage.begin(), p.voltage.end());
  m.i_max = *ihi;
  m.i_min = *ilo;
  m.v_max = *vhi;
  m.v_min = *vlo;
  const double inf = std::numeric_limits<double>::infinity();
  m.r_i = m.i_min != 0.0 ? std::abs(m.i_max / m.i_min) : inf;
  m.r_v = m.v_min != 0.0 ? std::abs(m.v_max / m.v_min) : inf;
  m.energy = energy_loss(p);
  return m;
}

// ---------------------------------------------------------------------------
// Regressions

enum class RegressionModel { power, log };

inline const char* model_name(RegressionModel k) {
  return k == RegressionModel::power ? "power" : "log";
}

/// power: y = a x^b; log: y = a ln(x) + b.
struct RegressionFit {
  std::string name;
  RegressionModel model = RegressionModel::power;
  double a = std::numeric_limits<double>::quiet_NaN();
  double b = std::numeric_limits<double>::quiet_NaN();
  double r2 = std::numeric_limits<double>::quiet_NaN();
  std::size_t points = 0;
  bool primary = false;
  bool skipped = false;

  [[nodiscard]] double operator()(double x) const {
    return model == RegressionModel::power ? a * std::pow(x, b) : a * std::log(x) + b;
  }
};

namespace detail {

// Ordinary least squares y = c0 + c1 x.
inline std::pair<double, double> line_fit(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxy += (x[k] - mx) * (y[k] - my);
    sxx += (x[k] - mx) * (x[k] - mx);
  }
  const double c1 = sxx > 0.0 ? sxy / sxx : 0.0;
  return {my - c1 * mx, c1};
}

inline double r_squared(const RegressionFit& f, std::span<const double> x, std::span<const double> y) {
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double sse = 0.0, sst = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double r = y[k] - f(x[k]);
    sse += r * r;
    sst += (y[k] - my) * (y[k] - my);
  }
  if (sst == 0.0) return sse == 0.0 ? 1.0 : -std::numeric_limits<double>::infinity();
  return 1.0 - sse / sst;
}

}  // namespace detail

inline constexpr std::size_t min_regression_points = 5;

/// Fits on the points with x > 0 (and y > 0 for the power model, which is
/// solved as a line in log-log space). Fewer than five usable points marks
/// the fit as skipped.
inline RegressionFit fit_regression(std::span<const double> x, std::span<const double> y,
                                    RegressionModel model, std::string name = {}) {
  RegressionFit f;
  f.name = std::move(name);
  f.model = model;
  std::vector<double> xs, ys, lx, ly;
  for (std::size_t k = 0; k < std::min(x.size(), y.size()); ++k) {
    if (!(x[k] > 0.0) || !std::isfinite(x[k]) || !std::isfinite(y[k])) continue;
    if (model == RegressionModel::power && !(y[k] > 0.0)) continue;
    xs.push_back(x[k]);
    ys.push_back(y[k]);
    lx.push_back(std::log(x[k]));
    ly.push_back(model == RegressionModel::power ? std::log(y[k]) : y[k]);
  }
  f.points = xs.size();
  if (f.points < min_regression_points) {
    f.skipped = true;
    return f;
  }
  const auto [c0, c1] = detail::line_fit(lx, ly);
  if (model == RegressionModel::power) {
    f.a = std::exp(c0);
    f.b = c1;
  } else {
    f.a = c1;
    f.b = c0;
  }
  f.r2 = detail::r_squared(f, xs, ys);
  return f;
}

struct ConditionMetrics {
  VoltageLimits limits;
  PulseMetrics metrics;
};

/// The cross-condition fits: energy vs pulse duration (log model primary),
/// rise duration vs V_max and fall duration vs |V_min|, current extremes and
/// current ratio vs pulse duration (power model primary). Both models are
/// returned for each relation.
inline std::vector<RegressionFit> fit_regressions(std::span<const ConditionMetrics> runs) {
  struct Relation {
    const char* name;
    double (*x)(const ConditionMetrics&);
    double (*y)(const ConditionMetrics&);
    RegressionModel primary;
  };
  static constexpr Relation relations[] = {
      {"energy_vs_pulse_duration", [](const ConditionMetrics& c) { return c.metrics.t_pulse_us; },
       [](const ConditionMetrics& c) { return c.metrics.energy; }, RegressionModel::log},
      {"rise_duration_vs_vmax", [](const ConditionMetrics& c) { return c.limits.v_max(); },
       [](const ConditionMetrics& c) { return c.metrics.t_rise_us; }, RegressionModel::power},
      {"fall_duration_vs_vmin", [](const ConditionMetrics& c) { return -c.limits.v_min(); },
       [](const ConditionMetrics& c) { return c.metrics.t_fall_us; }, RegressionModel::power},
      {"imax_vs_pulse_duration", [](const ConditionMetrics& c) { return c.metrics.t_pulse_us; },
       [](const ConditionMetrics& c) { return c.metrics.i_max; }, RegressionModel::power},
      {"imin_vs_pulse_duration", [](const ConditionMetrics& c) { return c.metrics.t_pulse_us; },
       [](const ConditionMetrics& c) { return std::abs(c.metrics.i_min); }, RegressionModel::power},
      {"current_ratio_vs_pulse_duration",
       [](const ConditionMetrics& c) { return c.metrics.t_pulse_us; },
       [](const ConditionMetrics& c) { return c.metrics.r_i; }, RegressionModel::power},
  };
  std::vector<RegressionFit> out;
  for (const auto& rel : relations) {
    std::vector<double> x, y;
    for (const auto& c : runs) {
      x.push_back(rel.x(c));
      y.push_back(rel.y(c));
    }
    for (auto model : {RegressionModel::log, RegressionModel::power}) {
      auto f = fit_regression(x, y, model, rel.name);
      f.primary = model == rel.primary;
      out.push_back(std::move(f));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss comparison and correlation

/// Percentage change of a loss relative to the reference loss.
inline double loss_change(double w, double w_ref) {
  if (!(w_ref != 0.0) || !std::isfinite(w_ref))
    throw Error(ErrorKind::undefined_metric, "reference energy is zero");
  return (w - w_ref) / w_ref * 100.0;
}

enum class MatchMode { peak, threshold };

struct LossComparison {
  double eta_percent = 0.0;
  double energy_test = 0.0;  // after scaling
  double energy_ref = 0.0;
  double scale_test = 1.0;
  double scale_ref = 1.0;
};

/// Peak mode scales the test pulse to the reference's positive voltage peak;
/// threshold mode scales both pulses to their titrated thresholds.
inline LossComparison compare_losses(const SampledPulse& test, const SampledPulse& ref,
                                     MatchMode mode, const NeuronParams& neuron = {},
                                     TitrationOptions opt = {}) {
  LossComparison c;
  if (mode == MatchMode::peak) {
    const double vt = *std::max_element(test.voltage.begin(), test.voltage.end());
    const double vr = *std::max_element(ref.voltage.begin(), ref.voltage.end());
    if (!(vt > 0.0) || !(vr > 0.0))
      throw Error(ErrorKind::undefined_metric, "peak matching needs a positive voltage peak");
    c.scale_test = vr / vt;
  } else {
    const MembraneModel model(neuron);
    c.scale_test = titrate_efield(model, test.efield, test.dt_us, opt).scale;
    c.scale_ref = titrate_efield(model, ref.efield, ref.dt_us, opt).scale;
  }
  c.energy_test = energy_loss(test) * c.scale_test * c.scale_test;
  c.energy_ref = energy_loss(ref) * c.scale_ref * c.scale_ref;
  c.eta_percent = loss_change(c.energy_test, c.energy_ref);
  return c;
}

/// Pearson correlation of two traces on the same grid.
inline double waveform_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2)
    throw Error(ErrorKind::invalid_waveform, "correlation needs traces of equal length");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    sab += (a[k] - ma) * (b[k] - mb);
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
  }
  if (saa == 0.0 || sbb == 0.0)
    throw Error(ErrorKind::undefined_metric, "correlation undefined for a constant trace");
  return sab / std::sqrt(saa * sbb);
}

}  // namespace tmsopt
