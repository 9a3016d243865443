#pragma once

// Synthetic reference pulses on the 1 us grid: a conventional monophasic
// stand-in, a full-period biphasic sinusoid and an ideal two-level
// rectangular-voltage pulse.

#include <tmsopt/error.hpp>
#include <tmsopt/waveform.hpp>

#include <cmath>
#include <numbers>
#include <vector>

namespace tmsopt {

enum class PulseKind { monophasic, biphasic, rectangular_asym };

struct ReferencePulseSpec {
  PulseKind kind = PulseKind::monophasic;
  double period_us = 280.0;
  /// Monophasic only: negative-to-positive voltage peak ratio of the decay,
  /// i.e. 1 / r_V.
  double damping = 1.0 / 3.3;
  /// Peak current (A) for the sinusoidal kinds.
  double amplitude = 1000.0;
  // rectangular-asym: positive level/width; the negative width follows from
  // volt-second balance
  double v_positive = 2000.0;
  double v_negative = -100.0;
  double positive_width_us = 40.0;
  double onset_us = 100.0;
  double window_us = SplineWaveform::default_window_us;
  double dt_us = 1.0;

  /// Width of the negative rectangle that brings the current back to zero.
  [[nodiscard]] double negative_width_us() const {
    return v_positive * positive_width_us / -v_negative;
  }

  void validate() const {
    if (!(window_us > 0.0) || !(dt_us > 0.0) || !(onset_us >= 0.0))
      throw Error(ErrorKind::invalid_parameters, "pulse grid must be positive");
    switch (kind) {
      case PulseKind::monophasic:
        if (!(damping > 0.0 && damping < 1.0))
          throw Error(ErrorKind::invalid_parameters, "monophasic damping must lie in (0, 1)");
        [[fallthrough]];
      case PulseKind::biphasic:
        if (!(period_us > 0.0) || !std::isfinite(amplitude))
          throw Error(ErrorKind::invalid_parameters, "period must be positive");
        break;
      case PulseKind::rectangular_asym:
        if (!(v_positive > 0.0) || !(v_negative < 0.0) || !(positive_width_us > 0.0))
          throw Error(ErrorKind::invalid_parameters,
                      "rectangular pulse needs v_positive > 0 > v_negative and a positive width");
        break;
    }
  }
};

/// Decay constant tau = 1 / (omega * damping) of the monophasic stand-in.
inline double monophasic_tau_us(const ReferencePulseSpec& s) {
  return s.period_us / (2.0 * std::numbers::pi * s.damping);
}

/// Time after onset at which the pulse current is back to zero (or, for the
/// monophasic decay, below 1e-6 of its peak).
inline double pulse_length_us(const ReferencePulseSpec& s) {
  switch (s.kind) {
    case PulseKind::monophasic:
      return 0.25 * s.period_us + monophasic_tau_us(s) * std::log(1e6);
    case PulseKind::biphasic:
      return s.period_us;
    case PulseKind::rectangular_asym:
      return s.positive_width_us + s.negative_width_us();
  }
  return 0.0;
}

/// Monophasic: quarter-sine current rise (period_us sets the sine), then an
/// exponential return whose initial slope is damping times the rise slope.
/// Biphasic: one full current sine period. Rectangular: trapezoidal current.
inline SampledPulse synthesize(const ReferencePulseSpec& s, const CoilParams& coil = {}) {
  s.validate();
  coil.validate();
  if (s.onset_us + pulse_length_us(s) > s.window_us)
    throw Error(ErrorKind::window_overflow, "reference pulse does not fit in the window");
  const double omega = 2.0 * std::numbers::pi / s.period_us;
  const double t_peak = 0.25 * s.period_us;
  const double tau = monophasic_tau_us(s);
  const double slope_up = s.v_positive / coil.inductance_uH;  // A/us
  const double slope_down = s.v_negative / coil.inductance_uH;
  const double w_pos = s.positive_width_us;
  const double w_neg = s.negative_width_us();
  const double i_top = slope_up * w_pos;

  const std::size_t m = grid_size(s.window_us, s.dt_us);
  std::vector<double> current(m, 0.0);
  for (std::size_t j = 1; j + 1 < m; ++j) {
    const double t = static_cast<double>(j) * s.dt_us - s.onset_us;
    if (t <= 0.0) continue;
    double i = 0.0;
    switch (s.kind) {
      case PulseKind::monophasic:
        i = t <= t_peak ? s.amplitude * std::sin(omega * t)
                        : s.amplitude * std::exp(-(t - t_peak) / tau);
        break;
      case PulseKind::biphasic:
        i = t < s.period_us ? s.amplitude * std::sin(omega * t) : 0.0;
        break;
      case PulseKind::rectangular_asym:
        if (t <= w_pos)
          i = slope_up * t;
        else if (t < w_pos + w_neg)
          i = i_top + slope_down * (t - w_pos);
        break;
    }
    current[j] = i;
  }
  return SampledPulse::from_current(std::move(current), s.dt_us, coil);
}

}  // namespace tmsopt
