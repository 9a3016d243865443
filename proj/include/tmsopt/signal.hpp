#pragma once

#include <tmsopt/error.hpp>

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace tmsopt {

/// Causal first-order Butterworth low-pass, bilinear transform with the
/// cutoff prewarped so the -3 dB point is exact. The state starts at steady
/// state for the first sample, so a constant trace passes unchanged.
inline std::vector<double> butterworth_lowpass(std::span<const double> x, double dt_us,
                                               double cutoff_hz = 200e3) {
  if (!(dt_us > 0.0)) throw Error(ErrorKind::invalid_parameters, "sample spacing must be positive");
  const double fs = 1e6 / dt_us;
  if (!(cutoff_hz > 0.0) || !(cutoff_hz < 0.5 * fs))
    throw Error(ErrorKind::invalid_cutoff, "cutoff must lie in (0, Nyquist)");
  const double k = std::tan(std::numbers::pi * cutoff_hz / fs);
  const double b0 = k / (1.0 + k);
  const double a1 = (k - 1.0) / (k + 1.0);
  std::vector<double> y(x.size());
  if (x.empty()) return y;
  double x_prev = x[0];
  double y_prev = x[0];
  for (std::size_t n = 0; n < x.size(); ++n) {
    y[n] = b0 * (x[n] + x_prev) - a1 * y_prev;
    x_prev = x[n];
    y_prev = y[n];
  }
  return y;
}

}  // namespace tmsopt
