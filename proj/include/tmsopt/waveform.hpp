#pragma once

// Coil-current waveforms: spline-parametrized decision vectors, their samples
// on the fixed stimulus grid, and the derived voltage / E-field traces.
//
// Units: time in us, current in A, inductance in uH, resistance in mOhm,
// voltage in V (uH * A/us = V), field map in (V/m)/(A/us), energy in J.

#include <tmsopt/error.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace tmsopt {

struct CoilParams {
  double inductance_uH = 10.0;
  double resistance_mOhm = 10.0;
  double field_map = 1.0;

  void validate() const {
    if (!(inductance_uH > 0.0) || !(resistance_mOhm > 0.0) || !(field_map > 0.0) ||
        !std::isfinite(inductance_uH) || !std::isfinite(resistance_mOhm) ||
        !std::isfinite(field_map))
      throw Error(ErrorKind::invalid_parameters, "coil parameters must be positive and finite");
  }
};

class VoltageLimits {
 public:
  VoltageLimits(double v_max, double v_min) : v_max_(v_max), v_min_(v_min) {
    if (!(v_min < 0.0 && 0.0 < v_max))
      throw Error(ErrorKind::invalid_parameters, "voltage limits need v_min < 0 < v_max");
  }

  [[nodiscard]] double v_max() const noexcept { return v_max_; }
  [[nodiscard]] double v_min() const noexcept { return v_min_; }
  [[nodiscard]] double asymmetry_ratio() const noexcept { return std::abs(v_max_ / v_min_); }

  /// Unbounded limits; the penalty vanishes identically.
  static VoltageLimits unbounded() {
    return {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  }

  friend bool operator==(const VoltageLimits&, const VoltageLimits&) = default;

 private:
  double v_max_;
  double v_min_;
};

/// Natural cubic spline through values on a uniform grid over [0, span].
class UniformNaturalSpline {
 public:
  UniformNaturalSpline(std::span<const double> values, double span)
      : y_(values.begin(), values.end()), span_(span) {
    const std::size_t n = y_.size();
    h_ = span_ / static_cast<double>(n - 1);
    m_.assign(n, 0.0);
    if (n < 3) return;
    // Thomas algorithm on the interior second-derivative system
    //   m[k-1] + 4 m[k] + m[k+1] = 6 (y[k-1] - 2 y[k] + y[k+1]) / h^2.
    const std::size_t interior = n - 2;
    std::vector<double> c(interior), d(interior);
    const double scale = 6.0 / (h_ * h_);
    for (std::size_t i = 0; i < interior; ++i) {
      const std::size_t k = i + 1;
      const double rhs = scale * (y_[k - 1] - 2.0 * y_[k] + y_[k + 1]);
      const double denom = 4.0 - (i > 0 ? c[i - 1] : 0.0);
      c[i] = 1.0 / denom;
      d[i] = (rhs - (i > 0 ? d[i - 1] : 0.0)) / denom;
    }
    m_[interior] = d[interior - 1];
    for (std::size_t i = interior; i-- > 0;) {
      m_[i + 1] = d[i] - (i + 1 < interior ? c[i] * m_[i + 2] : 0.0);
    }
  }

  [[nodiscard]] double operator()(double t) const {
    const std::size_t n = y_.size();
    if (t <= 0.0) return y_.front();
    if (t >= span_) return y_.back();
    auto k = static_cast<std::size_t>(t / h_);
    if (k >= n - 1) k = n - 2;
    const double u = (t - static_cast<double>(k) * h_) / h_;
    const double w = 1.0 - u;
    return w * y_[k] + u * y_[k + 1] +
           h_ * h_ / 6.0 * ((w * w * w - w) * m_[k] + (u * u * u - u) * m_[k + 1]);
  }

 private:
  std::vector<double> y_;
  std::vector<double> m_;
  double span_;
  double h_ = 1.0;
};

/// Knot amplitudes at uniformly spaced times over [0, window]. The end knots
/// are pinned at zero; only the interior knots are free parameters.
class SplineWaveform {
 public:
  static constexpr std::size_t min_dof = 4;
  static constexpr double default_window_us = 3000.0;

  explicit SplineWaveform(std::vector<double> knots, double window_us = default_window_us)
      : knots_(std::move(knots)), window_us_(window_us) {
    if (knots_.size() < min_dof)
      throw Error(ErrorKind::invalid_dof, "spline waveform needs at least 4 knots");
    if (!(window_us_ > 0.0) || !std::isfinite(window_us_))
      throw Error(ErrorKind::invalid_waveform, "window must be positive");
    for (double k : knots_)
      if (!std::isfinite(k)) throw Error(ErrorKind::invalid_waveform, "non-finite knot value");
    if (knots_.front() != 0.0 || knots_.back() != 0.0)
      throw Error(ErrorKind::invalid_waveform, "first and last knots must be zero");
  }

  /// Builds a waveform from the interior (free) knots.
  static SplineWaveform from_free(std::span<const double> free,
                                  double window_us = default_window_us) {
    std::vector<double> k(free.size() + 2, 0.0);
    std::copy(free.begin(), free.end(), k.begin() + 1);
    return SplineWaveform(std::move(k), window_us);
  }

  static SplineWaveform zeros(std::size_t n_dof, double window_us = default_window_us) {
    return SplineWaveform(std::vector<double>(n_dof, 0.0), window_us);
  }

  [[nodiscard]] std::size_t n_dof() const noexcept { return knots_.size(); }
  [[nodiscard]] std::size_t n_free() const noexcept { return knots_.size() - 2; }
  [[nodiscard]] double window_us() const noexcept { return window_us_; }
  [[nodiscard]] const std::vector<double>& knots() const noexcept { return knots_; }
  [[nodiscard]] std::span<const double> free_knots() const noexcept {
    return {knots_.data() + 1, knots_.size() - 2};
  }
  [[nodiscard]] double knot_time(std::size_t k) const noexcept {
    return window_us_ * static_cast<double>(k) / static_cast<double>(knots_.size() - 1);
  }
  [[nodiscard]] UniformNaturalSpline spline() const { return {knots_, window_us_}; }

  [[nodiscard]] SplineWaveform scaled(double factor) const {
    auto k = knots_;
    for (auto& x : k) x *= factor;
    return SplineWaveform(std::move(k), window_us_);
  }

  friend bool operator==(const SplineWaveform&, const SplineWaveform&) = default;

 private:
  std::vector<double> knots_;
  double window_us_;
};

/// Current on a uniform grid with the derived coil voltage and E-field:
/// voltage[j] = L (i[j+1] - i[j]) / dt, efield[j] = |k_E| (i[j+1] - i[j]) / dt.
struct SampledPulse {
  double dt_us = 1.0;
  std::vector<double> current;
  std::vector<double> voltage;
  std::vector<double> efield;
  CoilParams coil;

  static SampledPulse from_current(std::vector<double> current, double dt_us,
                                   const CoilParams& coil) {
    coil.validate();
    if (current.size() < 2)
      throw Error(ErrorKind::invalid_waveform, "pulse needs at least two samples");
    if (!(dt_us > 0.0)) throw Error(ErrorKind::invalid_waveform, "dt must be positive");
    for (double c : current)
      if (!std::isfinite(c)) throw Error(ErrorKind::invalid_waveform, "non-finite current sample");
    SampledPulse p;
    p.dt_us = dt_us;
    p.coil = coil;
    p.current = std::move(current);
    const std::size_t m = p.current.size();
    p.voltage.resize(m - 1);
    p.efield.resize(m - 1);
    for (std::size_t j = 0; j + 1 < m; ++j) {
      const double slope = (p.current[j + 1] - p.current[j]) / dt_us;
      p.voltage[j] = coil.inductance_uH * slope;
      p.efield[j] = coil.field_map * slope;
    }
    return p;
  }

  [[nodiscard]] std::size_t size() const noexcept { return current.size(); }
  [[nodiscard]] double duration_us() const noexcept {
    return dt_us * static_cast<double>(current.size() - 1);
  }

  [[nodiscard]] SampledPulse scaled(double factor) const {
    auto c = current;
    for (auto& x : c) x *= factor;
    return from_current(std::move(c), dt_us, coil);
  }
};

inline std::size_t grid_size(double window_us, double dt_us) {
  return static_cast<std::size_t>(std::llround(window_us / dt_us)) + 1;
}

inline SampledPulse sample(const SplineWaveform& w, const CoilParams& coil, double dt_us = 1.0) {
  const std::size_t m = grid_size(w.window_us(), dt_us);
  const auto s = w.spline();
  std::vector<double> current(m);
  for (std::size_t j = 0; j < m; ++j) current[j] = s(static_cast<double>(j) * dt_us);
  current.front() = 0.0;
  current.back() = 0.0;
  return SampledPulse::from_current(std::move(current), dt_us, coil);
}

inline SplineWaveform resample_dof(const SplineWaveform& w, std::size_t n_new) {
  if (n_new < SplineWaveform::min_dof)
    throw Error(ErrorKind::invalid_dof, "resample_dof needs n_new >= 4");
  if (n_new == w.n_dof()) return w;
  const auto s = w.spline();
  std::vector<double> k(n_new);
  for (std::size_t i = 0; i < n_new; ++i)
    k[i] = s(w.window_us() * static_cast<double>(i) / static_cast<double>(n_new - 1));
  k.front() = 0.0;
  k.back() = 0.0;
  return SplineWaveform(std::move(k), w.window_us());
}

/// Composite Simpson weights (units of dt) for m samples; the last three
/// intervals use the 3/8 rule when the interval count is odd.
inline std::vector<double> simpson_weights(std::size_t m) {
  std::vector<double> w(m, 0.0);
  if (m < 2) return w;
  if (m == 2) return {0.5, 0.5};
  const std::size_t intervals = m - 1;
  std::size_t simpson_end = intervals;  // sample index where 1/3 rule stops
  if (intervals % 2 == 1) simpson_end = intervals >= 3 ? intervals - 3 : 0;
  for (std::size_t j = 0; j + 2 <= simpson_end; j += 2) {
    w[j] += 1.0 / 3.0;
    w[j + 1] += 4.0 / 3.0;
    w[j + 2] += 1.0 / 3.0;
  }
  if (intervals % 2 == 1) {
    if (intervals >= 3) {
      const std::size_t j = simpson_end;
      w[j] += 3.0 / 8.0;
      w[j + 1] += 9.0 / 8.0;
      w[j + 2] += 9.0 / 8.0;
      w[j + 3] += 3.0 / 8.0;
    } else {
      w[0] += 0.5;
      w[1] += 0.5;
    }
  }
  return w;
}

/// Ohmic loss R * integral(i^2 dt) in joules.
inline double energy_loss(const SampledPulse& p) {
  const auto w = simpson_weights(p.current.size());
  double acc = 0.0;
  for (std::size_t j = 0; j < p.current.size(); ++j) acc += w[j] * p.current[j] * p.current[j];
  // mOhm * A^2 * us = 1e-9 J
  return p.coil.resistance_mOhm * acc * p.dt_us * 1e-9;
}

/// Linear map from free knots to the sampled current, rows = grid samples.
inline Eigen::MatrixXd sampling_matrix(std::size_t n_dof, double window_us, double dt_us = 1.0) {
  const std::size_t m = grid_size(window_us, dt_us);
  const std::size_t n_free = n_dof - 2;
  Eigen::MatrixXd b(m, n_free);
  std::vector<double> unit(n_dof, 0.0);
  for (std::size_t k = 0; k < n_free; ++k) {
    std::fill(unit.begin(), unit.end(), 0.0);
    unit[k + 1] = 1.0;
    const UniformNaturalSpline s(unit, window_us);
    for (std::size_t j = 0; j < m; ++j) b(j, k) = s(static_cast<double>(j) * dt_us);
    b(0, k) = 0.0;
    b(m - 1, k) = 0.0;
  }
  return b;
}

}  // namespace tmsopt
