#include <tmsopt/analysis.hpp>
#include <tmsopt/pulses.hpp>
#include <tmsopt/signal.hpp>

#include <catch_amalgamated.hpp>

#include "support.hpp"

#include <cmath>
#include <complex>
#include <numbers>

using namespace tmsopt;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Steady-state gain of the filter on a sampled sinusoid, from the output's
// projection on the input frequency after the transient has died out.
double measured_gain(double f_hz, double dt_us, double cutoff_hz) {
  const double fs = 1e6 / dt_us;
  const std::size_t n = 200000;
  std::vector<double> x(n);
  for (std::size_t k = 0; k < n; ++k) x[k] = std::sin(2.0 * std::numbers::pi * f_hz * static_cast<double>(k) / fs);
  const auto y = butterworth_lowpass(x, dt_us, cutoff_hz);
  std::complex<double> acc = 0.0, ref = 0.0;
  for (std::size_t k = n / 2; k < n; ++k) {
    const auto e = std::polar(1.0, -2.0 * std::numbers::pi * f_hz * static_cast<double>(k) / fs);
    acc += y[k] * e;
    ref += x[k] * e;
  }
  return std::abs(acc) / std::abs(ref);
}

}  // namespace

TEST_CASE("biphasic reference has zero field integral") {
  ReferencePulseSpec s;
  s.kind = PulseKind::biphasic;
  s.period_us = 300.0;
  const auto p = synthesize(s);
  double area = 0.0, peak = 0.0;
  for (double e : p.efield) area += e, peak = std::max(peak, std::abs(e));
  REQUIRE(std::abs(area) < 1e-12 * peak * static_cast<double>(p.efield.size()));
}

TEST_CASE("monophasic reference has the configured voltage asymmetry") {
  const auto m = measure(synthesize(ReferencePulseSpec{}));
  REQUIRE_THAT(m.r_v, WithinAbs(3.3, 0.3));
  REQUIRE(m.i_min >= 0.0);
}

TEST_CASE("rectangular reference widths and balance") {
  ReferencePulseSpec s;
  s.kind = PulseKind::rectangular_asym;
  REQUIRE(s.negative_width_us() == 800.0);
  const auto p = synthesize(s);
  std::size_t pos = 0, neg = 0;
  double volt_seconds = 0.0;
  for (double v : p.voltage) {
    pos += v > 0.0;
    neg += v < 0.0;
    volt_seconds += v;
  }
  REQUIRE(pos == 40);
  REQUIRE(neg == 800);
  REQUIRE(std::abs(volt_seconds) < 1e-9);
}

TEST_CASE("reference pulses start and end at zero current") {
  for (auto k : {PulseKind::monophasic, PulseKind::biphasic, PulseKind::rectangular_asym}) {
    ReferencePulseSpec s;
    s.kind = k;
    const auto p = synthesize(s);
    REQUIRE(p.current.size() == 3001);
    REQUIRE(p.current.front() == 0.0);
    REQUIRE(p.current.back() == 0.0);
  }
}

TEST_CASE("monophasic decay constant follows from period and damping") {
  ReferencePulseSpec s;
  REQUIRE_THAT(monophasic_tau_us(s), WithinRel(280.0 * 3.3 / (2.0 * std::numbers::pi), 1e-15));
  // the decay starts with damping times the rise slope at the peak
  const auto p = synthesize(s);
  const auto [lo, hi] = std::minmax_element(p.voltage.begin(), p.voltage.end());
  REQUIRE_THAT(-*lo / *hi, WithinRel(s.damping, 2e-2));
}

TEST_CASE("pulses that do not fit the window are rejected") {
  ReferencePulseSpec s;
  s.kind = PulseKind::rectangular_asym;
  s.v_negative = -10.0;  // 8 ms return
  REQUIRE(error_kind([&] { (void)synthesize(s); }) == ErrorKind::window_overflow);
  s = ReferencePulseSpec{};
  s.onset_us = 2900.0;
  REQUIRE(error_kind([&] { (void)synthesize(s); }) == ErrorKind::window_overflow);
}

TEST_CASE("invalid reference specifications are rejected") {
  ReferencePulseSpec s;
  s.damping = 1.5;
  REQUIRE(error_kind([&] { (void)synthesize(s); }) == ErrorKind::invalid_parameters);
  s = ReferencePulseSpec{};
  s.kind = PulseKind::rectangular_asym;
  s.v_negative = 100.0;
  REQUIRE(error_kind([&] { (void)synthesize(s); }) == ErrorKind::invalid_parameters);
  s = ReferencePulseSpec{};
  s.period_us = 0.0;
  REQUIRE(error_kind([&] { (void)synthesize(s); }) == ErrorKind::invalid_parameters);
}

TEST_CASE("low-pass passes a constant trace unchanged") {
  const std::vector<double> x(1000, 3.25);
  for (double y : butterworth_lowpass(x, 1.0)) REQUIRE_THAT(y, WithinRel(3.25, 1e-14));
  REQUIRE(butterworth_lowpass(std::vector<double>{}, 1.0).empty());
}

TEST_CASE("low-pass coefficients match the reference design") {
  // scipy.signal.butter(1, 200e3, fs=1e6): b = [0.42080778, 0.42080778], a = [1, -0.15838444]
  std::vector<double> impulse(5, 0.0);
  impulse[1] = 1.0;
  const auto h = butterworth_lowpass(impulse, 1.0);
  const double b0 = 0.4208077798377318, a1 = -0.15838444032453627;
  REQUIRE(h[0] == 0.0);
  REQUIRE_THAT(h[1], WithinRel(b0, 1e-14));
  REQUIRE_THAT(h[2], WithinRel(b0 - a1 * b0, 1e-14));
  REQUIRE_THAT(h[3], WithinRel(-a1 * (b0 - a1 * b0), 1e-14));
}

TEST_CASE("low-pass is 3 dB down at the cutoff") {
  // fs = 1 MHz and 100 MHz; reference |H(200 kHz)| = 0.70710678
  REQUIRE_THAT(measured_gain(200e3, 1.0, 200e3), WithinRel(std::sqrt(0.5), 1e-2));
  REQUIRE_THAT(measured_gain(200e3, 0.01, 200e3), WithinRel(std::sqrt(0.5), 1e-2));
}

TEST_CASE("low-pass attenuates a decade above the cutoff") {
  // fs = 100 MHz, reference |H(2 MHz)| = 0.099375 (-20.05 dB)
  const double g = measured_gain(2e6, 0.01, 200e3);
  REQUIRE_THAT(g, WithinRel(0.0993753319752772, 1e-2));
  REQUIRE(20.0 * std::log10(g) <= -19.0);
}

TEST_CASE("cutoff must lie below Nyquist") {
  const std::vector<double> x(10, 1.0);
  REQUIRE(error_kind([&] { (void)butterworth_lowpass(x, 1.0, 0.0); }) == ErrorKind::invalid_cutoff);
  REQUIRE(error_kind([&] { (void)butterworth_lowpass(x, 1.0, 500e3); }) == ErrorKind::invalid_cutoff);
  REQUIRE(error_kind([&] { (void)butterworth_lowpass(x, 1.0, -1.0); }) == ErrorKind::invalid_cutoff);
}
