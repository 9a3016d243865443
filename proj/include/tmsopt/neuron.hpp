#pragma once

// Single-compartment nonlinear axon model with fast sodium, persistent sodium,
// slow potassium and leak channels, driven by an intracellular current that is
// proportional to the induced electric field.

#include <tmsopt/detail/dual.hpp>
#include <tmsopt/error.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <tuple>
#include <type_traits>
#include <utility>
#include <vector>

namespace tmsopt {

/// Coefficients of a voltage-dependent rate function (1/ms, mV, mV).
struct RateCoeffs {
  double a = 0.0;
  double b = 0.0;
  double c = 1.0;
};

/// Channel model parameters. Defaults are the nominal human motor-axon node
/// (36 degC). Conductances in mS/cm^2, potentials in mV, capacitance in uF/cm^2.
struct NeuronParams {
  double capacitance = 2.0;
  double g_naf = 3000.0;
  double g_nap = 10.0;
  double g_ks = 80.0;
  double g_leak = 7.0;
  double e_na = 50.0;
  double e_k = -90.0;
  double e_leak = -75.16;
  double temperature = 36.0;
  /// Injected current density per field strength, (uA/cm^2)/(V/m).
  double coupling = 10.0;

  // alpha = a (V+b) / (1 - exp(-(V+b)/c))
  RateCoeffs m_alpha{1.86, 21.4, 10.3};
  // beta = a (-(V+b)) / (1 - exp((V+b)/c))
  RateCoeffs m_beta{0.086, 25.7, 9.16};
  // alpha = a (-(V+b)) / (1 - exp((V+b)/c))
  RateCoeffs h_alpha{0.062, 114.0, 11.0};
  // beta = a / (1 + exp(-(V+b)/c))
  RateCoeffs h_beta{2.3, 31.8, 13.4};
  RateCoeffs p_alpha{0.01, 27.0, 10.2};
  RateCoeffs p_beta{0.00025, 34.0, 10.0};
  // alpha, beta = a / (exp((V - s_vshift + b)/c) + 1)
  RateCoeffs s_alpha{0.3, -27.0, -5.0};
  RateCoeffs s_beta{0.03, 10.0, -1.0};
  double s_vshift = -80.0;
  /// Depolarizing shift (mV) applied to the m, h and p rate functions.
  double na_vshift = 20.0;

  // Rate scaling q = base^((T - ref)/10) for the (m, p), h and s gates.
  double q10_mp_base = 2.2;
  double q10_mp_ref = 20.0;
  double q10_h_base = 2.9;
  double q10_h_ref = 20.0;
  double q10_s_base = 3.0;
  double q10_s_ref = 36.0;

  void validate() const {
    const auto positive = [](double x, const char* name) {
      if (!(x > 0.0) || !std::isfinite(x))
        throw Error(ErrorKind::invalid_parameters,
                    std::string("neuron parameter must be positive: ") + name);
    };
    positive(capacitance, "capacitance");
    positive(g_naf, "g_naf");
    positive(g_nap, "g_nap");
    positive(g_ks, "g_ks");
    positive(g_leak, "g_leak");
    positive(coupling, "coupling");
    positive(q10_mp_base, "q10_mp_base");
    positive(q10_h_base, "q10_h_base");
    positive(q10_s_base, "q10_s_base");
    for (const auto* r : {&m_alpha, &m_beta, &h_alpha, &h_beta, &p_alpha,
                          &p_beta, &s_alpha, &s_beta}) {
      if (!std::isfinite(r->a) || !std::isfinite(r->b) || !std::isfinite(r->c) ||
          r->c == 0.0 || r->a <= 0.0)
        throw Error(ErrorKind::invalid_parameters, "invalid rate coefficients");
    }
  }
};

/// Membrane state: potential (mV) and gates m, h, p, s.
template <class T>
struct MembraneState {
  T v{};
  T m{};
  T h{};
  T p{};
  T s{};
};

struct MembraneTrace {
  double dt_us = 1.0;
  std::vector<double> v_m;
  MembraneState<double> final_state;
};

struct ActivationResult {
  bool activated = false;
  double peak_vm = 0.0;
  double peak_time_us = 0.0;
  double margin = 0.0;
};

/// Smooth peak of a trace and its gradient with respect to the field samples.
struct PeakSensitivity {
  double smooth_peak = 0.0;
  double hard_peak = 0.0;
  std::vector<double> d_peak_d_efield;
};

/// Integration options. The stimulus is held constant over each grid step and
/// optionally split into equal substeps.
struct SimulationOptions {
  int substeps = 1;
  double tail_us = 2000.0;
  double divergence_mV = 500.0;
};

class MembraneModel {
 public:
  explicit MembraneModel(NeuronParams params = {}) : p_(params) {
    p_.validate();
    q_mp_ = std::pow(p_.q10_mp_base, (p_.temperature - p_.q10_mp_ref) / 10.0);
    q_h_ = std::pow(p_.q10_h_base, (p_.temperature - p_.q10_h_ref) / 10.0);
    q_s_ = std::pow(p_.q10_s_base, (p_.temperature - p_.q10_s_ref) / 10.0);
    rest_ = solve_rest();
    build_table(1e-3);
  }

  [[nodiscard]] const NeuronParams& params() const noexcept { return p_; }
  [[nodiscard]] const MembraneState<double>& rest_state() const noexcept { return rest_; }
  [[nodiscard]] double resting_potential() const noexcept { return rest_.v; }

  /// Total ionic current density (uA/cm^2, outward positive) with gates at
  /// their steady state for potential v.
  [[nodiscard]] double steady_state_current(double v) const {
    const auto st = steady_state(v);
    return ionic_current(st);
  }

  [[nodiscard]] double ionic_current(const MembraneState<double>& st) const {
    const double m3 = st.m * st.m * st.m;
    const double p3 = st.p * st.p * st.p;
    return p_.g_naf * m3 * st.h * (st.v - p_.e_na) + p_.g_nap * p3 * (st.v - p_.e_na) +
           p_.g_ks * st.s * (st.v - p_.e_k) + p_.g_leak * (st.v - p_.e_leak);
  }

  [[nodiscard]] MembraneState<double> steady_state(double v) const {
    MembraneState<double> st;
    st.v = v;
    const auto set = [](double alpha, double beta) { return alpha / (alpha + beta); };
    st.m = set(m_alpha(v), m_beta(v));
    st.h = set(h_alpha(v), h_beta(v));
    st.p = set(p_alpha(v), p_beta(v));
    st.s = set(s_alpha(v), s_beta(v));
    return st;
  }

  /// Advances the state by dt_ms with constant injected current u (uA/cm^2).
  /// Gates use exponential Euler at the old potential; the potential update is
  /// linearly implicit in the new conductances.
  template <class T, class U>
  MembraneState<T> step(const MembraneState<T>& y, const U& u, double dt_ms) const {
    using detail::exp;
    using std::exp;
    MembraneState<T> n;
    const auto advance = [&](const T& x, const T& alpha, const T& beta) {
      const T rate = alpha + beta;
      const T inf = alpha / rate;
      return inf + (x - inf) * exp(-(rate * dt_ms));
    };
    n.m = advance(y.m, m_alpha(y.v), m_beta(y.v));
    n.h = advance(y.h, h_alpha(y.v), h_beta(y.v));
    n.p = advance(y.p, p_alpha(y.v), p_beta(y.v));
    n.s = advance(y.s, s_alpha(y.v), s_beta(y.v));
    return close_potential(y, n, u, dt_ms);
  }

  /// Integrates from rest with current coupling * efield[j] on step j, then
  /// continues for the tail with no stimulus.
  [[nodiscard]] MembraneTrace simulate(std::span<const double> efield, double dt_us,
                                       const SimulationOptions& opt = {}) const {
    MembraneTrace out;
    out.dt_us = dt_us;
    const std::size_t tail = tail_steps(dt_us, opt);
    const std::size_t steps = efield.size() + tail;
    out.v_m.resize(steps + 1);
    MembraneState<double> y = rest_;
    out.v_m[0] = y.v;
    const int sub = std::max(1, opt.substeps);
    const double h = dt_us * 1e-3 / sub;
    for (std::size_t j = 0; j < steps; ++j) {
      const double u = j < efield.size() ? p_.coupling * efield[j] : 0.0;
      for (int k = 0; k < sub; ++k) y = advance(y, u, h);
      if (!(std::abs(y.v) <= opt.divergence_mV))
        throw Error(ErrorKind::integration_failure,
                    "membrane potential diverged at step " + std::to_string(j));
      out.v_m[j + 1] = y.v;
    }
    out.final_state = y;
    return out;
  }

  /// Peak potential for the field scaled by `scale`. Integration stops at the
  /// first sample above stop_above, which is then returned.
  [[nodiscard]] double peak_potential(
      std::span<const double> efield, double dt_us, double scale = 1.0,
      const SimulationOptions& opt = {},
      double stop_above = std::numeric_limits<double>::infinity()) const {
    const std::size_t steps = efield.size() + tail_steps(dt_us, opt);
    const int sub = std::max(1, opt.substeps);
    const double h = dt_us * 1e-3 / sub;
    const double gain = p_.coupling * scale;
    MembraneState<double> y = rest_;
    double peak = y.v;
    for (std::size_t j = 0; j < steps; ++j) {
      const double u = j < efield.size() ? gain * efield[j] : 0.0;
      for (int k = 0; k < sub; ++k) y = advance(y, u, h);
      if (!(std::abs(y.v) <= opt.divergence_mV))
        throw Error(ErrorKind::integration_failure,
                    "membrane potential diverged at step " + std::to_string(j));
      peak = std::max(peak, y.v);
      if (peak > stop_above) break;
    }
    return peak;
  }

  /// Log-sum-exp peak of the simulated potential, sharpness beta (1/mV), with
  /// its exact gradient with respect to every field sample (reverse sweep over
  /// the discrete integrator). beta = inf selects the hard maximum.
  [[nodiscard]] PeakSensitivity peak_sensitivity(std::span<const double> efield,
                                                 double dt_us, double beta,
                                                 const SimulationOptions& opt = {}) const {
    const auto states = forward_states(efield, dt_us, opt);
    PeakSensitivity out;
    double vmax = -std::numeric_limits<double>::infinity();
    for (const auto& st : states) vmax = std::max(vmax, st.v);
    out.hard_peak = vmax;
    std::vector<double> w(states.size(), 0.0);
    if (!std::isfinite(beta)) {
      std::size_t arg = 0;
      while (states[arg].v != vmax) ++arg;
      w[arg] = 1.0;
      out.smooth_peak = vmax;
    } else {
      double z = 0.0;
      for (std::size_t k = 0; k < states.size(); ++k) {
        w[k] = std::exp(beta * (states[k].v - vmax));
        z += w[k];
      }
      for (auto& x : w) x /= z;
      out.smooth_peak = vmax + std::log(z) / beta;
    }
    out.d_peak_d_efield = reverse_sweep(efield, dt_us, opt, states, w);
    return out;
  }

  /// Gradient of the potential at sample k (0 = initial state) with respect
  /// to every field sample.
  [[nodiscard]] std::vector<double> potential_sensitivity(std::span<const double> efield,
                                                          double dt_us, std::size_t k,
                                                          const SimulationOptions& opt = {}) const {
    const auto states = forward_states(efield, dt_us, opt);
    if (k >= states.size()) throw Error(ErrorKind::invalid_parameters, "sample out of range");
    std::vector<double> w(states.size(), 0.0);
    w[k] = 1.0;
    return reverse_sweep(efield, dt_us, opt, states, w);
  }

 private:
  NeuronParams p_;
  double q_mp_ = 1.0;
  double q_h_ = 1.0;
  double q_s_ = 1.0;
  MembraneState<double> rest_;

  std::vector<MembraneState<double>> forward_states(std::span<const double> efield,
                                                    double dt_us,
                                                    const SimulationOptions& opt) const {
    const std::size_t steps = efield.size() + tail_steps(dt_us, opt);
    const int sub = std::max(1, opt.substeps);
    const double h = dt_us * 1e-3 / sub;
    std::vector<MembraneState<double>> states(steps + 1);
    states[0] = rest_;
    for (std::size_t j = 0; j < steps; ++j) {
      const double u = j < efield.size() ? p_.coupling * efield[j] : 0.0;
      auto y = states[j];
      for (int k = 0; k < sub; ++k) y = advance(y, u, h);
      if (!(std::abs(y.v) <= opt.divergence_mV))
        throw Error(ErrorKind::integration_failure,
                    "membrane potential diverged at step " + std::to_string(j));
      states[j + 1] = y;
    }
    return states;
  }

  // Adjoint of sum_k w[k] * v[k] through the integrator, with exact per-step
  // Jacobians from forward-mode duals.
  std::vector<double> reverse_sweep(std::span<const double> efield, double dt_us,
                                    const SimulationOptions& opt,
                                    const std::vector<MembraneState<double>>& states,
                                    const std::vector<double>& w) const {
    const std::size_t steps = states.size() - 1;
    const int sub = std::max(1, opt.substeps);
    const double h = dt_us * 1e-3 / sub;
    std::vector<double> grad(efield.size(), 0.0);
    using D = detail::Dual<6>;
    std::array<double, 5> lam{w[steps], 0.0, 0.0, 0.0, 0.0};
    // the adjoint is identically zero after the last weighted sample
    std::size_t last = steps;
    while (last > 0 && w[last] == 0.0) --last;
    lam[0] = w[last];
    for (std::size_t j = last; j-- > 0;) {
      const auto& s0 = states[j];
      MembraneState<D> y{D::variable(s0.v, 0), D::variable(s0.m, 1), D::variable(s0.h, 2),
                         D::variable(s0.p, 3), D::variable(s0.s, 4)};
      const double u = j < efield.size() ? p_.coupling * efield[j] : 0.0;
      const D ud = D::variable(u, 5);
      for (int k = 0; k < sub; ++k) y = advance(y, ud, h);
      const std::array<const D*, 5> rows{&y.v, &y.m, &y.h, &y.p, &y.s};
      std::array<double, 6> g{};
      for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 6; ++c) g[c] += lam[r] * rows[r]->d[c];
      if (j < efield.size()) grad[j] = g[5] * p_.coupling;
      lam = {g[0] + w[j], g[1], g[2], g[3], g[4]};
    }
    return grad;
  }

  // Gate kinetics (steady state and one-step decay factor per gate) for one
  // fixed step, as cubic Hermite interpolants on a uniform potential grid.
  struct GateTable {
    double h_ms = 0.0;
    double v_lo = -200.0;
    double dv = 0.05;
    std::size_t n = 0;
    // per node: 8 values then 8 derivatives scaled by dv
    std::vector<std::array<double, 16>> node;
  };
  GateTable table_;

  void build_table(double h_ms) {
    using D1 = detail::Dual<1>;
    table_.h_ms = h_ms;
    table_.n = static_cast<std::size_t>(std::llround(400.0 / table_.dv)) + 1;
    table_.node.resize(table_.n);
    for (std::size_t i = 0; i < table_.n; ++i) {
      const D1 v = D1::variable(table_.v_lo + static_cast<double>(i) * table_.dv, 0);
      const auto gates = kinetics(v, h_ms);
      for (std::size_t g = 0; g < 8; ++g) {
        table_.node[i][g] = gates[g].v;
        table_.node[i][8 + g] = gates[g].d[0] * table_.dv;
      }
    }
  }

  // {m_inf, m_decay, h_inf, h_decay, p_inf, p_decay, s_inf, s_decay}
  template <class T>
  std::array<T, 8> kinetics(const T& v, double dt_ms) const {
    using detail::exp;
    using std::exp;
    std::array<T, 8> k;
    const auto pair = [&](const T& alpha, const T& beta, std::size_t at) {
      const T rate = alpha + beta;
      k[at] = alpha / rate;
      k[at + 1] = exp(-(rate * dt_ms));
    };
    pair(m_alpha(v), m_beta(v), 0);
    pair(h_alpha(v), h_beta(v), 2);
    pair(p_alpha(v), p_beta(v), 4);
    pair(s_alpha(v), s_beta(v), 6);
    return k;
  }

  template <class T>
  std::array<T, 8> lookup_kinetics(const T& v, double dt_ms) const {
    const double x = (detail::value_of(v) - table_.v_lo) / table_.dv;
    if (dt_ms != table_.h_ms || !(x >= 0.0) || x >= static_cast<double>(table_.n - 1))
      return kinetics(v, dt_ms);
    const auto i = static_cast<std::size_t>(x);
    const double t = x - static_cast<double>(i);
    const double t2 = t * t;
    const double t3 = t2 * t;
    const double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + t;
    const double h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
    const double inv = 1.0 / table_.dv;
    const double d00 = (6 * t2 - 6 * t) * inv, d10 = (3 * t2 - 4 * t + 1) * inv;
    const double d11 = (3 * t2 - 2 * t) * inv;
    const double* a = table_.node[i].data();
    const double* b = table_.node[i + 1].data();
    std::array<double, 8> f;
    std::array<double, 8> df;
    for (std::size_t g = 0; g < 8; ++g) {
      f[g] = h00 * a[g] + h10 * a[8 + g] + h01 * b[g] + h11 * b[8 + g];
      df[g] = d00 * (a[g] - b[g]) + d10 * a[8 + g] + d11 * b[8 + g];
    }
    if constexpr (std::is_same_v<T, double>) {
      return f;
    } else {
      std::array<T, 8> k;
      for (std::size_t g = 0; g < 8; ++g) {
        k[g] = T(f[g]);
        for (std::size_t c = 0; c < k[g].d.size(); ++c) k[g].d[c] = df[g] * v.d[c];
      }
      return k;
    }
  }

  // Same update as step(), with tabulated kinetics when the step matches.
  template <class T, class U>
  MembraneState<T> advance(const MembraneState<T>& y, const U& u, double dt_ms) const {
    const auto k = lookup_kinetics(y.v, dt_ms);
    MembraneState<T> n;
    n.m = k[0] + (y.m - k[0]) * k[1];
    n.h = k[2] + (y.h - k[2]) * k[3];
    n.p = k[4] + (y.p - k[4]) * k[5];
    n.s = k[6] + (y.s - k[6]) * k[7];
    return close_potential(y, n, u, dt_ms);
  }

  template <class T, class U>
  MembraneState<T> close_potential(const MembraneState<T>& y, MembraneState<T> n, const U& u,
                                   double dt_ms) const {
    const T g_na = p_.g_naf * n.m * n.m * n.m * n.h + p_.g_nap * n.p * n.p * n.p;
    const T g_k = p_.g_ks * n.s;
    const T g_total = g_na + g_k + p_.g_leak;
    const T i_eq = g_na * p_.e_na + g_k * p_.e_k + p_.g_leak * p_.e_leak;
    const double c = p_.capacitance / dt_ms;
    n.v = (c * y.v + i_eq + u) / (c + g_total);
    return n;
  }

  static std::size_t tail_steps(double dt_us, const SimulationOptions& opt) {
    return static_cast<std::size_t>(std::llround(std::max(0.0, opt.tail_us) / dt_us));
  }

  // x / (1 - exp(-x)), continuous through x = 0.
  template <class T>
  static T linoid(const T& x) {
    using detail::exp;
    using std::exp;
    if (std::abs(detail::value_of(x)) < 1e-4) return 1.0 + x * 0.5 + x * x / 12.0;
    return x / (1.0 - exp(-x));
  }

  template <class T>
  T m_alpha(const T& v) const {
    return q_mp_ * p_.m_alpha.a * p_.m_alpha.c * linoid((v - p_.na_vshift + p_.m_alpha.b) / p_.m_alpha.c);
  }
  template <class T>
  T m_beta(const T& v) const {
    return q_mp_ * p_.m_beta.a * p_.m_beta.c * linoid(-(v - p_.na_vshift + p_.m_beta.b) / p_.m_beta.c);
  }
  template <class T>
  T p_alpha(const T& v) const {
    return q_mp_ * p_.p_alpha.a * p_.p_alpha.c * linoid((v - p_.na_vshift + p_.p_alpha.b) / p_.p_alpha.c);
  }
  template <class T>
  T p_beta(const T& v) const {
    return q_mp_ * p_.p_beta.a * p_.p_beta.c * linoid(-(v - p_.na_vshift + p_.p_beta.b) / p_.p_beta.c);
  }
  template <class T>
  T h_alpha(const T& v) const {
    return q_h_ * p_.h_alpha.a * p_.h_alpha.c * linoid(-(v - p_.na_vshift + p_.h_alpha.b) / p_.h_alpha.c);
  }
  template <class T>
  T h_beta(const T& v) const {
    using detail::exp;
    using std::exp;
    return q_h_ * p_.h_beta.a / (1.0 + exp(-(v - p_.na_vshift + p_.h_beta.b) / p_.h_beta.c));
  }
  template <class T>
  T s_alpha(const T& v) const {
    using detail::exp;
    using std::exp;
    return q_s_ * p_.s_alpha.a / (exp((v - p_.s_vshift + p_.s_alpha.b) / p_.s_alpha.c) + 1.0);
  }
  template <class T>
  T s_beta(const T& v) const {
    using detail::exp;
    using std::exp;
    return q_s_ * p_.s_beta.a / (exp((v - p_.s_vshift + p_.s_beta.b) / p_.s_beta.c) + 1.0);
  }

  // Resting potential: zero of the steady-state current, bracketed in
  // [-120, -40] mV and refined by bisection to machine precision.
  MembraneState<double> solve_rest() const {
    double lo = -120.0;
    double hi = -40.0;
    if (!(steady_state_current(lo) < 0.0 && steady_state_current(hi) > 0.0))
      throw Error(ErrorKind::invalid_parameters, "no resting potential in [-120, -40] mV");
    for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
      const double mid = 0.5 * (lo + hi);
      (steady_state_current(mid) < 0.0 ? lo : hi) = mid;
    }
    return steady_state(0.5 * (lo + hi));
  }
};

/// Activation iff the peak potential strictly exceeds the threshold.
inline ActivationResult check_activation(const MembraneTrace& trace, double v_threshold = 10.0) {
  ActivationResult r;
  if (trace.v_m.empty()) return r;
  const auto it = std::max_element(trace.v_m.begin(), trace.v_m.end());
  r.peak_vm = *it;
  r.peak_time_us = static_cast<double>(it - trace.v_m.begin()) * trace.dt_us;
  r.margin = r.peak_vm - v_threshold;
  r.activated = r.margin > 0.0;
  return r;
}


struct TitrationOptions {
  double v_threshold = 10.0;
  double rel_tol = 1e-3;
  /// Starting amplitude factor; 0 picks the one giving a 100 V/m field peak.
  double initial_scale = 1.0;
  int max_doublings = 15;
  bool verify_monotone = true;
  SimulationOptions sim;
};

struct TitrationResult {
  double scale = 0.0;        // smallest activating factor found (upper bracket)
  double lower = 0.0;        // largest non-activating factor found
  double peak_efield = 0.0;  // max |E| at the threshold scale, V/m
  int simulations = 0;
};

namespace detail {

inline double auto_scale(std::span<const double> efield) {
  double peak = 0.0;
  for (double e : efield) peak = std::max(peak, std::abs(e));
  if (!(peak > 0.0) || !std::isfinite(peak))
    throw Error(ErrorKind::non_excitable_shape, "field shape is identically zero");
  return 100.0 / peak;
}

// Brackets the activation threshold of a shape. Returns {lo, hi} with lo not
// activating and hi activating.
template <class Activates>
std::pair<double, double> bracket_threshold(Activates&& activates, double s0, int max_doublings) {
  // a start so strong that the integration breaks down counts as activating
  const auto starts_active = [&](double s) {
    try {
      return activates(s);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::integration_failure) throw;
      return true;
    }
  };
  if (starts_active(s0)) {
    double hi = s0;
    for (int i = 0; i < max_doublings; ++i) {
      const double lo = hi * 0.5;
      if (!starts_active(lo)) return {lo, hi};
      hi = lo;
    }
    throw Error(ErrorKind::titration_ambiguous, "activation persists at vanishing amplitude");
  }
  double lo = s0;
  for (int i = 0; i < max_doublings; ++i) {
    const double hi = lo * 2.0;
    bool act = false;
    try {
      act = activates(hi);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::integration_failure) throw;
      throw Error(ErrorKind::non_excitable_shape,
                  "no activation before the integration breaks down");
    }
    if (act) return {lo, hi};
    lo = hi;
  }
  throw Error(ErrorKind::non_excitable_shape, "no activation within the amplitude cap");
}

}  // namespace detail

/// Minimal amplitude factor on the field shape that activates the neuron,
/// by bisection on the binary activation check.
inline TitrationResult titrate_efield(const MembraneModel& model, std::span<const double> efield,
                                      double dt_us, const TitrationOptions& opt = {}) {
  if (!(opt.rel_tol > 0.0))
    throw Error(ErrorKind::invalid_parameters, "titration tolerance must be positive");
  TitrationResult r;
  const double s_auto = detail::auto_scale(efield);  // rejects an all-zero shape
  const double s0 = opt.initial_scale > 0.0 ? opt.initial_scale : s_auto;
  const auto activates = [&](double s) {
    ++r.simulations;
    return model.peak_potential(efield, dt_us, s, opt.sim, opt.v_threshold) > opt.v_threshold;
  };
  auto [lo, hi] = detail::bracket_threshold(activates, s0, opt.max_doublings);
  while (hi - lo > opt.rel_tol * hi) {
    const double mid = 0.5 * (lo + hi);
    (activates(mid) ? hi : lo) = mid;
  }
  if (opt.verify_monotone) {
    for (double f : {1.25, 2.0, 4.0}) {
      bool act = true;
      try {
        act = activates(hi * f);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::integration_failure) throw;
      }
      if (!act)
        throw Error(ErrorKind::titration_ambiguous,
                    "activation is not monotone in amplitude above the threshold");
    }
  }
  r.scale = hi;
  r.lower = lo;
  double peak = 0.0;
  for (double e : efield) peak = std::max(peak, std::abs(e));
  r.peak_efield = peak * hi;
  return r;
}

/// Threshold amplitude factor s* of a field shape (binary titration to a tight
/// tolerance) and the gradient of 1/s* with respect to every field sample.
///
/// Just above threshold the spike latency diverges logarithmically in the
/// distance from the threshold manifold, so level sets of the crossing time
/// are parallel to that manifold. The gradient is therefore taken from the
/// sensitivity of the potential at the first supra-threshold sample,
/// normalized by its derivative along the shape.
struct ThresholdSensitivity {
  double scale = 0.0;
  std::vector<double> d_inverse_scale;
  int simulations = 0;
};

inline ThresholdSensitivity threshold_sensitivity(const MembraneModel& model,
                                                  std::span<const double> efield, double dt_us,
                                                  double v_threshold = 10.0,
                                                  double scale_hint = 0.0,
                                                  const SimulationOptions& sim = {},
                                                  double rel_tol = 1e-9) {
  ThresholdSensitivity out;
  const auto activates = [&](double s) {
    ++out.simulations;
    return model.peak_potential(efield, dt_us, s, sim, v_threshold) > v_threshold;
  };
  double lo = 0.0;
  double hi = 0.0;
  if (scale_hint > 0.0) {
    // narrow warm-start bracket around a previous root
    const double a = scale_hint * (1.0 - 2e-3);
    const double b = scale_hint * (1.0 + 2e-3);
    if (activates(b)) {
      hi = b;
      if (!activates(a))
        lo = a;
      else
        hi = 0.0;
    }
  }
  if (hi == 0.0) {
    const double s0 = scale_hint > 0.0 ? scale_hint : detail::auto_scale(efield);
    std::tie(lo, hi) = detail::bracket_threshold(activates, s0, 20);
  }
  while (hi - lo > rel_tol * hi) {
    const double mid = 0.5 * (lo + hi);
    (activates(mid) ? hi : lo) = mid;
  }
  out.scale = hi;
  std::vector<double> e(efield.begin(), efield.end());
  for (auto& x : e) x *= hi;
  const auto trace = model.simulate(e, dt_us, sim);
  std::size_t k = 0;
  while (k < trace.v_m.size() && !(trace.v_m[k] > v_threshold)) ++k;
  if (k == trace.v_m.size())
    throw Error(ErrorKind::optimization_failed, "threshold bracket lost activation");
  const auto g = model.potential_sensitivity(e, dt_us, k, sim);
  double dv_ds = 0.0;  // derivative along the shape direction
  for (std::size_t j = 0; j < e.size(); ++j) dv_ds += g[j] * efield[j];
  out.simulations += 8;
  if (!(dv_ds > 0.0) || !std::isfinite(dv_ds))
    throw Error(ErrorKind::optimization_failed, "degenerate threshold sensitivity");
  out.d_inverse_scale.resize(e.size());
  for (std::size_t j = 0; j < e.size(); ++j) out.d_inverse_scale[j] = g[j] / (hi * dv_ds);
  return out;
}

}  // namespace tmsopt
