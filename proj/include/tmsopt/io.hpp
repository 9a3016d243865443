#pragma once

// File formats: waveform CSV, neuron parameter JSON, run manifest JSON and
// run result JSON. Every JSON document carries schema_version.

#include <tmsopt/analysis.hpp>
#include <tmsopt/error.hpp>
#include <tmsopt/neuron.hpp>
#include <tmsopt/optimizer.hpp>
#include <tmsopt/waveform.hpp>

#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace tmsopt {

inline constexpr int schema_version = 1;

using nlohmann::json;

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r'))
      f.remove_suffix(1);
  }
  return out;
}

inline double parse_number(std::string_view s, std::size_t line, std::string_view field) {
  double v = 0.0;
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v))
    throw Error(ErrorKind::parse_error, "line " + std::to_string(line) + ", field " +
                                            std::string(field) + ": not a finite number");
  return v;
}

}  // namespace detail

/// Writes time_us,current_A,voltage_V,efield_Vpm with round-trip precision.
/// The derived columns have one fewer sample and are empty on the last row.
inline void write_waveform_csv(std::ostream& os, const SampledPulse& p) {
  os << "time_us,current_A,voltage_V,efield_Vpm\n";
  for (std::size_t j = 0; j < p.current.size(); ++j) {
    os << detail::format_double(static_cast<double>(j) * p.dt_us) << ','
       << detail::format_double(p.current[j]) << ',';
    if (j < p.voltage.size())
      os << detail::format_double(p.voltage[j]) << ',' << detail::format_double(p.efield[j]);
    else
      os << ',';
    os << '\n';
  }
}

inline void write_waveform_csv(const std::string& path, const SampledPulse& p) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::io_error, "cannot write " + path);
  write_waveform_csv(os, p);
}

/// Reads a current trace (columns located by header name, others ignored)
/// and resamples it linearly onto a uniform grid starting at the first time.
/// Values at grid-aligned input times are reproduced exactly.
inline SampledPulse read_waveform_csv(std::istream& is, const CoilParams& coil = {},
                                      double dt_us = 1.0) {
  std::string line;
  std::size_t line_no = 0;
  int time_col = -1;
  int current_col = -1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto head = detail::split_csv(line);
    for (std::size_t c = 0; c < head.size(); ++c) {
      if (head[c] == "time_us") time_col = static_cast<int>(c);
      if (head[c] == "current_A") current_col = static_cast<int>(c);
    }
    break;
  }
  if (time_col < 0 || current_col < 0)
    throw Error(ErrorKind::parse_error,
                "line " + std::to_string(line_no) + ": header needs time_us and current_A");
  std::vector<double> t, i;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = detail::split_csv(line);
    const auto need = static_cast<std::size_t>(std::max(time_col, current_col));
    if (f.size() <= need)
      throw Error(ErrorKind::parse_error, "line " + std::to_string(line_no) + ": missing fields");
    t.push_back(detail::parse_number(f[static_cast<std::size_t>(time_col)], line_no, "time_us"));
    i.push_back(
        detail::parse_number(f[static_cast<std::size_t>(current_col)], line_no, "current_A"));
    if (t.size() > 1 && !(t.back() > t[t.size() - 2]))
      throw Error(ErrorKind::parse_error,
                  "line " + std::to_string(line_no) + ", field time_us: times must increase");
  }
  if (t.size() < 2) throw Error(ErrorKind::parse_error, "waveform needs at least two samples");
  const double span = t.back() - t.front();
  const auto m = static_cast<std::size_t>(std::floor(span / dt_us + 1e-9)) + 1;
  std::vector<double> current(m);
  std::size_t k = 0;
  for (std::size_t j = 0; j < m; ++j) {
    const double tj = t.front() + static_cast<double>(j) * dt_us;
    while (k + 2 < t.size() && t[k + 1] <= tj) ++k;
    const double u = std::clamp((tj - t[k]) / (t[k + 1] - t[k]), 0.0, 1.0);
    current[j] = u == 0.0 ? i[k] : (u == 1.0 ? i[k + 1] : i[k] + u * (i[k + 1] - i[k]));
  }
  return SampledPulse::from_current(std::move(current), dt_us, coil);
}

inline SampledPulse read_waveform_csv(const std::string& path, const CoilParams& coil = {},
                                      double dt_us = 1.0) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::io_error, "cannot read " + path);
  return read_waveform_csv(is, coil, dt_us);
}

inline std::string pulse_metrics_csv_header() {
  return "t_init_us,tau_init_us,fit_r2_init,t_rise_us,t_fall_us,t_pulse_us,i_max_A,i_min_A,"
         "v_hat_max_V,v_hat_min_V,r_I,r_V,energy_J,four_phases";
}

inline std::string pulse_metrics_csv_row(const PulseMetrics& m) {
  std::ostringstream os;
  for (double x : {m.t_init_us, m.tau_init_us, m.fit_r2_init, m.t_rise_us, m.t_fall_us,
                   m.t_pulse_us, m.i_max, m.i_min, m.v_max, m.v_min, m.r_i, m.r_v, m.energy})
    os << detail::format_double(x) << ',';
  os << (m.four_phases ? 1 : 0);
  return os.str();
}

/// One row per optimized condition: limits and run identity, then metrics.
inline std::string metrics_csv_header() {
  return "v_max_V,v_min_V,repeat,seed," + pulse_metrics_csv_header();
}

inline std::string metrics_csv_row(const VoltageLimits& lim, int repeat, std::uint64_t seed,
                                   const PulseMetrics& m) {
  return detail::format_double(lim.v_max()) + ',' + detail::format_double(lim.v_min()) + ',' +
         std::to_string(repeat) + ',' + std::to_string(seed) + ',' + pulse_metrics_csv_row(m);
}

// ---------------------------------------------------------------------------
// JSON helpers

namespace detail {

inline const json& require(const json& j, const std::string& key, const std::string& ctx) {
  if (!j.is_object() || !j.contains(key))
    throw Error(ErrorKind::parse_error, ctx + ": missing field '" + key + "'");
  return j.at(key);
}

inline double require_number(const json& j, const std::string& key, const std::string& ctx) {
  const auto& v = require(j, key, ctx);
  if (!v.is_number())
    throw Error(ErrorKind::parse_error, ctx + ": field '" + key + "' must be a number");
  return v.get<double>();
}

inline long long require_integer(const json& j, const std::string& key, const std::string& ctx) {
  const auto& v = require(j, key, ctx);
  if (!v.is_number_integer())
    throw Error(ErrorKind::parse_error, ctx + ": field '" + key + "' must be an integer");
  return v.get<long long>();
}

inline void check_schema(const json& j, const std::string& ctx) {
  if (!j.is_object()) throw Error(ErrorKind::parse_error, ctx + ": document must be an object");
  if (require_integer(j, "schema_version", ctx) != schema_version)
    throw Error(ErrorKind::parse_error, ctx + ": unsupported schema_version");
}

// JSON has no inf/nan; undefined values become null.
inline json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline json parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::io_error, "cannot read " + path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::parse_error, path + ": " + e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Neuron parameters

namespace detail {

struct RateKey {
  const char* name;
  RateCoeffs NeuronParams::*member;
  const char* a_key;
};

inline constexpr RateKey rate_keys[] = {
    {"m_alpha", &NeuronParams::m_alpha, "a_per_ms_per_mV"},
    {"m_beta", &NeuronParams::m_beta, "a_per_ms_per_mV"},
    {"h_alpha", &NeuronParams::h_alpha, "a_per_ms_per_mV"},
    {"h_beta", &NeuronParams::h_beta, "a_per_ms"},
    {"p_alpha", &NeuronParams::p_alpha, "a_per_ms_per_mV"},
    {"p_beta", &NeuronParams::p_beta, "a_per_ms_per_mV"},
    {"s_alpha", &NeuronParams::s_alpha, "a_per_ms"},
    {"s_beta", &NeuronParams::s_beta, "a_per_ms"},
};

struct ScalarKey {
  const char* name;
  double NeuronParams::*member;
};

inline constexpr ScalarKey scalar_keys[] = {
    {"capacitance_uF_per_cm2", &NeuronParams::capacitance},
    {"g_naf_mS_per_cm2", &NeuronParams::g_naf},
    {"g_nap_mS_per_cm2", &NeuronParams::g_nap},
    {"g_ks_mS_per_cm2", &NeuronParams::g_ks},
    {"g_leak_mS_per_cm2", &NeuronParams::g_leak},
    {"e_na_mV", &NeuronParams::e_na},
    {"e_k_mV", &NeuronParams::e_k},
    {"e_leak_mV", &NeuronParams::e_leak},
    {"temperature_degC", &NeuronParams::temperature},
    {"coupling_uA_per_cm2_per_Vpm", &NeuronParams::coupling},
    {"s_vshift_mV", &NeuronParams::s_vshift},
    {"na_vshift_mV", &NeuronParams::na_vshift},
    {"q10_mp_base", &NeuronParams::q10_mp_base},
    {"q10_mp_ref_degC", &NeuronParams::q10_mp_ref},
    {"q10_h_base", &NeuronParams::q10_h_base},
    {"q10_h_ref_degC", &NeuronParams::q10_h_ref},
    {"q10_s_base", &NeuronParams::q10_s_base},
    {"q10_s_ref_degC", &NeuronParams::q10_s_ref},
};

}  // namespace detail

inline json neuron_params_to_json(const NeuronParams& p) {
  json j;
  j["schema_version"] = schema_version;
  for (const auto& k : detail::scalar_keys) j[k.name] = p.*(k.member);
  for (const auto& r : detail::rate_keys) {
    const RateCoeffs& c = p.*(r.member);
    j[r.name] = {{r.a_key, c.a}, {"b_mV", c.b}, {"c_mV", c.c}};
  }
  return j;
}

/// Every key is required and unknown keys are rejected, so a typo cannot
/// silently fall back to a default.
inline NeuronParams neuron_params_from_json(const json& j) {
  const std::string ctx = "neuron parameters";
  detail::check_schema(j, ctx);
  NeuronParams p;
  std::size_t known = 1;
  for (const auto& k : detail::scalar_keys) {
    p.*(k.member) = detail::require_number(j, k.name, ctx);
    ++known;
  }
  for (const auto& r : detail::rate_keys) {
    const auto& block = detail::require(j, r.name, ctx);
    const std::string sub = ctx + "." + r.name;
    RateCoeffs& c = p.*(r.member);
    c.a = detail::require_number(block, r.a_key, sub);
    c.b = detail::require_number(block, "b_mV", sub);
    c.c = detail::require_number(block, "c_mV", sub);
    if (block.size() != 3) throw Error(ErrorKind::parse_error, sub + ": unexpected fields");
    ++known;
  }
  if (j.size() != known) {
    for (const auto& [key, value] : j.items()) {
      bool found = key == "schema_version";
      for (const auto& k : detail::scalar_keys) found = found || key == k.name;
      for (const auto& r : detail::rate_keys) found = found || key == r.name;
      if (!found) throw Error(ErrorKind::parse_error, ctx + ": unknown field '" + key + "'");
    }
  }
  p.validate();
  return p;
}

inline NeuronParams load_neuron_params(const std::string& path) {
  return neuron_params_from_json(detail::parse_file(path));
}

// ---------------------------------------------------------------------------
// Run manifest

struct ManifestEntry {
  VoltageLimits limits;
  int repeats = 1;
  std::uint64_t seed = 1;

  /// Seed of repeat r; distinct for every repeat of the entry.
  [[nodiscard]] std::uint64_t repeat_seed(int r) const noexcept {
    return seed + static_cast<std::uint64_t>(r);
  }
};

struct RunManifest {
  std::vector<ManifestEntry> entries;
  json swarm_overrides = json::object();
  std::string neuron_params_path;  // empty = built-in defaults
};

inline void apply_swarm_overrides(SwarmConfig& s, const json& j) {
  const std::string ctx = "manifest.swarm";
  for (const auto& [key, value] : j.items()) {
    const auto num = [&] { return detail::require_number(j, key, ctx); };
    const auto integer = [&] { return static_cast<int>(detail::require_integer(j, key, ctx)); };
    if (key == "n_particles") s.n_particles = integer();
    else if (key == "inertia") s.inertia = num();
    else if (key == "c1") s.c1 = num();
    else if (key == "c2") s.c2 = num();
    else if (key == "dof_min") s.dof_min = integer();
    else if (key == "dof_max") s.dof_max = integer();
    else if (key == "dof_increment") s.dof_increment = integer();
    else if (key == "dof_cap") s.dof_cap = integer();
    else if (key == "max_iterations") s.max_iterations = integer();
    else if (key == "restart_noise_scale") s.restart_noise_scale = num();
    else if (key == "local_evaluations") s.local_evaluations = integer();
    else if (key == "threads") s.threads = integer();
    else if (key == "literal_initial_sd") {
      if (!value.is_boolean())
        throw Error(ErrorKind::parse_error, ctx + ": field '" + key + "' must be a boolean");
      s.literal_initial_sd = value.get<bool>();
    } else {
      throw Error(ErrorKind::parse_error, ctx + ": unknown field '" + key + "'");
    }
  }
  s.validate();
}

inline RunManifest manifest_from_json(const json& j) {
  detail::check_schema(j, "manifest");
  RunManifest m;
  const auto& conds = detail::require(j, "conditions", "manifest");
  if (!conds.is_array() || conds.empty())
    throw Error(ErrorKind::parse_error, "manifest: 'conditions' must be a non-empty array");
  const long long default_repeats =
      j.contains("repeats") ? detail::require_integer(j, "repeats", "manifest") : 1;
  const long long default_seed =
      j.contains("seed") ? detail::require_integer(j, "seed", "manifest") : 1;
  for (std::size_t c = 0; c < conds.size(); ++c) {
    const std::string ctx = "manifest.conditions[" + std::to_string(c) + "]";
    const auto& e = conds[c];
    const double vmax = detail::require_number(e, "v_max_V", ctx);
    const double vmin = detail::require_number(e, "v_min_V", ctx);
    if (!(vmin < 0.0 && vmax > 0.0))
      throw Error(ErrorKind::parse_error, ctx + ": need v_min_V < 0 < v_max_V");
    const long long reps = e.contains("repeats") ? detail::require_integer(e, "repeats", ctx)
                                                 : default_repeats;
    const long long seed = e.contains("seed") ? detail::require_integer(e, "seed", ctx)
                                              : default_seed;
    if (reps < 1) throw Error(ErrorKind::parse_error, ctx + ": field 'repeats' must be >= 1");
    if (seed < 0) throw Error(ErrorKind::parse_error, ctx + ": field 'seed' must be >= 0");
    m.entries.push_back({VoltageLimits(vmax, vmin), static_cast<int>(reps),
                         static_cast<std::uint64_t>(seed)});
  }
  if (j.contains("swarm")) {
    m.swarm_overrides = j.at("swarm");
    if (!m.swarm_overrides.is_object())
      throw Error(ErrorKind::parse_error, "manifest: 'swarm' must be an object");
    SwarmConfig probe;
    apply_swarm_overrides(probe, m.swarm_overrides);
  }
  if (j.contains("neuron_params")) {
    const auto& np = j.at("neuron_params");
    if (!np.is_string())
      throw Error(ErrorKind::parse_error, "manifest: field 'neuron_params' must be a path");
    m.neuron_params_path = np.get<std::string>();
  }
  return m;
}

/// A relative neuron_params path is taken relative to the manifest file.
inline RunManifest load_manifest(const std::string& path) {
  auto m = manifest_from_json(detail::parse_file(path));
  if (!m.neuron_params_path.empty() && std::filesystem::path(m.neuron_params_path).is_relative())
    m.neuron_params_path =
        (std::filesystem::path(path).parent_path() / m.neuron_params_path).string();
  return m;
}

// ---------------------------------------------------------------------------
// Run results

inline json swarm_to_json(const SwarmConfig& s) {
  return {{"n_particles", s.n_particles},
          {"inertia", s.inertia},
          {"c1", s.c1},
          {"c2", s.c2},
          {"dof_min", s.dof_min},
          {"dof_max", s.dof_max},
          {"dof_increment", s.dof_increment},
          {"dof_cap", s.dof_cap},
          {"max_iterations", s.max_iterations},
          {"restart_noise_scale", s.restart_noise_scale},
          {"rng_seed", s.rng_seed},
          {"local_evaluations", s.local_evaluations},
          {"literal_initial_sd", s.literal_initial_sd}};
}

inline json cost_to_json(const CostBreakdown& c) {
  return {{"total_J", c.total},
          {"energy_J", c.energy},
          {"penalty_integral_Vs", c.penalty_integral},
          {"penalty_term_J", c.penalty_term},
          {"margin_mV", c.margin},
          {"activated", c.activated},
          {"feasible", c.feasible}};
}

inline json metrics_to_json(const PulseMetrics& m) {
  using detail::number_or_null;
  return {{"t_init_us", number_or_null(m.t_init_us)},
          {"tau_init_us", number_or_null(m.tau_init_us)},
          {"fit_r2_init", number_or_null(m.fit_r2_init)},
          {"t_rise_us", m.t_rise_us},
          {"t_fall_us", m.t_fall_us},
          {"t_pulse_us", m.t_pulse_us},
          {"i_max_A", m.i_max},
          {"i_min_A", m.i_min},
          {"v_hat_max_V", m.v_max},
          {"v_hat_min_V", m.v_min},
          {"r_I", number_or_null(m.r_i)},
          {"r_V", number_or_null(m.r_v)},
          {"energy_J", m.energy},
          {"four_phases", m.four_phases}};
}

/// Deterministic result payload of one run (no timestamps).
inline json run_to_json(const OptimizationRun& run, const CoilParams& coil, int repeat,
                        double dt_us = 1.0) {
  const auto& w = run.best.waveform;
  const auto p = sample(w, coil, dt_us);
  json hist = json::array();
  for (const auto& h : run.history)
    hist.push_back({{"iteration", h.iteration},
                    {"best_cost_J", h.best_cost},
                    {"best_dof", h.best_dof},
                    {"feasible_particles", h.feasible_particles}});
  json metrics = nullptr;
  try {
    metrics = metrics_to_json(measure(p));
  } catch (const Error&) {
    // leave null: shape without a positive peak
  }
  return {{"condition",
           {{"v_max_V", run.limits.v_max()},
            {"v_min_V", run.limits.v_min()},
            {"repeat", repeat},
            {"seed", run.config.rng_seed}}},
          {"swarm", swarm_to_json(run.config)},
          {"best",
           {{"n_dof", w.n_dof()},
            {"window_us", w.window_us()},
            {"knots_A", w.knots()},
            {"cost", cost_to_json(run.best.cost)},
            {"trace",
             {{"dt_us", p.dt_us},
              {"current_A", p.current},
              {"voltage_V", p.voltage},
              {"efield_Vpm", p.efield}}}}},
          {"metrics", metrics},
          {"history", hist},
          {"terminated_reason", run.terminated_reason}};
}

/// Best waveform stored in a result document.
inline SplineWaveform waveform_from_result(const json& doc) {
  detail::check_schema(doc, "result");
  const auto& best = detail::require(detail::require(doc, "result", "result"), "best", "result");
  const auto& knots = detail::require(best, "knots_A", "result.best");
  if (!knots.is_array()) throw Error(ErrorKind::parse_error, "result.best: 'knots_A' must be an array");
  std::vector<double> k;
  for (const auto& x : knots) {
    if (!x.is_number()) throw Error(ErrorKind::parse_error, "result.best.knots_A: not a number");
    k.push_back(x.get<double>());
  }
  return SplineWaveform(std::move(k), detail::require_number(best, "window_us", "result.best"));
}

}  // namespace tmsopt
