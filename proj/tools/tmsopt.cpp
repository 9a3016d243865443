// tmsopt: optimize / titrate / analyze / compare / filter / synthesize.
// Failures print {"error": {"kind": ..., "message": ...}} on stderr.

#include <tmsopt/analysis.hpp>
#include <tmsopt/io.hpp>
#include <tmsopt/pulses.hpp>
#include <tmsopt/runner.hpp>
#include <tmsopt/signal.hpp>

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <string>

using namespace tmsopt;

namespace {

int fail(std::string_view kind, const std::string& message, int code) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
  return code;
}

NeuronParams neuron_from(const std::string& path) {
  return path.empty() ? NeuronParams{} : load_neuron_params(path);
}

int cmd_optimize(const std::string& manifest_path, const std::string& out_dir,
                 const std::string& budget_name) {
  const auto manifest = load_manifest(manifest_path);
  const auto budget = budget_named(budget_name);
  int failures = 0;
  const auto records = execute_manifest(manifest, budget, out_dir, [&](const RunRecord& r) {
    json line = {{"file", r.file}, {"ok", r.ok}};
    if (r.ok) {
      line["energy_J"] = r.result["best"]["cost"]["energy_J"];
      line["feasible"] = r.result["best"]["cost"]["feasible"];
    } else {
      line["error"] = r.error_kind;
      ++failures;
    }
    std::cout << line.dump() << std::endl;
  });

  // cross-condition regressions when enough runs succeeded
  std::vector<ConditionMetrics> rows;
  for (const auto& r : records) {
    if (!r.ok) continue;
    try {
      const auto w = waveform_from_result(json{{"schema_version", schema_version}, {"result", r.result}});
      rows.push_back({r.entry.limits, measure(sample(w, CoilParams{}))});
    } catch (const Error&) {
    }
  }
  json fits = json::array();
  for (const auto& f : fit_regressions(rows)) {
    fits.push_back({{"name", f.name},
                    {"model", model_name(f.model)},
                    {"a", detail::number_or_null(f.a)},
                    {"b", detail::number_or_null(f.b)},
                    {"r2", detail::number_or_null(f.r2)},
                    {"points", f.points},
                    {"primary", f.primary},
                    {"skipped", f.skipped}});
  }
  std::ofstream os(std::filesystem::path(out_dir) / "regressions.json");
  os << json{{"schema_version", schema_version}, {"fits", fits}}.dump(1) << '\n';
  if (failures > 0)
    return fail("optimization_failed", std::to_string(failures) + " run(s) failed", 3);
  return 0;
}

int cmd_titrate(const std::string& in, const std::string& neuron_path, double rel_tol) {
  const auto p = read_waveform_csv(in);
  TitrationOptions opt;
  opt.rel_tol = rel_tol;
  const auto t = titrate_efield(MembraneModel(neuron_from(neuron_path)), p.efield, p.dt_us, opt);
  std::cout << json{{"schema_version", schema_version},
                    {"threshold_scale", t.scale},
                    {"peak_efield_Vpm", t.peak_efield},
                    {"energy_at_threshold_J", energy_loss(p) * t.scale * t.scale},
                    {"simulations", t.simulations}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_analyze(const std::string& in, const std::string& out) {
  const auto m = measure(read_waveform_csv(in));
  std::ofstream os(out);
  if (!os) throw Error(ErrorKind::io_error, "cannot write " + out);
  os << pulse_metrics_csv_header() << '\n' << pulse_metrics_csv_row(m) << '\n';
  return 0;
}

int cmd_compare(const std::string& test_path, const std::string& ref_path,
                const std::string& mode, const std::string& neuron_path) {
  const auto test = read_waveform_csv(test_path);
  const auto ref = read_waveform_csv(ref_path);
  const auto c = compare_losses(test, ref, mode == "peak" ? MatchMode::peak : MatchMode::threshold,
                                neuron_from(neuron_path));
  // traces aligned at their first sample, the shorter one zero-padded
  std::vector<double> a = test.current, b = ref.current;
  a.resize(std::max(a.size(), b.size()), 0.0);
  b.resize(a.size(), 0.0);
  std::cout << json{{"schema_version", schema_version},
                    {"mode", mode},
                    {"eta_percent", c.eta_percent},
                    {"energy_test_J", c.energy_test},
                    {"energy_ref_J", c.energy_ref},
                    {"scale_test", c.scale_test},
                    {"scale_ref", c.scale_ref},
                    {"correlation_R", waveform_correlation(a, b)}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_filter(const std::string& in, double cutoff_hz, const std::string& out) {
  const auto p = read_waveform_csv(in);
  const auto y = SampledPulse::from_current(butterworth_lowpass(p.current, p.dt_us, cutoff_hz),
                                            p.dt_us, p.coil);
  if (out.empty()) {
    write_waveform_csv(std::cout, y);
  } else {
    write_waveform_csv(out, y);
  }
  return 0;
}

int cmd_synthesize(const std::string& kind, const ReferencePulseSpec& base, const std::string& out) {
  ReferencePulseSpec s = base;
  if (kind == "monophasic") {
    s.kind = PulseKind::monophasic;
  } else if (kind == "biphasic") {
    s.kind = PulseKind::biphasic;
    if (s.period_us == ReferencePulseSpec{}.period_us) s.period_us = 300.0;
  } else {
    s.kind = PulseKind::rectangular_asym;
  }
  write_waveform_csv(out, synthesize(s));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Energy-minimal TMS pulse synthesis and waveform analysis"};
  app.require_subcommand(1);

  std::string manifest, out_dir, budget = "desk";
  auto* opt = app.add_subcommand("optimize", "run the swarm optimizer over a manifest");
  opt->add_option("--manifest", manifest, "run manifest JSON")->required();
  opt->add_option("--out", out_dir, "output directory")->required();
  opt->add_option("--budget", budget, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));

  std::string in, neuron;
  double rel_tol = 1e-3;
  auto* tit = app.add_subcommand("titrate", "threshold scale of a waveform");
  tit->add_option("--in", in, "waveform CSV")->required();
  tit->add_option("--neuron", neuron, "neuron parameter JSON");
  tit->add_option("--rel-tol", rel_tol, "relative bisection tolerance")
      ->check(CLI::PositiveNumber);

  std::string analyze_out;
  auto* ana = app.add_subcommand("analyze", "pulse metrics of a waveform");
  ana->add_option("--in", in, "waveform CSV")->required();
  ana->add_option("--out", analyze_out, "metrics CSV")->required();

  std::string test, ref, mode;
  auto* cmp = app.add_subcommand("compare", "loss change of a pulse against a reference");
  cmp->add_option("--test", test, "test waveform CSV")->required();
  cmp->add_option("--ref", ref, "reference waveform CSV")->required();
  cmp->add_option("--mode", mode, "peak or threshold")
      ->required()
      ->check(CLI::IsMember({"peak", "threshold"}));
  cmp->add_option("--neuron", neuron, "neuron parameter JSON");

  double cutoff = 200e3;
  std::string filter_out;
  auto* fil = app.add_subcommand("filter", "first-order Butterworth low-pass of a current trace");
  fil->add_option("--in", in, "waveform CSV")->required();
  fil->add_option("--cutoff-hz", cutoff, "cutoff frequency");
  fil->add_option("--out", filter_out, "output CSV (default stdout)");

  std::string kind = "monophasic", synth_out;
  ReferencePulseSpec spec;
  auto* syn = app.add_subcommand("synthesize", "write a reference pulse CSV");
  syn->add_option("--kind", kind, "monophasic, biphasic or rectangular")
      ->check(CLI::IsMember({"monophasic", "biphasic", "rectangular"}));
  syn->add_option("--out", synth_out, "output CSV")->required();
  syn->add_option("--period-us", spec.period_us, "sine period");
  syn->add_option("--amplitude-A", spec.amplitude, "peak current of the sinusoidal kinds");
  syn->add_option("--v-pos", spec.v_positive, "rectangular positive level (V)");
  syn->add_option("--v-neg", spec.v_negative, "rectangular negative level (V)");
  syn->add_option("--width-us", spec.positive_width_us, "rectangular positive width");
  syn->add_option("--onset-us", spec.onset_us, "pulse onset in the window");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage_error", e.what(), 2);
  }

  try {
    if (*opt) return cmd_optimize(manifest, out_dir, budget);
    if (*tit) return cmd_titrate(in, neuron, rel_tol);
    if (*ana) return cmd_analyze(in, analyze_out);
    if (*cmp) return cmd_compare(test, ref, mode, neuron);
    if (*fil) return cmd_filter(in, cutoff, filter_out);
    if (*syn) return cmd_synthesize(kind, spec, synth_out);
  } catch (const Error& e) {
    return fail(kind_name(e.kind()), e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal_error", e.what(), 1);
  }
  return 0;
}
