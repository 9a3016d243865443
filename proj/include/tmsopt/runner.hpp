#pragma once

// Manifest execution shared by the command-line tool and the acceptance
// harness: budgets, per-run result documents and the cross-condition
// metrics table.

#include <tmsopt/analysis.hpp>
#include <tmsopt/io.hpp>
#include <tmsopt/optimizer.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace tmsopt {

struct Budget {
  SwarmConfig swarm;
  int min_repeats = 1;
};

/// desk: 8 particles x 30 iterations, manifest repeat counts.
/// paper: 16 particles x 60 iterations, at least 10 repeats per condition.
inline Budget budget_named(std::string_view name) {
  Budget b;
  if (name == "desk") return b;
  if (name == "paper") {
    b.swarm.n_particles = 16;
    b.swarm.max_iterations = 60;
    b.min_repeats = 10;
    return b;
  }
  throw Error(ErrorKind::invalid_parameters, "unknown budget '" + std::string(name) + "'");
}

struct RunRecord {
  ManifestEntry entry;
  int repeat = 0;
  std::uint64_t seed = 0;
  std::string file;
  json result;  // deterministic payload
  bool ok = false;
  std::string error_kind;
  std::string error_message;
};

inline std::string run_file_name(const VoltageLimits& lim, int repeat) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "run_vmax%g_vmin%g_r%d.json", lim.v_max(), -lim.v_min(), repeat);
  return buf;
}

namespace detail {

inline std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

/// Runs every (condition, repeat) of the manifest, writing one result JSON
/// per run plus metrics.csv into out_dir. A failed run is recorded with its
/// error kind and does not stop the others. on_done is called after each run.
inline std::vector<RunRecord> execute_manifest(
    const RunManifest& manifest, const Budget& budget, const std::string& out_dir,
    const std::function<void(const RunRecord&)>& on_done = {}) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::io_error, "cannot create " + out_dir + ": " + ec.message());

  SwarmConfig swarm = budget.swarm;
  apply_swarm_overrides(swarm, manifest.swarm_overrides);
  const NeuronParams neuron = manifest.neuron_params_path.empty()
                                  ? NeuronParams{}
                                  : load_neuron_params(manifest.neuron_params_path);

  std::vector<RunRecord> records;
  std::ofstream metrics(fs::path(out_dir) / "metrics.csv");
  if (!metrics) throw Error(ErrorKind::io_error, "cannot write metrics.csv in " + out_dir);
  metrics << metrics_csv_header() << '\n';

  for (const auto& entry : manifest.entries) {
    const int repeats = std::max(entry.repeats, budget.min_repeats);
    for (int r = 0; r < repeats; ++r) {
      RunRecord rec{entry, r, entry.repeat_seed(r), run_file_name(entry.limits, r), {}, false, {}, {}};
      ObjectiveConfig ocfg{entry.limits};
      ocfg.neuron = neuron;
      SwarmConfig sc = swarm;
      sc.rng_seed = rec.seed;
      const auto started = detail::utc_now();
      const auto t0 = std::chrono::steady_clock::now();
      json doc;
      doc["schema_version"] = schema_version;
      try {
        const auto run = run_optimization(entry.limits, ocfg, sc);
        rec.result = run_to_json(run, ocfg.coil, r, ocfg.dt_us);
        rec.ok = true;
        try {
          metrics << metrics_csv_row(entry.limits, r, rec.seed,
                                     measure(sample(run.best.waveform, ocfg.coil, ocfg.dt_us)))
                  << '\n';
        } catch (const Error&) {
          // shape without a positive peak: no metrics row
        }
        doc["result"] = rec.result;
      } catch (const Error& e) {
        rec.error_kind = kind_name(e.kind());
        rec.error_message = e.what();
        doc["error"] = {{"kind", rec.error_kind}, {"message", rec.error_message}};
      }
      const double elapsed =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      doc["metadata"] = {{"started_utc", started},
                         {"finished_utc", detail::utc_now()},
                         {"elapsed_s", elapsed},
                         {"tool", "tmsopt"}};
      std::ofstream os(fs::path(out_dir) / rec.file);
      if (!os) throw Error(ErrorKind::io_error, "cannot write " + rec.file);
      os << doc.dump(1) << '\n';
      if (on_done) on_done(rec);
      records.push_back(std::move(rec));
    }
  }
  return records;
}

}  // namespace tmsopt
