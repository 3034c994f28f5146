#pragma once

// One scenario run from file to artifact directory. Shared by the CLI and
// the end-to-end tests.

#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <system_error>

#include "blesdn/artifacts.hpp"
#include "blesdn/metrics.hpp"
#include "blesdn/scenario_io.hpp"
#include "blesdn/simulation.hpp"

namespace blesdn {

struct RunRequest {
  std::optional<std::uint64_t> seed;
  bool no_controller = false;
  std::optional<double> until_s;
  std::ostream* hexdump = nullptr;
};

struct RunOutcome {
  std::unique_ptr<Simulation> sim;
  MetricsBundle metrics;
};

/// Simulates a validated scenario in memory.
inline RunOutcome simulate(Scenario sc, const RunRequest& req) {
  if (req.seed) sc.seed = *req.seed;
  validate_scenario(sc);
  SimulationOptions opts;
  opts.controller_enabled = sc.controller_enabled && !req.no_controller;
  opts.until_s = req.until_s;
  opts.hexdump = req.hexdump;
  RunOutcome out;
  out.sim = std::make_unique<Simulation>(sc, opts);
  out.sim->run();
  out.metrics = compute_metrics(*out.sim);
  return out;
}

/// Simulates and writes artifacts to out_dir. Output goes to a sibling
/// staging directory first and replaces out_dir only on success, so a failed
/// run leaves nothing partial behind.
inline RunOutcome run_to_directory(const Scenario& sc, const RunRequest& req, const std::filesystem::path& out_dir,
                                   const std::string& name) {
  namespace fs = std::filesystem;
  const fs::path staging = out_dir.string() + ".partial";
  std::error_code ec;
  fs::remove_all(staging, ec);
  try {
    RunOutcome out = simulate(sc, req);
    write_run_artifacts(*out.sim, out.metrics, staging, name);
    fs::remove_all(out_dir);
    fs::rename(staging, out_dir);
    return out;
  } catch (const fs::filesystem_error& e) {
    fs::remove_all(staging, ec);
    throw Error(ErrorCode::IoFailure, e.what());
  } catch (...) {
    fs::remove_all(staging, ec);
    throw;
  }
}

}  // namespace blesdn
