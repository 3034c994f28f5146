// blesdn: validate scenarios, run them, turn runs into figure tables.
//
// exit codes: 0 ok, 1 validation failure, 2 I/O failure, 3 invariant violation

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "blesdn/runner.hpp"

namespace fs = std::filesystem;
using namespace blesdn;

namespace {

enum Exit : int { kOk = 0, kValidation = 1, kIo = 2, kInvariant = 3 };

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::IoFailure: return kIo;
    case ErrorCode::InvariantViolation: return kInvariant;
    default: return kValidation;
  }
}

// Prints every violation of a scenario error, or the message of any other.
int report_error(const std::string& what, const Error& e) {
  if (auto* se = dynamic_cast<const ScenarioError*>(&e)) {
    std::cerr << what << ": " << se->violations().size() << " problem(s)\n";
    for (const auto& v : se->violations()) std::cerr << "  " << to_string(v) << '\n';
    return kValidation;
  }
  std::cerr << what << ": " << e.what() << '\n';
  return exit_code_for(e);
}

int cmd_validate(const std::string& path) {
  try {
    const Scenario sc = load_scenario(path);
    validate_scenario(sc);
    std::cout << path << ": ok (" << sc.nodes.size() << " nodes, " << sc.topology.edges.size() << " links, "
              << sc.rate_schedule.size() << " rate changes)\n";
    return kOk;
  } catch (const Error& e) {
    return report_error(path, e);
  }
}

struct Job {
  std::string scenario_path;
  Scenario scenario;
  fs::path out;
  std::string name;
  std::ostringstream hex;
  int code = kOk;
  std::string line;
};

int cmd_run(const std::vector<std::string>& paths, const std::vector<std::uint64_t>& seeds, const std::string& out,
            bool no_controller, std::optional<double> until, bool hexdump, unsigned jobs) {
  std::vector<std::unique_ptr<Job>> work;
  for (const auto& p : paths) {
    Scenario sc;
    try {
      sc = load_scenario(p);
    } catch (const Error& e) {
      return report_error(p, e);
    }
    const std::string stem = fs::path(p).stem().string();
    std::vector<std::uint64_t> ss = seeds.empty() ? std::vector<std::uint64_t>{sc.seed} : seeds;
    for (auto s : ss) {
      auto j = std::make_unique<Job>();
      j->scenario_path = p;
      j->scenario = sc;
      j->scenario.seed = s;
      j->name = stem + "-seed" + std::to_string(s);
      work.push_back(std::move(j));
    }
  }
  const bool single = work.size() == 1;
  for (auto& j : work) j->out = single ? fs::path(out.empty() ? "runs/" + j->name : out) : fs::path(out.empty() ? "runs" : out) / j->name;

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < work.size();) {
      Job& j = *work[i];
      RunRequest req;
      req.no_controller = no_controller;
      req.until_s = until;
      if (hexdump) req.hexdump = single ? &std::cout : &j.hex;
      try {
        auto r = run_to_directory(j.scenario, req, j.out, fs::path(j.scenario_path).stem().string());
        const auto& t = r.sim->engine().totals();
        std::ostringstream os;
        os << j.out.string() << ": generated " << t.generated << " delivered " << t.delivered << " dropped "
           << t.dropped << " buffered " << t.in_buffers << " commands " << r.sim->channel().downlink_frames;
        j.line = os.str();
      } catch (const Error& e) {
        std::ostringstream os;
        os << j.name << ": " << e.what();
        if (auto* se = dynamic_cast<const ScenarioError*>(&e))
          for (const auto& v : se->violations()) os << "\n  " << to_string(v);
        j.line = os.str();
        j.code = dynamic_cast<const ScenarioError*>(&e) ? int(kValidation) : exit_code_for(e);
      } catch (const std::exception& e) {
        j.line = j.name + ": " + e.what();
        j.code = kIo;
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(work.size())));
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  int code = kOk;
  for (auto& j : work) {
    if (!single && hexdump) std::cout << j->hex.str();
    (j->code == kOk ? std::cout : std::cerr) << j->line << '\n';
    code = std::max(code, j->code);
  }
  return code;
}

int cmd_plotdata(const std::string& dir) {
  try {
    write_plot_data(dir);
    std::cout << (fs::path(dir) / "fig6.csv").string() << '\n' << (fs::path(dir) / "fig7.csv").string() << '\n';
    return kOk;
  } catch (const Error& e) {
    return report_error(dir, e);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BLE mesh SDN simulator"};
  app.require_subcommand(1);

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "check a scenario file");
  validate->add_option("scenario", validate_path, "scenario JSON")->required();

  std::vector<std::string> run_paths;
  std::vector<std::uint64_t> seeds;
  std::string out;
  bool no_controller = false, hexdump = false;
  std::optional<double> until;
  unsigned jobs = 1;
  auto* run = app.add_subcommand("run", "simulate and write artifacts");
  run->add_option("scenario", run_paths, "scenario JSON (several allowed)")->required();
  run->add_option("--seed", seeds, "override the scenario seed (repeatable for sweeps)");
  run->add_option("--out", out, "output directory (parent directory for sweeps)");
  run->add_flag("--no-controller", no_controller, "disable the control plane");
  run->add_option("--until", until, "stop at this simulated time in seconds")->check(CLI::NonNegativeNumber);
  run->add_flag("--hexdump", hexdump, "print every control frame");
  run->add_option("--jobs", jobs, "parallel runs for scenario x seed sweeps")->check(CLI::PositiveNumber);

  std::string plot_dir;
  auto* plot = app.add_subcommand("plotdata", "write fig6.csv and fig7.csv for a run directory");
  plot->add_option("run_dir", plot_dir, "run artifact directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kValidation;
  }

  if (*validate) return cmd_validate(validate_path);
  if (*run) return cmd_run(run_paths, seeds, out, no_controller, until, hexdump, jobs);
  if (*plot) return cmd_plotdata(plot_dir);
  return kValidation;
}
