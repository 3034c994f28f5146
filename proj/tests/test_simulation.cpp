#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "blesdn/runner.hpp"
#include "support.hpp"

using namespace blesdn;
using namespace blesdn::testing;
namespace fs = std::filesystem;

namespace {

Scenario relay_scenario() { return load_scenario(std::string(BLESDN_SOURCE_DIR) + "/scenarios/relay_congestion.json"); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::vector<std::string> out;
  std::ifstream in(p);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::path(::testing::TempDir()) / ("blesdn_" + name);
  fs::remove_all(d);
  fs::remove_all(d.string() + ".partial");
  return d;
}

}  // namespace

TEST(Simulation, TenReportsPerNodeInFiveMinutes) {
  RunRequest req;
  const auto out = simulate(line_scenario(12, 300.0), req);
  EXPECT_EQ(out.sim->channel().uplink_frames, 12u * 10u);
  // of the round at 300 s only the sink's own report lands before the end
  EXPECT_EQ(out.sim->channel().reports_received, 12u * 9u + 1u);
}

TEST(Simulation, QueueFieldTracksOccupancy) {
  Scenario sc = line_scenario(3, 60.0);
  sc.nodes[N(1)].data_gen_period_s = 0.01;
  sc.nodes[N(1)].connection_interval_ms = 4000.0;
  sc.nodes[N(2)].data_gen_period_s = 0.0;
  RunRequest req;
  req.until_s = 45.0;   // after the 30 s reports, before the first window
  const auto out = simulate(sc, req);
  const auto& snap = out.sim->controller().snapshot();
  EXPECT_EQ(snap.queue_of(N(1)), 25);
  EXPECT_EQ(snap.queue_of(N(2)), 0);
  EXPECT_EQ(snap.nodes().size(), 3u);
}

TEST(Simulation, NoDownlinkWithoutController) {
  RunRequest req;
  req.no_controller = true;
  const auto out = simulate(relay_scenario(), req);
  EXPECT_EQ(out.sim->channel().downlink_frames, 0u);
  EXPECT_TRUE(out.sim->command_times().empty());
  EXPECT_GT(out.sim->channel().uplink_frames, 0u);
  EXPECT_TRUE(out.sim->controller().anomaly_rows().empty());
}

TEST(Simulation, ControlTrafficLeavesDataPlaneUntouched) {
  // no commands are sent on the reference line, so enabling the control plane
  // must not move a single data packet
  RunRequest on, off;
  off.no_controller = true;
  on.until_s = off.until_s = 400.0;
  const auto a = simulate(fig5_scenario(), on);
  const auto b = simulate(fig5_scenario(), off);
  ASSERT_TRUE(a.sim->command_times().empty());
  const auto& da = a.sim->engine().log().deliveries;
  const auto& db = b.sim->engine().log().deliveries;
  ASSERT_EQ(da.size(), db.size());
  for (std::size_t i = 0; i < da.size(); ++i) {
    EXPECT_EQ(da[i].src, db[i].src);
    EXPECT_EQ(da[i].pid, db[i].pid);
    EXPECT_EQ(da[i].t_delivered, db[i].t_delivered);
  }
}

TEST(Simulation, ConservationAtTheEnd) {
  std::mt19937_64 rng(81);
  for (int trial = 0; trial < 5; ++trial) {
    Scenario sc = random_tree_scenario(rng, 4 + trial * 3);
    for (auto& [id, cfg] : sc.nodes)
      if (id != sc.topology.sink) cfg.data_gen_period_s = 0.5 + trial * 0.3;
    sc.duration_s = 240.0;
    sc.seed = trial;
    const auto out = simulate(sc, RunRequest{});
    EXPECT_TRUE(out.sim->engine().totals().conserved());
    EXPECT_EQ(out.sim->records().size(), out.sim->engine().totals().delivered);
  }
}

TEST(Simulation, RelayScenarioWalksThroughAllPhases) {
  const auto out = simulate(relay_scenario(), RunRequest{});
  const auto& m = out.metrics;
  std::vector<std::string> names;
  for (const auto& p : m.phases) names.push_back(p.name);
  EXPECT_EQ(names, (std::vector<std::string>{"steady", "high_demand", "congestion", "regular_performance"}));
  ASSERT_TRUE(m.detection_time);
  ASSERT_TRUE(m.congestion_start);
  ASSERT_TRUE(m.recovery_time);
  EXPECT_GT(*m.detection_time, *m.congestion_start);
  EXPECT_GT(*m.recovery_time, out.sim->command_times().front());
  EXPECT_GT(out.sim->channel().commands_applied, 0u);
  EXPECT_EQ(out.sim->channel().commands_rejected, 0u);
  // after recovery the sink keeps up with the offered load
  const auto& last = m.phases.back();
  EXPECT_EQ(last.drops, 0u);

  RunRequest off;
  off.no_controller = true;
  const auto base = simulate(relay_scenario(), off);
  EXPECT_LT(out.sim->engine().totals().dropped, base.sim->engine().totals().dropped / 2);
}

TEST(Simulation, PhaseRatesMatchDirectCounts) {
  const auto out = simulate(relay_scenario(), RunRequest{});
  const auto& log = out.sim->engine().log();
  for (const auto& ph : out.metrics.phases) {
    double bits = 0;
    for (const auto& p : log.deliveries)
      if (*p.t_delivered >= ph.start && *p.t_delivered < ph.end) bits += p.payload_bits;
    if (ph.end > ph.start) {
      EXPECT_NEAR(ph.sink_goodput_bps, bits / to_seconds(ph.end - ph.start), 1e-9) << ph.name;
    }
  }
  // sliding window at t = 200 s covers (190, 200]
  double bits = 0;
  for (const auto& t : log.transfers)
    if (t.t > from_seconds(190) && t.t <= from_seconds(200)) bits += t.bits;
  EXPECT_NEAR(out.metrics.throughput[199].link_sum_bps, bits / 10.0, 1e-9);
}

TEST(Simulation, SameSeedSameArtifacts) {
  const auto a = fresh_dir("det_a"), b = fresh_dir("det_b");
  run_to_directory(relay_scenario(), RunRequest{}, a, "relay");
  run_to_directory(relay_scenario(), RunRequest{}, b, "relay");
  for (const char* f : {"deliveries.csv", "drops.csv", "buffers.csv", "northbound.csv", "anomaly.csv", "controller.log",
                        "summary.json", "throughput.csv"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(Artifacts, HeadersAndSummaryKeys) {
  const auto d = fresh_dir("headers");
  RunRequest req;
  req.until_s = 200.0;
  run_to_directory(fig5_scenario(), req, d, "fig5");
  EXPECT_EQ(lines_of(d / "northbound.csv").front(), "node_id,pid,data_bits,hop,timestamp_rx_ms");
  EXPECT_EQ(lines_of(d / "anomaly.csv").front(), "t_ms,node_id,p_sensing,p_comm");
  EXPECT_EQ(lines_of(d / "deliveries.csv").front(), "src,pid,bits,hops,t_created_ms,t_delivered_ms,delay_ms");
  EXPECT_EQ(lines_of(d / "drops.csv").front(), "t_ms,node_id,src,pid,cause,cumulative");
  EXPECT_EQ(lines_of(d / "buffers.csv").front().rfind("t_ms,mean_occupancy,node_1,", 0), 0u);
  const auto s = nlohmann::json::parse(slurp(d / "summary.json"));
  for (const char* k : {"scenario", "seed", "packets", "drops", "delay", "phases", "command_rounds_ms", "control_channel"})
    EXPECT_TRUE(s.contains(k)) << k;
  EXPECT_TRUE(s["packets"]["conserved"].get<bool>());
  // anomaly rows: 3 windows x 12 nodes
  EXPECT_EQ(lines_of(d / "anomaly.csv").size(), 1u + 3u * 12u);
  EXPECT_FALSE(fs::exists(d.string() + ".partial"));
}

TEST(Artifacts, PlotDataAnnotatesPhases) {
  const auto d = fresh_dir("plot");
  const auto out = run_to_directory(relay_scenario(), RunRequest{}, d, "relay");
  write_plot_data(d);
  const auto fig6 = lines_of(d / "fig6.csv");
  const auto fig7 = lines_of(d / "fig7.csv");
  EXPECT_EQ(fig6.front(), "t_ms,mean_buffer_occupancy,sink_goodput_bps,link_sum_throughput_bps,annotation");
  EXPECT_EQ(fig7.front(), "t_ms,delay_s,cumulative_losses,annotation");
  std::size_t notes6 = 0, notes7 = 0;
  for (const auto& l : fig6) notes6 += l.find("phase_start:") != std::string::npos;
  for (const auto& l : fig7) notes7 += l.find("phase_start:") != std::string::npos;
  EXPECT_EQ(notes6, 3u);
  EXPECT_EQ(notes7, 3u);
  EXPECT_EQ(fig7.size(), 1u + out.sim->engine().totals().delivered + 3u);
  // the last fig7 data row carries the final loss count
  std::string last;
  for (auto it = fig7.rbegin(); it != fig7.rend(); ++it)
    if (it->find("phase_start") == std::string::npos) {
      last = *it;
      break;
    }
  const auto& drops = out.sim->engine().log().drops;
  const auto& final_delivery = out.sim->engine().log().deliveries.back();
  std::uint64_t losses = 0;
  for (const auto& x : drops)
    if (x.t <= *final_delivery.t_delivered) losses = x.cumulative;
  EXPECT_EQ(last.substr(last.rfind(',', last.size() - 2) + 1, std::string::npos), std::to_string(losses) + ",");
}

TEST(Artifacts, PlotDataWithoutDeliveries) {
  Scenario sc = line_scenario(3, 20.0);
  for (auto& [id, cfg] : sc.nodes) cfg.data_gen_period_s = 0.0;
  const auto d = fresh_dir("empty");
  run_to_directory(sc, RunRequest{}, d, "empty");
  write_plot_data(d);
  EXPECT_EQ(lines_of(d / "fig7.csv").size(), 1u);
  EXPECT_EQ(lines_of(d / "deliveries.csv").size(), 1u);
  EXPECT_EQ(lines_of(d / "fig6.csv").size(), 1u + 20u);
}

TEST(Artifacts, PlotDataNeedsARunDirectory) {
  try {
    write_plot_data(fresh_dir("missing"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoFailure);
  }
}

TEST(Runner, FailedRunLeavesNothingBehind) {
  const auto d = fresh_dir("invalid");
  Scenario bad = line_scenario(3);
  bad.duration_s = -1;
  EXPECT_THROW(run_to_directory(bad, RunRequest{}, d, "bad"), ScenarioError);
  EXPECT_FALSE(fs::exists(d));
  EXPECT_FALSE(fs::exists(d.string() + ".partial"));

  const auto blocker = fresh_dir("blocker");
  std::ofstream(blocker) << "not a directory";
  try {
    run_to_directory(line_scenario(3, 10.0), RunRequest{}, blocker / "run", "x");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoFailure);
  }
  EXPECT_FALSE(fs::exists(blocker.string() + "/run.partial"));
  fs::remove(blocker);
}

TEST(Runner, ExistingOutputIsReplaced) {
  const auto d = fresh_dir("replace");
  fs::create_directories(d);
  std::ofstream(d / "stale.txt") << "old";
  run_to_directory(line_scenario(3, 10.0), RunRequest{}, d, "x");
  EXPECT_FALSE(fs::exists(d / "stale.txt"));
  EXPECT_TRUE(fs::exists(d / "summary.json"));
}
