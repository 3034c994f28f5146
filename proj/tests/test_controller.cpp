#include <gtest/gtest.h>

#include <random>

#include "blesdn/controller.hpp"
#include "support.hpp"

using namespace blesdn;
using namespace blesdn::testing;

namespace {

// Status reports as the nodes of sc would send them, slaves in id order.
std::vector<StatusReport> reports_for(const Scenario& sc, const std::map<NodeId, std::uint8_t>& queue = {},
                                      const std::map<Link, std::uint16_t>& ci = {}) {
  std::vector<StatusReport> out;
  auto q = [&](NodeId n) {
    auto it = queue.find(n);
    return it == queue.end() ? std::uint8_t{0} : it->second;
  };
  auto units = [&](const Link& l) {
    auto it = ci.find(l);
    return it == ci.end() ? *ci_units_from_ms(sc.nodes.at(l.child).connection_interval_ms) : it->second;
  };
  for (const auto& [id, cfg] : sc.nodes) {
    StatusReport r;
    r.node_id = id;
    r.device_type = cfg.device_type;
    std::size_t slot = 0;
    for (const auto& e : sc.topology.edges) {
      if (e.child == id) r.master = {e.master, -60, units(e), q(id)};
      if (e.master == id && slot < 3) r.slaves[slot++] = {e.child, -60, units(e), q(e.child)};
    }
    std::sort(r.slaves.begin(), r.slaves.begin() + slot,
              [](const PeerStats& a, const PeerStats& b) { return a.peer < b.peer; });
    out.push_back(r);
  }
  return out;
}

TopologySnapshot snapshot_of(const Scenario& sc, const std::map<NodeId, std::uint8_t>& queue = {},
                             const std::map<Link, std::uint16_t>& ci = {}) {
  TopologySnapshot s;
  for (const auto& r : reports_for(sc, queue, ci)) s.ingest(r, 0);
  return s;
}

DecisionContext context_for(const Scenario& sc, SimTime now = from_seconds(240)) {
  DecisionContext ctx;
  ctx.now = now;
  for (const auto& [id, cfg] : sc.nodes) ctx.buffer_capacity[id] = cfg.buffer_capacity;
  return ctx;
}

AnomalyReport quiet_report(const Scenario& sc) {
  AnomalyReport r;
  for (const auto& [id, cfg] : sc.nodes) r.nodes[id] = {0.01, id == sc.topology.sink ? 0.0 : 0.01};
  return r;
}

std::map<NodeId, double> fig5_rates() {
  std::map<NodeId, double> rates;
  for (int i = 1; i <= 11; ++i) rates[N(i)] = 0.1;
  rates[N(1)] = 2.0;
  return rates;
}

}  // namespace

// -- topology builder ---------------------------------------------------------

TEST(TopologySnapshot, RebuildsTheLine) {
  const Scenario sc = fig5_scenario();
  const auto snap = snapshot_of(sc);
  EXPECT_EQ(snap.sink(), N(12));
  const TreeIndex t = snap.tree();
  for (const auto& e : sc.topology.edges) {
    EXPECT_TRUE(t.has_link(e));
    EXPECT_FALSE(snap.edge(e)->from_master_only);
    EXPECT_EQ(snap.edge(e)->ci_units, 240);
  }
  EXPECT_EQ(snap.edges().size(), 11u);
}

TEST(TopologySnapshot, ReportOrderDoesNotMatter) {
  std::mt19937_64 rng(71);
  for (int trial = 0; trial < 20; ++trial) {
    const Scenario sc = random_tree_scenario(rng, 2 + trial % 15);
    auto rs = reports_for(sc);
    TopologySnapshot a;
    for (const auto& r : rs) a.ingest(r, 0);
    std::shuffle(rs.begin(), rs.end(), rng);
    TopologySnapshot b;
    for (const auto& r : rs) b.ingest(r, 0);
    EXPECT_EQ(a.edges(), b.edges());
    EXPECT_EQ(b.tree().links(), TreeIndex(sc.topology.sink, sc.topology.edges).links());
  }
}

TEST(TopologySnapshot, MasterListedEdgeUntilChildReports) {
  const Scenario sc = line_scenario(3);
  const auto rs = reports_for(sc, {{N(2), 4}});
  TopologySnapshot s;
  s.ingest(rs[2], 0);  // sink lists N2 as slave
  ASSERT_TRUE(s.edge({N(2), N(3)}));
  EXPECT_TRUE(s.edge({N(2), N(3)})->from_master_only);
  EXPECT_EQ(s.queue_of(N(2)), 4);
  s.ingest(rs[1], 10);
  EXPECT_FALSE(s.edge({N(2), N(3)})->from_master_only);
  EXPECT_EQ(s.edge({N(2), N(3)})->last_report, 10);
}

TEST(TopologySnapshot, LatestReportWins) {
  const Scenario sc = line_scenario(3);
  auto s = snapshot_of(sc);
  StatusReport moved = reports_for(sc)[0];
  moved.master = {N(3), -70, 100, 1};  // N1 re-parents onto the sink
  s.ingest(moved, 5);
  EXPECT_FALSE(s.edge({N(1), N(2)}));
  EXPECT_EQ(s.edge({N(1), N(3)})->ci_units, 100);
}

TEST(TopologySnapshot, ConflictingSink) {
  const Scenario sc = line_scenario(3);
  auto s = snapshot_of(sc);
  StatusReport other = reports_for(sc)[0];
  other.device_type = DeviceType::Sink;
  other.master = {};
  try {
    s.ingest(other, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConflictingSink);
  }
}

TEST(TopologySnapshot, StalenessAndSequenceGaps) {
  const Scenario sc = line_scenario(3);
  auto rs = reports_for(sc);
  TopologySnapshot s;
  for (auto& r : rs) s.ingest(r, 0);
  rs[0].seq = 4;
  s.ingest(rs[0], from_seconds(60));
  EXPECT_EQ(s.nodes().at(N(1)).missed_reports, 3u);
  s.refresh_staleness(from_seconds(100), from_seconds(90));
  EXPECT_FALSE(s.nodes().at(N(1)).stale);
  EXPECT_TRUE(s.nodes().at(N(2)).stale);
  EXPECT_TRUE(s.nodes().at(N(3)).stale);
  EXPECT_EQ(s.nodes().size(), 3u);  // stale nodes stay
}

TEST(TopologySnapshot, NotATree) {
  const Scenario sc = line_scenario(3);
  auto rs = reports_for(sc);
  auto code = [](const TopologySnapshot& s) {
    try {
      s.tree();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvariantViolation;
  };
  TopologySnapshot no_sink;
  no_sink.ingest(rs[0], 0);
  EXPECT_EQ(code(no_sink), ErrorCode::NotATree);

  TopologySnapshot two_masters;
  two_masters.ingest(rs[1], 0);
  two_masters.ingest(rs[2], 0);
  StatusReport n3_too = rs[2];
  n3_too.slaves[1] = {N(1), -60, 240, 0};  // the sink also claims N1
  two_masters.ingest(n3_too, 0);
  EXPECT_EQ(code(two_masters), ErrorCode::NotATree);

  TopologySnapshot orphan;
  orphan.ingest(rs[2], 0);
  StatusReport lone = rs[0];
  lone.master = {};
  orphan.ingest(lone, 0);
  EXPECT_EQ(code(orphan), ErrorCode::NotATree);
}

// -- shortest path ------------------------------------------------------------

TEST(ShortestPath, LineExamples) {
  const auto snap = snapshot_of(fig5_scenario());
  const auto p = shortest_path(snap, N(12), N(1));
  ASSERT_TRUE(p);
  ASSERT_EQ(p->size(), 11u);
  EXPECT_EQ(p->front(), N(11));
  EXPECT_EQ(p->back(), N(1));
  EXPECT_TRUE(shortest_path(snap, N(5), N(5))->empty());
  EXPECT_THROW(shortest_path(snap, N(5), N(40)), Error);
}

TEST(ShortestPath, TiesGoToSmallestId) {
  // N7 never reports but is listed as a slave by both N3 and N2, so the
  // sink reaches it through either
  TopologySnapshot s;
  StatusReport sink;
  sink.node_id = N(9);
  sink.device_type = DeviceType::Sink;
  sink.slaves[0] = {N(2), -60, 240, 0};
  sink.slaves[1] = {N(3), -60, 240, 0};
  s.ingest(sink, 0);
  for (int m : {3, 2}) {
    StatusReport r;
    r.node_id = N(m);
    r.master = {N(9), -60, 240, 0};
    r.slaves[0] = {N(7), -60, 240, 0};
    s.ingest(r, 0);
  }
  EXPECT_EQ(*shortest_path(s, N(9), N(7)), (std::vector<NodeId>{N(2), N(7)}));
  EXPECT_EQ(*shortest_path(s, N(7), N(9)), (std::vector<NodeId>{N(2), N(9)}));
  EXPECT_EQ(*shortest_path(s, N(3), N(2)), (std::vector<NodeId>{N(7), N(2)}));
}

TEST(ShortestPath, MatchesBfsOracle) {
  std::mt19937_64 rng(72);
  for (int trial = 0; trial < 30; ++trial) {
    const Scenario sc = random_tree_scenario(rng, 2 + trial % 20);
    const auto snap = snapshot_of(sc);
    std::vector<std::pair<NodeId, NodeId>> und;
    for (const auto& e : sc.topology.edges) und.emplace_back(e.child, e.master);
    std::uniform_int_distribution<int> pick(1, static_cast<int>(sc.nodes.size()));
    for (int k = 0; k < 10; ++k) {
      const NodeId a = N(pick(rng)), b = N(pick(rng));
      const auto p = shortest_path(snap, a, b);
      ASSERT_TRUE(p);
      EXPECT_EQ(static_cast<int>(p->size()), undirected_distance(und, a, b));
      NodeId prev = a;
      for (NodeId h : *p) {
        EXPECT_EQ(undirected_distance(und, prev, h), 1);
        prev = h;
      }
      EXPECT_EQ(prev, b);
    }
  }
}

// -- decision -----------------------------------------------------------------

TEST(RequiredCi, Examples) {
  EXPECT_EQ(required_ci_units(3.0, 1, 1.25), 213);
  EXPECT_EQ(required_ci_units(2.0, 1, 1.25), 320);
  EXPECT_EQ(required_ci_units(0.0, 1, 1.25), kCiMaxUnits);
  EXPECT_EQ(required_ci_units(1000.0, 1, 1.25), kCiMinUnits);
  EXPECT_EQ(required_ci_units(0.2, 1, 1.25), kCiMaxUnits);
  EXPECT_EQ(required_ci_units(3.0, 2, 1.25), 426);
}

TEST(ClassifyAndDecide, CongestedLineRetunesOverloadedLinks) {
  const Scenario sc = fig5_scenario();
  const auto snap = snapshot_of(sc, {{N(11), 25}});
  auto report = quiet_report(sc);
  report.nodes[N(11)].p_comm = 0.97;
  const auto d = classify_and_decide(report, snap, fig5_rates(), ControllerParams{}, context_for(sc));
  ASSERT_EQ(d.congested.size(), 1u);
  EXPECT_EQ(d.congested[0].link, (Link{N(11), N(12)}));
  EXPECT_TRUE(d.alerts.empty());
  // demand 2.0 + 0.1 per hop; only links above 2.67 pkt/s need more than 300 ms
  std::map<NodeId, std::uint16_t> want{{N(9), 237}, {N(10), 228}, {N(11), 220}, {N(12), 213}};
  ASSERT_EQ(d.commands.size(), want.size());
  for (const auto& c : d.commands) {
    EXPECT_EQ(c.opcode, Opcode::SetConnInterval);
    EXPECT_EQ(c.selector, 1);
    ASSERT_TRUE(want.count(c.target)) << to_string(c.target);
    EXPECT_EQ(c.value, want[c.target]);
  }
}

TEST(ClassifyAndDecide, HealthyReportDoesNothing) {
  const Scenario sc = fig5_scenario();
  const auto d = classify_and_decide(quiet_report(sc), snapshot_of(sc), fig5_rates(), ControllerParams{}, context_for(sc));
  EXPECT_TRUE(d.commands.empty());
  EXPECT_TRUE(d.alerts.empty());
  EXPECT_TRUE(d.congested.empty());
}

TEST(ClassifyAndDecide, SensingAndDeadLinkAlerts) {
  const Scenario sc = fig5_scenario();
  auto report = quiet_report(sc);
  report.nodes[N(3)].p_sensing = 0.95;
  report.nodes[N(6)].p_comm = 0.95;  // queue is empty: not congestion
  const auto d = classify_and_decide(report, snapshot_of(sc), fig5_rates(), ControllerParams{}, context_for(sc));
  ASSERT_EQ(d.alerts.size(), 2u);
  EXPECT_EQ(d.alerts[0], (OperatorAlert{OperatorAlert::Kind::SensingFault, N(3), std::nullopt, 0.95}));
  EXPECT_EQ(d.alerts[1], (OperatorAlert{OperatorAlert::Kind::DeadLink, N(6), Link{N(6), N(7)}, 0.95}));
  EXPECT_TRUE(d.commands.empty());
}

TEST(ClassifyAndDecide, CooldownSuppressesCommands) {
  const Scenario sc = fig5_scenario();
  auto report = quiet_report(sc);
  report.nodes[N(11)].p_comm = 0.97;
  auto ctx = context_for(sc);
  ctx.last_command_round = ctx.now - from_seconds(60);
  const auto snap = snapshot_of(sc, {{N(11), 25}});
  auto d = classify_and_decide(report, snap, fig5_rates(), ControllerParams{}, ctx);
  EXPECT_TRUE(d.suppressed_by_cooldown);
  EXPECT_TRUE(d.commands.empty());
  EXPECT_EQ(d.congested.size(), 1u);
  ctx.last_command_round = ctx.now - from_seconds(120);
  d = classify_and_decide(report, snap, fig5_rates(), ControllerParams{}, ctx);
  EXPECT_FALSE(d.suppressed_by_cooldown);
  EXPECT_FALSE(d.commands.empty());
}

TEST(ClassifyAndDecide, CommandsSufficeAndSettle) {
  std::mt19937_64 rng(73);
  ControllerParams p;
  for (int trial = 0; trial < 40; ++trial) {
    const Scenario sc = random_tree_scenario(rng, 3 + trial % 15);
    std::uniform_real_distribution<double> rate(0.0, 1.5);
    std::map<NodeId, double> rates;
    for (const auto& [id, cfg] : sc.nodes)
      if (id != sc.topology.sink) rates[id] = rate(rng);
    const NodeId hot = sc.topology.edges[0].child;
    auto report = quiet_report(sc);
    report.nodes[hot].p_comm = 0.99;
    const auto snap = snapshot_of(sc, {{hot, 25}});
    const auto d = classify_and_decide(report, snap, rates, p, context_for(sc));
    ASSERT_EQ(d.congested.size(), 1u);

    // apply the commands to a fresh set of reports
    const TreeIndex tree(sc.topology.sink, sc.topology.edges);
    std::map<Link, std::uint16_t> ci;
    for (const auto& c : d.commands) {
      const auto kids = tree.children_of(c.target);
      ci[Link{kids.at(c.selector - 1), c.target}] = c.value;
    }
    for (const auto& l : tree.links()) {
      const std::uint16_t units = ci.count(l) ? ci[l] : 240;
      const double demand = subtree_demand(tree, rates, l);
      if (units > kCiMinUnits) {
        EXPECT_GE(1000.0 / ci_units_to_ms(units), p.safety_factor * demand - 1e-9) << to_string(l);
      }
      if (ci.count(l) && units < kCiMaxUnits) {
        EXPECT_LT(1000.0 / ci_units_to_ms(units + 1), p.safety_factor * demand) << "not the largest " << to_string(l);
      }
    }
    const auto again = classify_and_decide(report, snapshot_of(sc, {{hot, 25}}, ci), rates, p, context_for(sc));
    EXPECT_TRUE(again.commands.empty()) << "trial " << trial;
  }
}

// -- control loop -------------------------------------------------------------

TEST(Controller, IdleNetworkStaysQuiet) {
  Scenario sc = fig5_scenario();
  for (auto& [id, cfg] : sc.nodes) cfg.data_gen_period_s = 0.0;
  Controller ctl(ControllerSetup::from_scenario(sc));
  for (const auto& r : reports_for(sc)) ctl.on_status_report(r, from_seconds(30));
  for (int k = 1; k <= 10; ++k) {
    const auto round = ctl.tick(from_seconds(60.0 * k));
    ASSERT_TRUE(round.report);
    EXPECT_EQ(round.report->latent_count, 0u);
    EXPECT_TRUE(round.decision.commands.empty());
    EXPECT_TRUE(round.new_alerts.empty());
  }
  EXPECT_FALSE(ctl.first_comm_crossing());
}

TEST(Controller, SkipsWindowWithoutTree) {
  Controller ctl(ControllerSetup::from_scenario(fig5_scenario()));
  const auto round = ctl.tick(from_seconds(60));
  EXPECT_FALSE(round.report);
  ASSERT_FALSE(ctl.log_lines().empty());
  EXPECT_NE(ctl.log_lines().back().find("window skipped"), std::string::npos);
}

TEST(Controller, SilentSubtreeRaisesOneDeadLinkAlert) {
  const Scenario sc = fig5_scenario();
  Controller ctl(ControllerSetup::from_scenario(sc));
  for (const auto& r : reports_for(sc)) ctl.on_status_report(r, from_seconds(30));
  // N6..N11 deliver every 10 s; N1..N5 have gone silent
  std::map<int, std::uint32_t> pid;
  for (int round = 1; round <= 3; ++round) {
    for (int s = 0; s < 60; s += 10)
      for (int n = 6; n <= 11; ++n)
        ctl.on_northbound({N(n), ++pid[n], 160, static_cast<std::uint16_t>(12 - n), from_seconds(60.0 * (round - 1) + s + 1)});
    const auto r = ctl.tick(from_seconds(60.0 * round));
    if (round == 1) {
      ASSERT_EQ(r.new_alerts.size(), 1u);
      EXPECT_EQ(r.new_alerts[0].kind, OperatorAlert::Kind::DeadLink);
      EXPECT_EQ(r.new_alerts[0].link, (Link{N(5), N(6)}));
    } else {
      EXPECT_TRUE(r.new_alerts.empty()) << "hysteresis keeps the alert active";
    }
    EXPECT_TRUE(r.decision.commands.empty());
  }
}
