#pragma once

// Control plane: topology builder, anomaly detector, dynamic node controller.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "blesdn/codec.hpp"
#include "blesdn/core.hpp"
#include "blesdn/inference.hpp"
#include "blesdn/northbound.hpp"
#include "blesdn/params.hpp"

namespace blesdn {

// ---------------------------------------------------------------------------
// Topology builder
// ---------------------------------------------------------------------------

struct SnapshotEdge {
  int rssi = 0;
  std::uint16_t ci_units = 0;
  std::uint8_t queue = 0;          // child's average occupancy
  SimTime last_report = 0;
  bool from_master_only = false;   // seen in the master's slave list, child not heard yet

  friend bool operator==(const SnapshotEdge&, const SnapshotEdge&) = default;
};

struct SnapshotNode {
  DeviceType device_type = DeviceType::Static;
  std::uint8_t battery = 0;
  std::int8_t tx_power = 0;
  SimTime last_seen = 0;
  std::uint16_t last_seq = 0;
  std::uint32_t missed_reports = 0;   // seq gaps
  bool stale = false;
  std::optional<StatusReport> last_report;

  friend bool operator==(const SnapshotNode&, const SnapshotNode&) = default;
};

/// Directed child->master graph rebuilt from status reports, latest report
/// per node wins. Nodes that go quiet are flagged stale, never removed.
class TopologySnapshot {
 public:
  const std::map<NodeId, SnapshotNode>& nodes() const { return nodes_; }
  const std::map<Link, SnapshotEdge>& edges() const { return edges_; }
  std::optional<NodeId> sink() const { return sink_; }

  void ingest(const StatusReport& r, SimTime now) {
    if (r.device_type == DeviceType::Sink) {
      if (sink_ && *sink_ != r.node_id)
        throw Error(ErrorCode::ConflictingSink, to_string(*sink_) + " and " + to_string(r.node_id));
      sink_ = r.node_id;
    }
    auto [it, fresh] = nodes_.try_emplace(r.node_id);
    SnapshotNode& n = it->second;
    if (!fresh && n.last_report && r.seq > n.last_seq + 1) n.missed_reports += r.seq - n.last_seq - 1;
    n.device_type = r.device_type;
    n.battery = r.battery;
    n.tx_power = r.tx_power;
    n.last_seen = now;
    n.last_seq = r.seq;
    n.stale = false;
    n.last_report = r;

    // own master edge: drop whatever this node reported before
    for (auto e = edges_.begin(); e != edges_.end();) {
      if (e->first.child == r.node_id) e = edges_.erase(e);
      else ++e;
    }
    if (r.master.present()) edges_[Link{r.node_id, r.master.peer}] = {r.master.rssi, r.master.ci_units, r.master.queue, now, false};

    // slaves not yet heard from directly
    for (const auto& s : r.slaves) {
      if (!s.present()) continue;
      auto child = nodes_.find(s.peer);
      if (child != nodes_.end() && child->second.last_report) continue;
      edges_[Link{s.peer, r.node_id}] = {s.rssi, s.ci_units, s.queue, now, true};
    }
  }

  /// Flags nodes silent for longer than timeout.
  void refresh_staleness(SimTime now, SimTime timeout) {
    for (auto& [id, n] : nodes_) n.stale = now - n.last_seen > timeout;
  }

  std::optional<std::uint8_t> queue_of(NodeId child) const {
    for (const auto& [l, e] : edges_)
      if (l.child == child) return e.queue;
    return std::nullopt;
  }

  std::optional<SnapshotEdge> edge(const Link& l) const {
    auto it = edges_.find(l);
    if (it == edges_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<Link> links() const {
    std::vector<Link> out;
    for (const auto& [l, e] : edges_) out.push_back(l);
    return out;
  }

  /// The reported graph as a tree. NotATree when there is no sink, a node has
  /// two masters, or some node does not reach the sink.
  TreeIndex tree() const {
    if (!sink_) throw Error(ErrorCode::NotATree, "no sink reported");
    std::map<NodeId, int> masters;
    for (const auto& [l, e] : edges_)
      if (++masters[l.child] > 1) throw Error(ErrorCode::NotATree, to_string(l.child) + " has two masters");
    TreeIndex t(*sink_, links());
    for (NodeId n : t.nodes()) t.path_to_sink(n);
    for (const auto& [id, n] : nodes_)
      if (!t.contains(id)) throw Error(ErrorCode::NotATree, to_string(id) + " is disconnected");
    return t;
  }

  friend bool operator==(const TopologySnapshot&, const TopologySnapshot&) = default;

 private:
  std::optional<NodeId> sink_;
  std::map<NodeId, SnapshotNode> nodes_;
  std::map<Link, SnapshotEdge> edges_;
};

/// Shortest undirected path from a to b over the reported edges: the hops
/// after a, ending with b. Ties go to the smallest next NodeId at each step.
/// nullopt when b is unreachable.
inline std::optional<std::vector<NodeId>> shortest_path(const TopologySnapshot& snap, NodeId a, NodeId b) {
  std::map<NodeId, std::set<NodeId>> adj;
  for (const auto& [id, n] : snap.nodes()) adj[id];
  if (snap.sink()) adj[*snap.sink()];
  for (const auto& [l, e] : snap.edges()) {
    adj[l.child].insert(l.master);
    adj[l.master].insert(l.child);
  }
  if (!adj.count(a)) throw Error(ErrorCode::UnknownNode, to_string(a));
  if (!adj.count(b)) throw Error(ErrorCode::UnknownNode, to_string(b));

  // distances to b, then greedy smallest-id descent from a
  std::map<NodeId, std::size_t> dist{{b, 0}};
  std::queue<NodeId> q;
  q.push(b);
  while (!q.empty()) {
    NodeId u = q.front();
    q.pop();
    for (NodeId v : adj[u])
      if (dist.emplace(v, dist[u] + 1).second) q.push(v);
  }
  if (!dist.count(a)) return std::nullopt;
  std::vector<NodeId> hops;
  for (NodeId cur = a; cur != b;) {
    for (NodeId v : adj[cur]) {
      auto it = dist.find(v);
      if (it != dist.end() && it->second + 1 == dist[cur]) {
        cur = v;
        break;
      }
    }
    hops.push_back(cur);
  }
  return hops;
}

// ---------------------------------------------------------------------------
// Dynamic node controller
// ---------------------------------------------------------------------------

struct OperatorAlert {
  enum class Kind { SensingFault, DeadLink };
  Kind kind = Kind::SensingFault;
  NodeId node;   // sensing node, or the child end of the dead link
  std::optional<Link> link;
  double probability = 0.0;

  friend bool operator==(const OperatorAlert&, const OperatorAlert&) = default;
};

inline std::string_view to_string(OperatorAlert::Kind k) {
  return k == OperatorAlert::Kind::SensingFault ? "SensingFault" : "DeadLink";
}

struct CongestedLink {
  Link link;
  double p_comm = 0.0;
  std::uint8_t queue = 0;
};

struct Decision {
  std::vector<ConfigCommand> commands;   // seq and timestamp left for the sender
  std::vector<OperatorAlert> alerts;
  std::vector<CongestedLink> congested;
  bool suppressed_by_cooldown = false;
};

/// What the controller knows besides the reports: declared capacities and
/// the per-event PDU budget K.
struct DecisionContext {
  SimTime now = 0;
  std::optional<SimTime> last_command_round;
  std::map<NodeId, std::uint32_t> buffer_capacity;
  std::uint32_t max_pdu_per_event = 1;
};

/// Largest grid-aligned interval whose capacity K/CI covers eta * demand,
/// clamped to the allowed range.
inline std::uint16_t required_ci_units(double demand_pps, std::uint32_t k, double eta) {
  if (!(demand_pps > 0.0)) return kCiMaxUnits;
  const double ms = 1000.0 * k / (eta * demand_pps);
  const double units = std::floor(ms / kCiStepMs + 1e-9);
  return static_cast<std::uint16_t>(std::clamp(units, double(kCiMinUnits), double(kCiMaxUnits)));
}

inline Decision classify_and_decide(const AnomalyReport& report, const TopologySnapshot& snap,
                                    const std::map<NodeId, double>& rates, const ControllerParams& params,
                                    const DecisionContext& ctx) {
  Decision d;
  const TreeIndex tree = snap.tree();
  for (const auto& [node, post] : report.nodes) {
    if (post.p_sensing > params.theta_sense)
      d.alerts.push_back({OperatorAlert::Kind::SensingFault, node, std::nullopt, post.p_sensing});
    if (post.p_comm > params.theta_comm) {
      auto master = tree.master_of(node);
      if (!master) continue;
      const Link l{node, *master};
      const auto queue = snap.queue_of(node).value_or(0);
      const auto cap_it = ctx.buffer_capacity.find(node);
      const double cap = cap_it == ctx.buffer_capacity.end() ? 0.0 : cap_it->second;
      if (cap > 0.0 && queue >= params.congestion_queue_fraction * cap) {
        d.congested.push_back({l, post.p_comm, queue});
      } else {
        d.alerts.push_back({OperatorAlert::Kind::DeadLink, node, l, post.p_comm});
      }
    }
  }
  if (d.congested.empty()) return d;
  if (ctx.last_command_round && ctx.now - *ctx.last_command_round < from_seconds(params.cooldown())) {
    d.suppressed_by_cooldown = true;
    return d;
  }
  for (const Link& l : tree.links()) {
    const double demand = subtree_demand(tree, rates, l);
    const std::uint16_t target = required_ci_units(demand, ctx.max_pdu_per_event, params.safety_factor);
    const auto edge = snap.edge(l);
    if (edge && edge->ci_units != 0 && edge->ci_units <= target) continue;
    const auto slaves = tree.children_of(l.master);
    const auto slot = std::find(slaves.begin(), slaves.end(), l.child) - slaves.begin() + 1;
    if (slot > 3) continue;   // not addressable through a slave selector
    d.commands.push_back(make_conn_interval_command(l.master, static_cast<std::uint8_t>(slot), target));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Control loop
// ---------------------------------------------------------------------------

struct ControllerSetup {
  std::map<NodeId, double> nominal_rates;            // packets per second
  std::map<NodeId, std::uint32_t> buffer_capacity;
  std::uint32_t max_pdu_per_event = 1;
  SimTime staleness_timeout = from_seconds(90.0);
  ControllerParams params;

  static ControllerSetup from_scenario(const Scenario& sc) {
    ControllerSetup s;
    s.nominal_rates = blesdn::nominal_rates(sc);
    double period = 0.0;
    for (const auto& [id, cfg] : sc.nodes) {
      s.buffer_capacity[id] = cfg.buffer_capacity;
      period = std::max(period, cfg.control_gen_period_s);
    }
    s.max_pdu_per_event = sc.max_pdu_per_event;
    s.staleness_timeout = from_seconds(sc.controller_params.staleness_factor * period);
    s.params = sc.controller_params;
    return s;
  }
};

struct AnomalyRow {
  SimTime t = 0;
  NodeId node;
  double p_sensing = 0.0;
  double p_comm = 0.0;
};

struct ControlRound {
  SimTime t = 0;
  std::optional<AnomalyReport> report;
  Decision decision;
  std::vector<OperatorAlert> new_alerts;   // after hysteresis
};

/// Deterministic controller state machine. Fed reports and northbound
/// records as they arrive; tick() runs one window of inference and decision.
class Controller {
 public:
  explicit Controller(ControllerSetup setup) : setup_(std::move(setup)), rate_estimate_(setup_.nominal_rates) {}

  void on_status_report(const StatusReport& r, SimTime now) {
    try {
      snapshot_.ingest(r, now);
    } catch (const Error& e) {
      log(now, std::string("report rejected: ") + e.what());
    }
  }

  void on_northbound(const NorthboundRecord& rec) { records_.push_back(rec); }

  /// Runs the window [now - W, now). Returned commands carry no seq yet.
  ControlRound tick(SimTime now) {
    const auto& p = setup_.params;
    const SimTime t0 = now - from_seconds(p.window_s);
    ControlRound round;
    round.t = now;
    snapshot_.refresh_staleness(now, setup_.staleness_timeout);
    for (const auto& [id, n] : snapshot_.nodes())
      if (n.stale && !reported_stale_.count(id)) {
        reported_stale_.insert(id);
        log(now, "stale " + to_string(id) + " last seen " + std::to_string(whole_ms(n.last_seen)) + " ms");
      } else if (!n.stale) {
        reported_stale_.erase(id);
      }

    TreeIndex tree;
    try {
      tree = snapshot_.tree();
    } catch (const Error& e) {
      log(now, std::string("window skipped: ") + e.what());
      return round;
    }

    std::set<NodeId> known(tree.nodes().begin(), tree.nodes().end());
    for (const auto& [id, r] : setup_.nominal_rates) known.insert(id);
    const auto counts = windowed_counts(records_, t0, now, known);

    // expected counts come from the rate estimated at window start
    std::map<NodeId, Evidence> evidence;
    std::map<NodeId, double> next_estimate;
    for (const auto& [id, c] : counts) {
      if (!tree.contains(id)) {
        log(now, "records from " + to_string(id) + " outside the reported topology ignored");
        continue;
      }
      evidence[id] = {static_cast<double>(c.observed), p.window_s * rate_of(rate_estimate_, id)};
      const std::uint32_t prev_max = last_max_pid_.count(id) ? last_max_pid_[id] : 0;
      if (c.observed >= p.min_packets_for_rate) {
        next_estimate[id] = (c.max_pid - prev_max) / p.window_s;
      } else {
        next_estimate[id] = rate_of(setup_.nominal_rates, id);
      }
      last_max_pid_[id] = c.max_pid;
    }
    rate_estimate_ = next_estimate;

    AnomalyReport report = infer_anomalies(tree, evidence, p);
    report.t0 = t0;
    report.t1 = now;
    for (const auto& w : report.warnings) log(now, "warning: " + w);
    {
      std::ostringstream os;
      os << "window [" << whole_ms(t0) << "," << whole_ms(now) << ") backend="
         << (report.backend == InferenceBackend::Exact ? "exact" : "mean-field") << " latents=" << report.latent_count;
      log(now, os.str());
    }
    for (const auto& [id, post] : report.nodes) {
      anomaly_rows_.push_back({now, id, post.p_sensing, post.p_comm});
      if (post.p_sensing > 0.1 || post.p_comm > 0.1) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "posterior %s p_sensing=%.4f p_comm=%.4f", to_string(id).c_str(), post.p_sensing,
                      post.p_comm);
        log(now, buf);
      }
      if (post.p_comm > p.theta_comm && !first_comm_crossing_) first_comm_crossing_ = now;
    }

    DecisionContext ctx{now, last_command_round_, setup_.buffer_capacity, setup_.max_pdu_per_event};
    Decision d = classify_and_decide(report, snapshot_, rate_estimate_, p, ctx);

    // alert hysteresis: raise above threshold, re-arm below theta_clear
    for (const auto& a : d.alerts) {
      const auto key = std::make_pair(a.kind, a.node);
      if (active_alerts_.insert(key).second) {
        round.new_alerts.push_back(a);
        char buf[160];
        std::snprintf(buf, sizeof buf, "alert %s %s p=%.4f", std::string(to_string(a.kind)).c_str(),
                      a.link ? to_string(*a.link).c_str() : to_string(a.node).c_str(), a.probability);
        log(now, buf);
      }
    }
    for (auto it = active_alerts_.begin(); it != active_alerts_.end();) {
      const auto post = report.nodes.find(it->second);
      const double v = post == report.nodes.end() ? 0.0
                       : it->first == OperatorAlert::Kind::SensingFault ? post->second.p_sensing
                                                                          : post->second.p_comm;
      if (v < p.theta_clear) {
        log(now, "cleared " + std::string(to_string(it->first)) + " " + to_string(it->second));
        it = active_alerts_.erase(it);
      } else {
        ++it;
      }
    }
    for (const auto& c : d.congested) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "congestion %s p_comm=%.4f queue=%u", to_string(c.link).c_str(), c.p_comm,
                    unsigned(c.queue));
      log(now, buf);
      if (!first_congestion_) first_congestion_ = now;
    }
    if (d.suppressed_by_cooldown) log(now, "commands suppressed: cooldown");
    if (!d.commands.empty()) last_command_round_ = now;

    round.report = std::move(report);
    round.decision = std::move(d);
    return round;
  }

  /// Records a command as sent, after the sender assigned seq and timestamp.
  void log_command(const ConfigCommand& c, SimTime now) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "command seq=%u %s target=%s selector=%u value=%u", unsigned(c.seq),
                  std::string(to_string(c.opcode)).c_str(), to_string(c.target).c_str(), unsigned(c.selector),
                  unsigned(c.value));
    std::string line = buf;
    if (c.opcode == Opcode::SetConnInterval) {
      std::snprintf(buf, sizeof buf, " (%.2f ms)", ci_units_to_ms(c.value));
      line += buf;
    }
    log(now, line);
    ++commands_sent_;
  }

  void log(SimTime now, const std::string& msg) { log_.push_back("[" + std::to_string(whole_ms(now)) + "] " + msg); }

  const TopologySnapshot& snapshot() const { return snapshot_; }
  const std::vector<std::string>& log_lines() const { return log_; }
  const std::vector<AnomalyRow>& anomaly_rows() const { return anomaly_rows_; }
  const std::vector<NorthboundRecord>& records() const { return records_; }
  const std::map<NodeId, double>& rate_estimate() const { return rate_estimate_; }
  std::optional<SimTime> first_comm_crossing() const { return first_comm_crossing_; }
  std::optional<SimTime> first_congestion() const { return first_congestion_; }
  std::optional<SimTime> last_command_round() const { return last_command_round_; }
  std::uint64_t commands_sent() const { return commands_sent_; }

 private:
  static double rate_of(const std::map<NodeId, double>& m, NodeId id) {
    auto it = m.find(id);
    return it == m.end() ? 0.0 : it->second;
  }

  ControllerSetup setup_;
  TopologySnapshot snapshot_;
  std::vector<NorthboundRecord> records_;
  std::map<NodeId, double> rate_estimate_;
  std::map<NodeId, std::uint32_t> last_max_pid_;
  std::set<std::pair<OperatorAlert::Kind, NodeId>> active_alerts_;
  std::set<NodeId> reported_stale_;
  std::optional<SimTime> last_command_round_;
  std::optional<SimTime> first_comm_crossing_;
  std::optional<SimTime> first_congestion_;
  std::vector<std::string> log_;
  std::vector<AnomalyRow> anomaly_rows_;
  std::uint64_t commands_sent_ = 0;
};

}  // namespace blesdn
