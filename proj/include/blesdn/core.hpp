#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "blesdn/error.hpp"
#include "blesdn/params.hpp"

namespace blesdn {

// ---------------------------------------------------------------------------
// Time
// ---------------------------------------------------------------------------

/// Simulated time in integer microseconds. 1.25 ms grids and 300 ms
/// intervals are exact at this resolution.
using SimTime = std::int64_t;

inline constexpr SimTime kUsPerMs = 1000;
inline constexpr SimTime kUsPerSecond = 1'000'000;

inline SimTime from_ms(double ms) { return static_cast<SimTime>(std::llround(ms * kUsPerMs)); }
inline SimTime from_seconds(double s) { return static_cast<SimTime>(std::llround(s * kUsPerSecond)); }
constexpr double to_ms(SimTime t) { return static_cast<double>(t) / kUsPerMs; }
constexpr double to_seconds(SimTime t) { return static_cast<double>(t) / kUsPerSecond; }
/// Integer milliseconds as written to every CSV artifact.
constexpr std::int64_t whole_ms(SimTime t) { return t >= 0 ? t / kUsPerMs : -((-t + kUsPerMs - 1) / kUsPerMs); }

// ---------------------------------------------------------------------------
// Identifiers
// ---------------------------------------------------------------------------

struct NodeId {
  std::uint16_t value = 0;

  static constexpr std::uint16_t kUnset = 0;
  static constexpr std::uint16_t kNoPeer = 0xFFFF;

  constexpr NodeId() = default;
  constexpr explicit NodeId(std::uint16_t v) : value(v) {}

  static constexpr NodeId none() { return NodeId{kNoPeer}; }
  constexpr bool is_none() const { return value == kNoPeer; }
  constexpr bool is_unset() const { return value == kUnset; }

  friend constexpr auto operator<=>(NodeId, NodeId) = default;
};

inline std::string to_string(NodeId id) { return "N" + std::to_string(id.value); }

enum class DeviceType : std::uint8_t { Sink = 0, Static = 1, Dynamic = 2 };

inline std::string_view to_string(DeviceType t) {
  switch (t) {
    case DeviceType::Sink: return "sink";
    case DeviceType::Static: return "static";
    case DeviceType::Dynamic: return "dynamic";
  }
  return "?";
}

/// A directed data link: the child sends toward its master.
struct Link {
  NodeId child;
  NodeId master;
  friend constexpr auto operator<=>(const Link&, const Link&) = default;
};

inline std::string to_string(const Link& l) { return "(" + to_string(l.child) + "," + to_string(l.master) + ")"; }

// ---------------------------------------------------------------------------
// Connection interval grid
// ---------------------------------------------------------------------------

inline constexpr double kCiStepMs = 1.25;
inline constexpr std::uint16_t kCiMinUnits = 6;     // 7.5 ms
inline constexpr std::uint16_t kCiMaxUnits = 3200;  // 4000 ms
inline constexpr SimTime kCiStepUs = 1250;

/// Grid units for a connection interval in ms, or nullopt when the value is
/// off-grid or outside [7.5, 4000] ms.
inline std::optional<std::uint16_t> ci_units_from_ms(double ms) {
  if (!std::isfinite(ms)) return std::nullopt;
  const double units = ms / kCiStepMs;
  const double rounded = std::round(units);
  if (std::abs(units - rounded) > 1e-9) return std::nullopt;
  if (rounded < kCiMinUnits || rounded > kCiMaxUnits) return std::nullopt;
  return static_cast<std::uint16_t>(rounded);
}

constexpr double ci_units_to_ms(std::uint16_t units) { return units * kCiStepMs; }
constexpr SimTime ci_units_to_us(std::uint16_t units) { return static_cast<SimTime>(units) * kCiStepUs; }

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

struct NodeConfig {
  double connection_interval_ms = 300.0;  // of the link toward this node's master
  int tx_power_dbm = 0;
  std::uint32_t buffer_capacity = 25;
  std::uint32_t payload_size_bytes = 20;
  double data_gen_period_s = 10.0;        // 0 = no generation
  double control_gen_period_s = 30.0;
  DeviceType device_type = DeviceType::Static;
  std::uint8_t battery_pct = 100;
};

struct Topology {
  NodeId sink;
  std::vector<Link> edges;
  std::vector<std::pair<NodeId, NodeId>> proximity_edges;
  std::uint32_t max_slaves = 3;
};

struct RateChange {
  double time_s = 0.0;
  NodeId node;
  double data_gen_period_s = 0.0;
};

struct Scenario {
  std::map<NodeId, NodeConfig> nodes;
  Topology topology;
  std::vector<RateChange> rate_schedule;
  double duration_s = 0.0;
  std::uint64_t seed = 1;
  std::map<Link, int> per_link_rssi;          // default -60 dBm
  std::map<Link, double> per_link_per;        // default 0
  std::map<Link, double> per_link_phase_ms;   // default child id mod CI
  std::uint32_t max_pdu_per_event = 1;
  bool controller_enabled = true;
  ControllerParams controller_params;
  FloodParams flood;

  int rssi(const Link& l) const {
    auto it = per_link_rssi.find(l);
    return it == per_link_rssi.end() ? -60 : it->second;
  }
  double per(const Link& l) const {
    auto it = per_link_per.find(l);
    return it == per_link_per.end() ? 0.0 : it->second;
  }
};

struct Packet {
  NodeId src;
  std::uint32_t pid = 0;
  std::uint32_t payload_bits = 0;
  SimTime t_created = 0;
  std::optional<SimTime> t_delivered;
  std::uint16_t hop_count = 0;

  friend bool operator==(const Packet&, const Packet&) = default;
};

// ---------------------------------------------------------------------------
// Tree index
// ---------------------------------------------------------------------------

/// Master/children lookup over a set of child->master edges. Children are kept
/// in ascending id order, which is also the slave-slot order.
class TreeIndex {
 public:
  TreeIndex() = default;

  TreeIndex(NodeId sink, const std::vector<Link>& edges) : sink_(sink) {
    nodes_.insert(sink);
    for (const auto& e : edges) {
      nodes_.insert(e.child);
      nodes_.insert(e.master);
      master_.emplace(e.child, e.master);
      children_[e.master].insert(e.child);
    }
  }

  NodeId sink() const { return sink_; }
  const std::set<NodeId>& nodes() const { return nodes_; }
  bool contains(NodeId n) const { return nodes_.count(n) != 0; }

  std::optional<NodeId> master_of(NodeId n) const {
    auto it = master_.find(n);
    if (it == master_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<NodeId> children_of(NodeId n) const {
    auto it = children_.find(n);
    if (it == children_.end()) return {};
    return {it->second.begin(), it->second.end()};
  }

  bool has_link(const Link& l) const {
    auto it = master_.find(l.child);
    return it != master_.end() && it->second == l.master;
  }

  std::vector<Link> links() const {
    std::vector<Link> out;
    out.reserve(master_.size());
    for (const auto& [c, m] : master_) out.push_back({c, m});
    return out;
  }

  /// Nodes on the path from n to the sink, n first, sink last. Throws
  /// NotATree when the walk cycles or dead-ends before the sink.
  std::vector<NodeId> path_to_sink(NodeId n) const {
    if (!contains(n)) throw Error(ErrorCode::UnknownNode, to_string(n));
    std::vector<NodeId> path{n};
    NodeId cur = n;
    while (cur != sink_) {
      auto m = master_of(cur);
      if (!m) throw Error(ErrorCode::NotATree, to_string(cur) + " does not reach the sink");
      cur = *m;
      path.push_back(cur);
      if (path.size() > nodes_.size()) throw Error(ErrorCode::NotATree, "cycle through " + to_string(cur));
    }
    return path;
  }

  /// Child and all of its descendants.
  std::vector<NodeId> subtree(NodeId root) const {
    std::vector<NodeId> out;
    std::vector<NodeId> stack{root};
    while (!stack.empty()) {
      NodeId n = stack.back();
      stack.pop_back();
      out.push_back(n);
      if (out.size() > nodes_.size()) throw Error(ErrorCode::NotATree, "cycle below " + to_string(root));
      auto kids = children_of(n);
      for (auto it = kids.rbegin(); it != kids.rend(); ++it) stack.push_back(*it);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  NodeId sink_;
  std::set<NodeId> nodes_;
  std::map<NodeId, NodeId> master_;
  std::map<NodeId, std::set<NodeId>> children_;
};

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

struct Violation {
  ErrorCode code;
  std::string detail;
};

inline std::string to_string(const Violation& v) { return std::string(to_string(v.code)) + ": " + v.detail; }

/// Carries every violation found, not just the first.
class ScenarioError : public Error {
 public:
  explicit ScenarioError(std::vector<Violation> violations)
      : Error(violations.empty() ? ErrorCode::MalformedDocument : violations.front().code, summarize(violations)),
        violations_(std::move(violations)) {}

  const std::vector<Violation>& violations() const noexcept { return violations_; }

 private:
  static std::string summarize(const std::vector<Violation>& vs) {
    std::string s = std::to_string(vs.size()) + " violation(s)";
    for (const auto& v : vs) s += "; " + to_string(v);
    return s;
  }
  std::vector<Violation> violations_;
};

namespace detail {

inline void check_topology(const Scenario& sc, std::vector<Violation>& out) {
  const auto& topo = sc.topology;
  auto known = [&](NodeId n) { return sc.nodes.count(n) != 0; };

  if (!known(topo.sink)) out.push_back({ErrorCode::UnknownNodeReference, "sink " + to_string(topo.sink)});

  std::map<NodeId, std::vector<NodeId>> masters;
  std::map<NodeId, std::vector<NodeId>> slaves;
  for (const auto& e : topo.edges) {
    if (!known(e.child)) out.push_back({ErrorCode::UnknownNodeReference, "edge child " + to_string(e.child)});
    if (!known(e.master)) out.push_back({ErrorCode::UnknownNodeReference, "edge master " + to_string(e.master)});
    if (e.child == e.master) out.push_back({ErrorCode::CycleInTopology, "self-loop at " + to_string(e.child)});
    masters[e.child].push_back(e.master);
    slaves[e.master].push_back(e.child);
  }
  for (const auto& [a, b] : topo.proximity_edges) {
    if (!known(a) || !known(b))
      out.push_back({ErrorCode::UnknownNodeReference, "proximity edge " + to_string(a) + "-" + to_string(b)});
  }

  if (masters.count(topo.sink)) out.push_back({ErrorCode::SinkHasMaster, to_string(topo.sink)});
  for (const auto& [child, ms] : masters) {
    if (ms.size() > 1) out.push_back({ErrorCode::MultipleMasters, to_string(child)});
  }
  for (const auto& [master, ss] : slaves) {
    if (ss.size() > topo.max_slaves)
      out.push_back({ErrorCode::TooManySlaves,
                     to_string(master) + " has " + std::to_string(ss.size()) + " > " + std::to_string(topo.max_slaves)});
  }

  // Cycle / reachability walk over the first master of each node.
  std::map<NodeId, NodeId> first_master;
  for (const auto& e : topo.edges) first_master.emplace(e.child, e.master);
  std::set<NodeId> reported_cycle;
  for (const auto& [id, cfg] : sc.nodes) {
    if (id == topo.sink) continue;
    std::vector<NodeId> trail{id};
    NodeId cur = id;
    bool ok = false;
    while (true) {
      auto it = first_master.find(cur);
      if (it == first_master.end()) break;
      cur = it->second;
      if (cur == topo.sink) {
        ok = true;
        break;
      }
      if (std::find(trail.begin(), trail.end(), cur) != trail.end()) {
        // one violation per distinct cycle
        auto start = std::find(trail.begin(), trail.end(), cur);
        NodeId lowest = *std::min_element(start, trail.end());
        if (reported_cycle.insert(lowest).second)
          out.push_back({ErrorCode::CycleInTopology, "cycle through " + to_string(lowest)});
        break;
      }
      trail.push_back(cur);
    }
    if (!ok) out.push_back({ErrorCode::NodeUnreachable, to_string(id) + " has no path to the sink"});
  }
}

inline void check_nodes(const Scenario& sc, std::vector<Violation>& out) {
  for (const auto& [id, cfg] : sc.nodes) {
    if (id.is_unset() || id.is_none())
      out.push_back({ErrorCode::UnknownNodeReference, "reserved node id " + std::to_string(id.value)});
    if (!ci_units_from_ms(cfg.connection_interval_ms))
      out.push_back({ErrorCode::BadConnectionInterval,
                     to_string(id) + " " + std::to_string(cfg.connection_interval_ms) + " ms"});
    if (cfg.buffer_capacity < 1) out.push_back({ErrorCode::BadBufferCapacity, to_string(id)});
    if (cfg.payload_size_bytes < 1) out.push_back({ErrorCode::BadPayloadSize, to_string(id)});
    if (!(cfg.data_gen_period_s >= 0.0) || !std::isfinite(cfg.data_gen_period_s))
      out.push_back({ErrorCode::BadPeriod, to_string(id) + " data_gen_period"});
    if (!(cfg.control_gen_period_s > 0.0) || !std::isfinite(cfg.control_gen_period_s))
      out.push_back({ErrorCode::BadPeriod, to_string(id) + " control_gen_period"});
    if (cfg.tx_power_dbm < -128 || cfg.tx_power_dbm > 127)
      out.push_back({ErrorCode::ValueOutOfRange, to_string(id) + " tx_power"});
    if (cfg.battery_pct > 100) out.push_back({ErrorCode::ValueOutOfRange, to_string(id) + " battery"});
    const bool is_sink = id == sc.topology.sink;
    if (is_sink != (cfg.device_type == DeviceType::Sink))
      out.push_back({ErrorCode::SinkTypeMismatch, to_string(id)});
  }
}

inline void check_schedule(const Scenario& sc, std::vector<Violation>& out) {
  double prev = -1.0;
  for (std::size_t i = 0; i < sc.rate_schedule.size(); ++i) {
    const auto& rc = sc.rate_schedule[i];
    if (rc.time_s < 0.0 || rc.time_s > sc.duration_s)
      out.push_back({ErrorCode::ScheduleOutOfRange, "entry " + std::to_string(i)});
    if (rc.time_s < prev) out.push_back({ErrorCode::UnsortedSchedule, "entry " + std::to_string(i)});
    prev = std::max(prev, rc.time_s);
    if (!sc.nodes.count(rc.node))
      out.push_back({ErrorCode::UnknownNodeReference, "schedule entry " + std::to_string(i) + " " + to_string(rc.node)});
    if (!(rc.data_gen_period_s >= 0.0)) out.push_back({ErrorCode::BadPeriod, "schedule entry " + std::to_string(i)});
  }
}

inline void check_links(const Scenario& sc, std::vector<Violation>& out) {
  std::set<Link> edges(sc.topology.edges.begin(), sc.topology.edges.end());
  auto check_known = [&](const Link& l, const char* what) {
    if (!edges.count(l)) out.push_back({ErrorCode::UnknownNodeReference, std::string(what) + " for unknown link " + to_string(l)});
  };
  for (const auto& [l, v] : sc.per_link_rssi) {
    check_known(l, "rssi");
    if (v < -128 || v > 127) out.push_back({ErrorCode::ValueOutOfRange, "rssi " + to_string(l)});
  }
  for (const auto& [l, v] : sc.per_link_per) {
    check_known(l, "per");
    if (!(v >= 0.0 && v < 1.0)) out.push_back({ErrorCode::BadProbability, "per " + to_string(l)});
  }
  for (const auto& [l, v] : sc.per_link_phase_ms) {
    check_known(l, "phase offset");
    if (!(v >= 0.0)) out.push_back({ErrorCode::ValueOutOfRange, "phase offset " + to_string(l)});
  }
  if (sc.max_pdu_per_event < 1) out.push_back({ErrorCode::ValueOutOfRange, "max_pdu_per_event must be >= 1"});
}

inline void check_params(const Scenario& sc, std::vector<Violation>& out) {
  const auto& p = sc.controller_params;
  auto bad = [&](const std::string& what) { out.push_back({ErrorCode::BadControllerParams, what}); };
  if (!(p.window_s > 0.0)) bad("window_s must be > 0");
  if (!(p.fault_leak > 0.0 && p.fault_leak < p.healthy_delivery && p.healthy_delivery <= 1.0))
    bad("need 0 < fault_leak < healthy_delivery <= 1");
  for (double th : {p.theta_sense, p.theta_comm, p.theta_clear})
    if (!(th >= 0.5 && th <= 1.0)) bad("thresholds must lie in [0.5, 1]");
  if (!(p.safety_factor >= 1.0)) bad("safety_factor must be >= 1");
  for (double pr : {p.prior_sensor_ok, p.prior_link_ok})
    if (!(pr > 0.0 && pr < 1.0)) bad("priors must lie in (0, 1)");
  if (!(p.congestion_queue_fraction > 0.0 && p.congestion_queue_fraction <= 1.0))
    bad("congestion_queue_fraction must lie in (0, 1]");
  if (p.cooldown() < 0.0) bad("cooldown must be >= 0");
  if (p.mf_block_latents < 1 || p.mf_block_latents > 2) bad("mf_block_latents must be 1 or 2");
  if (p.mf_refine_window > 20) bad("mf_refine_window above 20 is not tractable");
  if (p.exact_max_latents > 26) bad("exact_max_latents above 26 is not tractable");

  const auto& f = sc.flood;
  if (!(f.hop_latency_ms >= 0.0) || !(f.jitter_ms >= 0.0)) out.push_back({ErrorCode::ValueOutOfRange, "flood timing"});
  if (f.ttl < 1) out.push_back({ErrorCode::ValueOutOfRange, "flood ttl must be >= 1"});
  if (!(f.loss_probability >= 0.0 && f.loss_probability < 1.0))
    out.push_back({ErrorCode::BadProbability, "flood loss_probability"});
}

}  // namespace detail

/// Every invariant violation in the scenario; empty when valid.
inline std::vector<Violation> check_scenario(const Scenario& sc) {
  std::vector<Violation> out;
  if (!(sc.duration_s > 0.0) || !std::isfinite(sc.duration_s))
    out.push_back({ErrorCode::BadDuration, "duration_s must be > 0"});
  detail::check_nodes(sc, out);
  detail::check_topology(sc, out);
  detail::check_schedule(sc, out);
  detail::check_links(sc, out);
  detail::check_params(sc, out);
  return out;
}

/// Returns the scenario unchanged when valid; throws ScenarioError listing
/// every violation otherwise.
inline const Scenario& validate_scenario(const Scenario& sc) {
  auto violations = check_scenario(sc);
  if (!violations.empty()) throw ScenarioError(std::move(violations));
  return sc;
}

// ---------------------------------------------------------------------------
// Topology queries
// ---------------------------------------------------------------------------

/// Number of directed edges from node to the sink.
inline std::size_t hop_count(const Topology& topo, NodeId node) {
  TreeIndex tree(topo.sink, topo.edges);
  if (!tree.contains(node)) throw Error(ErrorCode::UnknownNode, to_string(node));
  return tree.path_to_sink(node).size() - 1;
}

/// Sum of generation rates (packets/s) of the link's child and every
/// descendant of it.
inline double subtree_demand(const TreeIndex& tree, const std::map<NodeId, double>& rates, const Link& link) {
  if (!tree.has_link(link)) throw Error(ErrorCode::UnknownLink, to_string(link));
  double total = 0.0;
  for (NodeId n : tree.subtree(link.child)) {
    auto it = rates.find(n);
    if (it != rates.end()) total += it->second;
  }
  return total;
}

inline double subtree_demand(const Topology& topo, const std::map<NodeId, double>& rates, const Link& link) {
  return subtree_demand(TreeIndex(topo.sink, topo.edges), rates, link);
}

/// Nominal generation rates (packets/s) declared in the scenario.
inline std::map<NodeId, double> nominal_rates(const Scenario& sc) {
  std::map<NodeId, double> out;
  for (const auto& [id, cfg] : sc.nodes) out[id] = cfg.data_gen_period_s > 0.0 ? 1.0 / cfg.data_gen_period_s : 0.0;
  return out;
}

}  // namespace blesdn

template <>
struct std::hash<blesdn::NodeId> {
  std::size_t operator()(blesdn::NodeId id) const noexcept { return std::hash<std::uint16_t>{}(id.value); }
};
