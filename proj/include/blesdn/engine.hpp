#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "blesdn/codec.hpp"
#include "blesdn/core.hpp"
#include "blesdn/event_queue.hpp"
#include "blesdn/rng.hpp"

namespace blesdn {

// Equal-time ordering: a buffer freed by a connection event at t can take a
// packet generated at t.
enum class DataEventKind : int { Connection = 0, Generation = 1, RateChange = 2 };

struct DataEvent {
  DataEventKind kind = DataEventKind::Connection;
  std::uint32_t index = 0;   // link, node or schedule index depending on kind
  std::uint64_t epoch = 0;   // generation events: stale when != node epoch

  friend bool operator==(const DataEvent&, const DataEvent&) = default;
};

struct NodeRuntime {
  NodeId id;
  NodeConfig config;
  bool is_sink = false;
  std::deque<Packet> buffer;
  std::uint32_t next_pid = 1;
  std::uint64_t generated = 0;
  std::uint64_t drops = 0;  // overflow drops attributed to this node
  double current_gen_period_s = 0.0;
  std::uint64_t gen_epoch = 0;
  std::uint32_t max_slaves = 3;

  // time-weighted occupancy integral, packet * microseconds
  SimTime last_change = 0;
  std::int64_t occupancy_area_acc = 0;

  std::int64_t occupancy_area(SimTime now) const {
    return occupancy_area_acc + static_cast<std::int64_t>(buffer.size()) * (now - last_change);
  }
  void touch(SimTime now) {
    occupancy_area_acc = occupancy_area(now);
    last_change = now;
  }
};

struct LinkRuntime {
  Link link;
  std::size_t child = 0;   // index into nodes
  std::size_t master = 0;
  std::uint16_t ci_units = 240;
  SimTime phase_offset = 0;
  std::uint32_t max_pdu_per_event = 1;
  double per = 0.0;
  int rssi = -60;
  std::uint64_t transported = 0;

  SimTime ci() const { return ci_units_to_us(ci_units); }
};

enum class DropCause { Overflow, BufferShrink };

struct DropRecord {
  SimTime t = 0;
  NodeId node;
  NodeId src;
  std::uint32_t pid = 0;
  std::uint64_t cumulative = 0;
  DropCause cause = DropCause::Overflow;
};

struct TransferRecord {
  SimTime t = 0;
  Link link;
  std::uint32_t bits = 0;
};

struct OccupancySample {
  SimTime t = 0;
  double mean = 0.0;                     // over all non-sink nodes
  std::vector<std::uint32_t> per_node;   // engine node order
};

struct DataLog {
  std::vector<Packet> deliveries;
  std::vector<DropRecord> drops;
  std::vector<TransferRecord> transfers;
  std::vector<OccupancySample> occupancy;
  std::optional<SimTime> first_buffer_full;
};

struct PacketTotals {
  std::uint64_t generated = 0;
  std::uint64_t delivered = 0;
  std::uint64_t dropped = 0;
  std::uint64_t in_buffers = 0;

  bool conserved() const { return generated == delivered + dropped + in_buffers; }
};

struct EngineOptions {
  bool check_invariants = true;
};

/// Deterministic discrete-event model of the data plane. Single-threaded;
/// one instance per thread.
class Engine {
 public:
  explicit Engine(const Scenario& scenario, EngineOptions opts = {})
      : tree_(scenario.topology.sink, scenario.topology.edges),
        opts_(opts),
        rng_(scenario.seed, kDataStream),
        rate_schedule_(scenario.rate_schedule) {
    for (const auto& [id, cfg] : scenario.nodes) {
      NodeRuntime n;
      n.id = id;
      n.config = cfg;
      n.is_sink = id == scenario.topology.sink;
      n.current_gen_period_s = cfg.data_gen_period_s;
      n.max_slaves = scenario.topology.max_slaves;
      node_index_.emplace(id, nodes_.size());
      nodes_.push_back(std::move(n));
    }
    for (const auto& e : scenario.topology.edges) {
      LinkRuntime l;
      l.link = e;
      l.child = index_of(e.child);
      l.master = index_of(e.master);
      const auto& cfg = nodes_[l.child].config;
      l.ci_units = ci_units_from_ms(cfg.connection_interval_ms).value_or(240);
      if (auto it = scenario.per_link_phase_ms.find(e); it != scenario.per_link_phase_ms.end()) {
        l.phase_offset = from_ms(it->second);
      } else {
        const auto whole = static_cast<std::int64_t>(std::floor(ci_units_to_ms(l.ci_units)));
        l.phase_offset = static_cast<SimTime>(e.child.value % whole) * kUsPerMs;
      }
      l.max_pdu_per_event = scenario.max_pdu_per_event;
      l.per = scenario.per(e);
      l.rssi = scenario.rssi(e);
      link_index_.emplace(e, links_.size());
      links_.push_back(l);
    }
    for (std::uint32_t i = 0; i < links_.size(); ++i)
      queue_.push(links_[i].phase_offset, rank(DataEventKind::Connection), links_[i].link.child,
                  {DataEventKind::Connection, i, 0});
    for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].current_gen_period_s > 0.0)
        queue_.push(from_seconds(nodes_[i].current_gen_period_s), rank(DataEventKind::Generation), nodes_[i].id,
                    {DataEventKind::Generation, i, 0});
    }
    for (std::uint32_t i = 0; i < rate_schedule_.size(); ++i)
      queue_.push(from_seconds(rate_schedule_[i].time_s), rank(DataEventKind::RateChange), rate_schedule_[i].node,
                  {DataEventKind::RateChange, i, 0});
  }

  // -- stepping ------------------------------------------------------------

  std::optional<SimTime> next_event_time() const {
    if (queue_.empty()) return std::nullopt;
    return queue_.top().key.time;
  }

  SimTime now() const { return now_; }

  /// Processes the earliest pending event.
  void step() {
    auto e = queue_.pop();
    now_ = e.key.time;
    switch (e.payload.kind) {
      case DataEventKind::Connection: on_connection_event(e.payload.index); break;
      case DataEventKind::Generation: on_generation_event(e.payload.index, e.payload.epoch); break;
      case DataEventKind::RateChange: on_rate_change(e.payload.index); break;
    }
    if (opts_.check_invariants) check_invariants();
  }

  /// Processes every event with time <= t_end.
  const DataLog& run_until(SimTime t_end) {
    while (!queue_.empty() && queue_.top().key.time <= t_end) step();
    return log_;
  }

  // -- control -------------------------------------------------------------

  /// Applies a downlink command at time now. Connection-interval changes take
  /// effect from the link's next connection event.
  void apply_config(const ConfigCommand& cmd, SimTime now) {
    auto nit = node_index_.find(cmd.target);
    if (nit == node_index_.end()) throw Error(ErrorCode::UnknownNode, to_string(cmd.target));
    NodeRuntime& node = nodes_[nit->second];

    std::optional<std::size_t> link;
    if (cmd.selector != kSelectorNode) {
      link = resolve_selector(node, cmd.selector);
      if (!link)
        throw Error(ErrorCode::UnknownConnectionSelector,
                    to_string(cmd.target) + " selector " + std::to_string(cmd.selector));
    } else if (cmd.opcode == Opcode::SetConnInterval) {
      throw Error(ErrorCode::UnknownConnectionSelector, "connection interval needs a link selector");
    }

    switch (cmd.opcode) {
      case Opcode::SetConnInterval:
        if (cmd.value < kCiMinUnits || cmd.value > kCiMaxUnits)
          throw Error(ErrorCode::ValueOutOfRange, "connection interval units " + std::to_string(cmd.value));
        links_[*link].ci_units = cmd.value;
        break;
      case Opcode::SetTxPower: {
        const auto raw = static_cast<std::int16_t>(cmd.value);
        if (raw < -128 || raw > 127) throw Error(ErrorCode::ValueOutOfRange, "tx power " + std::to_string(raw));
        node.config.tx_power_dbm = raw;
        break;
      }
      case Opcode::SetBufferSize:
        if (cmd.value < 1) throw Error(ErrorCode::ValueOutOfRange, "buffer size 0");
        resize_buffer(node, cmd.value, now);
        break;
      case Opcode::SetMaxSlaves:
        node.max_slaves = cmd.value;
        break;
    }
    if (opts_.check_invariants) check_invariants();
  }

  // -- observation ---------------------------------------------------------

  void set_delivery_listener(std::function<void(const Packet&)> fn) { on_delivery_ = std::move(fn); }

  const DataLog& log() const { return log_; }
  const std::vector<NodeRuntime>& nodes() const { return nodes_; }
  const std::vector<LinkRuntime>& links() const { return links_; }
  const TreeIndex& tree() const { return tree_; }

  const NodeRuntime& node(NodeId id) const { return nodes_[index_of(id)]; }
  std::size_t index_of(NodeId id) const {
    auto it = node_index_.find(id);
    if (it == node_index_.end()) throw Error(ErrorCode::UnknownNode, to_string(id));
    return it->second;
  }
  const LinkRuntime& link(const Link& l) const {
    auto it = link_index_.find(l);
    if (it == link_index_.end()) throw Error(ErrorCode::UnknownLink, to_string(l));
    return links_[it->second];
  }
  std::optional<std::size_t> master_link_of(NodeId id) const {
    auto m = tree_.master_of(id);
    if (!m) return std::nullopt;
    return link_index_.at(Link{id, *m});
  }

  const PacketTotals& totals() const { return totals_; }

  std::vector<EventQueue<DataEvent>::Entry> pending_events() const { return queue_.pending(); }

  /// Links selectable on a node: slot 0 is the master link, slots 1..3 the
  /// slaves in ascending id order.
  std::optional<std::size_t> resolve_selector(const NodeRuntime& node, std::uint8_t selector) const {
    if (selector == kSelectorMaster) return master_link_of(node.id);
    const auto slaves = tree_.children_of(node.id);
    if (selector >= 1 && selector <= 3 && selector <= slaves.size())
      return link_index_.at(Link{slaves[selector - 1], node.id});
    return std::nullopt;
  }

 private:
  static int rank(DataEventKind k) { return static_cast<int>(k); }

  void on_generation_event(std::uint32_t idx, std::uint64_t epoch) {
    NodeRuntime& node = nodes_[idx];
    if (epoch != node.gen_epoch || node.current_gen_period_s <= 0.0) return;
    Packet p;
    p.src = node.id;
    p.pid = node.next_pid++;
    p.payload_bits = node.config.payload_size_bytes * 8;
    p.t_created = now_;
    ++node.generated;
    ++totals_.generated;
    if (node.is_sink) {
      deliver(std::move(p));
    } else {
      enqueue_or_drop(node, std::move(p));
    }
    queue_.push(now_ + from_seconds(node.current_gen_period_s), rank(DataEventKind::Generation), node.id,
                {DataEventKind::Generation, idx, node.gen_epoch});
  }

  void on_rate_change(std::uint32_t idx) {
    const RateChange& rc = rate_schedule_[idx];
    NodeRuntime& node = nodes_[index_of(rc.node)];
    node.current_gen_period_s = rc.data_gen_period_s;
    ++node.gen_epoch;
    if (rc.data_gen_period_s > 0.0)
      queue_.push(now_ + from_seconds(rc.data_gen_period_s), rank(DataEventKind::Generation), node.id,
                  {DataEventKind::Generation, static_cast<std::uint32_t>(index_of(rc.node)), node.gen_epoch});
  }

  void on_connection_event(std::uint32_t idx) {
    LinkRuntime& link = links_[idx];
    NodeRuntime& child = nodes_[link.child];
    NodeRuntime& master = nodes_[link.master];
    for (std::uint32_t slot = 0; slot < link.max_pdu_per_event && !child.buffer.empty(); ++slot) {
      // a failed PDU stays at the head and is retried in the next slot
      if (link.per > 0.0 && rng_.bernoulli(link.per)) continue;
      child.touch(now_);
      Packet p = std::move(child.buffer.front());
      child.buffer.pop_front();
      --totals_.in_buffers;
      ++p.hop_count;
      ++link.transported;
      log_.transfers.push_back({now_, link.link, p.payload_bits});
      if (master.is_sink) {
        deliver(std::move(p));
      } else {
        enqueue_or_drop(master, std::move(p));
      }
    }
    queue_.push(now_ + link.ci(), rank(DataEventKind::Connection), link.link.child,
                {DataEventKind::Connection, idx, 0});
  }

  void enqueue_or_drop(NodeRuntime& node, Packet p) {
    if (node.buffer.size() < node.config.buffer_capacity) {
      node.touch(now_);
      node.buffer.push_back(std::move(p));
      ++totals_.in_buffers;
      if (node.buffer.size() == node.config.buffer_capacity && !log_.first_buffer_full) log_.first_buffer_full = now_;
    } else {
      record_drop(node, p, DropCause::Overflow, now_);
    }
  }

  void record_drop(NodeRuntime& node, const Packet& p, DropCause cause, SimTime t) {
    ++node.drops;
    ++totals_.dropped;
    log_.drops.push_back({t, node.id, p.src, p.pid, totals_.dropped, cause});
  }

  void deliver(Packet p) {
    p.t_delivered = now_;
    ++totals_.delivered;
    log_.deliveries.push_back(p);
    OccupancySample s;
    s.t = now_;
    s.per_node.reserve(nodes_.size());
    std::uint64_t sum = 0;
    std::size_t buffered_nodes = 0;
    for (const auto& n : nodes_) {
      s.per_node.push_back(static_cast<std::uint32_t>(n.buffer.size()));
      if (!n.is_sink) {
        sum += n.buffer.size();
        ++buffered_nodes;
      }
    }
    s.mean = buffered_nodes ? static_cast<double>(sum) / buffered_nodes : 0.0;
    log_.occupancy.push_back(std::move(s));
    if (on_delivery_) on_delivery_(log_.deliveries.back());
  }

  void resize_buffer(NodeRuntime& node, std::uint32_t capacity, SimTime now) {
    node.touch(now);
    node.config.buffer_capacity = capacity;
    while (node.buffer.size() > capacity) {
      Packet p = std::move(node.buffer.back());
      node.buffer.pop_back();
      --totals_.in_buffers;
      record_drop(node, p, DropCause::BufferShrink, now);
    }
  }

  void check_invariants() const {
    std::uint64_t buffered = 0;
    for (const auto& n : nodes_) {
      if (n.buffer.size() > n.config.buffer_capacity)
        throw Error(ErrorCode::InvariantViolation, to_string(n.id) + " buffer above capacity");
      buffered += n.buffer.size();
    }
    if (buffered != totals_.in_buffers || !totals_.conserved())
      throw Error(ErrorCode::InvariantViolation,
                  "packet conservation: generated=" + std::to_string(totals_.generated) +
                      " delivered=" + std::to_string(totals_.delivered) + " dropped=" + std::to_string(totals_.dropped) +
                      " buffered=" + std::to_string(buffered));
  }

  TreeIndex tree_;
  EngineOptions opts_;
  Rng rng_;
  std::vector<RateChange> rate_schedule_;
  std::vector<NodeRuntime> nodes_;
  std::vector<LinkRuntime> links_;
  std::map<NodeId, std::size_t> node_index_;
  std::map<Link, std::size_t> link_index_;
  EventQueue<DataEvent> queue_;
  SimTime now_ = 0;
  DataLog log_;
  PacketTotals totals_;
  std::function<void(const Packet&)> on_delivery_;
};

}  // namespace blesdn
