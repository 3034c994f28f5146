#pragma once

// Closed-loop run: data-plane engine, status reports and commands flooded on
// the advertising channel, and the controller ticking every window.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "blesdn/codec.hpp"
#include "blesdn/controller.hpp"
#include "blesdn/core.hpp"
#include "blesdn/engine.hpp"
#include "blesdn/event_queue.hpp"
#include "blesdn/flood.hpp"
#include "blesdn/northbound.hpp"
#include "blesdn/rng.hpp"

namespace blesdn {

// Control events rank after every data event at the same instant.
enum class ControlEventKind : int { ReportEmit = 3, FrameArrival = 4, ControllerTick = 5 };

struct ControlEvent {
  ControlEventKind kind = ControlEventKind::ReportEmit;
  NodeId node;                       // reporter, or receiver of the frame
  std::shared_ptr<const Frame> frame;
  bool downlink = false;
};

struct ChannelStats {
  std::uint64_t uplink_frames = 0;     // status reports originated
  std::uint64_t downlink_frames = 0;   // commands originated
  std::uint64_t reports_received = 0;  // at the controller
  std::uint64_t commands_applied = 0;
  std::uint64_t commands_rejected = 0;
  std::uint64_t rebroadcasts = 0;
};

struct SimulationOptions {
  bool controller_enabled = true;
  std::optional<double> until_s;
  std::ostream* hexdump = nullptr;
  bool check_invariants = true;
};

class Simulation {
 public:
  Simulation(const Simulation&) = delete;
  Simulation& operator=(const Simulation&) = delete;

  Simulation(const Scenario& sc, SimulationOptions opts)
      : scenario_(sc),
        opts_(opts),
        engine_(sc, EngineOptions{opts.check_invariants}),
        controller_(ControllerSetup::from_scenario(sc)),
        reach_(sc.topology),
        control_rng_(sc.seed, kControlStream) {
    flood_.cache_size = sc.flood.seen_cache_size;
    t_end_ = from_seconds(opts.until_s ? std::min(*opts.until_s, sc.duration_s) : sc.duration_s);
    engine_.set_delivery_listener([this](const Packet& p) {
      records_.push_back(parse_packet_metadata(p));
      if (opts_.controller_enabled) controller_.on_northbound(records_.back());
    });
    for (const auto& [id, cfg] : sc.nodes) {
      if (cfg.control_gen_period_s > 0.0)
        control_.push(from_seconds(cfg.control_gen_period_s), rank(ControlEventKind::ReportEmit), id,
                      {ControlEventKind::ReportEmit, id, nullptr, false});
      report_state_[id];
    }
    if (opts.controller_enabled)
      control_.push(from_seconds(sc.controller_params.window_s), rank(ControlEventKind::ControllerTick), sc.topology.sink,
                    {ControlEventKind::ControllerTick, sc.topology.sink, nullptr, false});
    if (!opts.controller_enabled) controller_.log(0, "controller disabled");
  }

  /// Runs to the end time. Data events precede control events at equal times.
  void run() {
    for (;;) {
      const auto td = engine_.next_event_time();
      const std::optional<SimTime> tc = control_.empty() ? std::nullopt : std::optional(control_.top().key.time);
      const bool data_next = td && (!tc || *td <= *tc);
      const SimTime t = data_next ? *td : tc ? *tc : t_end_ + 1;
      if (t > t_end_) break;
      if (data_next) engine_.step();
      else step_control();
    }
    stats_.rebroadcasts = flood_.rebroadcasts;
  }

  const Engine& engine() const { return engine_; }
  const Controller& controller() const { return controller_; }
  const std::vector<NorthboundRecord>& records() const { return records_; }
  const ChannelStats& channel() const { return stats_; }
  const Scenario& scenario() const { return scenario_; }
  SimTime t_end() const { return t_end_; }
  const std::vector<SimTime>& command_times() const { return command_times_; }
  bool controller_enabled() const { return opts_.controller_enabled; }

 private:
  struct ReportState {
    SimTime last = 0;
    std::map<NodeId, std::int64_t> area;   // occupancy integral at last report, self and slaves
  };

  static int rank(ControlEventKind k) { return static_cast<int>(k); }

  void step_control() {
    auto e = control_.pop();
    const SimTime now = e.key.time;
    switch (e.payload.kind) {
      case ControlEventKind::ReportEmit: emit_report(e.payload.node, now); break;
      case ControlEventKind::FrameArrival: on_frame(e.payload, now); break;
      case ControlEventKind::ControllerTick: on_tick(now); break;
    }
  }

  std::uint16_t next_seq(NodeId origin) { return seq_[origin]++; }

  /// Average occupancy of `n` since the reporter's previous report.
  std::uint8_t average_queue(ReportState& st, NodeId n, SimTime now) {
    const auto& rt = engine_.node(n);
    const std::int64_t area = rt.occupancy_area(now);
    const std::int64_t prev = st.area.count(n) ? st.area[n] : 0;
    st.area[n] = area;
    const SimTime span = now - st.last;
    if (span <= 0) return static_cast<std::uint8_t>(std::min<std::size_t>(rt.buffer.size(), 255));
    // round half up
    const double avg = std::floor(static_cast<double>(area - prev) / static_cast<double>(span) + 0.5);
    return static_cast<std::uint8_t>(std::clamp(avg, 0.0, 255.0));
  }

  void emit_report(NodeId id, SimTime now) {
    const auto& node = engine_.node(id);
    auto& st = report_state_[id];
    StatusReport r;
    r.seq = next_seq(id);
    r.node_id = id;
    r.device_type = node.config.device_type;
    r.battery = node.config.battery_pct;
    r.tx_power = static_cast<std::int8_t>(node.config.tx_power_dbm);
    r.timestamp_ms = static_cast<std::uint32_t>(whole_ms(now));
    if (auto ml = engine_.master_link_of(id)) {
      const auto& l = engine_.links()[*ml];
      r.master = {l.link.master, static_cast<std::int8_t>(l.rssi), l.ci_units, average_queue(st, id, now)};
    } else {
      average_queue(st, id, now);
    }
    const auto slaves = engine_.tree().children_of(id);
    for (std::size_t i = 0; i < slaves.size() && i < r.slaves.size(); ++i) {
      const auto& l = engine_.link(Link{slaves[i], id});
      r.slaves[i] = {slaves[i], static_cast<std::int8_t>(l.rssi), l.ci_units, average_queue(st, slaves[i], now)};
    }
    st.last = now;

    auto frame = std::make_shared<const Frame>(encode_status_report(r));
    ++stats_.uplink_frames;
    dump(now, "report", id, *frame);
    for (const auto& d : flood_broadcast(id, *frame, reach_, flood_, now, control_rng_, scenario_.flood))
      if (d.node == scenario_.topology.sink)
        control_.push(d.arrival, rank(ControlEventKind::FrameArrival), d.node,
                      {ControlEventKind::FrameArrival, d.node, frame, false});

    const double period = node.config.control_gen_period_s;
    control_.push(now + from_seconds(period), rank(ControlEventKind::ReportEmit), id,
                  {ControlEventKind::ReportEmit, id, nullptr, false});
  }

  void on_frame(const ControlEvent& e, SimTime now) {
    if (!e.downlink) {
      ++stats_.reports_received;
      if (opts_.controller_enabled) controller_.on_status_report(decode_status_report(*e.frame), now);
      return;
    }
    const ConfigCommand cmd = decode_config_command(*e.frame);
    if (cmd.target != e.node) return;
    try {
      engine_.apply_config(cmd, now);
      ++stats_.commands_applied;
    } catch (const Error& err) {
      if (err.code() == ErrorCode::InvariantViolation) throw;
      ++stats_.commands_rejected;
      controller_.log(now, "command seq=" + std::to_string(cmd.seq) + " rejected by " + to_string(cmd.target) + ": " +
                               err.what());
    }
  }

  void on_tick(SimTime now) {
    ControlRound round = controller_.tick(now);
    if (!round.decision.commands.empty()) command_times_.push_back(now);
    const NodeId sink = scenario_.topology.sink;
    for (ConfigCommand cmd : round.decision.commands) {
      cmd.seq = next_seq(sink);
      cmd.timestamp_ms = static_cast<std::uint32_t>(whole_ms(now));
      controller_.log_command(cmd, now);
      auto frame = std::make_shared<const Frame>(encode_config_command(cmd));
      ++stats_.downlink_frames;
      dump(now, "command", sink, *frame);
      for (const auto& d : flood_broadcast(sink, *frame, reach_, flood_, now, control_rng_, scenario_.flood))
        if (d.node == cmd.target)
          control_.push(d.arrival, rank(ControlEventKind::FrameArrival), d.node,
                        {ControlEventKind::FrameArrival, d.node, frame, true});
    }
    control_.push(now + from_seconds(scenario_.controller_params.window_s), rank(ControlEventKind::ControllerTick), sink,
                  {ControlEventKind::ControllerTick, sink, nullptr, false});
  }

  void dump(SimTime now, const char* what, NodeId origin, const Frame& f) {
    if (!opts_.hexdump) return;
    *opts_.hexdump << whole_ms(now) << " ms " << what << " from " << to_string(origin) << ": " << hex_dump(f) << '\n';
  }

  Scenario scenario_;
  SimulationOptions opts_;
  Engine engine_;
  Controller controller_;
  Reachability reach_;
  FloodState flood_;
  Rng control_rng_;
  EventQueue<ControlEvent> control_;
  std::map<NodeId, std::uint16_t> seq_;
  std::map<NodeId, ReportState> report_state_;
  std::vector<NorthboundRecord> records_;
  std::vector<SimTime> command_times_;
  ChannelStats stats_;
  SimTime t_end_ = 0;
};

}  // namespace blesdn
