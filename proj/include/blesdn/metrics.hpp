#pragma once

// Figure-level metrics derived from one finished run.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "blesdn/simulation.hpp"

namespace blesdn {

struct ThroughputPoint {
  SimTime t = 0;
  double sink_goodput_bps = 0.0;     // payload bits delivered at the sink
  double link_sum_bps = 0.0;         // bits moved over every link, per hop
};

struct PhaseStats {
  std::string name;
  SimTime start = 0;
  SimTime end = 0;
  double sink_goodput_bps = 0.0;
  double link_sum_bps = 0.0;
  std::uint64_t drops = 0;
};

struct MetricsBundle {
  std::vector<ThroughputPoint> throughput;
  std::vector<PhaseStats> phases;
  std::optional<SimTime> high_demand_start;
  std::optional<SimTime> congestion_start;     // first buffer-full instant
  std::optional<SimTime> detection_time;       // first window with p_comm above threshold
  std::optional<SimTime> recovery_time;
  double max_delay_s = 0.0;
  double mean_delay_s = 0.0;
};

inline constexpr SimTime kThroughputWindow = 10 * kUsPerSecond;
inline constexpr SimTime kThroughputStep = kUsPerSecond;

/// Bits in (t - window, t] over time-sorted (time, bits) events.
template <typename Events, typename TimeOf, typename BitsOf>
std::vector<double> sliding_rate(const Events& ev, TimeOf time_of, BitsOf bits_of, const std::vector<SimTime>& ts) {
  std::vector<double> out;
  out.reserve(ts.size());
  std::size_t lo = 0, hi = 0;
  double sum = 0.0;
  for (SimTime t : ts) {
    while (hi < ev.size() && time_of(ev[hi]) <= t) sum += bits_of(ev[hi++]);
    while (lo < hi && time_of(ev[lo]) <= t - kThroughputWindow) sum -= bits_of(ev[lo++]);
    const SimTime span = std::min(t, kThroughputWindow);
    out.push_back(span > 0 ? sum / to_seconds(span) : 0.0);
  }
  return out;
}

/// Bits delivered/transported in [a, b) divided by the interval.
template <typename Events, typename TimeOf, typename BitsOf>
double interval_rate(const Events& ev, TimeOf time_of, BitsOf bits_of, SimTime a, SimTime b) {
  if (b <= a) return 0.0;
  double sum = 0.0;
  for (const auto& e : ev)
    if (time_of(e) >= a && time_of(e) < b) sum += bits_of(e);
  return sum / to_seconds(b - a);
}

inline MetricsBundle compute_metrics(const Simulation& sim) {
  MetricsBundle m;
  const auto& log = sim.engine().log();
  const SimTime t_end = sim.t_end();
  const auto delivered_at = [](const Packet& p) { return *p.t_delivered; };
  const auto packet_bits = [](const Packet& p) { return double(p.payload_bits); };
  const auto transfer_at = [](const TransferRecord& r) { return r.t; };
  const auto transfer_bits = [](const TransferRecord& r) { return double(r.bits); };

  std::vector<SimTime> ts;
  for (SimTime t = kThroughputStep; t <= t_end; t += kThroughputStep) ts.push_back(t);
  const auto goodput = sliding_rate(log.deliveries, delivered_at, packet_bits, ts);
  const auto linksum = sliding_rate(log.transfers, transfer_at, transfer_bits, ts);
  for (std::size_t i = 0; i < ts.size(); ++i) m.throughput.push_back({ts[i], goodput[i], linksum[i]});

  double delay_sum = 0.0;
  for (const auto& p : log.deliveries) {
    const double d = to_seconds(*p.t_delivered - p.t_created);
    m.max_delay_s = std::max(m.max_delay_s, d);
    delay_sum += d;
  }
  if (!log.deliveries.empty()) m.mean_delay_s = delay_sum / double(log.deliveries.size());

  // phase boundaries
  if (!sim.scenario().rate_schedule.empty()) m.high_demand_start = from_seconds(sim.scenario().rate_schedule.front().time_s);
  m.congestion_start = log.first_buffer_full;
  m.detection_time = sim.controller().first_comm_crossing();
  if (!sim.command_times().empty()) {
    // first delivery after the first command round with every buffer below
    // 10% of capacity and a delay under 5 s
    const SimTime after = sim.command_times().front();
    const auto& nodes = sim.engine().nodes();
    for (std::size_t i = 0; i < log.deliveries.size(); ++i) {
      const auto& p = log.deliveries[i];
      if (*p.t_delivered <= after) continue;
      if (*p.t_delivered - p.t_created >= 5 * kUsPerSecond) continue;
      const auto& occ = log.occupancy[i].per_node;
      bool drained = true;
      for (std::size_t n = 0; n < nodes.size() && drained; ++n)
        if (!nodes[n].is_sink && occ[n] >= 0.1 * nodes[n].config.buffer_capacity) drained = false;
      if (drained) {
        m.recovery_time = *p.t_delivered;
        break;
      }
    }
  }

  std::vector<std::pair<std::string, SimTime>> bounds{{"steady", 0}};
  if (m.high_demand_start) bounds.emplace_back("high_demand", *m.high_demand_start);
  if (m.congestion_start) bounds.emplace_back("congestion", *m.congestion_start);
  if (m.recovery_time) bounds.emplace_back("regular_performance", *m.recovery_time);
  std::stable_sort(bounds.begin(), bounds.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    PhaseStats ph;
    ph.name = bounds[i].first;
    ph.start = std::min(bounds[i].second, t_end);
    ph.end = i + 1 < bounds.size() ? std::min(bounds[i + 1].second, t_end) : t_end;
    if (ph.end < ph.start) ph.end = ph.start;
    ph.sink_goodput_bps = interval_rate(log.deliveries, delivered_at, packet_bits, ph.start, ph.end);
    ph.link_sum_bps = interval_rate(log.transfers, transfer_at, transfer_bits, ph.start, ph.end);
    for (const auto& d : log.drops)
      if (d.t >= ph.start && d.t < ph.end) ++ph.drops;
    m.phases.push_back(ph);
  }
  return m;
}

}  // namespace blesdn
