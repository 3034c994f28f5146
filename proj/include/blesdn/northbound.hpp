#pragma once

// Application-plane metadata: one record per packet received at the sink.

#include <algorithm>
#include <cstdint>
#include <map>
#include <ostream>
#include <set>
#include <vector>

#include "blesdn/core.hpp"

namespace blesdn {

struct NorthboundRecord {
  NodeId node_id;
  std::uint32_t pid = 0;
  std::uint32_t data_bits = 0;
  std::uint16_t hop = 0;
  SimTime timestamp_rx = 0;

  friend bool operator==(const NorthboundRecord&, const NorthboundRecord&) = default;
};

inline NorthboundRecord parse_packet_metadata(const Packet& p) {
  if (!p.t_delivered)
    throw Error(ErrorCode::NotDelivered, to_string(p.src) + " pid " + std::to_string(p.pid));
  return {p.src, p.pid, p.payload_bits, p.hop_count, *p.t_delivered};
}

struct WindowCount {
  std::uint32_t observed = 0;
  std::uint32_t max_pid = 0;   // highest pid received before t1; 0 if none

  friend bool operator==(const WindowCount&, const WindowCount&) = default;
};

/// Per-source count of records received in [t0, t1) and the highest pid
/// received before t1. Sources in `nodes` appear even with no records.
inline std::map<NodeId, WindowCount> windowed_counts(const std::vector<NorthboundRecord>& records, SimTime t0,
                                                     SimTime t1, const std::set<NodeId>& nodes = {}) {
  if (t0 >= t1) throw Error(ErrorCode::InvalidWindow, "window [" + std::to_string(t0) + ", " + std::to_string(t1) + ")");
  std::map<NodeId, WindowCount> out;
  for (NodeId n : nodes) out[n];
  for (const auto& r : records) {
    if (r.timestamp_rx >= t1) continue;
    auto& c = out[r.node_id];
    c.max_pid = std::max(c.max_pid, r.pid);
    if (r.timestamp_rx >= t0) ++c.observed;
  }
  return out;
}

inline constexpr const char* kNorthboundCsvHeader = "node_id,pid,data_bits,hop,timestamp_rx_ms";

inline void write_northbound_row(std::ostream& os, const NorthboundRecord& r) {
  os << r.node_id.value << ',' << r.pid << ',' << r.data_bits << ',' << r.hop << ',' << whole_ms(r.timestamp_rx) << '\n';
}

}  // namespace blesdn
