#pragma once

// Control-channel flooding over advertising broadcasts. Independent of data
// buffers: nothing here touches the engine.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <queue>
#include <set>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

#include "blesdn/codec.hpp"
#include "blesdn/core.hpp"
#include "blesdn/params.hpp"
#include "blesdn/rng.hpp"

namespace blesdn {

/// Who hears whose advertisements: undirected data edges plus proximity edges.
class Reachability {
 public:
  Reachability() = default;

  explicit Reachability(const Topology& topo) {
    adj_[topo.sink];
    for (const auto& e : topo.edges) add(e.child, e.master);
    for (const auto& [a, b] : topo.proximity_edges) add(a, b);
  }

  void add(NodeId a, NodeId b) {
    if (a == b) return;
    adj_[a].insert(b);
    adj_[b].insert(a);
  }

  const std::set<NodeId>& neighbors(NodeId n) const {
    static const std::set<NodeId> none;
    auto it = adj_.find(n);
    return it == adj_.end() ? none : it->second;
  }

  bool contains(NodeId n) const { return adj_.count(n) != 0; }

 private:
  std::map<NodeId, std::set<NodeId>> adj_;
};

/// Per-node FIFO-bounded cache of (origin, seq) pairs already handled.
class SeenCache {
 public:
  explicit SeenCache(std::size_t capacity = 256) : capacity_(capacity) {}

  bool contains(NodeId origin, std::uint16_t seq) const { return set_.count({origin, seq}) != 0; }

  /// Returns false if the pair was already present.
  bool insert(NodeId origin, std::uint16_t seq) {
    if (!set_.insert({origin, seq}).second) return false;
    order_.emplace_back(origin, seq);
    while (order_.size() > capacity_) {
      set_.erase(order_.front());
      order_.pop_front();
    }
    return true;
  }

  std::size_t size() const { return set_.size(); }

 private:
  std::size_t capacity_;
  std::set<std::pair<NodeId, std::uint16_t>> set_;
  std::deque<std::pair<NodeId, std::uint16_t>> order_;
};

struct FloodState {
  std::size_t cache_size = 256;
  std::map<NodeId, SeenCache> seen;
  std::uint64_t rebroadcasts = 0;

  SeenCache& cache(NodeId n) { return seen.try_emplace(n, cache_size).first->second; }
};

struct FloodDelivery {
  NodeId node;
  SimTime arrival = 0;
  std::uint16_t hops = 0;

  friend bool operator==(const FloodDelivery&, const FloodDelivery&) = default;
};

/// Floods one frame from origin. Reception times are resolved eagerly:
/// each first reception at t triggers one rebroadcast heard by every neighbor
/// at t + hop_latency + jitter (one jitter draw per rebroadcast). The origin
/// itself receives at now with zero hops. Deliveries are returned in arrival
/// order; a frame whose (origin, seq) the origin has already seen yields none.
inline std::vector<FloodDelivery> flood_broadcast(NodeId origin, std::span<const std::uint8_t> frame,
                                                  const Reachability& reach, FloodState& state, SimTime now,
                                                  Rng& rng, const FloodParams& params) {
  const std::uint16_t seq = frame_seq(frame);
  std::vector<FloodDelivery> out;
  if (state.cache(origin).contains(origin, seq)) return out;

  using Rx = std::tuple<SimTime, std::uint16_t, std::uint16_t>;  // time, node, hops
  std::priority_queue<Rx, std::vector<Rx>, std::greater<Rx>> pending;
  pending.emplace(now, origin.value, 0);
  const SimTime latency = from_ms(params.hop_latency_ms);
  const auto jitter_us = static_cast<std::uint64_t>(std::max<std::int64_t>(0, from_ms(params.jitter_ms)));

  while (!pending.empty()) {
    auto [t, raw, hops] = pending.top();
    pending.pop();
    const NodeId node{raw};
    if (!state.cache(node).insert(origin, seq)) continue;
    out.push_back({node, t, hops});
    if (hops >= params.ttl) continue;
    ++state.rebroadcasts;
    const SimTime tx = t + latency + static_cast<SimTime>(rng.below(jitter_us));
    for (NodeId nb : reach.neighbors(node)) {
      if (params.loss_probability > 0.0 && rng.bernoulli(params.loss_probability)) continue;
      if (state.cache(nb).contains(origin, seq)) continue;
      pending.emplace(tx, nb.value, static_cast<std::uint16_t>(hops + 1));
    }
  }
  return out;
}

}  // namespace blesdn
