#pragma once

// Scenario builders and small reference algorithms shared by the tests.
// The oracles here are deliberately naive and independent of the library.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "blesdn/core.hpp"

namespace blesdn::testing {

inline NodeId N(int v) { return NodeId{static_cast<std::uint16_t>(v)}; }

/// Line n_1 -> n_2 -> ... -> n_len, sink n_len, Table IV defaults. The sink
/// does not generate.
inline Scenario line_scenario(int len, double duration_s = 300.0) {
  Scenario sc;
  for (int i = 1; i <= len; ++i) {
    NodeConfig c;
    if (i == len) {
      c.device_type = DeviceType::Sink;
      c.data_gen_period_s = 0.0;
    }
    sc.nodes[N(i)] = c;
  }
  sc.topology.sink = N(len);
  for (int i = 1; i < len; ++i) sc.topology.edges.push_back({N(i), N(i + 1)});
  sc.duration_s = duration_s;
  return sc;
}

/// The 12-node reference line with N1 switching to a 0.5 s period at 120 s.
inline Scenario fig5_scenario(double duration_s = 900.0) {
  Scenario sc = line_scenario(12, duration_s);
  sc.rate_schedule.push_back({120.0, N(1), 0.5});
  return sc;
}

/// Random tree over nodes 1..n rooted at node n, each master with at most
/// max_slaves children. Every node except the sink generates.
inline Scenario random_tree_scenario(std::mt19937_64& rng, int n, std::uint32_t max_slaves = 3) {
  Scenario sc;
  sc.topology.sink = N(n);
  sc.topology.max_slaves = max_slaves;
  std::vector<int> placed{n};
  std::map<int, std::uint32_t> kids;
  std::vector<int> order;
  for (int i = 1; i < n; ++i) order.push_back(i);
  std::shuffle(order.begin(), order.end(), rng);
  for (int v : order) {
    std::vector<int> open;
    for (int p : placed)
      if (kids[p] < max_slaves) open.push_back(p);
    const int m = open[std::uniform_int_distribution<std::size_t>(0, open.size() - 1)(rng)];
    ++kids[m];
    sc.topology.edges.push_back({N(v), N(m)});
    placed.push_back(v);
  }
  for (int i = 1; i <= n; ++i) {
    NodeConfig c;
    if (i == n) {
      c.device_type = DeviceType::Sink;
      c.data_gen_period_s = 0.0;
    }
    sc.nodes[N(i)] = c;
  }
  sc.duration_s = 300.0;
  return sc;
}

/// Hop distances to `to` by breadth-first search over directed child->master
/// edges reversed (i.e. from the sink outward).
inline std::map<NodeId, std::size_t> bfs_depths(const std::vector<Link>& edges, NodeId root) {
  std::map<NodeId, std::vector<NodeId>> below;
  for (const auto& e : edges) below[e.master].push_back(e.child);
  std::map<NodeId, std::size_t> depth{{root, 0}};
  std::deque<NodeId> q{root};
  while (!q.empty()) {
    NodeId u = q.front();
    q.pop_front();
    for (NodeId v : below[u])
      if (depth.emplace(v, depth[u] + 1).second) q.push_back(v);
  }
  return depth;
}

/// Undirected BFS distance between a and b; -1 when unreachable.
inline int undirected_distance(const std::vector<std::pair<NodeId, NodeId>>& edges, NodeId a, NodeId b) {
  std::map<NodeId, std::vector<NodeId>> adj;
  for (const auto& [x, y] : edges) {
    adj[x].push_back(y);
    adj[y].push_back(x);
  }
  std::map<NodeId, int> d{{a, 0}};
  std::deque<NodeId> q{a};
  while (!q.empty()) {
    NodeId u = q.front();
    q.pop_front();
    if (u == b) return d[u];
    for (NodeId v : adj[u])
      if (d.emplace(v, d[u] + 1).second) q.push_back(v);
  }
  return -1;
}

inline bool has_code(const std::vector<Violation>& vs, ErrorCode c) {
  return std::any_of(vs.begin(), vs.end(), [&](const Violation& v) { return v.code == c; });
}

}  // namespace blesdn::testing
