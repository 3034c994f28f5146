#pragma once

// Scenario documents. Top-level keys: nodes, topology, rate_schedule,
// duration_s, seed, controller. Unknown keys anywhere are a validation error.
// The schema is documented in README.md.

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "blesdn/core.hpp"

namespace blesdn {

namespace detail {

using nlohmann::json;

class DocReader {
 public:
  std::vector<Violation> problems;

  void expect_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) {
      problems.push_back({ErrorCode::MalformedDocument, where + " must be an object"});
      return;
    }
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : obj.items())
      if (!ok.count(k)) problems.push_back({ErrorCode::MalformedDocument, "unknown key '" + k + "' in " + where});
  }

  template <typename T>
  void get(const json& obj, const char* key, T& out, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      problems.push_back({ErrorCode::MalformedDocument, where + "." + key + " has the wrong type"});
    }
  }

  template <typename T>
  void require(const json& obj, const char* key, T& out, const std::string& where) {
    if (!obj.contains(key)) {
      problems.push_back({ErrorCode::MalformedDocument, where + "." + key + " is required"});
      return;
    }
    get(obj, key, out, where);
  }

  NodeId node_id(const json& v, const std::string& where) {
    if (!v.is_number_unsigned() || v.get<std::uint64_t>() > 0xFFFF) {
      problems.push_back({ErrorCode::MalformedDocument, where + " must be a 16-bit node id"});
      return NodeId{};
    }
    return NodeId{v.get<std::uint16_t>()};
  }
};

inline std::optional<DeviceType> parse_device_type(const std::string& s) {
  if (s == "sink") return DeviceType::Sink;
  if (s == "static") return DeviceType::Static;
  if (s == "dynamic") return DeviceType::Dynamic;
  return std::nullopt;
}

inline void read_controller(DocReader& rd, const json& c, Scenario& sc) {
  rd.expect_keys(c, "controller",
                 {"enabled", "window_s", "theta_sense", "theta_comm", "theta_clear", "safety_factor",
                  "prior_sensor_ok", "prior_link_ok", "healthy_delivery", "fault_leak", "congestion_queue_fraction",
                  "cooldown_s", "staleness_factor", "min_packets_for_rate", "exact_max_latents", "mf_max_sweeps",
                  "mf_tolerance", "mf_block_latents", "mf_refine_window", "flood"});
  if (!c.is_object()) return;
  auto& p = sc.controller_params;
  rd.get(c, "enabled", sc.controller_enabled, "controller");
  rd.get(c, "window_s", p.window_s, "controller");
  rd.get(c, "theta_sense", p.theta_sense, "controller");
  rd.get(c, "theta_comm", p.theta_comm, "controller");
  rd.get(c, "theta_clear", p.theta_clear, "controller");
  rd.get(c, "safety_factor", p.safety_factor, "controller");
  rd.get(c, "prior_sensor_ok", p.prior_sensor_ok, "controller");
  rd.get(c, "prior_link_ok", p.prior_link_ok, "controller");
  rd.get(c, "healthy_delivery", p.healthy_delivery, "controller");
  rd.get(c, "fault_leak", p.fault_leak, "controller");
  rd.get(c, "congestion_queue_fraction", p.congestion_queue_fraction, "controller");
  if (c.contains("cooldown_s")) {
    double v = 0.0;
    rd.get(c, "cooldown_s", v, "controller");
    p.cooldown_s = v;
  }
  rd.get(c, "staleness_factor", p.staleness_factor, "controller");
  rd.get(c, "min_packets_for_rate", p.min_packets_for_rate, "controller");
  rd.get(c, "exact_max_latents", p.exact_max_latents, "controller");
  rd.get(c, "mf_max_sweeps", p.mf_max_sweeps, "controller");
  rd.get(c, "mf_tolerance", p.mf_tolerance, "controller");
  rd.get(c, "mf_block_latents", p.mf_block_latents, "controller");
  rd.get(c, "mf_refine_window", p.mf_refine_window, "controller");
  if (auto it = c.find("flood"); it != c.end()) {
    rd.expect_keys(*it, "controller.flood", {"hop_latency_ms", "jitter_ms", "ttl", "loss_probability", "seen_cache_size"});
    if (it->is_object()) {
      rd.get(*it, "hop_latency_ms", sc.flood.hop_latency_ms, "controller.flood");
      rd.get(*it, "jitter_ms", sc.flood.jitter_ms, "controller.flood");
      rd.get(*it, "ttl", sc.flood.ttl, "controller.flood");
      rd.get(*it, "loss_probability", sc.flood.loss_probability, "controller.flood");
      rd.get(*it, "seen_cache_size", sc.flood.seen_cache_size, "controller.flood");
    }
  }
}

}  // namespace detail

/// Parses a scenario document. Structural problems (unknown keys, wrong
/// types) are collected and thrown together as a ScenarioError; semantic
/// checks are left to validate_scenario.
inline Scenario parse_scenario(const nlohmann::json& doc) {
  using detail::json;
  detail::DocReader rd;
  Scenario sc;
  rd.expect_keys(doc, "document", {"nodes", "topology", "rate_schedule", "duration_s", "seed", "controller"});
  if (!doc.is_object()) throw ScenarioError(rd.problems);

  rd.require(doc, "duration_s", sc.duration_s, "document");
  rd.get(doc, "seed", sc.seed, "document");

  // topology first: the sink id decides the default device type
  const json* topo = nullptr;
  if (auto it = doc.find("topology"); it != doc.end()) {
    topo = &*it;
    rd.expect_keys(*topo, "topology", {"sink", "edges", "proximity_edges", "max_slaves", "max_pdu_per_event"});
  } else {
    rd.problems.push_back({ErrorCode::MalformedDocument, "document.topology is required"});
  }
  if (topo && topo->is_object()) {
    if (auto s = topo->find("sink"); s != topo->end()) {
      sc.topology.sink = rd.node_id(*s, "topology.sink");
    } else {
      rd.problems.push_back({ErrorCode::MalformedDocument, "topology.sink is required"});
    }
    rd.get(*topo, "max_slaves", sc.topology.max_slaves, "topology");
    rd.get(*topo, "max_pdu_per_event", sc.max_pdu_per_event, "topology");
    if (auto es = topo->find("edges"); es != topo->end()) {
      if (!es->is_array()) rd.problems.push_back({ErrorCode::MalformedDocument, "topology.edges must be an array"});
      std::size_t i = 0;
      for (const auto& e : es->is_array() ? *es : json::array()) {
        const std::string where = "topology.edges[" + std::to_string(i++) + "]";
        rd.expect_keys(e, where, {"child", "master", "rssi_dbm", "per", "phase_offset_ms"});
        if (!e.is_object()) continue;
        if (!e.contains("child") || !e.contains("master")) {
          rd.problems.push_back({ErrorCode::MalformedDocument, where + " needs child and master"});
          continue;
        }
        Link l{rd.node_id(e["child"], where + ".child"), rd.node_id(e["master"], where + ".master")};
        sc.topology.edges.push_back(l);
        if (e.contains("rssi_dbm")) {
          int v = -60;
          rd.get(e, "rssi_dbm", v, where);
          sc.per_link_rssi[l] = v;
        }
        if (e.contains("per")) {
          double v = 0.0;
          rd.get(e, "per", v, where);
          sc.per_link_per[l] = v;
        }
        if (e.contains("phase_offset_ms")) {
          double v = 0.0;
          rd.get(e, "phase_offset_ms", v, where);
          sc.per_link_phase_ms[l] = v;
        }
      }
    }
    if (auto ps = topo->find("proximity_edges"); ps != topo->end()) {
      std::size_t i = 0;
      for (const auto& pe : ps->is_array() ? *ps : json::array()) {
        const std::string where = "topology.proximity_edges[" + std::to_string(i++) + "]";
        if (!pe.is_array() || pe.size() != 2) {
          rd.problems.push_back({ErrorCode::MalformedDocument, where + " must be a pair of node ids"});
          continue;
        }
        sc.topology.proximity_edges.emplace_back(rd.node_id(pe[0], where), rd.node_id(pe[1], where));
      }
    }
  }

  if (auto ns = doc.find("nodes"); ns != doc.end() && ns->is_array()) {
    std::size_t i = 0;
    for (const auto& n : *ns) {
      const std::string where = "nodes[" + std::to_string(i++) + "]";
      rd.expect_keys(n, where,
                     {"id", "device_type", "connection_interval_ms", "tx_power_dbm", "buffer_capacity",
                      "payload_size_bytes", "data_gen_period_s", "control_gen_period_s", "battery_pct"});
      if (!n.is_object()) continue;
      if (!n.contains("id")) {
        rd.problems.push_back({ErrorCode::MalformedDocument, where + ".id is required"});
        continue;
      }
      NodeId id = rd.node_id(n["id"], where + ".id");
      NodeConfig cfg;
      cfg.device_type = id == sc.topology.sink ? DeviceType::Sink : DeviceType::Static;
      if (n.contains("device_type")) {
        std::string t;
        rd.get(n, "device_type", t, where);
        if (auto dt = detail::parse_device_type(t)) {
          cfg.device_type = *dt;
        } else {
          rd.problems.push_back({ErrorCode::MalformedDocument, where + ".device_type '" + t + "' is not sink/static/dynamic"});
        }
      }
      rd.get(n, "connection_interval_ms", cfg.connection_interval_ms, where);
      rd.get(n, "tx_power_dbm", cfg.tx_power_dbm, where);
      rd.get(n, "buffer_capacity", cfg.buffer_capacity, where);
      rd.get(n, "payload_size_bytes", cfg.payload_size_bytes, where);
      rd.get(n, "data_gen_period_s", cfg.data_gen_period_s, where);
      rd.get(n, "control_gen_period_s", cfg.control_gen_period_s, where);
      rd.get(n, "battery_pct", cfg.battery_pct, where);
      if (!sc.nodes.emplace(id, cfg).second)
        rd.problems.push_back({ErrorCode::MalformedDocument, where + " duplicates " + to_string(id)});
    }
  } else {
    rd.problems.push_back({ErrorCode::MalformedDocument, "document.nodes must be an array"});
  }

  if (auto rs = doc.find("rate_schedule"); rs != doc.end()) {
    std::size_t i = 0;
    for (const auto& r : rs->is_array() ? *rs : json::array()) {
      const std::string where = "rate_schedule[" + std::to_string(i++) + "]";
      rd.expect_keys(r, where, {"time_s", "node", "data_gen_period_s"});
      if (!r.is_object()) continue;
      RateChange rc;
      rd.require(r, "time_s", rc.time_s, where);
      rd.require(r, "data_gen_period_s", rc.data_gen_period_s, where);
      if (r.contains("node")) rc.node = rd.node_id(r["node"], where + ".node");
      else rd.problems.push_back({ErrorCode::MalformedDocument, where + ".node is required"});
      sc.rate_schedule.push_back(rc);
    }
  }

  if (auto c = doc.find("controller"); c != doc.end()) detail::read_controller(rd, *c, sc);

  if (!rd.problems.empty()) throw ScenarioError(std::move(rd.problems));
  return sc;
}

inline nlohmann::json scenario_to_json(const Scenario& sc) {
  using nlohmann::json;
  json nodes = json::array();
  for (const auto& [id, c] : sc.nodes) {
    nodes.push_back({{"id", id.value},
                     {"device_type", std::string(to_string(c.device_type))},
                     {"connection_interval_ms", c.connection_interval_ms},
                     {"tx_power_dbm", c.tx_power_dbm},
                     {"buffer_capacity", c.buffer_capacity},
                     {"payload_size_bytes", c.payload_size_bytes},
                     {"data_gen_period_s", c.data_gen_period_s},
                     {"control_gen_period_s", c.control_gen_period_s},
                     {"battery_pct", c.battery_pct}});
  }
  json edges = json::array();
  for (const auto& l : sc.topology.edges) {
    json e = {{"child", l.child.value}, {"master", l.master.value}};
    if (auto it = sc.per_link_rssi.find(l); it != sc.per_link_rssi.end()) e["rssi_dbm"] = it->second;
    if (auto it = sc.per_link_per.find(l); it != sc.per_link_per.end()) e["per"] = it->second;
    if (auto it = sc.per_link_phase_ms.find(l); it != sc.per_link_phase_ms.end()) e["phase_offset_ms"] = it->second;
    edges.push_back(e);
  }
  json prox = json::array();
  for (const auto& [a, b] : sc.topology.proximity_edges) prox.push_back({a.value, b.value});
  json sched = json::array();
  for (const auto& r : sc.rate_schedule)
    sched.push_back({{"time_s", r.time_s}, {"node", r.node.value}, {"data_gen_period_s", r.data_gen_period_s}});
  const auto& p = sc.controller_params;
  json ctrl = {{"enabled", sc.controller_enabled},
               {"window_s", p.window_s},
               {"theta_sense", p.theta_sense},
               {"theta_comm", p.theta_comm},
               {"theta_clear", p.theta_clear},
               {"safety_factor", p.safety_factor},
               {"prior_sensor_ok", p.prior_sensor_ok},
               {"prior_link_ok", p.prior_link_ok},
               {"healthy_delivery", p.healthy_delivery},
               {"fault_leak", p.fault_leak},
               {"congestion_queue_fraction", p.congestion_queue_fraction},
               {"staleness_factor", p.staleness_factor},
               {"min_packets_for_rate", p.min_packets_for_rate},
               {"exact_max_latents", p.exact_max_latents},
               {"mf_max_sweeps", p.mf_max_sweeps},
               {"mf_tolerance", p.mf_tolerance},
               {"mf_block_latents", p.mf_block_latents},
               {"mf_refine_window", p.mf_refine_window},
               {"flood",
                {{"hop_latency_ms", sc.flood.hop_latency_ms},
                 {"jitter_ms", sc.flood.jitter_ms},
                 {"ttl", sc.flood.ttl},
                 {"loss_probability", sc.flood.loss_probability},
                 {"seen_cache_size", sc.flood.seen_cache_size}}}};
  if (p.cooldown_s) ctrl["cooldown_s"] = *p.cooldown_s;
  return {{"nodes", nodes},
          {"topology",
           {{"sink", sc.topology.sink.value},
            {"edges", edges},
            {"proximity_edges", prox},
            {"max_slaves", sc.topology.max_slaves},
            {"max_pdu_per_event", sc.max_pdu_per_event}}},
          {"rate_schedule", sched},
          {"duration_s", sc.duration_s},
          {"seed", sc.seed},
          {"controller", ctrl}};
}

/// Reads and parses a scenario file. Missing/unreadable files raise
/// IoFailure; malformed JSON raises ScenarioError.
inline Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ScenarioError({{ErrorCode::MalformedDocument, path.string() + ": " + e.what()}});
  }
  return parse_scenario(doc);
}

}  // namespace blesdn
