#pragma once

// On-disk run artifacts and the plot-ready figure tables derived from them.
// All CSVs: header row, LF endings, times in integer ms, rates in bit/s.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "blesdn/metrics.hpp"
#include "blesdn/simulation.hpp"

namespace blesdn {

namespace fs = std::filesystem;

namespace detail {

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

class CsvFile {
 public:
  CsvFile(const fs::path& path, const std::string& header) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    out_ << header << '\n';
  }
  std::ofstream& os() { return out_; }
  void close() {
    out_.close();
    if (!out_) throw Error(ErrorCode::IoFailure, "write failed: " + path_.string());
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

inline const char* cause_name(DropCause c) { return c == DropCause::Overflow ? "overflow" : "buffer_shrink"; }

inline nlohmann::json opt_ms(const std::optional<SimTime>& t) {
  return t ? nlohmann::json(whole_ms(*t)) : nlohmann::json(nullptr);
}

}  // namespace detail

inline nlohmann::ordered_json summary_json(const Simulation& sim, const MetricsBundle& m, const std::string& name) {
  using nlohmann::ordered_json;
  const auto& tot = sim.engine().totals();
  std::uint64_t overflow = 0, shrink = 0;
  for (const auto& d : sim.engine().log().drops) (d.cause == DropCause::Overflow ? overflow : shrink)++;
  ordered_json phases = ordered_json::array();
  for (const auto& p : m.phases)
    phases.push_back({{"name", p.name},
                      {"start_ms", whole_ms(p.start)},
                      {"end_ms", whole_ms(p.end)},
                      {"sink_goodput_bps", p.sink_goodput_bps},
                      {"link_sum_throughput_bps", p.link_sum_bps},
                      {"drops", p.drops}});
  ordered_json rounds = ordered_json::array();
  for (SimTime t : sim.command_times()) rounds.push_back(whole_ms(t));
  const auto& ch = sim.channel();
  ordered_json s;
  s["scenario"] = name;
  s["seed"] = sim.scenario().seed;
  s["duration_s"] = sim.scenario().duration_s;
  s["t_end_ms"] = whole_ms(sim.t_end());
  s["controller_enabled"] = sim.controller_enabled();
  s["packets"] = {{"generated", tot.generated},
                  {"delivered", tot.delivered},
                  {"dropped", tot.dropped},
                  {"in_buffers", tot.in_buffers},
                  {"conserved", tot.conserved()}};
  s["drops"] = {{"total", tot.dropped}, {"overflow", overflow}, {"buffer_shrink", shrink}};
  s["delay"] = {{"max_s", m.max_delay_s}, {"mean_s", m.mean_delay_s}};
  s["phases"] = phases;
  s["high_demand_start_ms"] = detail::opt_ms(m.high_demand_start);
  s["congestion_start_ms"] = detail::opt_ms(m.congestion_start);
  s["detection_time_ms"] = detail::opt_ms(m.detection_time);
  s["recovery_time_ms"] = detail::opt_ms(m.recovery_time);
  s["command_rounds_ms"] = rounds;
  s["control_channel"] = {{"uplink_frames", ch.uplink_frames},
                          {"downlink_frames", ch.downlink_frames},
                          {"reports_received", ch.reports_received},
                          {"commands_applied", ch.commands_applied},
                          {"commands_rejected", ch.commands_rejected},
                          {"rebroadcasts", ch.rebroadcasts}};
  s["throughput_interpretation"] =
      "sink_goodput_bps counts payload bits delivered at the sink; link_sum_throughput_bps counts bits moved over "
      "every link, once per hop. A whole-network congested figure near 5.8 kbit/s only matches the per-hop sum.";
  return s;
}

/// Writes every run artifact into dir (created if needed).
inline void write_run_artifacts(const Simulation& sim, const MetricsBundle& m, const fs::path& dir,
                                const std::string& name) {
  fs::create_directories(dir);
  const auto& log = sim.engine().log();
  {
    detail::CsvFile f(dir / "deliveries.csv", "src,pid,bits,hops,t_created_ms,t_delivered_ms,delay_ms");
    for (const auto& p : log.deliveries)
      f.os() << p.src.value << ',' << p.pid << ',' << p.payload_bits << ',' << p.hop_count << ','
             << whole_ms(p.t_created) << ',' << whole_ms(*p.t_delivered) << ','
             << whole_ms(*p.t_delivered - p.t_created) << '\n';
    f.close();
  }
  {
    detail::CsvFile f(dir / "drops.csv", "t_ms,node_id,src,pid,cause,cumulative");
    for (const auto& d : log.drops)
      f.os() << whole_ms(d.t) << ',' << d.node.value << ',' << d.src.value << ',' << d.pid << ','
             << detail::cause_name(d.cause) << ',' << d.cumulative << '\n';
    f.close();
  }
  {
    std::string header = "t_ms,mean_occupancy";
    for (const auto& n : sim.engine().nodes()) header += ",node_" + std::to_string(n.id.value);
    detail::CsvFile f(dir / "buffers.csv", header);
    for (const auto& s : log.occupancy) {
      f.os() << whole_ms(s.t) << ',' << detail::fixed(s.mean, 4);
      for (auto v : s.per_node) f.os() << ',' << v;
      f.os() << '\n';
    }
    f.close();
  }
  {
    detail::CsvFile f(dir / "northbound.csv", kNorthboundCsvHeader);
    for (const auto& r : sim.records()) write_northbound_row(f.os(), r);
    f.close();
  }
  {
    detail::CsvFile f(dir / "anomaly.csv", "t_ms,node_id,p_sensing,p_comm");
    for (const auto& r : sim.controller().anomaly_rows())
      f.os() << whole_ms(r.t) << ',' << r.node.value << ',' << detail::fixed(r.p_sensing, 6) << ','
             << detail::fixed(r.p_comm, 6) << '\n';
    f.close();
  }
  {
    detail::CsvFile f(dir / "throughput.csv", "t_ms,sink_goodput_bps,link_sum_throughput_bps");
    for (const auto& p : m.throughput)
      f.os() << whole_ms(p.t) << ',' << detail::fixed(p.sink_goodput_bps, 3) << ',' << detail::fixed(p.link_sum_bps, 3)
             << '\n';
    f.close();
  }
  {
    std::ofstream f(dir / "controller.log", std::ios::binary);
    for (const auto& line : sim.controller().log_lines()) f << line << '\n';
    if (!f) throw Error(ErrorCode::IoFailure, "write failed: controller.log");
  }
  {
    std::ofstream f(dir / "summary.json", std::ios::binary);
    f << summary_json(sim, m, name).dump(2) << '\n';
    if (!f) throw Error(ErrorCode::IoFailure, "write failed: summary.json");
  }
}

// ---------------------------------------------------------------------------
// plotdata
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "missing artifact " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

inline std::int64_t to_i64(const std::string& s) {
  try {
    return std::stoll(s);
  } catch (const std::exception&) {
    throw Error(ErrorCode::IoFailure, "malformed number '" + s + "' in run artifacts");
  }
}

}  // namespace detail

/// Builds fig6.csv and fig7.csv in run_dir from the run's artifacts. Phase
/// starts after the first phase appear as annotation rows with empty values.
inline void write_plot_data(const fs::path& run_dir) {
  nlohmann::json summary;
  {
    std::ifstream in(run_dir / "summary.json");
    if (!in) throw Error(ErrorCode::IoFailure, "missing artifact " + (run_dir / "summary.json").string());
    try {
      in >> summary;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::IoFailure, std::string("unreadable summary.json: ") + e.what());
    }
  }
  std::vector<std::pair<std::int64_t, std::string>> bounds;
  if (summary.contains("phases"))
    for (std::size_t i = 1; i < summary["phases"].size(); ++i)
      bounds.emplace_back(summary["phases"][i].value("start_ms", std::int64_t{0}),
                          "phase_start:" + summary["phases"][i].value("name", std::string("?")));

  const auto throughput = detail::read_csv(run_dir / "throughput.csv");
  const auto buffers = detail::read_csv(run_dir / "buffers.csv");
  const auto deliveries = detail::read_csv(run_dir / "deliveries.csv");
  const auto drops = detail::read_csv(run_dir / "drops.csv");

  auto emit_bounds_until = [&](std::ostream& os, std::size_t& next, std::int64_t t, const char* empties) {
    while (next < bounds.size() && bounds[next].first <= t) {
      os << bounds[next].first << empties << bounds[next].second << '\n';
      ++next;
    }
  };

  {
    detail::CsvFile f(run_dir / "fig6.csv", "t_ms,mean_buffer_occupancy,sink_goodput_bps,link_sum_throughput_bps,annotation");
    std::size_t b = 0, next = 0;
    std::string occ = "0.0000";
    for (const auto& row : throughput) {
      if (row.size() < 3) throw Error(ErrorCode::IoFailure, "malformed throughput.csv row");
      const auto t = detail::to_i64(row[0]);
      while (b < buffers.size() && detail::to_i64(buffers[b][0]) <= t) occ = buffers[b++].at(1);
      emit_bounds_until(f.os(), next, t, ",,,,");
      f.os() << t << ',' << occ << ',' << row[1] << ',' << row[2] << ",\n";
    }
    if (!throughput.empty()) emit_bounds_until(f.os(), next, std::numeric_limits<std::int64_t>::max(), ",,,,");
    f.close();
  }
  {
    detail::CsvFile f(run_dir / "fig7.csv", "t_ms,delay_s,cumulative_losses,annotation");
    std::size_t d = 0, next = 0;
    std::int64_t losses = 0;
    for (const auto& row : deliveries) {
      if (row.size() < 7) throw Error(ErrorCode::IoFailure, "malformed deliveries.csv row");
      const auto t = detail::to_i64(row[5]);
      while (d < drops.size() && detail::to_i64(drops[d][0]) <= t) losses = detail::to_i64(drops[d++].at(5));
      emit_bounds_until(f.os(), next, t, ",,,");
      f.os() << t << ',' << detail::fixed(detail::to_i64(row[6]) / 1000.0, 3) << ',' << losses << ",\n";
    }
    if (!deliveries.empty()) emit_bounds_until(f.os(), next, std::numeric_limits<std::int64_t>::max(), ",,,");
    f.close();
  }
}

}  // namespace blesdn
