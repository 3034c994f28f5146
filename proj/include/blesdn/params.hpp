#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>

namespace blesdn {

/// Tuning knobs of the control plane. None of these values come from a
/// measured network; they are calibration starting points.
struct ControllerParams {
  double window_s = 60.0;
  double theta_sense = 0.9;
  double theta_comm = 0.9;
  double theta_clear = 0.5;
  double safety_factor = 1.25;        // eta
  double prior_sensor_ok = 0.99;      // p_S
  double prior_link_ok = 0.99;        // p_C
  double healthy_delivery = 0.95;     // d0
  double fault_leak = 0.05;           // epsilon
  double congestion_queue_fraction = 0.8;
  std::optional<double> cooldown_s;   // unset: 2 * window_s
  double staleness_factor = 3.0;      // x control_gen_period
  std::uint32_t min_packets_for_rate = 2;

  // inference backend selection
  std::size_t exact_max_latents = 22;
  std::size_t mf_max_sweeps = 100;
  double mf_tolerance = 1e-6;
  std::size_t mf_block_latents = 2;   // 1: single latents, 2: per-node (sensing, link) pairs
  std::size_t mf_refine_window = 12;  // latents enumerated jointly in the local refinement; 0 disables

  double cooldown() const { return cooldown_s.value_or(2.0 * window_s); }
};

/// Advertising-channel flooding model.
struct FloodParams {
  double hop_latency_ms = 10.0;
  double jitter_ms = 10.0;            // uniform in [0, jitter_ms)
  std::uint8_t ttl = 16;
  double loss_probability = 0.0;      // per reception
  std::size_t seen_cache_size = 256;
};

}  // namespace blesdn
