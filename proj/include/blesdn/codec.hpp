#pragma once

// Southbound wire formats. Little-endian throughout.
//
// StatusReport (35 bytes):
//   seq u16 | node_id u16 | device_type u8 | master peer | slave1 | slave2 |
//   slave3 | battery u8 | tx_power i8 | timestamp_ms u32
// peer block (6 bytes): node u16 | rssi i8 | ci u16 (1.25 ms units) | queue u8
//
// ConfigCommand (12 bytes):
//   seq u16 | target u16 | opcode u8 | selector u8 | value u16 | timestamp_ms u32

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "blesdn/core.hpp"

namespace blesdn {

struct PeerStats {
  NodeId peer = NodeId::none();
  std::int8_t rssi = 0;
  std::uint16_t ci_units = 0;
  std::uint8_t queue = 0;

  bool present() const { return !peer.is_none(); }
  friend bool operator==(const PeerStats&, const PeerStats&) = default;
};

struct StatusReport {
  std::uint16_t seq = 0;
  NodeId node_id;
  DeviceType device_type = DeviceType::Static;
  PeerStats master;
  std::array<PeerStats, 3> slaves{};
  std::uint8_t battery = 100;
  std::int8_t tx_power = 0;
  std::uint32_t timestamp_ms = 0;

  friend bool operator==(const StatusReport&, const StatusReport&) = default;
};

enum class Opcode : std::uint8_t {
  SetConnInterval = 0x01,
  SetTxPower = 0x02,
  SetBufferSize = 0x03,
  SetMaxSlaves = 0x04,
};

inline std::string_view to_string(Opcode op) {
  switch (op) {
    case Opcode::SetConnInterval: return "SET_CONN_INTERVAL";
    case Opcode::SetTxPower: return "SET_TX_POWER";
    case Opcode::SetBufferSize: return "SET_BUFFER_SIZE";
    case Opcode::SetMaxSlaves: return "SET_MAX_SLAVES";
  }
  return "?";
}

inline constexpr std::uint8_t kSelectorMaster = 0x00;
inline constexpr std::uint8_t kSelectorNode = 0xFF;

struct ConfigCommand {
  std::uint16_t seq = 0;
  NodeId target;
  Opcode opcode = Opcode::SetConnInterval;
  std::uint8_t selector = kSelectorMaster;
  std::uint16_t value = 0;
  std::uint32_t timestamp_ms = 0;

  /// Tx power carried sign-extended in the low byte.
  std::int8_t tx_power_dbm() const { return static_cast<std::int8_t>(value & 0xFF); }

  friend bool operator==(const ConfigCommand&, const ConfigCommand&) = default;
};

inline constexpr std::size_t kPeerBlockSize = 6;
inline constexpr std::size_t kStatusReportSize = 35;
inline constexpr std::size_t kConfigCommandSize = 12;

using Frame = std::vector<std::uint8_t>;

// ---------------------------------------------------------------------------

namespace detail {

class Writer {
 public:
  explicit Writer(std::size_t reserve) { buf_.reserve(reserve); }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void i8(std::int8_t v) { buf_.push_back(static_cast<std::uint8_t>(v)); }
  void u16(std::uint16_t v) {
    buf_.push_back(static_cast<std::uint8_t>(v & 0xFF));
    buf_.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
  }
  Frame take() { return std::move(buf_); }

 private:
  Frame buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint8_t u8() { return bytes_[pos_++]; }
  std::int8_t i8() { return static_cast<std::int8_t>(bytes_[pos_++]); }
  std::uint16_t u16() {
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

/// Empty string when the report satisfies every structural invariant.
inline std::string report_defect(const StatusReport& r) {
  auto peer_defect = [](const PeerStats& p) -> std::string {
    if (p.peer.is_none()) {
      if (p.rssi != 0 || p.ci_units != 0 || p.queue != 0) return "absent peer with non-zero fields";
    } else if (p.peer.is_unset()) {
      return "peer id 0 is reserved";
    }
    return {};
  };
  if (r.node_id.is_unset() || r.node_id.is_none()) return "reserved node id";
  if (auto d = peer_defect(r.master); !d.empty()) return "master: " + d;
  for (std::size_t i = 0; i < r.slaves.size(); ++i) {
    if (auto d = peer_defect(r.slaves[i]); !d.empty()) return "slave" + std::to_string(i + 1) + ": " + d;
    if (i > 0 && r.slaves[i].present() && !r.slaves[i - 1].present()) return "occupied slave slot after an empty one";
  }
  if (r.device_type == DeviceType::Sink && r.master.present()) return "sink reports a master";
  if (r.battery > 100) return "battery above 100%";
  return {};
}

inline void write_peer(Writer& w, const PeerStats& p) {
  w.u16(p.peer.value);
  w.i8(p.rssi);
  w.u16(p.ci_units);
  w.u8(p.queue);
}

inline PeerStats read_peer(Reader& rd) {
  PeerStats p;
  p.peer = NodeId{rd.u16()};
  p.rssi = rd.i8();
  p.ci_units = rd.u16();
  p.queue = rd.u8();
  return p;
}

}  // namespace detail

inline Frame encode_status_report(const StatusReport& r) {
  if (auto d = detail::report_defect(r); !d.empty()) throw Error(ErrorCode::InvariantViolation, d);
  detail::Writer w(kStatusReportSize);
  w.u16(r.seq);
  w.u16(r.node_id.value);
  w.u8(static_cast<std::uint8_t>(r.device_type));
  detail::write_peer(w, r.master);
  for (const auto& s : r.slaves) detail::write_peer(w, s);
  w.u8(r.battery);
  w.i8(r.tx_power);
  w.u32(r.timestamp_ms);
  return w.take();
}

inline StatusReport decode_status_report(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kStatusReportSize)
    throw Error(ErrorCode::BadLength, "status report needs " + std::to_string(kStatusReportSize) + " bytes, got " +
                                          std::to_string(bytes.size()));
  detail::Reader rd(bytes);
  StatusReport r;
  r.seq = rd.u16();
  r.node_id = NodeId{rd.u16()};
  const std::uint8_t type = rd.u8();
  if (type > static_cast<std::uint8_t>(DeviceType::Dynamic))
    throw Error(ErrorCode::ReservedDeviceType, "device type " + std::to_string(type));
  r.device_type = static_cast<DeviceType>(type);
  r.master = detail::read_peer(rd);
  for (auto& s : r.slaves) s = detail::read_peer(rd);
  r.battery = rd.u8();
  r.tx_power = rd.i8();
  r.timestamp_ms = rd.u32();
  if (auto d = detail::report_defect(r); !d.empty()) throw Error(ErrorCode::MalformedPeerBlock, d);
  return r;
}

/// Whether a selector is meaningful for the opcode: link selectors 0..3 for
/// every opcode, node-global 0xFF for everything except connection interval.
constexpr bool selector_valid(Opcode op, std::uint8_t selector) {
  if (selector <= 3) return true;
  return selector == kSelectorNode && op != Opcode::SetConnInterval;
}

constexpr bool opcode_known(std::uint8_t raw) { return raw >= 0x01 && raw <= 0x04; }

inline Frame encode_config_command(const ConfigCommand& c) {
  if (!opcode_known(static_cast<std::uint8_t>(c.opcode)))
    throw Error(ErrorCode::UnknownOpcode, std::to_string(static_cast<int>(c.opcode)));
  if (!selector_valid(c.opcode, c.selector))
    throw Error(ErrorCode::InvalidSelectorForOpcode, std::to_string(c.selector));
  detail::Writer w(kConfigCommandSize);
  w.u16(c.seq);
  w.u16(c.target.value);
  w.u8(static_cast<std::uint8_t>(c.opcode));
  w.u8(c.selector);
  w.u16(c.value);
  w.u32(c.timestamp_ms);
  return w.take();
}

inline ConfigCommand decode_config_command(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kConfigCommandSize)
    throw Error(ErrorCode::BadLength, "config command needs " + std::to_string(kConfigCommandSize) + " bytes, got " +
                                          std::to_string(bytes.size()));
  detail::Reader rd(bytes);
  ConfigCommand c;
  c.seq = rd.u16();
  c.target = NodeId{rd.u16()};
  const std::uint8_t op = rd.u8();
  if (!opcode_known(op)) throw Error(ErrorCode::UnknownOpcode, std::to_string(op));
  c.opcode = static_cast<Opcode>(op);
  c.selector = rd.u8();
  if (!selector_valid(c.opcode, c.selector))
    throw Error(ErrorCode::InvalidSelectorForOpcode,
                std::string(to_string(c.opcode)) + " selector " + std::to_string(c.selector));
  c.value = rd.u16();
  c.timestamp_ms = rd.u32();
  return c;
}

/// Per-origin broadcast counter carried in the first two bytes of every frame.
inline std::uint16_t frame_seq(std::span<const std::uint8_t> frame) {
  if (frame.size() < 2) throw Error(ErrorCode::BadLength, "frame shorter than its sequence number");
  return static_cast<std::uint16_t>(frame[0] | (frame[1] << 8));
}

inline std::string hex_dump(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789ABCDEF";
  std::string out;
  out.reserve(bytes.size() * 3);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (i) out.push_back(' ');
    out.push_back(kDigits[bytes[i] >> 4]);
    out.push_back(kDigits[bytes[i] & 0xF]);
  }
  return out;
}

inline ConfigCommand make_conn_interval_command(NodeId target, std::uint8_t selector, std::uint16_t ci_units) {
  ConfigCommand c;
  c.target = target;
  c.opcode = Opcode::SetConnInterval;
  c.selector = selector;
  c.value = ci_units;
  return c;
}

inline ConfigCommand make_tx_power_command(NodeId target, std::uint8_t selector, std::int8_t dbm) {
  ConfigCommand c;
  c.target = target;
  c.opcode = Opcode::SetTxPower;
  c.selector = selector;
  c.value = static_cast<std::uint16_t>(static_cast<std::int16_t>(dbm));
  return c;
}

}  // namespace blesdn
