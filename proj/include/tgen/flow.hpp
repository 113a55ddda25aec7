#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tgen/pcap.hpp"

namespace tgen {

enum class transport_proto : std::uint8_t { tcp, udp };

std::string transport_name(transport_proto t);

// One direction of one session: every packet travels src -> dst.
struct flow_key {
  ip_addr src_addr;
  ip_addr dst_addr;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  transport_proto transport = transport_proto::tcp;

  flow_key mirrored() const {
    flow_key m = *this;
    std::swap(m.src_addr, m.dst_addr);
    std::swap(m.src_port, m.dst_port);
    return m;
  }
  auto operator<=>(const flow_key&) const = default;
};

enum class close_reason : std::uint8_t { fin, rst, timeout, idle, max_duration, capture_end };

std::string close_reason_name(close_reason r);
std::optional<close_reason> close_reason_from(std::string_view name);

struct flow {
  flow_key key;
  std::vector<std::uint64_t> packet_refs;  // capture_index values, time order
  timestamp first_time;
  timestamp last_time;
  close_reason close = close_reason::capture_end;
};

struct flow_config {
  double tcp_idle_timeout_s = 300.0;
  double udp_idle_timeout_s = 60.0;
  double udp_max_duration_s = 300.0;
  bool require_handshake = true;
};

struct assembly_result {
  std::vector<flow> flows;  // sorted by (first_time, first packet index)
  std::uint64_t orphans = 0;
  std::uint64_t admitted = 0;  // tcp + udp packets seen
};

// Streams packets through the TCP/UDP session state machines. Packets must be
// in timestamp order (they are stable-sorted first when not).
assembly_result assemble_flows(std::span<const raw_packet> packets, const flow_config& config);

struct pair_stats {
  std::uint64_t flow_count = 0;
  std::optional<double> mean_interval_s;  // absent when flow_count < 2
};

using ip_pair = std::pair<ip_addr, ip_addr>;

std::map<ip_pair, pair_stats> network_statistics(std::span<const flow> flows);

}  // namespace tgen
