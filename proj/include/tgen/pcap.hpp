#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tgen {

struct ip_addr {
  bool v6 = false;
  std::array<std::uint8_t, 16> bytes{};  // v4 uses bytes[0..3]

  static ip_addr v4(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d) {
    ip_addr r;
    r.bytes[0] = a;
    r.bytes[1] = b;
    r.bytes[2] = c;
    r.bytes[3] = d;
    return r;
  }
  static std::optional<ip_addr> parse(std::string_view s);
  std::string str() const;
  std::uint32_t v4_value() const {
    return (std::uint32_t(bytes[0]) << 24) | (std::uint32_t(bytes[1]) << 16) |
           (std::uint32_t(bytes[2]) << 8) | std::uint32_t(bytes[3]);
  }
  auto operator<=>(const ip_addr&) const = default;
};

// Capture timestamps are kept as integer seconds + nanoseconds so pcap
// round-trips stay bit-exact.
struct timestamp {
  std::int64_t sec = 0;
  std::uint32_t nanos = 0;

  double seconds() const { return static_cast<double>(sec) + nanos * 1e-9; }
  static timestamp from_seconds(double s);
  timestamp plus_seconds(double delta) const;
  std::string str() const;  // "sec.nnnnnnnnn"
  static std::optional<timestamp> parse(std::string_view s);
  auto operator<=>(const timestamp&) const = default;
};

enum tcp_flag : std::uint8_t {
  kTcpFin = 0x01,
  kTcpSyn = 0x02,
  kTcpRst = 0x04,
  kTcpPsh = 0x08,
  kTcpAck = 0x10,
  kTcpUrg = 0x20,
};

struct tcp_info {
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint32_t seq_num = 0;
  std::uint32_t ack_num = 0;
  std::uint8_t flags = 0;
  std::uint16_t window_size = 0;
  std::uint8_t header_len = 20;
};

struct udp_info {
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  bool checksum_valid = true;
};

struct dns_info {
  bool response = false;
  std::uint8_t rcode = 0;
  std::uint16_t query_count = 0;
  std::uint16_t response_count = 0;
  std::uint16_t additional_record_count = 0;
  std::vector<std::string> query_names;
  std::vector<std::string> canonical_names;
};

struct http_info {
  bool is_request = false;
  std::string method;        // empty for responses
  int status = 0;            // 0 for requests
  bool cookie_present = false;
  std::string content_type;
  std::string user_agent;
  std::uint64_t byte_count = 0;  // captured payload bytes of this packet
  int header_count = 0;
};

struct ip_info {
  ip_addr src_addr;
  ip_addr dst_addr;
  std::uint8_t ttl = 0;
  std::uint16_t total_len = 0;
  std::uint8_t protocol = 0;
};

struct decoded_layers {
  std::optional<ip_info> ip;
  std::optional<tcp_info> tcp;
  std::optional<udp_info> udp;
  std::optional<dns_info> dns;
  std::optional<http_info> http;
};

struct raw_packet {
  std::uint64_t capture_index = 0;
  timestamp ts;
  std::uint32_t orig_len = 0;         // bytes on the wire
  std::vector<std::uint8_t> data;     // captured bytes (<= orig_len)
  decoded_layers decoded;
  // Offsets into data for the rewrite path; -1 when the layer is absent.
  int ip_offset = -1;
  int transport_offset = -1;
  int payload_offset = -1;

  std::span<const std::uint8_t> payload() const {
    if (payload_offset < 0 || static_cast<std::size_t>(payload_offset) >= data.size()) return {};
    return std::span<const std::uint8_t>(data).subspan(static_cast<std::size_t>(payload_offset));
  }
};

struct capture_stats {
  std::uint64_t packets = 0;
  std::uint64_t tcp = 0;
  std::uint64_t udp = 0;
  std::uint64_t skipped = 0;  // no transport layer admitted (tcp + udp + skipped == packets)
  std::uint64_t fragments_dropped = 0;
  std::uint64_t app_decode_failures = 0;
  std::uint64_t timestamp_regressions = 0;
};

struct capture {
  std::vector<raw_packet> packets;  // capture_index == position
  capture_stats stats;
  std::uint32_t linktype = 1;
  bool nano = false;
};

// Classic pcap only (both byte orders, micro- and nanosecond magic).
capture read_capture(const std::filesystem::path& path);

// Canonical little-endian writer; uses the nanosecond magic only when some
// packet's fraction does not fit microseconds. Packets must be ordered by
// timestamp (ties by list order).
void write_capture(const std::filesystem::path& path, std::span<const raw_packet> packets,
                   std::uint32_t linktype = 1);

// Link + network + transport layers for one packet.
void decode_packet(raw_packet& pkt, std::uint32_t linktype, capture_stats& stats);

// DNS / HTTP where ports and payload admit decoding; malformed payloads leave
// the optionals absent and bump the failure counter.
void decode_application(raw_packet& pkt, capture_stats* stats = nullptr);

}  // namespace tgen
