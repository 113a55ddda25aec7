#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tgen/pcap.hpp"

namespace tgen {

// Assembles a single Ethernet II / IPv4 packet with correct checksums and
// runs it back through the decoders, so built fixtures always agree with the
// read path.
struct pkt_spec {
  timestamp ts;
  ip_addr src;
  ip_addr dst;
  std::uint8_t protocol = 6;  // 6 tcp, 17 udp
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint8_t tcp_flags = 0;
  std::uint32_t seq_num = 0;
  std::uint32_t ack_num = 0;
  std::uint16_t window = 65535;
  std::uint8_t ttl = 64;
  std::vector<std::uint8_t> payload;
  bool corrupt_udp_checksum = false;
};

raw_packet build_packet(const pkt_spec& spec);

std::vector<std::uint8_t> build_dns_query(std::uint16_t txid, const std::vector<std::string>& names);
std::vector<std::uint8_t> build_dns_response(std::uint16_t txid, const std::string& name,
                                             int answer_count, int cname_count, int additional_count,
                                             std::uint8_t rcode = 0);
std::vector<std::uint8_t> http_request_payload(const std::string& method, const std::string& path,
                                               const std::string& user_agent, bool cookie);
std::vector<std::uint8_t> http_response_payload(int status, const std::string& content_type,
                                                std::size_t body_bytes);

}  // namespace tgen
