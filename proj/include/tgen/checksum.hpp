#pragma once

#include <cstdint>
#include <span>

#include "tgen/pcap.hpp"

namespace tgen {

// RFC 1071 one's-complement sum over 16-bit words (odd trailing byte padded
// with zero), not folded or inverted.
std::uint32_t ones_complement_sum(std::span<const std::uint8_t> bytes, std::uint32_t acc = 0);

std::uint16_t fold_checksum(std::uint32_t acc);

std::uint16_t ipv4_header_checksum(std::span<const std::uint8_t> header);

// TCP/UDP checksum with the IPv4 or IPv6 pseudo-header. segment covers the
// transport header plus payload with the checksum field zeroed by the caller
// (or included, when verifying: a valid packet sums to zero).
std::uint16_t transport_checksum(const ip_addr& src, const ip_addr& dst, std::uint8_t protocol,
                                 std::span<const std::uint8_t> segment);

}  // namespace tgen
