#include "tgen/checksum.hpp"

#include <array>

namespace tgen {

std::uint32_t ones_complement_sum(std::span<const std::uint8_t> bytes, std::uint32_t acc) {
  std::size_t i = 0;
  for (; i + 1 < bytes.size(); i += 2) {
    acc += (std::uint32_t(bytes[i]) << 8) | bytes[i + 1];
  }
  if (i < bytes.size()) acc += std::uint32_t(bytes[i]) << 8;
  return acc;
}

std::uint16_t fold_checksum(std::uint32_t acc) {
  while (acc >> 16) acc = (acc & 0xffff) + (acc >> 16);
  return static_cast<std::uint16_t>(~acc & 0xffff);
}

std::uint16_t ipv4_header_checksum(std::span<const std::uint8_t> header) {
  return fold_checksum(ones_complement_sum(header));
}

std::uint16_t transport_checksum(const ip_addr& src, const ip_addr& dst, std::uint8_t protocol,
                                 std::span<const std::uint8_t> segment) {
  std::uint32_t acc = 0;
  if (!src.v6) {
    std::array<std::uint8_t, 12> pseudo{};
    for (int i = 0; i < 4; ++i) pseudo[static_cast<std::size_t>(i)] = src.bytes[static_cast<std::size_t>(i)];
    for (int i = 0; i < 4; ++i) pseudo[static_cast<std::size_t>(4 + i)] = dst.bytes[static_cast<std::size_t>(i)];
    pseudo[8] = 0;
    pseudo[9] = protocol;
    pseudo[10] = static_cast<std::uint8_t>(segment.size() >> 8);
    pseudo[11] = static_cast<std::uint8_t>(segment.size() & 0xff);
    acc = ones_complement_sum(pseudo);
  } else {
    std::array<std::uint8_t, 40> pseudo{};
    for (int i = 0; i < 16; ++i) pseudo[static_cast<std::size_t>(i)] = src.bytes[static_cast<std::size_t>(i)];
    for (int i = 0; i < 16; ++i) pseudo[static_cast<std::size_t>(16 + i)] = dst.bytes[static_cast<std::size_t>(i)];
    std::uint32_t len = static_cast<std::uint32_t>(segment.size());
    pseudo[32] = static_cast<std::uint8_t>(len >> 24);
    pseudo[33] = static_cast<std::uint8_t>(len >> 16);
    pseudo[34] = static_cast<std::uint8_t>(len >> 8);
    pseudo[35] = static_cast<std::uint8_t>(len);
    pseudo[39] = protocol;
    acc = ones_complement_sum(pseudo);
  }
  acc = ones_complement_sum(segment, acc);
  return fold_checksum(acc);
}

}  // namespace tgen
