#include "tgen/pcap.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "tgen/checksum.hpp"
#include "tgen/errors.hpp"
#include "tgen/util.hpp"

namespace tgen {

namespace {

constexpr std::uint32_t kMagicMicro = 0xa1b2c3d4u;
constexpr std::uint32_t kMagicMicroSwapped = 0xd4c3b2a1u;
constexpr std::uint32_t kMagicNano = 0xa1b23c4du;
constexpr std::uint32_t kMagicNanoSwapped = 0x4d3cb2a1u;

constexpr std::uint32_t kLinkEthernet = 1;
constexpr std::uint32_t kLinkRawIp = 101;

std::uint32_t bswap32(std::uint32_t v) {
  return ((v & 0xff) << 24) | ((v & 0xff00) << 8) | ((v >> 8) & 0xff00) | (v >> 24);
}

std::uint16_t be16(const std::uint8_t* p) { return static_cast<std::uint16_t>((p[0] << 8) | p[1]); }

std::uint32_t be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

void put_u32le(std::uint8_t* p, std::uint32_t v) {
  p[0] = static_cast<std::uint8_t>(v);
  p[1] = static_cast<std::uint8_t>(v >> 8);
  p[2] = static_cast<std::uint8_t>(v >> 16);
  p[3] = static_cast<std::uint8_t>(v >> 24);
}

void put_u16le(std::uint8_t* p, std::uint16_t v) {
  p[0] = static_cast<std::uint8_t>(v);
  p[1] = static_cast<std::uint8_t>(v >> 8);
}

void decode_ipv4(raw_packet& pkt, std::size_t off, capture_stats& stats);
void decode_ipv6(raw_packet& pkt, std::size_t off, capture_stats& stats);

void decode_transport(raw_packet& pkt, std::size_t off, std::uint8_t protocol, capture_stats& stats) {
  const auto& d = pkt.data;
  if (protocol == 6) {
    if (off + 20 > d.size()) {
      ++stats.skipped;
      return;
    }
    tcp_info t;
    t.src_port = be16(&d[off]);
    t.dst_port = be16(&d[off + 2]);
    t.seq_num = be32(&d[off + 4]);
    t.ack_num = be32(&d[off + 8]);
    std::uint8_t doff = static_cast<std::uint8_t>((d[off + 12] >> 4) * 4);
    if (doff < 20 || off + doff > d.size()) {
      ++stats.skipped;
      return;
    }
    t.header_len = doff;
    t.flags = d[off + 13] & 0x3f;
    t.window_size = be16(&d[off + 14]);
    pkt.decoded.tcp = t;
    pkt.transport_offset = static_cast<int>(off);
    pkt.payload_offset = static_cast<int>(off + doff);
    ++stats.tcp;
  } else if (protocol == 17) {
    if (off + 8 > d.size()) {
      ++stats.skipped;
      return;
    }
    udp_info u;
    u.src_port = be16(&d[off]);
    u.dst_port = be16(&d[off + 2]);
    std::uint16_t udp_len = be16(&d[off + 4]);
    std::uint16_t cs = be16(&d[off + 6]);
    if (cs == 0) {
      u.checksum_valid = true;  // checksum not used
    } else if (udp_len >= 8 && off + udp_len <= d.size()) {
      std::span<const std::uint8_t> seg(&d[off], udp_len);
      u.checksum_valid =
          transport_checksum(pkt.decoded.ip->src_addr, pkt.decoded.ip->dst_addr, 17, seg) == 0;
    } else {
      u.checksum_valid = true;  // truncated capture, cannot verify
    }
    pkt.decoded.udp = u;
    pkt.transport_offset = static_cast<int>(off);
    pkt.payload_offset = static_cast<int>(off + 8);
    ++stats.udp;
  } else {
    ++stats.skipped;
  }
}

void decode_ipv4(raw_packet& pkt, std::size_t off, capture_stats& stats) {
  const auto& d = pkt.data;
  if (off + 20 > d.size()) {
    ++stats.skipped;
    return;
  }
  std::uint8_t ihl = static_cast<std::uint8_t>((d[off] & 0x0f) * 4);
  if ((d[off] >> 4) != 4 || ihl < 20 || off + ihl > d.size()) {
    ++stats.skipped;
    return;
  }
  ip_info ip;
  ip.total_len = be16(&d[off + 2]);
  std::uint16_t flags_frag = be16(&d[off + 6]);
  ip.ttl = d[off + 8];
  ip.protocol = d[off + 9];
  std::copy_n(&d[off + 12], 4, ip.src_addr.bytes.begin());
  std::copy_n(&d[off + 16], 4, ip.dst_addr.bytes.begin());
  pkt.decoded.ip = ip;
  pkt.ip_offset = static_cast<int>(off);
  if ((flags_frag & 0x1fff) != 0) {
    // Non-first fragment: no transport header to decode.
    ++stats.fragments_dropped;
    ++stats.skipped;
    return;
  }
  decode_transport(pkt, off + ihl, ip.protocol, stats);
}

void decode_ipv6(raw_packet& pkt, std::size_t off, capture_stats& stats) {
  const auto& d = pkt.data;
  if (off + 40 > d.size() || (d[off] >> 4) != 6) {
    ++stats.skipped;
    return;
  }
  ip_info ip;
  std::uint16_t payload_len = be16(&d[off + 4]);
  ip.total_len = static_cast<std::uint16_t>(std::min<std::uint32_t>(40u + payload_len, 0xffffu));
  ip.protocol = d[off + 6];
  ip.ttl = d[off + 7];
  ip.src_addr.v6 = ip.dst_addr.v6 = true;
  std::copy_n(&d[off + 8], 16, ip.src_addr.bytes.begin());
  std::copy_n(&d[off + 24], 16, ip.dst_addr.bytes.begin());
  pkt.decoded.ip = ip;
  pkt.ip_offset = static_cast<int>(off);
  // Extension-header chains are out of scope; only a directly following
  // transport header is decoded.
  decode_transport(pkt, off + 40, ip.protocol, stats);
}

// --- DNS ---

bool dns_read_name(std::span<const std::uint8_t> msg, std::size_t& pos, std::string& out) {
  std::size_t p = pos;
  int jumps = 0;
  bool jumped = false;
  out.clear();
  while (true) {
    if (p >= msg.size()) return false;
    std::uint8_t len = msg[p];
    if (len == 0) {
      if (!jumped) pos = p + 1;
      return true;
    }
    if ((len & 0xc0) == 0xc0) {
      if (p + 1 >= msg.size()) return false;
      if (++jumps > 32) return false;  // compression loop guard
      std::size_t target = static_cast<std::size_t>((len & 0x3f) << 8 | msg[p + 1]);
      if (!jumped) pos = p + 2;
      jumped = true;
      if (target >= msg.size()) return false;
      p = target;
      continue;
    }
    if (len > 63 || p + 1 + len > msg.size()) return false;
    if (!out.empty()) out += '.';
    out.append(reinterpret_cast<const char*>(&msg[p + 1]), len);
    if (out.size() > 1024) return false;
    p += 1 + len;
  }
}

bool try_decode_dns(raw_packet& pkt, std::span<const std::uint8_t> payload) {
  if (payload.size() < 12) return false;
  dns_info dns;
  std::uint16_t flags = be16(&payload[2]);
  dns.response = (flags & 0x8000) != 0;
  dns.rcode = flags & 0x0f;
  std::uint8_t opcode = (flags >> 11) & 0x0f;
  if (opcode > 5) return false;
  dns.query_count = be16(&payload[4]);
  dns.response_count = be16(&payload[6]);
  std::uint16_t nscount = be16(&payload[8]);
  dns.additional_record_count = be16(&payload[10]);
  if (dns.query_count > 64 || dns.response_count > 512 || nscount > 512 ||
      dns.additional_record_count > 512)
    return false;

  std::size_t pos = 12;
  std::string name;
  for (std::uint16_t q = 0; q < dns.query_count; ++q) {
    if (!dns_read_name(payload, pos, name)) return false;
    if (pos + 4 > payload.size()) return false;
    pos += 4;
    dns.query_names.push_back(name);
  }
  // Answers are walked best-effort: responses may be snap-truncated.
  for (std::uint16_t a = 0; a < dns.response_count; ++a) {
    if (!dns_read_name(payload, pos, name)) break;
    if (pos + 10 > payload.size()) break;
    std::uint16_t rtype = be16(&payload[pos]);
    std::uint16_t rdlen = be16(&payload[pos + 8]);
    pos += 10;
    if (pos + rdlen > payload.size()) break;
    if (rtype == 5) {  // CNAME
      std::size_t rpos = pos;
      std::string cname;
      if (dns_read_name(payload, rpos, cname)) dns.canonical_names.push_back(cname);
    }
    pos += rdlen;
  }
  pkt.decoded.dns = std::move(dns);
  return true;
}

// --- HTTP ---

const char* const kHttpMethods[] = {"GET",    "POST",  "HEAD",    "PUT",  "DELETE",
                                    "OPTIONS", "PATCH", "CONNECT", "TRACE"};

bool starts_with_http(std::span<const std::uint8_t> payload, std::string* method) {
  std::string_view sv(reinterpret_cast<const char*>(payload.data()), payload.size());
  if (sv.starts_with("HTTP/")) {
    method->clear();
    return true;
  }
  for (const char* m : kHttpMethods) {
    std::string tok = std::string(m) + " ";
    if (sv.starts_with(tok)) {
      *method = m;
      return true;
    }
  }
  return false;
}

// case-insensitive ASCII compare for header names
bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    char ca = a[i], cb = b[i];
    if (ca >= 'A' && ca <= 'Z') ca = static_cast<char>(ca - 'A' + 'a');
    if (cb >= 'A' && cb <= 'Z') cb = static_cast<char>(cb - 'A' + 'a');
    if (ca != cb) return false;
  }
  return true;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool try_decode_http(raw_packet& pkt, std::span<const std::uint8_t> payload, const std::string& method) {
  std::string_view sv(reinterpret_cast<const char*>(payload.data()), payload.size());
  std::size_t eol = sv.find('\n');
  std::string_view first = trim(sv.substr(0, eol == std::string_view::npos ? sv.size() : eol));
  http_info http;
  http.byte_count = payload.size();
  if (method.empty()) {
    // response line: HTTP/1.x SP status
    std::size_t sp = first.find(' ');
    if (sp == std::string_view::npos || sp + 4 > first.size()) return false;
    int status = 0;
    for (int i = 0; i < 3; ++i) {
      char c = first[sp + 1 + static_cast<std::size_t>(i)];
      if (c < '0' || c > '9') return false;
      status = status * 10 + (c - '0');
    }
    http.is_request = false;
    http.status = status;
  } else {
    http.is_request = true;
    http.method = method;
  }
  // header lines until the blank line or the end of the captured payload
  std::size_t pos = eol == std::string_view::npos ? sv.size() : eol + 1;
  while (pos < sv.size()) {
    std::size_t next = sv.find('\n', pos);
    std::string_view line = sv.substr(pos, next == std::string_view::npos ? sv.size() - pos : next - pos);
    pos = next == std::string_view::npos ? sv.size() : next + 1;
    line = line.substr(0, line.find('\r'));
    if (line.empty()) break;
    std::size_t colon = line.find(':');
    if (colon == std::string_view::npos) break;
    ++http.header_count;
    std::string_view key = trim(line.substr(0, colon));
    std::string_view val = trim(line.substr(colon + 1));
    if (iequals(key, "cookie") || iequals(key, "set-cookie")) http.cookie_present = true;
    else if (iequals(key, "content-type")) http.content_type = std::string(val);
    else if (iequals(key, "user-agent")) http.user_agent = std::string(val);
  }
  pkt.decoded.http = std::move(http);
  return true;
}

}  // namespace

std::optional<ip_addr> ip_addr::parse(std::string_view s) {
  ip_addr out;
  unsigned v[4];
  char extra;
  std::string buf(s);
  if (std::sscanf(buf.c_str(), "%u.%u.%u.%u%c", &v[0], &v[1], &v[2], &v[3], &extra) == 4) {
    for (unsigned x : v)
      if (x > 255) return std::nullopt;
    return ip_addr::v4(static_cast<std::uint8_t>(v[0]), static_cast<std::uint8_t>(v[1]),
                       static_cast<std::uint8_t>(v[2]), static_cast<std::uint8_t>(v[3]));
  }
  // v6: plain hex groups, no :: compression needed for our artifacts
  unsigned g[8];
  if (std::sscanf(buf.c_str(), "%x:%x:%x:%x:%x:%x:%x:%x%c", &g[0], &g[1], &g[2], &g[3], &g[4], &g[5],
                  &g[6], &g[7], &extra) == 8) {
    out.v6 = true;
    for (int i = 0; i < 8; ++i) {
      if (g[i] > 0xffff) return std::nullopt;
      out.bytes[static_cast<std::size_t>(2 * i)] = static_cast<std::uint8_t>(g[i] >> 8);
      out.bytes[static_cast<std::size_t>(2 * i + 1)] = static_cast<std::uint8_t>(g[i] & 0xff);
    }
    return out;
  }
  return std::nullopt;
}

std::string ip_addr::str() const {
  char buf[48];
  if (!v6) {
    std::snprintf(buf, sizeof(buf), "%u.%u.%u.%u", bytes[0], bytes[1], bytes[2], bytes[3]);
  } else {
    std::snprintf(buf, sizeof(buf), "%x:%x:%x:%x:%x:%x:%x:%x", (bytes[0] << 8) | bytes[1],
                  (bytes[2] << 8) | bytes[3], (bytes[4] << 8) | bytes[5], (bytes[6] << 8) | bytes[7],
                  (bytes[8] << 8) | bytes[9], (bytes[10] << 8) | bytes[11], (bytes[12] << 8) | bytes[13],
                  (bytes[14] << 8) | bytes[15]);
  }
  return buf;
}

timestamp timestamp::from_seconds(double s) {
  if (!(s == s)) throw error(errc::invalid_timestamp, "NaN timestamp");
  double whole = std::floor(s);
  timestamp t;
  t.sec = static_cast<std::int64_t>(whole);
  double frac = (s - whole) * 1e9;
  std::int64_t n = static_cast<std::int64_t>(frac + 0.5);
  if (n >= 1000000000) {
    ++t.sec;
    n -= 1000000000;
  }
  t.nanos = static_cast<std::uint32_t>(n);
  return t;
}

timestamp timestamp::plus_seconds(double delta) const {
  if (!(delta == delta)) throw error(errc::invalid_timestamp, "NaN time delta");
  double dwhole = std::floor(delta);
  std::int64_t dsec = static_cast<std::int64_t>(dwhole);
  std::int64_t dn = static_cast<std::int64_t>((delta - dwhole) * 1e9 + 0.5);
  timestamp t;
  t.sec = sec + dsec;
  std::int64_t n = static_cast<std::int64_t>(nanos) + dn;
  while (n >= 1000000000) {
    ++t.sec;
    n -= 1000000000;
  }
  t.nanos = static_cast<std::uint32_t>(n);
  return t;
}

std::string timestamp::str() const {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%lld.%09u", static_cast<long long>(sec), nanos);
  return buf;
}

std::optional<timestamp> timestamp::parse(std::string_view s) {
  std::size_t dot = s.find('.');
  if (dot == std::string_view::npos) return std::nullopt;
  timestamp t;
  try {
    t.sec = std::stoll(std::string(s.substr(0, dot)));
    std::string frac(s.substr(dot + 1));
    if (frac.size() != 9) return std::nullopt;
    t.nanos = static_cast<std::uint32_t>(std::stoul(frac));
  } catch (...) {
    return std::nullopt;
  }
  if (t.nanos >= 1000000000) return std::nullopt;
  return t;
}

void decode_packet(raw_packet& pkt, std::uint32_t linktype, capture_stats& stats) {
  const auto& d = pkt.data;
  if (linktype == kLinkEthernet) {
    if (d.size() < 14) {
      ++stats.skipped;
      return;
    }
    std::uint16_t ethertype = be16(&d[12]);
    if (ethertype == 0x0800) {
      decode_ipv4(pkt, 14, stats);
    } else if (ethertype == 0x86dd) {
      decode_ipv6(pkt, 14, stats);
    } else {
      ++stats.skipped;  // VLAN tags and anything non-IP
    }
  } else if (linktype == kLinkRawIp) {
    if (d.empty()) {
      ++stats.skipped;
      return;
    }
    std::uint8_t version = d[0] >> 4;
    if (version == 4) decode_ipv4(pkt, 0, stats);
    else if (version == 6) decode_ipv6(pkt, 0, stats);
    else ++stats.skipped;
  } else {
    ++stats.skipped;
  }
}

void decode_application(raw_packet& pkt, capture_stats* stats) {
  auto payload = pkt.payload();
  if (payload.empty()) return;
  if (pkt.decoded.udp) {
    const auto& u = *pkt.decoded.udp;
    if (u.src_port == 53 || u.dst_port == 53) {
      if (!try_decode_dns(pkt, payload) && stats) ++stats->app_decode_failures;
    }
    return;
  }
  if (pkt.decoded.tcp) {
    const auto& t = *pkt.decoded.tcp;
    if (t.src_port == 53 || t.dst_port == 53) {
      // TCP DNS carries a two-byte length prefix.
      if (payload.size() < 2 || !try_decode_dns(pkt, payload.subspan(2))) {
        if (stats) ++stats->app_decode_failures;
      }
      return;
    }
    std::string method;
    if (starts_with_http(payload, &method)) {
      if (!try_decode_http(pkt, payload, method) && stats) ++stats->app_decode_failures;
    }
  }
}

capture read_capture(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error(errc::io, "cannot open capture: " + path.string());
  std::uint8_t hdr[24];
  in.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
  if (in.gcount() != sizeof(hdr))
    throw error(errc::unsupported_format, "not a pcap file (short header): " + path.string());
  std::uint32_t magic_le = std::uint32_t(hdr[0]) | (std::uint32_t(hdr[1]) << 8) |
                           (std::uint32_t(hdr[2]) << 16) | (std::uint32_t(hdr[3]) << 24);
  bool swapped = false, nano = false;
  switch (magic_le) {
    case kMagicMicro: break;
    case kMagicNano: nano = true; break;
    case kMagicMicroSwapped: swapped = true; break;
    case kMagicNanoSwapped: swapped = true; nano = true; break;
    default:
      throw error(errc::unsupported_format,
                  "bad pcap magic number in " + path.string() + " (pcapng is not supported)");
  }
  auto rd32 = [&](const std::uint8_t* p) {
    std::uint32_t v = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
                      (std::uint32_t(p[3]) << 24);
    return swapped ? bswap32(v) : v;
  };
  capture cap;
  cap.nano = nano;
  cap.linktype = rd32(&hdr[20]);

  timestamp prev{};
  bool have_prev = false;
  while (true) {
    std::uint8_t rec[16];
    in.read(reinterpret_cast<char*>(rec), sizeof(rec));
    auto got = in.gcount();
    if (got == 0) break;
    if (got != sizeof(rec))
      throw truncated_capture_error("truncated record header in " + path.string() + " after " +
                                        std::to_string(cap.packets.size()) + " packets",
                                    cap.packets.size());
    raw_packet pkt;
    pkt.capture_index = cap.packets.size();
    std::uint32_t ts_sec = rd32(&rec[0]);
    std::uint32_t ts_frac = rd32(&rec[4]);
    std::uint32_t incl_len = rd32(&rec[8]);
    pkt.orig_len = rd32(&rec[12]);
    pkt.ts.sec = ts_sec;
    pkt.ts.nanos = nano ? ts_frac : ts_frac * 1000u;
    if (pkt.ts.nanos >= 1000000000u)
      throw error(errc::unsupported_format, "record with out-of-range timestamp fraction");
    if (incl_len > (1u << 28))
      throw truncated_capture_error("implausible record length in " + path.string() + " after " +
                                        std::to_string(cap.packets.size()) + " packets",
                                    cap.packets.size());
    pkt.data.resize(incl_len);
    in.read(reinterpret_cast<char*>(pkt.data.data()), incl_len);
    if (in.gcount() != static_cast<std::streamsize>(incl_len))
      throw truncated_capture_error("truncated packet data in " + path.string() + " after " +
                                        std::to_string(cap.packets.size()) + " packets",
                                    cap.packets.size());
    ++cap.stats.packets;
    if (have_prev && pkt.ts < prev) ++cap.stats.timestamp_regressions;
    prev = pkt.ts;
    have_prev = true;
    decode_packet(pkt, cap.linktype, cap.stats);
    decode_application(pkt, &cap.stats);
    cap.packets.push_back(std::move(pkt));
  }
  return cap;
}

void write_capture(const std::filesystem::path& path, std::span<const raw_packet> packets,
                   std::uint32_t linktype) {
  bool nano = false;
  const raw_packet* prev = nullptr;
  for (const auto& p : packets) {
    if (p.ts.nanos >= 1000000000u || p.ts.sec < 0 || p.ts.sec > 0xffffffffll)
      throw error(errc::invalid_timestamp, "packet timestamp outside the classic pcap range");
    if (prev && p.ts < prev->ts)
      throw error(errc::invalid_timestamp, "packets not sorted by timestamp");
    if (p.ts.nanos % 1000u != 0) nano = true;
    prev = &p;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw error(errc::io, "cannot write capture: " + path.string());
  std::uint8_t hdr[24] = {};
  put_u32le(&hdr[0], nano ? kMagicNano : kMagicMicro);
  put_u16le(&hdr[4], 2);
  put_u16le(&hdr[6], 4);
  put_u32le(&hdr[16], 65535);
  put_u32le(&hdr[20], linktype);
  out.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
  for (const auto& p : packets) {
    std::uint8_t rec[16];
    put_u32le(&rec[0], static_cast<std::uint32_t>(p.ts.sec));
    put_u32le(&rec[4], nano ? p.ts.nanos : p.ts.nanos / 1000u);
    put_u32le(&rec[8], static_cast<std::uint32_t>(p.data.size()));
    put_u32le(&rec[12], p.orig_len);
    out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
    out.write(reinterpret_cast<const char*>(p.data.data()),
              static_cast<std::streamsize>(p.data.size()));
  }
  if (!out) throw error(errc::io, "write failed: " + path.string());
}

}  // namespace tgen
