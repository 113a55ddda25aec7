#include "tgen/pktbuild.hpp"

#include "tgen/checksum.hpp"
#include "tgen/errors.hpp"

namespace tgen {

namespace {

void put16(std::vector<std::uint8_t>& v, std::size_t off, std::uint16_t x) {
  v[off] = static_cast<std::uint8_t>(x >> 8);
  v[off + 1] = static_cast<std::uint8_t>(x & 0xff);
}

void put32(std::vector<std::uint8_t>& v, std::size_t off, std::uint32_t x) {
  v[off] = static_cast<std::uint8_t>(x >> 24);
  v[off + 1] = static_cast<std::uint8_t>(x >> 16);
  v[off + 2] = static_cast<std::uint8_t>(x >> 8);
  v[off + 3] = static_cast<std::uint8_t>(x & 0xff);
}

void append_name(std::vector<std::uint8_t>& v, const std::string& name) {
  std::size_t start = 0;
  while (start <= name.size()) {
    std::size_t dot = name.find('.', start);
    std::size_t end = dot == std::string::npos ? name.size() : dot;
    std::size_t len = end - start;
    v.push_back(static_cast<std::uint8_t>(len));
    for (std::size_t i = start; i < end; ++i) v.push_back(static_cast<std::uint8_t>(name[i]));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  v.push_back(0);
}

}  // namespace

raw_packet build_packet(const pkt_spec& spec) {
  if (spec.src.v6 || spec.dst.v6) throw error(errc::internal, "builder emits IPv4 only");
  std::size_t thdr = spec.protocol == 6 ? 20u : 8u;
  std::size_t ip_len = 20 + thdr + spec.payload.size();
  std::vector<std::uint8_t> d(14 + ip_len);

  // Ethernet II
  const std::uint8_t src_mac[6] = {0x02, 0x00, 0x00, 0x00, 0x00, 0x01};
  const std::uint8_t dst_mac[6] = {0x02, 0x00, 0x00, 0x00, 0x00, 0x02};
  std::copy(dst_mac, dst_mac + 6, d.begin());
  std::copy(src_mac, src_mac + 6, d.begin() + 6);
  put16(d, 12, 0x0800);

  // IPv4 header
  d[14] = 0x45;
  put16(d, 16, static_cast<std::uint16_t>(ip_len));
  put16(d, 18, 0);      // identification
  put16(d, 20, 0x4000); // DF
  d[22] = spec.ttl;
  d[23] = spec.protocol;
  std::copy(spec.src.bytes.begin(), spec.src.bytes.begin() + 4, d.begin() + 26);
  std::copy(spec.dst.bytes.begin(), spec.dst.bytes.begin() + 4, d.begin() + 30);
  std::uint16_t ipcs = ipv4_header_checksum(std::span<const std::uint8_t>(&d[14], 20));
  put16(d, 24, ipcs);

  std::size_t toff = 34;
  if (spec.protocol == 6) {
    put16(d, toff, spec.src_port);
    put16(d, toff + 2, spec.dst_port);
    put32(d, toff + 4, spec.seq_num);
    put32(d, toff + 8, spec.ack_num);
    d[toff + 12] = 5 << 4;
    d[toff + 13] = spec.tcp_flags;
    put16(d, toff + 14, spec.window);
    std::copy(spec.payload.begin(), spec.payload.end(), d.begin() + static_cast<long>(toff + 20));
    std::uint16_t cs = transport_checksum(
        spec.src, spec.dst, 6, std::span<const std::uint8_t>(&d[toff], thdr + spec.payload.size()));
    put16(d, toff + 16, cs);
  } else if (spec.protocol == 17) {
    put16(d, toff, spec.src_port);
    put16(d, toff + 2, spec.dst_port);
    put16(d, toff + 4, static_cast<std::uint16_t>(8 + spec.payload.size()));
    std::copy(spec.payload.begin(), spec.payload.end(), d.begin() + static_cast<long>(toff + 8));
    std::uint16_t cs = transport_checksum(
        spec.src, spec.dst, 17, std::span<const std::uint8_t>(&d[toff], thdr + spec.payload.size()));
    if (cs == 0) cs = 0xffff;
    if (spec.corrupt_udp_checksum) cs = static_cast<std::uint16_t>(cs ^ 0x5555);
    put16(d, toff + 6, cs);
  } else {
    throw error(errc::internal, "builder supports tcp/udp only");
  }

  raw_packet pkt;
  pkt.ts = spec.ts;
  pkt.orig_len = static_cast<std::uint32_t>(d.size());
  pkt.data = std::move(d);
  capture_stats scratch;
  decode_packet(pkt, 1, scratch);
  decode_application(pkt, &scratch);
  return pkt;
}

std::vector<std::uint8_t> build_dns_query(std::uint16_t txid, const std::vector<std::string>& names) {
  std::vector<std::uint8_t> v(12, 0);
  put16(v, 0, txid);
  put16(v, 2, 0x0100);  // RD
  put16(v, 4, static_cast<std::uint16_t>(names.size()));
  for (const auto& n : names) {
    append_name(v, n);
    v.push_back(0);
    v.push_back(1);  // type A
    v.push_back(0);
    v.push_back(1);  // class IN
  }
  return v;
}

std::vector<std::uint8_t> build_dns_response(std::uint16_t txid, const std::string& name,
                                             int answer_count, int cname_count, int additional_count,
                                             std::uint8_t rcode) {
  std::vector<std::uint8_t> v(12, 0);
  put16(v, 0, txid);
  put16(v, 2, static_cast<std::uint16_t>(0x8180 | rcode));
  put16(v, 4, 1);
  put16(v, 6, static_cast<std::uint16_t>(answer_count + cname_count));
  put16(v, 10, static_cast<std::uint16_t>(additional_count));
  append_name(v, name);
  v.push_back(0); v.push_back(1); v.push_back(0); v.push_back(1);
  std::uint16_t name_ptr = 0xc00c;  // compressed pointer to the question name
  for (int i = 0; i < cname_count; ++i) {
    std::size_t off = v.size();
    v.resize(off + 12);
    put16(v, off, name_ptr);
    put16(v, off + 2, 5);  // CNAME
    put16(v, off + 4, 1);
    put32(v, off + 6, 300);
    std::vector<std::uint8_t> rd;
    append_name(rd, "cdn" + std::to_string(i) + ".example.net");
    put16(v, off + 10, static_cast<std::uint16_t>(rd.size()));
    v.insert(v.end(), rd.begin(), rd.end());
  }
  for (int i = 0; i < answer_count; ++i) {
    std::size_t off = v.size();
    v.resize(off + 12 + 4);
    put16(v, off, name_ptr);
    put16(v, off + 2, 1);  // A
    put16(v, off + 4, 1);
    put32(v, off + 6, 300);
    put16(v, off + 10, 4);
    v[off + 12] = 93;
    v[off + 13] = 184;
    v[off + 14] = 216;
    v[off + 15] = static_cast<std::uint8_t>(30 + i);
  }
  for (int i = 0; i < additional_count; ++i) {
    std::size_t off = v.size();
    v.resize(off + 12 + 4);
    put16(v, off, name_ptr);
    put16(v, off + 2, 1);
    put16(v, off + 4, 1);
    put32(v, off + 6, 300);
    put16(v, off + 10, 4);
    v[off + 12] = 203;
    v[off + 13] = 0;
    v[off + 14] = 113;
    v[off + 15] = static_cast<std::uint8_t>(1 + i);
  }
  return v;
}

std::vector<std::uint8_t> http_request_payload(const std::string& method, const std::string& path,
                                               const std::string& user_agent, bool cookie) {
  std::string s = method + " " + path + " HTTP/1.1\r\nHost: server.example\r\nUser-Agent: " +
                  user_agent + "\r\nAccept: */*\r\n";
  if (cookie) s += "Cookie: session=abc123\r\n";
  s += "\r\n";
  return std::vector<std::uint8_t>(s.begin(), s.end());
}

std::vector<std::uint8_t> http_response_payload(int status, const std::string& content_type,
                                                std::size_t body_bytes) {
  std::string reason = status == 200 ? "OK" : status == 404 ? "Not Found" : "Status";
  std::string s = "HTTP/1.1 " + std::to_string(status) + " " + reason +
                  "\r\nServer: httpd/2.4\r\nContent-Type: " + content_type +
                  "\r\nContent-Length: " + std::to_string(body_bytes) + "\r\n\r\n";
  std::vector<std::uint8_t> v(s.begin(), s.end());
  for (std::size_t i = 0; i < body_bytes; ++i)
    v.push_back(static_cast<std::uint8_t>('a' + (i % 23)));
  return v;
}

}  // namespace tgen
