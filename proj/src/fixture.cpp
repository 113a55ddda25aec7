#include "tgen/fixture.hpp"

#include <algorithm>

#include "tgen/errors.hpp"
#include "tgen/pktbuild.hpp"
#include "tgen/util.hpp"

namespace tgen {

namespace {

// Monday 2021-04-05 09:00:00 UTC; the whole corpus stays inside one day so
// day-time features are well behaved.
constexpr std::int64_t kBaseTime = 1617613200;

struct builder {
  explicit builder(std::uint64_t seed) : gen(seed) {}

  timestamp at(double offset_s) const {
    return timestamp{kBaseTime, 0}.plus_seconds(offset_s);
  }

  void add(raw_packet pkt) { packets.push_back(std::move(pkt)); }

  std::uint16_t next_port() {
    if (eph_port >= 65500) eph_port = 49152;
    return eph_port++;
  }

  rng gen;
  std::uint16_t eph_port = 49152;
  std::vector<raw_packet> packets;
  std::vector<planted_flow> truth;
};

flow_key make_key(const ip_addr& src, const ip_addr& dst, std::uint16_t sp, std::uint16_t dp,
                  transport_proto tp) {
  flow_key k;
  k.src_addr = src;
  k.dst_addr = dst;
  k.src_port = sp;
  k.dst_port = dp;
  k.transport = tp;
  return k;
}

// 3-5 query packets, one flow.
void emit_dns_burst(builder& b, const ip_addr& client, const ip_addr& server, double start) {
  std::uint16_t port = b.next_port();
  int queries = 3 + static_cast<int>(b.gen.below(3));
  double t = start;
  timestamp first = b.at(t);
  for (int q = 0; q < queries; ++q) {
    pkt_spec spec;
    spec.ts = b.at(t);
    spec.src = client;
    spec.dst = server;
    spec.protocol = 17;
    spec.src_port = port;
    spec.dst_port = 53;
    spec.ttl = 64;
    std::string name = "svc" + std::to_string(b.gen.below(40)) + ".example.com";
    spec.payload = build_dns_query(static_cast<std::uint16_t>(b.gen.below(65536)), {name});
    b.add(build_packet(spec));
    t += b.gen.uniform(0.05, 0.15);
  }
  b.truth.push_back({make_key(client, server, port, 53, transport_proto::udp), first, 0});
}

// One TCP session: request flow (client->server) and response flow
// (server->client), handshake + FIN teardown on both sides.
void emit_http_session(builder& b, const ip_addr& client, const ip_addr& server, double start) {
  std::uint16_t port = b.next_port();
  std::uint32_t cseq = static_cast<std::uint32_t>(b.gen.below(0xfffffff0ull));
  std::uint32_t sseq = static_cast<std::uint32_t>(b.gen.below(0xfffffff0ull));
  double t = start;

  auto client_pkt = [&](std::uint8_t flags, std::vector<std::uint8_t> payload = {}) {
    pkt_spec s;
    s.ts = b.at(t);
    s.src = client;
    s.dst = server;
    s.protocol = 6;
    s.src_port = port;
    s.dst_port = 80;
    s.tcp_flags = flags;
    s.seq_num = cseq;
    s.ack_num = (flags & kTcpAck) ? sseq : 0;
    s.window = 64240;
    s.ttl = 64;
    s.payload = std::move(payload);
    cseq += static_cast<std::uint32_t>(s.payload.size());
    if (flags & (kTcpSyn | kTcpFin)) ++cseq;
    b.add(build_packet(s));
  };
  auto server_pkt = [&](std::uint8_t flags, std::vector<std::uint8_t> payload = {}) {
    pkt_spec s;
    s.ts = b.at(t);
    s.src = server;
    s.dst = client;
    s.protocol = 6;
    s.src_port = 80;
    s.dst_port = port;
    s.tcp_flags = flags;
    s.seq_num = sseq;
    s.ack_num = cseq;
    s.window = 29200;
    s.ttl = 60;
    s.payload = std::move(payload);
    sseq += static_cast<std::uint32_t>(s.payload.size());
    if (flags & (kTcpSyn | kTcpFin)) ++sseq;
    b.add(build_packet(s));
  };

  timestamp req_first = b.at(t);
  client_pkt(kTcpSyn);
  t += b.gen.uniform(0.03, 0.07);
  timestamp resp_first = b.at(t);
  server_pkt(kTcpSyn | kTcpAck);
  t += b.gen.uniform(0.02, 0.05);
  client_pkt(kTcpAck);
  t += b.gen.uniform(0.01, 0.04);
  bool cookie = b.gen.unit() < 0.3;
  std::string path = "/page" + std::to_string(b.gen.below(30)) + ".html";
  client_pkt(kTcpAck | kTcpPsh, http_request_payload("GET", path, "fixture-agent/1.0", cookie));
  t += b.gen.uniform(0.04, 0.10);

  std::size_t body = 900 + b.gen.below(500);
  auto response = http_response_payload(200, "text/html", body);
  int chunks = 2 + static_cast<int>(b.gen.below(4));
  std::size_t chunk_len = response.size() / static_cast<std::size_t>(chunks) + 1;
  for (int i = 0; i < chunks; ++i) {
    std::size_t off = static_cast<std::size_t>(i) * chunk_len;
    if (off >= response.size()) break;
    std::size_t len = std::min(chunk_len, response.size() - off);
    std::vector<std::uint8_t> part(response.begin() + static_cast<long>(off),
                                   response.begin() + static_cast<long>(off + len));
    server_pkt(kTcpAck | (i + 1 == chunks ? kTcpPsh : 0), std::move(part));
    t += b.gen.uniform(0.02, 0.06);
  }
  client_pkt(kTcpAck);
  t += b.gen.uniform(0.02, 0.06);
  client_pkt(kTcpFin | kTcpAck);
  t += b.gen.uniform(0.01, 0.03);
  server_pkt(kTcpFin | kTcpAck);

  b.truth.push_back({make_key(client, server, port, 80, transport_proto::tcp), req_first, 1});
  b.truth.push_back({make_key(server, client, 80, port, transport_proto::tcp), resp_first, 2});
}

}  // namespace

fixture_truth make_fixture_corpus(const fixture_spec& spec, const std::filesystem::path& out_pcap) {
  if (spec.pair_count == 0 || spec.pair_count > 200)
    throw error(errc::bad_config, "fixture pair_count must be in [1, 200]");
  if (spec.duration_s < 30)
    throw error(errc::bad_config, "fixture duration must be at least 30 s");

  builder b(spec.seed);
  fixture_truth truth;
  double window = spec.duration_s / static_cast<double>(spec.pair_count);

  for (std::size_t pair = 0; pair < spec.pair_count; ++pair) {
    ip_addr client = ip_addr::v4(192, 168, 1, static_cast<std::uint8_t>(10 + pair));
    ip_addr server = ip_addr::v4(10, 20, static_cast<std::uint8_t>(pair), 80);
    double w_start = window * static_cast<double>(pair);
    double w_end = w_start + window * 0.95;
    double t = w_start + b.gen.uniform(0.0, 1.5);

    // Planted story walk: dns -> http 0.9 / dns 0.1; http -> dns 0.65 / end.
    enum { kDns, kHttp } state = kDns;
    bool done = false;
    while (!done && t < w_end) {
      if (state == kDns) {
        emit_dns_burst(b, client, server, t);
        state = b.gen.unit() < truth.p_dns_to_http ? kHttp : kDns;
      } else {
        emit_http_session(b, client, server, t);
        if (b.gen.unit() < truth.p_http_to_dns) state = kDns;
        else done = true;
      }
      t += b.gen.uniform(4.0, 7.0);
    }
  }

  std::stable_sort(b.packets.begin(), b.packets.end(),
                   [](const raw_packet& a, const raw_packet& c) { return a.ts < c.ts; });
  for (std::size_t i = 0; i < b.packets.size(); ++i) b.packets[i].capture_index = i;
  write_capture(out_pcap, b.packets);

  std::stable_sort(b.truth.begin(), b.truth.end(), [](const planted_flow& a, const planted_flow& c) {
    if (a.first_time != c.first_time) return a.first_time < c.first_time;
    return a.key < c.key;
  });
  truth.flows = std::move(b.truth);
  truth.packet_count = b.packets.size();
  return truth;
}

}  // namespace tgen
