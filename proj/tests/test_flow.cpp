#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tgen/flow.hpp"
#include "tgen/pktbuild.hpp"
#include "tgen/util.hpp"

using namespace tgen;

namespace {

const ip_addr kA = ip_addr::v4(192, 168, 0, 1);
const ip_addr kB = ip_addr::v4(10, 0, 0, 80);

raw_packet tcp_pkt(double t, const ip_addr& src, const ip_addr& dst, std::uint16_t sp,
                   std::uint16_t dp, std::uint8_t flags, std::size_t payload = 0) {
  pkt_spec s;
  s.ts = timestamp{1617613200, 0}.plus_seconds(t);
  s.src = src;
  s.dst = dst;
  s.protocol = 6;
  s.src_port = sp;
  s.dst_port = dp;
  s.tcp_flags = flags;
  s.payload.assign(payload, 0x61);
  return build_packet(s);
}

raw_packet udp_pkt(double t, const ip_addr& src, const ip_addr& dst, std::uint16_t sp,
                   std::uint16_t dp) {
  pkt_spec s;
  s.ts = timestamp{1617613200, 0}.plus_seconds(t);
  s.src = src;
  s.dst = dst;
  s.protocol = 17;
  s.src_port = sp;
  s.dst_port = dp;
  s.payload = {1, 2, 3};
  return build_packet(s);
}

std::vector<raw_packet> index_packets(std::vector<raw_packet> pkts) {
  for (std::size_t i = 0; i < pkts.size(); ++i) pkts[i].capture_index = i;
  return pkts;
}

// SYN, SYN+ACK, ACK, data A->B, data B->A, FIN, FIN+ACK
std::vector<raw_packet> handshake_session() {
  return index_packets({
      tcp_pkt(0.00, kA, kB, 40000, 80, kTcpSyn),
      tcp_pkt(0.05, kB, kA, 80, 40000, kTcpSyn | kTcpAck),
      tcp_pkt(0.10, kA, kB, 40000, 80, kTcpAck),
      tcp_pkt(0.20, kA, kB, 40000, 80, kTcpAck | kTcpPsh, 50),
      tcp_pkt(0.30, kB, kA, 80, 40000, kTcpAck | kTcpPsh, 500),
      tcp_pkt(0.40, kA, kB, 40000, 80, kTcpFin | kTcpAck),
      tcp_pkt(0.45, kB, kA, 80, 40000, kTcpFin | kTcpAck),
  });
}

}  // namespace

TEST_CASE("completed TCP session yields two mirrored flows, FIN-closed") {
  auto pkts = handshake_session();
  auto res = assemble_flows(pkts, {});
  REQUIRE(res.flows.size() == 2);
  const flow& fwd = res.flows[0];
  const flow& rev = res.flows[1];
  CHECK(fwd.key.src_addr == kA);
  CHECK(fwd.key.mirrored() == rev.key);
  CHECK(fwd.packet_refs == std::vector<std::uint64_t>{0, 2, 3, 5});
  CHECK(rev.packet_refs == std::vector<std::uint64_t>{1, 4, 6});
  CHECK(fwd.close == close_reason::fin);
  CHECK(rev.close == close_reason::fin);
  CHECK(fwd.first_time == pkts[0].ts);
  CHECK(fwd.last_time == pkts[5].ts);
  CHECK(res.orphans == 0);
  CHECK(res.admitted == 7);
}

TEST_CASE("UDP idle gap splits one 4-tuple into two flows") {
  auto pkts = index_packets({
      udp_pkt(0, kA, kB, 5000, 53),
      udp_pkt(1, kA, kB, 5000, 53),
      udp_pkt(2, kA, kB, 5000, 53),
      udp_pkt(102, kA, kB, 5000, 53),  // 100 s of silence
  });
  flow_config cfg;
  cfg.udp_idle_timeout_s = 60;
  auto res = assemble_flows(pkts, cfg);
  REQUIRE(res.flows.size() == 2);
  CHECK(res.flows[0].packet_refs.size() == 3);
  CHECK(res.flows[0].close == close_reason::idle);
  CHECK(res.flows[1].packet_refs.size() == 1);
  CHECK(res.flows[1].close == close_reason::capture_end);
}

TEST_CASE("UDP max duration splits a long session") {
  std::vector<raw_packet> pkts;
  for (int i = 0; i < 40; ++i) pkts.push_back(udp_pkt(i * 10.0, kA, kB, 5000, 53));
  pkts = index_packets(std::move(pkts));
  flow_config cfg;
  cfg.udp_idle_timeout_s = 60;
  cfg.udp_max_duration_s = 300;
  auto res = assemble_flows(pkts, cfg);
  REQUIRE(res.flows.size() >= 2);
  CHECK(res.flows[0].close == close_reason::max_duration);
  for (const auto& f : res.flows)
    CHECK(f.last_time.seconds() - f.first_time.seconds() <= 300.0);
}

TEST_CASE("empty packet stream yields an empty flow list") {
  auto res = assemble_flows({}, {});
  CHECK(res.flows.empty());
  CHECK(res.orphans == 0);
}

TEST_CASE("stray ACKs without a handshake are orphans under the strict rule") {
  auto pkts = index_packets({
      tcp_pkt(0.0, kA, kB, 40000, 80, kTcpAck),
      tcp_pkt(0.1, kA, kB, 40000, 80, kTcpAck | kTcpPsh, 10),
  });
  auto res = assemble_flows(pkts, {});
  CHECK(res.flows.empty());
  CHECK(res.orphans == 2);

  flow_config relaxed;
  relaxed.require_handshake = false;
  auto res2 = assemble_flows(pkts, relaxed);
  REQUIRE(res2.flows.size() == 1);
  CHECK(res2.flows[0].packet_refs.size() == 2);
  CHECK(res2.orphans == 0);
}

TEST_CASE("incomplete handshake never emits flows") {
  auto pkts = index_packets({
      tcp_pkt(0.0, kA, kB, 40000, 80, kTcpSyn),
      tcp_pkt(0.1, kB, kA, 80, 40000, kTcpSyn | kTcpAck),
      // no final ACK
  });
  auto res = assemble_flows(pkts, {});
  CHECK(res.flows.empty());
  CHECK(res.orphans == 2);
}

TEST_CASE("RST closes both directions with the RST reason") {
  auto pkts = index_packets({
      tcp_pkt(0.00, kA, kB, 40000, 80, kTcpSyn),
      tcp_pkt(0.05, kB, kA, 80, 40000, kTcpSyn | kTcpAck),
      tcp_pkt(0.10, kA, kB, 40000, 80, kTcpAck),
      tcp_pkt(0.20, kB, kA, 80, 40000, kTcpRst),
  });
  auto res = assemble_flows(pkts, {});
  REQUIRE(res.flows.size() == 2);
  CHECK(res.flows[0].close == close_reason::rst);
  CHECK(res.flows[1].close == close_reason::rst);
}

TEST_CASE("TCP idle timeout closes an established session") {
  auto pkts = index_packets({
      tcp_pkt(0.00, kA, kB, 40000, 80, kTcpSyn),
      tcp_pkt(0.05, kB, kA, 80, 40000, kTcpSyn | kTcpAck),
      tcp_pkt(0.10, kA, kB, 40000, 80, kTcpAck),
      udp_pkt(1000, kA, kB, 9999, 53),  // later traffic advances the clock
  });
  flow_config cfg;
  cfg.tcp_idle_timeout_s = 300;
  auto res = assemble_flows(pkts, cfg);
  REQUIRE(res.flows.size() == 3);  // two tcp directions + the udp flow
  CHECK(res.flows[0].close == close_reason::timeout);
  CHECK(res.flows[1].close == close_reason::timeout);
}

TEST_CASE("conservation: every admitted packet is in exactly one flow or an orphan") {
  rng gen(99);
  std::vector<raw_packet> pkts;
  double t = 0;
  for (int i = 0; i < 50; ++i) {
    t += gen.uniform(0.01, 30.0);
    int kind = static_cast<int>(gen.below(3));
    std::uint16_t port = static_cast<std::uint16_t>(30000 + gen.below(1000));
    if (kind == 0) {
      pkts.push_back(udp_pkt(t, kA, kB, port, 53));
    } else if (kind == 1) {
      pkts.push_back(tcp_pkt(t, kA, kB, port, 80, kTcpSyn));
      pkts.push_back(tcp_pkt(t + 0.05, kB, kA, 80, port, kTcpSyn | kTcpAck));
      pkts.push_back(tcp_pkt(t + 0.1, kA, kB, port, 80, kTcpAck));
      pkts.push_back(tcp_pkt(t + 0.2, kA, kB, port, 80, kTcpFin | kTcpAck));
      pkts.push_back(tcp_pkt(t + 0.3, kB, kA, 80, port, kTcpFin | kTcpAck));
    } else {
      pkts.push_back(tcp_pkt(t, kA, kB, port, 80, kTcpAck));  // orphan
    }
  }
  pkts = index_packets(std::move(pkts));
  auto res = assemble_flows(pkts, {});
  std::size_t in_flows = 0;
  for (const auto& f : res.flows) in_flows += f.packet_refs.size();
  CHECK(in_flows + res.orphans == res.admitted);
  CHECK(res.admitted == pkts.size());
  // direction invariant
  for (const auto& f : res.flows) {
    for (auto ref : f.packet_refs) {
      const auto& p = pkts[ref];
      CHECK(p.decoded.ip->src_addr == f.key.src_addr);
      CHECK(p.decoded.ip->dst_addr == f.key.dst_addr);
    }
  }
}

TEST_CASE("determinism: same input and config produce identical flows") {
  auto pkts = handshake_session();
  auto r1 = assemble_flows(pkts, {});
  auto r2 = assemble_flows(pkts, {});
  REQUIRE(r1.flows.size() == r2.flows.size());
  for (std::size_t i = 0; i < r1.flows.size(); ++i) {
    CHECK(r1.flows[i].key == r2.flows[i].key);
    CHECK(r1.flows[i].packet_refs == r2.flows[i].packet_refs);
    CHECK(r1.flows[i].close == r2.flows[i].close);
  }
}

TEST_CASE("flows come back sorted by first_time") {
  auto pkts = index_packets({
      udp_pkt(5.0, kA, kB, 5001, 53),
      udp_pkt(1.0, kA, kB, 5002, 53),
      udp_pkt(3.0, kA, kB, 5003, 53),
  });
  auto res = assemble_flows(pkts, {});
  REQUIRE(res.flows.size() == 3);
  CHECK(res.flows[0].first_time < res.flows[1].first_time);
  CHECK(res.flows[1].first_time < res.flows[2].first_time);
}

TEST_CASE("network statistics: per-pair counts and mean inter-flow interval") {
  std::vector<flow> flows;
  auto mk = [&](const ip_addr& src, const ip_addr& dst, double t) {
    flow f;
    f.key.src_addr = src;
    f.key.dst_addr = dst;
    f.key.transport = transport_proto::udp;
    f.packet_refs = {0};
    f.first_time = timestamp::from_seconds(t);
    f.last_time = f.first_time;
    flows.push_back(f);
  };
  mk(kA, kB, 0);
  mk(kA, kB, 10);
  mk(kA, kB, 30);
  ip_addr c = ip_addr::v4(172, 16, 0, 9);
  mk(c, kB, 100);

  auto stats = network_statistics(flows);
  const auto& ab = stats.at({kA, kB});
  CHECK(ab.flow_count == 3);
  REQUIRE(ab.mean_interval_s.has_value());
  CHECK(*ab.mean_interval_s == doctest::Approx(15.0));  // mean of {10, 20}
  const auto& cb = stats.at({c, kB});
  CHECK(cb.flow_count == 1);
  CHECK(!cb.mean_interval_s.has_value());
}

TEST_CASE("network statistics with interleaved pairs stay independent") {
  std::vector<flow> flows;
  auto mk = [&](const ip_addr& src, double t) {
    flow f;
    f.key.src_addr = src;
    f.key.dst_addr = kB;
    f.key.transport = transport_proto::udp;
    f.packet_refs = {0};
    f.first_time = timestamp::from_seconds(t);
    f.last_time = f.first_time;
    flows.push_back(f);
  };
  ip_addr c = ip_addr::v4(172, 16, 0, 9);
  // interleaved in time: kA at 0, 8; c at 2, 4, 12
  mk(kA, 0);
  mk(c, 2);
  mk(c, 4);
  mk(kA, 8);
  mk(c, 12);
  auto stats = network_statistics(flows);
  CHECK(stats.at({kA, kB}).flow_count == 2);
  CHECK(*stats.at({kA, kB}).mean_interval_s == doctest::Approx(8.0));
  CHECK(stats.at({c, kB}).flow_count == 3);
  CHECK(*stats.at({c, kB}).mean_interval_s == doctest::Approx(5.0));  // (2 + 8) / 2
}
