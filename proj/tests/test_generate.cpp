#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "tgen/errors.hpp"
#include "tgen/flow.hpp"
#include "tgen/generate.hpp"
#include "tgen/pktbuild.hpp"
#include "tgen/util.hpp"

using namespace tgen;

namespace {

// Independent checksum oracle: RFC 1071 arithmetic with end-around carry
// applied at every step, unlike the library's deferred 32-bit fold.
std::uint16_t oracle_sum16(const std::vector<std::uint8_t>& bytes) {
  std::uint16_t acc = 0;
  for (std::size_t i = 0; i < bytes.size(); i += 2) {
    std::uint16_t word = static_cast<std::uint16_t>(bytes[i] << 8);
    if (i + 1 < bytes.size()) word = static_cast<std::uint16_t>(word | bytes[i + 1]);
    std::uint32_t sum = static_cast<std::uint32_t>(acc) + word;
    acc = static_cast<std::uint16_t>((sum & 0xffff) + (sum >> 16));
  }
  return static_cast<std::uint16_t>(~acc);
}

bool oracle_verify_ipv4_header(const raw_packet& p) {
  std::size_t off = static_cast<std::size_t>(p.ip_offset);
  std::size_t ihl = static_cast<std::size_t>((p.data[off] & 0x0f) * 4);
  std::vector<std::uint8_t> hdr(p.data.begin() + static_cast<long>(off),
                                p.data.begin() + static_cast<long>(off + ihl));
  return oracle_sum16(hdr) == 0;  // a valid header sums to zero
}

bool oracle_verify_transport(const raw_packet& p) {
  std::size_t off = static_cast<std::size_t>(p.ip_offset);
  std::size_t ihl = static_cast<std::size_t>((p.data[off] & 0x0f) * 4);
  std::size_t toff = static_cast<std::size_t>(p.transport_offset);
  std::size_t seg_len = p.data.size() - toff;
  std::vector<std::uint8_t> pseudo;
  pseudo.insert(pseudo.end(), p.data.begin() + static_cast<long>(off + 12),
                p.data.begin() + static_cast<long>(off + 20));
  pseudo.push_back(0);
  pseudo.push_back(p.data[off + 9]);
  pseudo.push_back(static_cast<std::uint8_t>(seg_len >> 8));
  pseudo.push_back(static_cast<std::uint8_t>(seg_len & 0xff));
  pseudo.insert(pseudo.end(), p.data.begin() + static_cast<long>(toff), p.data.end());
  (void)ihl;
  return oracle_sum16(pseudo) == 0;
}

struct corpus {
  std::vector<raw_packet> packets;
  std::vector<flow> flows;
  std::vector<std::uint32_t> labels;
};

// Three single-packet-class clusters with distinct payload sizes; flows of
// 2 packets each, 1 s apart internally, flows every 10 s.
corpus make_corpus(int flows_per_cluster) {
  corpus c;
  double t = 0;
  for (int cl = 0; cl < 3; ++cl) {
    for (int i = 0; i < flows_per_cluster; ++i) {
      flow f;
      std::uint16_t port = static_cast<std::uint16_t>(10000 + cl * 1000 + i);
      f.key = {ip_addr::v4(172, 16, 0, static_cast<std::uint8_t>(1 + cl)), ip_addr::v4(172, 16, 1, 1),
               port, 7000, transport_proto::udp};
      for (int pi = 0; pi < 2; ++pi) {
        pkt_spec s;
        s.ts = timestamp{1617613200, 0}.plus_seconds(t + pi * 1.0);
        s.src = f.key.src_addr;
        s.dst = f.key.dst_addr;
        s.protocol = 17;
        s.src_port = port;
        s.dst_port = 7000;
        s.payload.assign(static_cast<std::size_t>(40 + 200 * cl), 0x55);
        auto p = build_packet(s);
        p.capture_index = c.packets.size();
        f.packet_refs.push_back(p.capture_index);
        c.packets.push_back(std::move(p));
      }
      f.first_time = c.packets[f.packet_refs.front()].ts;
      f.last_time = c.packets[f.packet_refs.back()].ts;
      c.flows.push_back(std::move(f));
      c.labels.push_back(static_cast<std::uint32_t>(cl));
      t += 10.0;
    }
  }
  return c;
}

transition_histogram constant_hist(double delta) {
  transition_histogram h;
  h.lo = h.hi = delta;
  h.counts = {5};
  return h;
}

markov_model cycle_markov(std::uint32_t k, bool sentinels) {
  markov_model m;
  m.voc = vocab{k, sentinels};
  m.agg = sentinels ? aggregation::ip_pair : aggregation::global;
  std::size_t v = m.voc.size();
  m.start_prob.assign(v, 0.0);
  m.transition.assign(v, std::vector<double>(v, 0.0));
  m.row_defined.assign(v, false);
  return m;
}

}  // namespace

TEST_CASE("rebase without a key or shift is the identity") {
  auto c = make_corpus(1);
  std::vector<raw_packet> flow_pkts;
  for (auto r : c.flows[0].packet_refs) flow_pkts.push_back(c.packets[r]);
  auto out = rebase_flow(flow_pkts, flow_pkts[0].ts, std::nullopt);
  REQUIRE(out.size() == flow_pkts.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out[i].ts == flow_pkts[i].ts);
    CHECK(out[i].data == flow_pkts[i].data);
  }
}

TEST_CASE("rebase translates timestamps preserving intra-flow deltas") {
  pkt_spec s;
  s.src = ip_addr::v4(1, 1, 1, 1);
  s.dst = ip_addr::v4(2, 2, 2, 2);
  s.protocol = 17;
  std::vector<raw_packet> pkts;
  for (double d : {0.0, 1.5, 2.5}) {
    s.ts = timestamp{50, 0}.plus_seconds(d);
    pkts.push_back(build_packet(s));
  }
  auto out = rebase_flow(pkts, timestamp{100, 0}, std::nullopt);
  CHECK(out[0].ts == timestamp{100, 0});
  CHECK(out[1].ts == timestamp{101, 500000000});
  CHECK(out[2].ts == timestamp{102, 500000000});
}

TEST_CASE("rewritten packets pass independent checksum validation") {
  auto c = make_corpus(2);
  // also exercise tcp: hand-build one tcp flow
  pkt_spec s;
  s.ts = timestamp{1617613200, 0};
  s.src = ip_addr::v4(172, 16, 0, 9);
  s.dst = ip_addr::v4(172, 16, 1, 1);
  s.protocol = 6;
  s.src_port = 12000;
  s.dst_port = 80;
  s.tcp_flags = kTcpAck | kTcpPsh;
  s.payload.assign(99, 0x33);
  auto tcp_packet = build_packet(s);

  flow_key new_key{ip_addr::v4(10, 7, 7, 7), ip_addr::v4(10, 8, 8, 8), 12000, 80,
                   transport_proto::tcp};
  auto rew = rebase_flow(std::vector<raw_packet>{tcp_packet}, timestamp{99, 0}, new_key);
  REQUIRE(rew.size() == 1);
  CHECK(rew[0].decoded.ip->src_addr == new_key.src_addr);
  CHECK(oracle_verify_ipv4_header(rew[0]));
  CHECK(oracle_verify_transport(rew[0]));

  // udp flow through the same path
  std::vector<raw_packet> udp_pkts;
  for (auto r : c.flows[0].packet_refs) udp_pkts.push_back(c.packets[r]);
  flow_key udp_key = c.flows[0].key;
  udp_key.src_addr = ip_addr::v4(10, 9, 9, 9);
  udp_key.dst_addr = ip_addr::v4(10, 9, 9, 10);
  auto rew_udp = rebase_flow(udp_pkts, timestamp{200, 0}, udp_key);
  for (const auto& p : rew_udp) {
    CHECK(oracle_verify_ipv4_header(p));
    CHECK(oracle_verify_transport(p));
    CHECK(p.decoded.udp->checksum_valid);
  }
  // payload bytes untouched
  CHECK(std::equal(rew_udp[0].data.begin() + rew_udp[0].payload_offset, rew_udp[0].data.end(),
                   udp_pkts[0].data.begin() + udp_pkts[0].payload_offset));
}

TEST_CASE("empty generation window emits nothing") {
  auto c = make_corpus(2);
  auto m = cycle_markov(3, false);
  m.start_prob = {1.0, 0.0, 0.0};
  m.transition[0][0] = 1.0;
  m.row_defined[0] = true;
  generation_plan plan;
  plan.agg = aggregation::global;
  plan.kind = model_kind::markov;
  plan.markov = &m;
  plan.flows = c.flows;
  plan.packets = c.packets;
  plan.labels = c.labels;
  plan.hist = constant_hist(10.0);
  plan.t_start = plan.t_end = timestamp{1617613200, 0};
  plan.seed = 4;
  auto trace = generate_global(plan);
  CHECK(trace.packets.empty());
  CHECK(trace.provenance.empty());
}

TEST_CASE("degenerate 10 s histogram over a 100 s window schedules exactly 10 flows") {
  auto c = make_corpus(2);
  auto m = cycle_markov(3, false);
  m.start_prob = {1.0, 0.0, 0.0};
  for (int i = 0; i < 3; ++i) {
    m.transition[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 1.0;
    m.row_defined[static_cast<std::size_t>(i)] = true;
  }
  generation_plan plan;
  plan.agg = aggregation::global;
  plan.kind = model_kind::markov;
  plan.markov = &m;
  plan.flows = c.flows;
  plan.packets = c.packets;
  plan.labels = c.labels;
  plan.hist = constant_hist(10.0);
  plan.t_start = timestamp{1617613200, 0};
  plan.t_end = plan.t_start.plus_seconds(100.0);
  plan.seed = 4;
  auto trace = generate_global(plan);
  REQUIRE(trace.provenance.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(trace.provenance[i].scheduled ==
          plan.t_start.plus_seconds(10.0 * static_cast<double>(i + 1)));
    CHECK(trace.provenance[i].cluster == 0);
  }
}

TEST_CASE("ip mode: START to END with certainty produces empty sequences") {
  auto c = make_corpus(1);
  auto m = cycle_markov(3, true);
  vocab v = m.voc;
  m.start_prob.assign(v.size(), 0.0);
  m.start_prob[v.end_id()] = 1.0;
  m.transition[v.start_id()][v.end_id()] = 1.0;
  m.row_defined[v.start_id()] = true;
  generation_plan plan;
  plan.agg = aggregation::ip_pair;
  plan.kind = model_kind::markov;
  plan.markov = &m;
  plan.flows = c.flows;
  plan.packets = c.packets;
  plan.labels = c.labels;
  plan.hist = constant_hist(5.0);
  plan.t_start = timestamp{1617613200, 0};
  plan.t_end = plan.t_start.plus_seconds(100.0);
  plan.seed = 9;
  auto trace = generate_ip_based(plan, 7);
  CHECK(trace.packets.empty());
  CHECK(trace.provenance.empty());
}

TEST_CASE("ip mode: START -> a -> END chains emit one flow per sequence on fresh pairs") {
  auto c = make_corpus(2);
  auto m = cycle_markov(3, true);
  vocab v = m.voc;
  m.start_prob.assign(v.size(), 0.0);
  m.start_prob[1] = 1.0;
  m.transition[v.start_id()][1] = 1.0;
  m.row_defined[v.start_id()] = true;
  m.transition[1][v.end_id()] = 1.0;
  m.row_defined[1] = true;
  generation_plan plan;
  plan.agg = aggregation::ip_pair;
  plan.kind = model_kind::markov;
  plan.markov = &m;
  plan.flows = c.flows;
  plan.packets = c.packets;
  plan.labels = c.labels;
  plan.hist = constant_hist(5.0);
  plan.t_start = timestamp{1617613200, 0};
  plan.t_end = plan.t_start.plus_seconds(100.0);
  plan.seed = 10;
  auto trace = generate_ip_based(plan, 5);
  REQUIRE(trace.provenance.size() == 5);
  std::set<std::pair<std::string, std::string>> pairs;
  for (const auto& rec : trace.provenance) {
    CHECK(rec.cluster == 1);
    CHECK(rec.scheduled == plan.t_start.plus_seconds(5.0));
    // addresses in 10.0.0.0/8, ports preserved from the source flow
    CHECK(rec.key.src_addr.bytes[0] == 10);
    CHECK(rec.key.dst_addr.bytes[0] == 10);
    CHECK(rec.key.dst_port == 7000);
    pairs.insert({rec.key.src_addr.str(), rec.key.dst_addr.str()});
  }
  CHECK(pairs.size() == 5);  // generated pairs unique across sequences
  // every packet traces to exactly one provenance record
  REQUIRE(trace.packet_flow.size() == trace.packets.size());
  std::map<std::uint64_t, std::size_t> per_flow;
  for (auto id : trace.packet_flow) ++per_flow[id];
  for (const auto& rec : trace.provenance) {
    CHECK(per_flow[rec.gen_flow_id] == rec.packet_count);
    CHECK(rec.first_packet <= rec.last_packet);
    CHECK(rec.last_packet < trace.packets.size());
    CHECK(trace.packet_flow[rec.first_packet] == rec.gen_flow_id);
    CHECK(trace.packet_flow[rec.last_packet] == rec.gen_flow_id);
  }
}

TEST_CASE("END never reached raises a runaway-sequence error naming the sequence") {
  auto c = make_corpus(1);
  auto m = cycle_markov(3, true);
  vocab v = m.voc;
  m.start_prob.assign(v.size(), 0.0);
  m.start_prob[0] = 1.0;
  m.transition[v.start_id()][0] = 1.0;
  m.row_defined[v.start_id()] = true;
  m.transition[0][0] = 1.0;  // 0 loops forever
  m.row_defined[0] = true;
  generation_plan plan;
  plan.agg = aggregation::ip_pair;
  plan.kind = model_kind::markov;
  plan.markov = &m;
  plan.flows = c.flows;
  plan.packets = c.packets;
  plan.labels = c.labels;
  plan.hist = constant_hist(1.0);
  plan.t_start = timestamp{1617613200, 0};
  plan.t_end = plan.t_start.plus_seconds(100.0);
  plan.seed = 77;
  plan.max_sequence_len = 500;
  try {
    generate_ip_based(plan, 1);
    FAIL("expected runaway-sequence");
  } catch (const runaway_sequence_error& e) {
    CHECK(e.seed() == 77);
    CHECK(e.sequence_index() == 0);
  }
}

TEST_CASE("random baseline: zero flows, cluster frequency match, valid output") {
  auto c = make_corpus(40);  // 120 flows over 3 clusters
  generation_plan plan;
  plan.agg = aggregation::global;
  plan.kind = model_kind::random;
  plan.flows = c.flows;
  plan.packets = c.packets;
  plan.labels = c.labels;
  plan.hist = constant_hist(0.5);
  plan.t_start = timestamp{1617613200, 0};
  plan.t_end = plan.t_start.plus_seconds(1000.0);
  plan.seed = 13;

  auto empty = random_baseline(plan, 0);
  CHECK(empty.packets.empty());

  auto trace = random_baseline(plan, 10000);
  REQUIRE(trace.provenance.size() == 10000);
  std::map<std::uint32_t, double> freq;
  for (const auto& rec : trace.provenance) freq[rec.cluster] += 1.0 / 10000.0;
  // training mix is uniform over 3 clusters; total variation within 3%
  double tv = 0;
  for (int cl = 0; cl < 3; ++cl) tv += std::abs(freq[static_cast<std::uint32_t>(cl)] - 1.0 / 3);
  CHECK(tv / 2 < 0.03);
}

TEST_CASE("emitted packet stream is time-sorted even when flows interleave") {
  auto c = make_corpus(3);
  generation_plan plan;
  plan.agg = aggregation::global;
  plan.kind = model_kind::random;
  plan.flows = c.flows;
  plan.packets = c.packets;
  plan.labels = c.labels;
  plan.hist = constant_hist(0.25);  // flows overlap: duration 1 s, spacing 0.25 s
  plan.t_start = timestamp{1617613200, 0};
  plan.t_end = plan.t_start.plus_seconds(50.0);
  plan.seed = 21;
  auto trace = random_baseline(plan, 40);
  for (std::size_t i = 1; i < trace.packets.size(); ++i) {
    CHECK(!(trace.packets[i].ts < trace.packets[i - 1].ts));
    CHECK(trace.packets[i].capture_index == i);
  }
}

TEST_CASE("identical plan and seed give byte-identical traces") {
  auto c = make_corpus(4);
  auto m = cycle_markov(3, false);
  m.start_prob = {0.4, 0.3, 0.3};
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b)
      m.transition[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = 1.0 / 3;
    m.row_defined[static_cast<std::size_t>(a)] = true;
  }
  generation_plan plan;
  plan.agg = aggregation::global;
  plan.kind = model_kind::markov;
  plan.markov = &m;
  plan.flows = c.flows;
  plan.packets = c.packets;
  plan.labels = c.labels;
  plan.hist = constant_hist(3.0);
  plan.t_start = timestamp{1617613200, 0};
  plan.t_end = plan.t_start.plus_seconds(300.0);
  plan.seed = 5150;
  auto a = generate_global(plan);
  auto b = generate_global(plan);
  REQUIRE(a.packets.size() == b.packets.size());
  for (std::size_t i = 0; i < a.packets.size(); ++i) {
    CHECK(a.packets[i].ts == b.packets[i].ts);
    CHECK(a.packets[i].data == b.packets[i].data);
  }
}

TEST_CASE("cluster with no flows falls back through resampling to a live cluster") {
  auto c = make_corpus(2);
  // restrict the corpus to clusters 0 and 1 but let the model emit cluster 2
  corpus c2;
  c2.packets = c.packets;
  for (std::size_t i = 0; i < c.flows.size(); ++i) {
    if (c.labels[i] == 2) continue;
    c2.flows.push_back(c.flows[i]);
    c2.labels.push_back(c.labels[i]);
  }
  auto m = cycle_markov(3, false);
  m.start_prob = {0.0, 0.0, 1.0};  // always predicts the empty cluster
  for (int a = 0; a < 3; ++a) {
    m.transition[static_cast<std::size_t>(a)] = {0.0, 0.0, 1.0};
    m.row_defined[static_cast<std::size_t>(a)] = true;
  }
  cluster_model clusters;
  clusters.k = 3;
  clusters.dim = 1;
  clusters.centroids = {0.0, 1.0, 1.1};  // cluster 1 is nearest to 2
  generation_plan plan;
  plan.agg = aggregation::global;
  plan.kind = model_kind::markov;
  plan.markov = &m;
  plan.clusters = &clusters;
  plan.flows = c2.flows;
  plan.packets = c2.packets;
  plan.labels = c2.labels;
  plan.hist = constant_hist(10.0);
  plan.t_start = timestamp{1617613200, 0};
  plan.t_end = plan.t_start.plus_seconds(50.0);
  plan.seed = 3;
  auto trace = generate_global(plan);
  REQUIRE(!trace.provenance.empty());
  for (const auto& rec : trace.provenance) CHECK(rec.cluster == 1);
}
