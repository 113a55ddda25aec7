#include "tgen/generate.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <set>

#include "tgen/checksum.hpp"
#include "tgen/errors.hpp"
#include "tgen/util.hpp"

namespace tgen {

std::string model_kind_name(model_kind m) {
  switch (m) {
    case model_kind::markov: return "markov";
    case model_kind::neural: return "neural";
    case model_kind::random: return "random";
  }
  return "markov";
}

std::optional<model_kind> model_kind_from(std::string_view name) {
  if (name == "markov") return model_kind::markov;
  if (name == "neural") return model_kind::neural;
  if (name == "random") return model_kind::random;
  return std::nullopt;
}

namespace {

void put16(std::vector<std::uint8_t>& d, std::size_t off, std::uint16_t x) {
  d[off] = static_cast<std::uint8_t>(x >> 8);
  d[off + 1] = static_cast<std::uint8_t>(x & 0xff);
}

// Address rewrite + checksum repair for one packet.
void rewrite_addresses(raw_packet& pkt, const ip_addr& src, const ip_addr& dst) {
  if (pkt.ip_offset < 0 || !pkt.decoded.ip)
    throw error(errc::generation_config, "cannot rewrite a packet without a decoded IP header");
  auto& d = pkt.data;
  std::size_t ip_off = static_cast<std::size_t>(pkt.ip_offset);
  if (pkt.decoded.ip->src_addr.v6 || src.v6)
    throw error(errc::generation_config, "address rewrite supports IPv4 sources only");

  std::copy(src.bytes.begin(), src.bytes.begin() + 4, d.begin() + static_cast<long>(ip_off + 12));
  std::copy(dst.bytes.begin(), dst.bytes.begin() + 4, d.begin() + static_cast<long>(ip_off + 16));
  std::size_t ihl = static_cast<std::size_t>((d[ip_off] & 0x0f) * 4);
  put16(d, ip_off + 10, 0);
  std::uint16_t ipcs = ipv4_header_checksum(std::span<const std::uint8_t>(&d[ip_off], ihl));
  put16(d, ip_off + 10, ipcs);

  pkt.decoded.ip->src_addr = src;
  pkt.decoded.ip->dst_addr = dst;

  if (pkt.transport_offset < 0) return;
  std::size_t toff = static_cast<std::size_t>(pkt.transport_offset);
  std::size_t seg_len = std::min(d.size() - toff,
                                 static_cast<std::size_t>(pkt.decoded.ip->total_len) - ihl);
  if (pkt.decoded.tcp) {
    if (toff + 18 > d.size()) return;
    put16(d, toff + 16, 0);
    std::uint16_t cs = transport_checksum(src, dst, 6, std::span<const std::uint8_t>(&d[toff], seg_len));
    put16(d, toff + 16, cs);
  } else if (pkt.decoded.udp) {
    if (toff + 8 > d.size()) return;
    std::uint16_t old = static_cast<std::uint16_t>((d[toff + 6] << 8) | d[toff + 7]);
    if (old == 0) return;  // checksum unused stays unused
    put16(d, toff + 6, 0);
    std::uint16_t cs = transport_checksum(src, dst, 17, std::span<const std::uint8_t>(&d[toff], seg_len));
    if (cs == 0) cs = 0xffff;
    put16(d, toff + 6, cs);
    pkt.decoded.udp->checksum_valid = true;
  }
}

struct emitter {
  explicit emitter(const generation_plan& plan) : plan_(plan) {}

  void emit_flow(std::size_t source_flow, std::uint32_t cluster, timestamp at,
                 const std::optional<flow_key>& new_key, std::size_t seq_index) {
    const flow& f = plan_.flows[source_flow];
    std::vector<const raw_packet*> src;
    src.reserve(f.packet_refs.size());
    for (auto ref : f.packet_refs) src.push_back(&plan_.packets[ref]);
    std::vector<raw_packet> copy;
    copy.reserve(src.size());
    for (const auto* p : src) copy.push_back(*p);
    auto rebased = rebase_flow(copy, at, new_key);

    provenance_record rec;
    rec.gen_flow_id = provenance.size();
    rec.source_flow_id = source_flow;
    rec.cluster = cluster;
    rec.scheduled = at;
    rec.key = new_key ? *new_key : f.key;
    rec.sequence_index = seq_index;
    rec.packet_count = rebased.size();
    for (auto& p : rebased) {
      staged.emplace_back(std::move(p), rec.gen_flow_id);
    }
    provenance.push_back(rec);
  }

  generated_trace finish() {
    std::stable_sort(staged.begin(), staged.end(),
                     [](const auto& a, const auto& b) { return a.first.ts < b.first.ts; });
    generated_trace out;
    out.packets.reserve(staged.size());
    out.packet_flow.reserve(staged.size());
    for (std::size_t i = 0; i < staged.size(); ++i) {
      staged[i].first.capture_index = i;
      out.packets.push_back(std::move(staged[i].first));
      out.packet_flow.push_back(staged[i].second);
    }
    for (auto& rec : provenance) {
      rec.first_packet = out.packets.size();
      rec.last_packet = 0;
    }
    for (std::size_t i = 0; i < out.packet_flow.size(); ++i) {
      auto& rec = provenance[out.packet_flow[i]];
      rec.first_packet = std::min(rec.first_packet, i);
      rec.last_packet = std::max(rec.last_packet, i);
    }
    out.provenance = std::move(provenance);
    return out;
  }

  const generation_plan& plan_;
  std::vector<std::pair<raw_packet, std::uint64_t>> staged;
  std::vector<provenance_record> provenance;
};

std::vector<std::vector<std::uint32_t>> cluster_flow_index(const generation_plan& plan,
                                                           std::size_t k) {
  std::vector<std::vector<std::uint32_t>> index(k);
  for (std::size_t i = 0; i < plan.flows.size(); ++i) {
    if (plan.labels[i] >= k) throw error(errc::generation_config, "label outside the cluster model");
    index[plan.labels[i]].push_back(static_cast<std::uint32_t>(i));
  }
  return index;
}

// Samples the next token from the model distribution, masking sentinels that
// make no sense in the current mode (START always; END outside ip_pair walks).
std::uint32_t sample_token(const generation_plan& plan, std::span<const std::uint32_t> context,
                           rng& gen, bool allow_end) {
  std::vector<double> probs;
  std::size_t k;
  if (plan.kind == model_kind::neural) {
    probs = predict_next(*plan.neural, context);
    k = plan.neural->voc.k;
    probs[plan.neural->voc.start_id()] = 0.0;
    if (!allow_end) probs[plan.neural->voc.end_id()] = 0.0;
  } else {
    probs = predict_next(*plan.markov, context);
    k = plan.markov->voc.k;
    if (plan.markov->voc.has_sentinels) {
      probs[plan.markov->voc.start_id()] = 0.0;
      if (!allow_end) probs[plan.markov->voc.end_id()] = 0.0;
    }
  }
  (void)k;
  return static_cast<std::uint32_t>(gen.categorical(probs));
}

// SampleFlow: uniform with replacement among flows labeled with the cluster.
// A cluster with no indexed flows is resampled up to 10 times, then falls
// back to the nearest centroid that has flows.
std::uint32_t resolve_cluster(const generation_plan& plan,
                              const std::vector<std::vector<std::uint32_t>>& index,
                              std::uint32_t cluster, std::span<const std::uint32_t> context,
                              rng& gen, bool allow_end) {
  if (cluster < index.size() && !index[cluster].empty()) return cluster;
  for (int attempt = 0; attempt < 10; ++attempt) {
    std::uint32_t c = sample_token(plan, context, gen, allow_end);
    if (c < index.size() && !index[c].empty()) return c;
  }
  if (!plan.clusters) throw error(errc::generation_config, "no cluster model for fallback lookup");
  double best = std::numeric_limits<double>::infinity();
  std::uint32_t best_c = 0;
  bool found = false;
  for (std::size_t c = 0; c < index.size(); ++c) {
    if (index[c].empty() || c == cluster) continue;
    double d = 0;
    if (cluster < plan.clusters->k) {
      auto a = plan.clusters->centroid(cluster);
      auto b = plan.clusters->centroid(c);
      for (std::size_t j = 0; j < a.size(); ++j) d += (a[j] - b[j]) * (a[j] - b[j]);
    }
    if (d < best) {
      best = d;
      best_c = static_cast<std::uint32_t>(c);
      found = true;
    }
  }
  if (!found) throw error(errc::generation_config, "no cluster has any indexed flows");
  return best_c;
}

std::size_t model_vocab_k(const generation_plan& plan) {
  if (plan.kind == model_kind::neural) {
    if (!plan.neural) throw error(errc::generation_config, "neural model missing from the plan");
    return plan.neural->voc.k;
  }
  if (!plan.markov) throw error(errc::generation_config, "markov model missing from the plan");
  return plan.markov->voc.k;
}

std::uint32_t sample_first_cluster(const generation_plan& plan, rng& gen) {
  std::span<const std::uint32_t> empty_ctx;
  if (plan.kind == model_kind::neural) return sample_token(plan, empty_ctx, gen, false);
  std::vector<double> probs = plan.markov->start_prob;
  if (plan.markov->voc.has_sentinels) {
    probs[plan.markov->voc.start_id()] = 0.0;
    probs[plan.markov->voc.end_id()] = 0.0;
  }
  return static_cast<std::uint32_t>(gen.categorical(probs));
}

class ip_allocator {
public:
  explicit ip_allocator(std::uint64_t seed) : next_(seed % (1u << 20)) {}

  // Sequential allocation inside 10.0.0.0/8, skipping collisions with
  // previously handed-out addresses.
  ip_addr alloc() {
    while (true) {
      std::uint32_t n = next_++;
      std::uint8_t b = static_cast<std::uint8_t>((n >> 16) & 0xff);
      std::uint8_t c = static_cast<std::uint8_t>((n >> 8) & 0xff);
      std::uint8_t d = static_cast<std::uint8_t>(n & 0xff);
      if (d == 0 || d == 255) continue;
      ip_addr a = ip_addr::v4(10, b, c, d);
      if (used_.insert(a).second) return a;
    }
  }

private:
  std::uint32_t next_;
  std::set<ip_addr> used_;
};

}  // namespace

std::vector<raw_packet> rebase_flow(std::span<const raw_packet> flow_packets, timestamp new_start,
                                    const std::optional<flow_key>& new_key) {
  std::vector<raw_packet> out;
  out.reserve(flow_packets.size());
  if (flow_packets.empty()) return out;
  timestamp base = flow_packets.front().ts;
  for (const auto& src : flow_packets) {
    raw_packet p = src;
    std::int64_t dsec = src.ts.sec - base.sec;
    std::int64_t dn = static_cast<std::int64_t>(src.ts.nanos) - static_cast<std::int64_t>(base.nanos);
    p.ts.sec = new_start.sec + dsec;
    std::int64_t n = static_cast<std::int64_t>(new_start.nanos) + dn;
    while (n < 0) {
      --p.ts.sec;
      n += 1000000000;
    }
    while (n >= 1000000000) {
      ++p.ts.sec;
      n -= 1000000000;
    }
    p.ts.nanos = static_cast<std::uint32_t>(n);
    if (new_key) rewrite_addresses(p, new_key->src_addr, new_key->dst_addr);
    out.push_back(std::move(p));
  }
  return out;
}

generated_trace generate_global(const generation_plan& plan) {
  if (plan.agg != aggregation::global)
    throw error(errc::generation_config, "plan is not configured for global generation");
  if (plan.hist.total() == 0) throw error(errc::generation_config, "empty transition time histogram");
  std::size_t k = model_vocab_k(plan);
  auto index = cluster_flow_index(plan, k);

  rng gen(plan.seed);
  emitter em(plan);
  std::vector<std::uint32_t> context;
  std::uint32_t c = sample_first_cluster(plan, gen);
  timestamp t = plan.t_start;
  std::size_t steps = 0;
  while (t < plan.t_end) {
    if (++steps > plan.max_sequence_len)
      throw runaway_sequence_error("global walk exceeded max_sequence_len", plan.seed, 0);
    c = resolve_cluster(plan, index, c, context, gen, false);
    std::uint32_t f = index[c][gen.below(index[c].size())];
    t = t.plus_seconds(plan.hist.sample(gen));
    context.push_back(c);
    std::uint32_t next = sample_token(plan, context, gen, false);
    em.emit_flow(f, c, t, std::nullopt, 0);
    c = next;
  }
  return em.finish();
}

generated_trace generate_ip_based(const generation_plan& plan, std::size_t pair_count) {
  if (plan.agg != aggregation::ip_pair)
    throw error(errc::generation_config, "plan is not configured for ip_pair generation");
  if (plan.hist.total() == 0) throw error(errc::generation_config, "empty transition time histogram");
  std::size_t k = model_vocab_k(plan);
  bool neural = plan.kind == model_kind::neural;
  std::uint32_t end_id = neural ? plan.neural->voc.end_id() : plan.markov->voc.end_id();
  std::uint32_t start_id = neural ? plan.neural->voc.start_id() : plan.markov->voc.start_id();
  auto index = cluster_flow_index(plan, k);

  rng gen(plan.seed);
  ip_allocator ips(derive_seed(plan.seed, "ips"));
  emitter em(plan);
  for (std::size_t s = 0; s < pair_count; ++s) {
    std::vector<std::uint32_t> context{start_id};
    std::uint32_t c = sample_token(plan, context, gen, true);
    ip_addr src = ips.alloc();
    ip_addr dst = ips.alloc();
    timestamp t = plan.t_start;
    std::size_t steps = 0;
    while (c != end_id) {
      if (++steps > plan.max_sequence_len)
        throw runaway_sequence_error("sequence " + std::to_string(s) + " never reached END",
                                     plan.seed, s);
      std::uint32_t cc = resolve_cluster(plan, index, c, context, gen, true);
      std::uint32_t f = index[cc][gen.below(index[cc].size())];
      t = t.plus_seconds(plan.hist.sample(gen));
      flow_key key = plan.flows[f].key;
      key.src_addr = src;
      key.dst_addr = dst;
      em.emit_flow(f, cc, t, key, s);
      context.push_back(cc);
      c = sample_token(plan, context, gen, true);
    }
  }
  return em.finish();
}

generated_trace random_baseline(const generation_plan& plan, std::size_t flow_count) {
  if (plan.flows.empty()) throw error(errc::generation_config, "no flows to sample from");
  if (plan.hist.total() == 0 && flow_count > 0)
    throw error(errc::generation_config, "empty transition time histogram");
  rng gen(plan.seed);
  emitter em(plan);
  timestamp t = plan.t_start;
  for (std::size_t i = 0; i < flow_count; ++i) {
    std::uint32_t f = static_cast<std::uint32_t>(gen.below(plan.flows.size()));
    t = t.plus_seconds(plan.hist.sample(gen));
    em.emit_flow(f, plan.labels[f], t, std::nullopt, 0);
  }
  return em.finish();
}

void save_provenance(const generated_trace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw error(errc::io, "cannot write " + path.string());
  std::vector<std::string> fields = {"gen_flow_id",  "source_flow_id", "cluster",
                                     "scheduled",    "src_addr",       "src_port",
                                     "dst_addr",     "dst_port",       "transport",
                                     "sequence_index", "packet_count", "first_packet",
                                     "last_packet"};
  out << join_csv(fields) << '\n';
  for (const auto& r : trace.provenance) {
    fields.clear();
    fields.push_back(std::to_string(r.gen_flow_id));
    fields.push_back(std::to_string(r.source_flow_id));
    fields.push_back(std::to_string(r.cluster));
    fields.push_back(r.scheduled.str());
    fields.push_back(r.key.src_addr.str());
    fields.push_back(std::to_string(r.key.src_port));
    fields.push_back(r.key.dst_addr.str());
    fields.push_back(std::to_string(r.key.dst_port));
    fields.push_back(transport_name(r.key.transport));
    fields.push_back(std::to_string(r.sequence_index));
    fields.push_back(std::to_string(r.packet_count));
    fields.push_back(std::to_string(r.first_packet));
    fields.push_back(std::to_string(r.last_packet));
    out << join_csv(fields) << '\n';
  }
}

}  // namespace tgen
