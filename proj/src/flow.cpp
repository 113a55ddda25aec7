#include "tgen/flow.hpp"

#include <algorithm>

#include "tgen/errors.hpp"

namespace tgen {

std::string transport_name(transport_proto t) { return t == transport_proto::tcp ? "TCP" : "UDP"; }

std::string close_reason_name(close_reason r) {
  switch (r) {
    case close_reason::fin: return "FIN";
    case close_reason::rst: return "RST";
    case close_reason::timeout: return "TIMEOUT";
    case close_reason::idle: return "IDLE";
    case close_reason::max_duration: return "MAX_DURATION";
    case close_reason::capture_end: return "CAPTURE_END";
  }
  return "CAPTURE_END";
}

std::optional<close_reason> close_reason_from(std::string_view name) {
  if (name == "FIN") return close_reason::fin;
  if (name == "RST") return close_reason::rst;
  if (name == "TIMEOUT") return close_reason::timeout;
  if (name == "IDLE") return close_reason::idle;
  if (name == "MAX_DURATION") return close_reason::max_duration;
  if (name == "CAPTURE_END") return close_reason::capture_end;
  return std::nullopt;
}

namespace {

flow_key key_of(const raw_packet& pkt) {
  flow_key k;
  k.src_addr = pkt.decoded.ip->src_addr;
  k.dst_addr = pkt.decoded.ip->dst_addr;
  if (pkt.decoded.tcp) {
    k.transport = transport_proto::tcp;
    k.src_port = pkt.decoded.tcp->src_port;
    k.dst_port = pkt.decoded.tcp->dst_port;
  } else {
    k.transport = transport_proto::udp;
    k.src_port = pkt.decoded.udp->src_port;
    k.dst_port = pkt.decoded.udp->dst_port;
  }
  return k;
}

struct direction_state {
  std::vector<std::uint64_t> refs;
  timestamp first{};
  timestamp last{};
  bool fin_sent = false;
};

struct tcp_session {
  flow_key client_key;  // client -> server
  bool syn_seen = false;
  bool synack_seen = false;
  bool established = false;
  bool rst = false;
  direction_state fwd;  // client -> server
  direction_state rev;
  timestamp last_activity{};
};

struct udp_session {
  std::vector<std::uint64_t> refs;
  timestamp first{};
  timestamp last{};
};

class assembler {
public:
  explicit assembler(std::span<const raw_packet> packets, const flow_config& cfg)
      : packets_(packets), cfg_(cfg) {}

  assembly_result run() {
    std::vector<std::uint64_t> order(packets_.size());
    for (std::uint64_t i = 0; i < packets_.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::uint64_t a, std::uint64_t b) {
      return packets_[a].ts < packets_[b].ts;
    });
    for (std::uint64_t idx : order) {
      const raw_packet& pkt = packets_[idx];
      if (!pkt.decoded.ip || (!pkt.decoded.tcp && !pkt.decoded.udp)) continue;
      ++result_.admitted;
      expire(pkt.ts);
      if (pkt.decoded.tcp) on_tcp(pkt);
      else on_udp(pkt);
    }
    finish();
    std::stable_sort(result_.flows.begin(), result_.flows.end(), [](const flow& a, const flow& b) {
      if (a.first_time != b.first_time) return a.first_time < b.first_time;
      return a.packet_refs.front() < b.packet_refs.front();
    });
    return std::move(result_);
  }

private:
  void append(direction_state& dir, const raw_packet& pkt) {
    if (dir.refs.empty()) dir.first = pkt.ts;
    dir.refs.push_back(pkt.capture_index);
    dir.last = pkt.ts;
  }

  void emit_direction(const flow_key& key, const direction_state& dir, close_reason fallback) {
    if (dir.refs.empty()) return;
    flow f;
    f.key = key;
    f.packet_refs = dir.refs;
    f.first_time = dir.first;
    f.last_time = dir.last;
    f.close = dir.fin_sent ? close_reason::fin : fallback;
    result_.flows.push_back(std::move(f));
  }

  void close_tcp(const tcp_session& s, close_reason fallback) {
    if (cfg_.require_handshake && !s.established) {
      // Embryonic session: its packets never form flows.
      result_.orphans += s.fwd.refs.size() + s.rev.refs.size();
      return;
    }
    close_reason base = s.rst ? close_reason::rst : fallback;
    emit_direction(s.client_key, s.fwd, base);
    emit_direction(s.client_key.mirrored(), s.rev, base);
  }

  void on_tcp(const raw_packet& pkt) {
    flow_key key = key_of(pkt);
    flow_key canon = std::min(key, key.mirrored());
    std::uint8_t flags = pkt.decoded.tcp->flags;
    bool pure_syn = (flags & kTcpSyn) && !(flags & kTcpAck);

    auto it = tcp_.find(canon);
    if (it == tcp_.end()) {
      if (pure_syn || !cfg_.require_handshake) {
        tcp_session s;
        s.client_key = key;
        s.syn_seen = pure_syn;
        s.established = !cfg_.require_handshake;
        append(s.fwd, pkt);
        s.last_activity = pkt.ts;
        if (flags & kTcpFin) s.fwd.fin_sent = true;
        if (flags & kTcpRst) s.rst = true;
        auto [pos, _] = tcp_.emplace(canon, std::move(s));
        if (pos->second.rst) {
          close_tcp(pos->second, close_reason::rst);
          tcp_.erase(pos);
        }
      } else {
        ++result_.orphans;  // stray segment, e.g. a mid-capture ACK
      }
      return;
    }

    tcp_session& s = it->second;
    bool from_client = key == s.client_key;

    // Port reuse: a fresh SYN from the original initiator over a session that
    // progressed beyond a lone SYN starts a new one. A lone-SYN match is a
    // retransmission and stays in place.
    bool progressed = s.synack_seen || s.fwd.fin_sent || s.rev.fin_sent || !s.rev.refs.empty();
    if (pure_syn && from_client && s.established && progressed) {
      close_tcp(s, close_reason::timeout);
      tcp_.erase(it);
      on_tcp(pkt);
      return;
    }

    if (!s.established) {
      if (!from_client && (flags & kTcpSyn) && (flags & kTcpAck) && s.syn_seen) s.synack_seen = true;
      else if (from_client && (flags & kTcpAck) && s.synack_seen) s.established = true;
    }
    append(from_client ? s.fwd : s.rev, pkt);
    s.last_activity = pkt.ts;
    if (flags & kTcpFin) (from_client ? s.fwd : s.rev).fin_sent = true;
    if (flags & kTcpRst) s.rst = true;

    if (s.rst || (s.fwd.fin_sent && s.rev.fin_sent)) {
      close_tcp(s, s.rst ? close_reason::rst : close_reason::fin);
      tcp_.erase(it);
    }
  }

  void on_udp(const raw_packet& pkt) {
    flow_key key = key_of(pkt);
    auto it = udp_.find(key);
    if (it != udp_.end()) {
      udp_session& s = it->second;
      if (pkt.ts.seconds() - s.first.seconds() > cfg_.udp_max_duration_s) {
        emit_udp(key, s, close_reason::max_duration);
        udp_.erase(it);
      } else {
        s.refs.push_back(pkt.capture_index);
        s.last = pkt.ts;
        return;
      }
    }
    udp_session s;
    s.refs.push_back(pkt.capture_index);
    s.first = s.last = pkt.ts;
    udp_.emplace(key, std::move(s));
  }

  void emit_udp(const flow_key& key, const udp_session& s, close_reason reason) {
    flow f;
    f.key = key;
    f.packet_refs = s.refs;
    f.first_time = s.first;
    f.last_time = s.last;
    f.close = reason;
    result_.flows.push_back(std::move(f));
  }

  void expire(const timestamp& now) {
    double t = now.seconds();
    for (auto it = tcp_.begin(); it != tcp_.end();) {
      if (t - it->second.last_activity.seconds() > cfg_.tcp_idle_timeout_s) {
        close_tcp(it->second, close_reason::timeout);
        it = tcp_.erase(it);
      } else {
        ++it;
      }
    }
    for (auto it = udp_.begin(); it != udp_.end();) {
      const udp_session& s = it->second;
      if (t - s.last.seconds() > cfg_.udp_idle_timeout_s) {
        emit_udp(it->first, s, close_reason::idle);
        it = udp_.erase(it);
      } else if (t - s.first.seconds() > cfg_.udp_max_duration_s) {
        emit_udp(it->first, s, close_reason::max_duration);
        it = udp_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void finish() {
    for (auto& [key, s] : tcp_) close_tcp(s, close_reason::capture_end);
    for (auto& [key, s] : udp_) emit_udp(key, s, close_reason::capture_end);
    tcp_.clear();
    udp_.clear();
  }

  std::span<const raw_packet> packets_;
  flow_config cfg_;
  assembly_result result_;
  std::map<flow_key, tcp_session> tcp_;
  std::map<flow_key, udp_session> udp_;
};

}  // namespace

assembly_result assemble_flows(std::span<const raw_packet> packets, const flow_config& config) {
  for (const auto& p : packets) {
    if ((p.decoded.tcp || p.decoded.udp) && p.capture_index >= packets.size())
      throw error(errc::internal, "packet_ref out of range");
  }
  return assembler(packets, config).run();
}

std::map<ip_pair, pair_stats> network_statistics(std::span<const flow> flows) {
  std::map<ip_pair, std::vector<timestamp>> times;
  for (const auto& f : flows) times[{f.key.src_addr, f.key.dst_addr}].push_back(f.first_time);
  std::map<ip_pair, pair_stats> out;
  for (auto& [pair, ts] : times) {
    std::sort(ts.begin(), ts.end());
    pair_stats s;
    s.flow_count = ts.size();
    if (ts.size() >= 2) {
      double total = 0;
      for (std::size_t i = 1; i < ts.size(); ++i) total += ts[i].seconds() - ts[i - 1].seconds();
      s.mean_interval_s = total / static_cast<double>(ts.size() - 1);
    }
    out.emplace(pair, s);
  }
  return out;
}

}  // namespace tgen
