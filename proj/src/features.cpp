#include "tgen/features.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "tgen/errors.hpp"
#include "tgen/util.hpp"

namespace tgen {

namespace {

const char* const kRawAttrs[kRawAttrCount] = {
    "packet_size", "inter_arrival", "day_time",     "ip_ttl",       "tcp_seq",
    "tcp_ack",     "tcp_window",    "tcp_header_len", "tcp_flag_syn", "tcp_flag_ack",
    "tcp_flag_fin", "tcp_flag_rst", "tcp_flag_psh", "tcp_flag_urg", "udp_bad_checksum",
};

const char* const kRawStats[kRawStatCount] = {
    "min", "q1", "median", "q3", "max", "mean", "std", "var", "entropy", "sum", "first", "last",
};

double day_time_of(const timestamp& ts) {
  double s = ts.seconds();
  double d = std::fmod(s, 86400.0);
  return d < 0 ? d + 86400.0 : d;
}

double week_day_of(const timestamp& ts) {
  // Unix epoch was a Thursday.
  std::int64_t days = ts.sec / 86400;
  return static_cast<double>((days % 7 + 7 + 4) % 7);
}

double attr_value(int attr, const raw_packet& pkt) {
  const auto& tcp = pkt.decoded.tcp;
  const auto& udp = pkt.decoded.udp;
  switch (attr) {
    case 0: return static_cast<double>(pkt.orig_len);
    case 2: return day_time_of(pkt.ts);
    case 3: return pkt.decoded.ip ? static_cast<double>(pkt.decoded.ip->ttl) : 0.0;
    case 4: return tcp ? static_cast<double>(tcp->seq_num) : 0.0;
    case 5: return tcp ? static_cast<double>(tcp->ack_num) : 0.0;
    case 6: return tcp ? static_cast<double>(tcp->window_size) : 0.0;
    case 7: return tcp ? static_cast<double>(tcp->header_len) : 0.0;
    case 8: return tcp && (tcp->flags & kTcpSyn) ? 1.0 : 0.0;
    case 9: return tcp && (tcp->flags & kTcpAck) ? 1.0 : 0.0;
    case 10: return tcp && (tcp->flags & kTcpFin) ? 1.0 : 0.0;
    case 11: return tcp && (tcp->flags & kTcpRst) ? 1.0 : 0.0;
    case 12: return tcp && (tcp->flags & kTcpPsh) ? 1.0 : 0.0;
    case 13: return tcp && (tcp->flags & kTcpUrg) ? 1.0 : 0.0;
    case 14: return udp && !udp->checksum_valid ? 1.0 : 0.0;
    default: return 0.0;
  }
}

double quantile(const std::vector<double>& sorted, double p) {
  if (sorted.size() == 1) return sorted[0];
  double h = p * static_cast<double>(sorted.size() - 1);
  std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

// Entropy over a 16-bin equal-width histogram of the flow's own value range;
// a constant attribute has entropy 0.
double binned_entropy(const std::vector<double>& values) {
  double lo = *std::min_element(values.begin(), values.end());
  double hi = *std::max_element(values.begin(), values.end());
  if (hi <= lo) return 0.0;
  constexpr int kBins = 16;
  std::array<std::uint64_t, kBins> counts{};
  for (double v : values) {
    int b = static_cast<int>((v - lo) / (hi - lo) * kBins);
    if (b >= kBins) b = kBins - 1;
    if (b < 0) b = 0;
    ++counts[static_cast<std::size_t>(b)];
  }
  double n = static_cast<double>(values.size());
  double h = 0;
  for (std::uint64_t c : counts) {
    if (c == 0) continue;
    double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return h;
}

void aggregate(const std::vector<double>& values, std::vector<feature_value>& out) {
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  double n = static_cast<double>(values.size());
  double sum = 0;
  for (double v : values) sum += v;
  double mean = sum / n;
  double var = 0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= n;  // population variance: a single observation has var = std = 0
  double stats[kRawStatCount] = {
      sorted.front(),        quantile(sorted, 0.25), quantile(sorted, 0.5),
      quantile(sorted, 0.75), sorted.back(),          mean,
      std::sqrt(var),        var,                    binned_entropy(values),
      sum,                   values.front(),         values.back(),
  };
  for (double s : stats) out.push_back(feature_value::number_of(s));
}

}  // namespace

std::uint64_t feature_catalog::hash() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& e : entries) {
    h = fnv1a64(e.name, h);
    h = fnv1a64(e.level == feature_level::raw   ? "|raw|"
                : e.level == feature_level::flow ? "|flow|"
                                                 : "|app|",
                h);
    h = fnv1a64(e.kind == feature_kind::numeric ? "num;" : "nom;", h);
  }
  return h;
}

const feature_catalog& build_catalog() {
  static const feature_catalog catalog = [] {
    feature_catalog c;
    for (const char* attr : kRawAttrs)
      for (const char* stat : kRawStats)
        c.entries.push_back({std::string(attr) + "_" + stat, feature_level::raw, feature_kind::numeric});
    auto flow_num = [&](const char* n) {
      c.entries.push_back({n, feature_level::flow, feature_kind::numeric});
    };
    flow_num("flow_packet_count");
    flow_num("flow_duration");
    flow_num("flow_byte_count");
    flow_num("flow_day_time");
    flow_num("flow_week_day");
    c.entries.push_back({"flow_transport", feature_level::flow, feature_kind::nominal});
    flow_num("flow_bytes_per_s");
    flow_num("flow_packets_per_s");
    flow_num("flow_mean_packet_size");
    auto app_num = [&](const char* n) {
      c.entries.push_back({n, feature_level::app, feature_kind::numeric});
    };
    app_num("dns_query_count");
    app_num("dns_response_count");
    app_num("dns_additional_count");
    app_num("dns_canonical_names");
    app_num("dns_distinct_query_names");
    app_num("dns_mean_query_name_len");
    app_num("dns_response_ratio");
    app_num("dns_nxdomain");
    app_num("http_request_count");
    c.entries.push_back({"http_method", feature_level::app, feature_kind::nominal});
    c.entries.push_back({"http_status_class", feature_level::app, feature_kind::nominal});
    c.entries.push_back({"http_cookie", feature_level::app, feature_kind::nominal});
    app_num("http_distinct_content_types");
    c.entries.push_back({"http_ua_bucket", feature_level::app, feature_kind::nominal});
    app_num("http_total_bytes");
    app_num("http_mean_header_count");
    return c;
  }();
  return catalog;
}

feature_vector extract_features(const flow& f, std::span<const raw_packet> packets,
                                const feature_catalog& catalog) {
  std::vector<const raw_packet*> pkts;
  pkts.reserve(f.packet_refs.size());
  for (std::uint64_t ref : f.packet_refs) {
    if (ref >= packets.size() || packets[ref].capture_index != ref)
      throw error(errc::internal, "unresolvable packet_ref " + std::to_string(ref));
    pkts.push_back(&packets[ref]);
  }
  if (pkts.empty()) throw error(errc::internal, "flow with no packets");

  feature_vector out;
  out.values.reserve(catalog.entries.size());

  std::vector<double> values(pkts.size());
  for (int attr = 0; attr < kRawAttrCount; ++attr) {
    if (attr == 1) {
      // Inter-arrival deltas; a single-packet flow contributes one zero.
      values.clear();
      for (std::size_t i = 1; i < pkts.size(); ++i)
        values.push_back(pkts[i]->ts.seconds() - pkts[i - 1]->ts.seconds());
      if (values.empty()) values.push_back(0.0);
    } else {
      values.resize(pkts.size());
      for (std::size_t i = 0; i < pkts.size(); ++i) values[i] = attr_value(attr, *pkts[i]);
    }
    aggregate(values, out.values);
  }

  // flow level
  double packet_count = static_cast<double>(pkts.size());
  double duration = pkts.back()->ts.seconds() - pkts.front()->ts.seconds();
  double byte_count = 0;
  for (const auto* p : pkts) byte_count += static_cast<double>(p->orig_len);
  out.values.push_back(feature_value::number_of(packet_count));
  out.values.push_back(feature_value::number_of(duration));
  out.values.push_back(feature_value::number_of(byte_count));
  out.values.push_back(feature_value::number_of(day_time_of(f.first_time)));
  out.values.push_back(feature_value::number_of(week_day_of(f.first_time)));
  out.values.push_back(feature_value::label_of(transport_name(f.key.transport)));
  out.values.push_back(feature_value::number_of(duration > 0 ? byte_count / duration : 0.0));
  out.values.push_back(feature_value::number_of(duration > 0 ? packet_count / duration : 0.0));
  out.values.push_back(feature_value::number_of(byte_count / packet_count));

  // DNS: absent unless the protocol decoded at least once in this flow
  std::vector<const dns_info*> dns;
  for (const auto* p : pkts)
    if (p->decoded.dns) dns.push_back(&*p->decoded.dns);
  if (dns.empty()) {
    for (int i = 0; i < 8; ++i) out.values.push_back(feature_value::absent());
  } else {
    double queries = 0, answers = 0, additional = 0, cnames = 0, responses = 0;
    double name_len_total = 0, name_count = 0;
    bool nxdomain = false;
    std::set<std::string> distinct_names;
    for (const auto* d : dns) {
      queries += d->query_count;
      answers += d->response_count;
      additional += d->additional_record_count;
      cnames += static_cast<double>(d->canonical_names.size());
      if (d->response) responses += 1;
      if (d->rcode == 3) nxdomain = true;
      for (const auto& n : d->query_names) {
        distinct_names.insert(n);
        name_len_total += static_cast<double>(n.size());
        name_count += 1;
      }
    }
    out.values.push_back(feature_value::number_of(queries));
    out.values.push_back(feature_value::number_of(answers));
    out.values.push_back(feature_value::number_of(additional));
    out.values.push_back(feature_value::number_of(cnames));
    out.values.push_back(feature_value::number_of(static_cast<double>(distinct_names.size())));
    out.values.push_back(feature_value::number_of(name_count > 0 ? name_len_total / name_count : 0.0));
    out.values.push_back(feature_value::number_of(responses / static_cast<double>(dns.size())));
    out.values.push_back(feature_value::number_of(nxdomain ? 1.0 : 0.0));
  }

  // HTTP
  std::vector<const http_info*> http;
  for (const auto* p : pkts)
    if (p->decoded.http) http.push_back(&*p->decoded.http);
  if (http.empty()) {
    for (int i = 0; i < 8; ++i) out.values.push_back(feature_value::absent());
  } else {
    double requests = 0, total_bytes = 0, header_total = 0;
    std::string method = "NONE", status_class = "NONE", ua;
    bool cookie = false;
    std::set<std::string> content_types;
    for (const auto* h : http) {
      if (h->is_request) {
        requests += 1;
        if (method == "NONE") method = h->method;
      } else if (h->status > 0 && status_class == "NONE") {
        status_class = std::to_string(h->status / 100) + "xx";
      }
      if (h->cookie_present) cookie = true;
      if (!h->content_type.empty()) content_types.insert(h->content_type);
      if (ua.empty()) ua = h->user_agent;
      total_bytes += static_cast<double>(h->byte_count);
      header_total += h->header_count;
    }
    out.values.push_back(feature_value::number_of(requests));
    out.values.push_back(feature_value::label_of(method));
    out.values.push_back(feature_value::label_of(status_class));
    out.values.push_back(feature_value::label_of(cookie ? "Y" : "N"));
    out.values.push_back(feature_value::number_of(static_cast<double>(content_types.size())));
    out.values.push_back(
        feature_value::label_of(ua.empty() ? "NONE" : "ua" + std::to_string(fnv1a64(ua) % 8)));
    out.values.push_back(feature_value::number_of(total_bytes));
    out.values.push_back(feature_value::number_of(header_total / static_cast<double>(http.size())));
  }

  if (out.values.size() != catalog.entries.size())
    throw error(errc::internal, "feature vector length does not match the catalog");
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const auto& v = out.values[i];
    if (v.st == feature_value::state::number && !std::isfinite(v.num))
      throw error(errc::internal, "non-finite feature " + catalog.entries[i].name);
  }
  return out;
}

feature_table make_feature_table(std::span<const flow> flows, std::span<const raw_packet> packets,
                                 std::string source_digest) {
  const feature_catalog& catalog = build_catalog();
  feature_table t;
  t.catalog_hash = catalog.hash();
  t.source_digest = std::move(source_digest);
  t.meta.reserve(flows.size());
  t.rows.reserve(flows.size());
  for (std::size_t i = 0; i < flows.size(); ++i) {
    const flow& f = flows[i];
    t.meta.push_back({f.key, f.first_time, f.close});
    feature_vector row = extract_features(f, packets, catalog);
    row.flow_id = i;
    t.rows.push_back(std::move(row));
  }
  return t;
}

namespace {

const char* const kMetaColumns[] = {"flow_id",  "src_addr", "src_port",   "dst_addr",
                                    "dst_port", "transport", "first_time", "close_reason"};

}  // namespace

void save_feature_table(const feature_table& table, const std::filesystem::path& csv_path,
                        const std::filesystem::path& sidecar_path) {
  const feature_catalog& catalog = build_catalog();
  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw error(errc::io, "cannot write " + csv_path.string());
  std::vector<std::string> fields(std::begin(kMetaColumns), std::end(kMetaColumns));
  for (const auto& e : catalog.entries) fields.push_back(e.name);
  out << join_csv(fields) << '\n';
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& meta = table.meta[i];
    const auto& row = table.rows[i];
    fields.clear();
    fields.push_back(std::to_string(row.flow_id));
    fields.push_back(meta.key.src_addr.str());
    fields.push_back(std::to_string(meta.key.src_port));
    fields.push_back(meta.key.dst_addr.str());
    fields.push_back(std::to_string(meta.key.dst_port));
    fields.push_back(transport_name(meta.key.transport));
    fields.push_back(meta.first_time.str());
    fields.push_back(close_reason_name(meta.close));
    for (const auto& v : row.values) {
      switch (v.st) {
        case feature_value::state::absent: fields.emplace_back(); break;
        case feature_value::state::number: fields.push_back(format_double(v.num)); break;
        case feature_value::state::label: fields.push_back(v.label); break;
      }
    }
    out << join_csv(fields) << '\n';
  }
  if (!out) throw error(errc::io, "write failed: " + csv_path.string());

  nlohmann::json sidecar{{"format", "tgen.features.v1"},
                         {"catalog_hash", hex64(table.catalog_hash)},
                         {"flow_count", table.rows.size()},
                         {"source_digest", table.source_digest}};
  std::ofstream side(sidecar_path, std::ios::trunc);
  if (!side) throw error(errc::io, "cannot write " + sidecar_path.string());
  side << sidecar.dump(2) << '\n';
}

feature_table load_feature_table(const std::filesystem::path& csv_path,
                                 const std::filesystem::path& sidecar_path) {
  const feature_catalog& catalog = build_catalog();
  std::ifstream side(sidecar_path);
  if (!side) throw error(errc::io, "cannot open " + sidecar_path.string());
  nlohmann::json sidecar = nlohmann::json::parse(side, nullptr, true);
  feature_table t;
  t.catalog_hash = std::stoull(sidecar.at("catalog_hash").get<std::string>(), nullptr, 16);
  t.source_digest = sidecar.value("source_digest", "");
  if (t.catalog_hash != catalog.hash())
    throw error(errc::stage_mismatch,
                "feature table was produced by a different catalog: table " +
                    hex64(t.catalog_hash) + " vs current " + hex64(catalog.hash()));

  std::ifstream in(csv_path);
  if (!in) throw error(errc::io, "cannot open " + csv_path.string());
  std::string line;
  if (!std::getline(in, line)) throw error(errc::io, "empty feature table " + csv_path.string());
  auto header = split_csv_line(line);
  std::size_t meta_cols = std::size(kMetaColumns);
  if (header.size() != meta_cols + catalog.entries.size())
    throw error(errc::stage_mismatch, "feature table column count mismatch in " + csv_path.string());
  for (std::size_t i = 0; i < catalog.entries.size(); ++i) {
    if (header[meta_cols + i] != catalog.entries[i].name)
      throw error(errc::stage_mismatch, "feature column mismatch: " + header[meta_cols + i]);
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw error(errc::io, "short row in " + csv_path.string());
    flow_meta meta;
    auto src = ip_addr::parse(fields[1]);
    auto dst = ip_addr::parse(fields[3]);
    auto ft = timestamp::parse(fields[6]);
    auto close = close_reason_from(fields[7]);
    if (!src || !dst || !ft || !close) throw error(errc::io, "bad metadata row in " + csv_path.string());
    meta.key.src_addr = *src;
    meta.key.dst_addr = *dst;
    meta.key.src_port = static_cast<std::uint16_t>(std::stoul(fields[2]));
    meta.key.dst_port = static_cast<std::uint16_t>(std::stoul(fields[4]));
    meta.key.transport = fields[5] == "TCP" ? transport_proto::tcp : transport_proto::udp;
    meta.first_time = *ft;
    meta.close = *close;
    feature_vector row;
    row.flow_id = std::stoull(fields[0]);
    row.values.reserve(catalog.entries.size());
    for (std::size_t i = 0; i < catalog.entries.size(); ++i) {
      const std::string& cell = fields[meta_cols + i];
      if (cell.empty()) {
        row.values.push_back(feature_value::absent());
      } else if (catalog.entries[i].kind == feature_kind::nominal) {
        row.values.push_back(feature_value::label_of(cell));
      } else {
        row.values.push_back(feature_value::number_of(parse_double(cell)));
      }
    }
    t.meta.push_back(std::move(meta));
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace tgen
