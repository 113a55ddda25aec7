#include "tgen/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tgen/errors.hpp"
#include "tgen/util.hpp"

namespace tgen {

namespace {

std::string bool_text(bool b) { return b ? "true" : "false"; }

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw error(errc::bad_config, "bad boolean: " + v);
}

}  // namespace

std::string pipeline_config::to_text() const {
  std::ostringstream os;
  os << "tcp_idle_timeout_s = " << format_double(flow.tcp_idle_timeout_s) << '\n';
  os << "udp_idle_timeout_s = " << format_double(flow.udp_idle_timeout_s) << '\n';
  os << "udp_max_duration_s = " << format_double(flow.udp_max_duration_s) << '\n';
  os << "require_handshake = " << bool_text(flow.require_handshake) << '\n';
  os << "k = " << k << '\n';
  os << "kmeans_max_iter = " << kmeans_max_iter << '\n';
  os << "kmeans_init = " << (init == kmeans_init::plus_plus ? "plusplus" : "random") << '\n';
  os << "kmeans_restarts = " << kmeans_restarts << '\n';
  os << "seed = " << seed << '\n';
  os << "aggregation = " << aggregation_name(agg) << '\n';
  os << "model = " << model_kind_name(model) << '\n';
  os << "epochs = " << neural.epochs << '\n';
  os << "batch_size = " << neural.batch_size << '\n';
  os << "learning_rate = " << format_double(neural.learning_rate) << '\n';
  os << "embed_dim = " << neural.embed_dim << '\n';
  os << "context_len = " << neural.context_len << '\n';
  if (t_start) os << "t_start = " << format_double(*t_start) << '\n';
  if (t_end) os << "t_end = " << format_double(*t_end) << '\n';
  os << "pair_count = " << pair_count << '\n';
  os << "max_sequence_len = " << max_sequence_len << '\n';
  os << "alpha = " << format_double(alpha) << '\n';
  os << "preserved_floor = " << format_double(preserved_floor) << '\n';
  os << "random_flow_count = " << random_flow_count << '\n';
  return os.str();
}

pipeline_config pipeline_config::from_text(const std::string& text) {
  pipeline_config cfg;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
      if (blank) continue;
      throw error(errc::bad_config, "config line " + std::to_string(lineno) + " is not key = value");
    }
    auto strip = [](std::string s) {
      std::size_t b = s.find_first_not_of(" \t\r");
      std::size_t e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = strip(line.substr(0, eq));
    std::string value = strip(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw error(errc::bad_config, "empty key or value at config line " + std::to_string(lineno));
    try {
      if (key == "tcp_idle_timeout_s") cfg.flow.tcp_idle_timeout_s = parse_double(value);
      else if (key == "udp_idle_timeout_s") cfg.flow.udp_idle_timeout_s = parse_double(value);
      else if (key == "udp_max_duration_s") cfg.flow.udp_max_duration_s = parse_double(value);
      else if (key == "require_handshake") cfg.flow.require_handshake = parse_bool(value);
      else if (key == "k") cfg.k = std::stoull(value);
      else if (key == "kmeans_max_iter") cfg.kmeans_max_iter = std::stoull(value);
      else if (key == "kmeans_restarts") cfg.kmeans_restarts = std::stoull(value);
      else if (key == "kmeans_init") {
        if (value == "plusplus") cfg.init = kmeans_init::plus_plus;
        else if (value == "random") cfg.init = kmeans_init::random_rows;
        else throw error(errc::bad_config, "unknown kmeans_init: " + value);
      }
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "aggregation") {
        auto a = aggregation_from(value);
        if (!a) throw error(errc::bad_config, "unknown aggregation: " + value);
        cfg.agg = *a;
      } else if (key == "model") {
        auto m = model_kind_from(value);
        if (!m) throw error(errc::bad_config, "unknown model kind: " + value);
        cfg.model = *m;
      } else if (key == "epochs") cfg.neural.epochs = std::stoi(value);
      else if (key == "batch_size") cfg.neural.batch_size = std::stoi(value);
      else if (key == "learning_rate") cfg.neural.learning_rate = parse_double(value);
      else if (key == "embed_dim") cfg.neural.embed_dim = std::stoi(value);
      else if (key == "context_len") cfg.neural.context_len = std::stoi(value);
      else if (key == "t_start") cfg.t_start = parse_double(value);
      else if (key == "t_end") cfg.t_end = parse_double(value);
      else if (key == "pair_count") cfg.pair_count = std::stoull(value);
      else if (key == "max_sequence_len") cfg.max_sequence_len = std::stoull(value);
      else if (key == "alpha") cfg.alpha = parse_double(value);
      else if (key == "preserved_floor") cfg.preserved_floor = parse_double(value);
      else if (key == "random_flow_count") cfg.random_flow_count = std::stoull(value);
      else throw error(errc::bad_config, "unknown config key: " + key);
    } catch (const error&) {
      throw;
    } catch (const std::exception&) {
      throw error(errc::bad_config, "bad value for " + key + ": " + value);
    }
  }
  return cfg;
}

pipeline_config pipeline_config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw error(errc::io, "cannot open config: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

std::uint64_t stage_seed(const pipeline_config& cfg, std::string_view stage) {
  return derive_seed(cfg.seed, stage);
}

void save_sequence_bundle(const sequence_bundle& bundle, const std::filesystem::path& path) {
  nlohmann::json j{{"format", "tgen.sequence.v1"},
                   {"kind", model_kind_name(bundle.kind)},
                   {"aggregation", aggregation_name(bundle.agg)},
                   {"k", bundle.k},
                   {"catalog_hash", hex64(bundle.catalog_hash)},
                   {"t_start", bundle.t_start.str()},
                   {"t_end", bundle.t_end.str()},
                   {"flow_count", bundle.flow_count},
                   {"training_pair_count", bundle.training_pair_count},
                   {"histogram",
                    {{"lo", bundle.hist.lo}, {"hi", bundle.hist.hi}, {"counts", bundle.hist.counts}}}};
  if (bundle.markov) {
    j["markov"] = {{"start_prob", bundle.markov->start_prob},
                   {"transition", bundle.markov->transition},
                   {"row_defined", bundle.markov->row_defined}};
  }
  if (bundle.neural) {
    const auto& n = *bundle.neural;
    j["neural"] = {{"seed", n.seed},
                   {"epochs", n.cfg.epochs},
                   {"batch_size", n.cfg.batch_size},
                   {"learning_rate", n.cfg.learning_rate},
                   {"embed_dim", n.cfg.embed_dim},
                   {"context_len", n.cfg.context_len},
                   {"embeddings", n.embeddings},
                   {"weights", n.weights},
                   {"bias", n.bias},
                   {"epoch_losses", n.epoch_losses}};
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw error(errc::io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

sequence_bundle load_sequence_bundle(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw error(errc::io, "cannot open " + path.string());
  nlohmann::json j = nlohmann::json::parse(in);
  if (j.value("format", "") != "tgen.sequence.v1")
    throw error(errc::stage_mismatch, path.string() + " is not a sequence model file");
  sequence_bundle b;
  auto kind = model_kind_from(j.at("kind").get<std::string>());
  auto agg = aggregation_from(j.at("aggregation").get<std::string>());
  if (!kind || !agg) throw error(errc::io, "corrupt sequence bundle " + path.string());
  b.kind = *kind;
  b.agg = *agg;
  b.k = j.at("k").get<std::uint32_t>();
  b.catalog_hash = std::stoull(j.at("catalog_hash").get<std::string>(), nullptr, 16);
  auto ts = timestamp::parse(j.at("t_start").get<std::string>());
  auto te = timestamp::parse(j.at("t_end").get<std::string>());
  if (!ts || !te) throw error(errc::io, "corrupt time bounds in " + path.string());
  b.t_start = *ts;
  b.t_end = *te;
  b.flow_count = j.at("flow_count").get<std::size_t>();
  b.training_pair_count = j.at("training_pair_count").get<std::size_t>();
  b.hist.lo = j.at("histogram").at("lo").get<double>();
  b.hist.hi = j.at("histogram").at("hi").get<double>();
  b.hist.counts = j.at("histogram").at("counts").get<std::vector<std::uint64_t>>();
  if (j.contains("markov")) {
    markov_model m;
    m.agg = b.agg;
    m.voc = vocab{b.k, b.agg == aggregation::ip_pair};
    m.catalog_hash = b.catalog_hash;
    m.start_prob = j["markov"].at("start_prob").get<std::vector<double>>();
    m.transition = j["markov"].at("transition").get<std::vector<std::vector<double>>>();
    m.row_defined = j["markov"].at("row_defined").get<std::vector<bool>>();
    b.markov = std::move(m);
  }
  if (j.contains("neural")) {
    neural_lm n;
    n.agg = b.agg;
    n.voc = vocab{b.k, true};
    n.catalog_hash = b.catalog_hash;
    n.seed = j["neural"].at("seed").get<std::uint64_t>();
    n.cfg.epochs = j["neural"].at("epochs").get<int>();
    n.cfg.batch_size = j["neural"].at("batch_size").get<int>();
    n.cfg.learning_rate = j["neural"].at("learning_rate").get<double>();
    n.cfg.embed_dim = j["neural"].at("embed_dim").get<int>();
    n.cfg.context_len = j["neural"].at("context_len").get<int>();
    n.embeddings = j["neural"].at("embeddings").get<std::vector<double>>();
    n.weights = j["neural"].at("weights").get<std::vector<double>>();
    n.bias = j["neural"].at("bias").get<std::vector<double>>();
    n.epoch_losses = j["neural"].at("epoch_losses").get<std::vector<double>>();
    b.neural = std::move(n);
  }
  return b;
}

void cmd_extract(const std::filesystem::path& pcap, const std::filesystem::path& out_csv,
                 const std::filesystem::path& out_sidecar, const pipeline_config& cfg) {
  capture cap = read_capture(pcap);
  auto assembled = assemble_flows(cap.packets, cfg.flow);
  auto table = make_feature_table(assembled.flows, cap.packets, hex64(file_digest(pcap.string())));
  save_feature_table(table, out_csv, out_sidecar);
}

void cmd_cluster(const std::filesystem::path& table_csv, const std::filesystem::path& table_sidecar,
                 const std::filesystem::path& out_model, const pipeline_config& cfg,
                 const std::vector<std::size_t>& silhouette_ks, std::string* silhouette_report) {
  auto table = load_feature_table(table_csv, table_sidecar);
  auto x = encode(table);
  auto model = kmeans_fit(x, cfg.k, stage_seed(cfg, "cluster"), cfg.kmeans_max_iter, nullptr, cfg.init,
                          cfg.kmeans_restarts);
  save_cluster_model(model, out_model);
  if (!silhouette_ks.empty() && silhouette_report) {
    std::ostringstream os;
    for (std::size_t k : silhouette_ks) {
      auto m = kmeans_fit(x, k, stage_seed(cfg, "cluster"), cfg.kmeans_max_iter, nullptr, cfg.init,
                          cfg.kmeans_restarts);
      auto labels = assign_all(m, x);
      auto s = silhouette(x, labels);
      os << "k=" << k << " mean_silhouette=" << format_double(s.mean) << '\n';
    }
    *silhouette_report = os.str();
  }
}

namespace {

struct training_data {
  capture cap;
  std::vector<flow> flows;
  feature_table table;
  std::vector<std::uint32_t> labels;
};

training_data load_training(const std::filesystem::path& pcap,
                            const std::filesystem::path& table_csv,
                            const std::filesystem::path& table_sidecar,
                            const cluster_model& model, const pipeline_config& cfg) {
  training_data t;
  t.cap = read_capture(pcap);
  auto assembled = assemble_flows(t.cap.packets, cfg.flow);
  t.flows = std::move(assembled.flows);
  t.table = load_feature_table(table_csv, table_sidecar);
  if (t.table.rows.size() != t.flows.size())
    throw error(errc::stage_mismatch,
                "feature table row count (" + std::to_string(t.table.rows.size()) +
                    ") does not match the flows assembled from the capture (" +
                    std::to_string(t.flows.size()) + "); was it extracted with this config?");
  t.labels = assign_table(model, t.table);
  return t;
}

}  // namespace

void cmd_train(const std::filesystem::path& table_csv, const std::filesystem::path& table_sidecar,
               const std::filesystem::path& model_path, const std::filesystem::path& out_bundle,
               const pipeline_config& cfg) {
  auto model = load_cluster_model(model_path);
  auto table = load_feature_table(table_csv, table_sidecar);
  auto labels = assign_table(model, table);
  auto seqs = build_sequences(table.meta, labels, static_cast<std::uint32_t>(model.k), cfg.agg);

  sequence_bundle bundle;
  bundle.kind = cfg.model;
  bundle.agg = cfg.agg;
  bundle.k = static_cast<std::uint32_t>(model.k);
  bundle.catalog_hash = model.catalog_hash;
  bundle.flow_count = table.rows.size();
  std::set<ip_pair> pairs;
  for (const auto& m : table.meta) pairs.insert({m.key.src_addr, m.key.dst_addr});
  bundle.training_pair_count = pairs.size();
  bundle.hist = fit_transition_times(seqs, table.rows.size());

  if (table.meta.empty()) throw error(errc::empty_input, "no flows to train on");
  timestamp lo = table.meta.front().first_time, hi = table.meta.front().first_time;
  for (const auto& m : table.meta) {
    lo = std::min(lo, m.first_time);
    hi = std::max(hi, m.first_time);
  }
  bundle.t_start = cfg.t_start ? timestamp::from_seconds(*cfg.t_start) : lo;
  bundle.t_end = cfg.t_end ? timestamp::from_seconds(*cfg.t_end) : hi;

  if (cfg.model == model_kind::markov || cfg.model == model_kind::random) {
    bundle.markov = fit_markov(seqs, bundle.k);
    bundle.markov->catalog_hash = model.catalog_hash;
  } else {
    bundle.neural = fit_neural_lm(seqs, bundle.k, cfg.neural, stage_seed(cfg, "train"));
    bundle.neural->catalog_hash = model.catalog_hash;
  }
  save_sequence_bundle(bundle, out_bundle);
}

void cmd_generate(const std::filesystem::path& pcap, const std::filesystem::path& table_csv,
                  const std::filesystem::path& table_sidecar, const std::filesystem::path& model_path,
                  const std::filesystem::path& bundle_path, const std::filesystem::path& out_pcap,
                  const std::filesystem::path& out_provenance, const pipeline_config& cfg) {
  auto model = load_cluster_model(model_path);
  auto bundle = load_sequence_bundle(bundle_path);
  if (bundle.catalog_hash != model.catalog_hash)
    throw error(errc::stage_mismatch, "sequence model hash " + hex64(bundle.catalog_hash) +
                                          " does not match the cluster model hash " +
                                          hex64(model.catalog_hash));
  auto data = load_training(pcap, table_csv, table_sidecar, model, cfg);

  generation_plan plan;
  plan.agg = bundle.agg;
  plan.kind = bundle.kind;
  plan.markov = bundle.markov ? &*bundle.markov : nullptr;
  plan.neural = bundle.neural ? &*bundle.neural : nullptr;
  plan.clusters = &model;
  plan.flows = data.flows;
  plan.packets = data.cap.packets;
  plan.labels = data.labels;
  plan.hist = bundle.hist;
  plan.t_start = bundle.t_start;
  plan.t_end = bundle.t_end;
  plan.seed = stage_seed(cfg, "generate");
  plan.max_sequence_len = cfg.max_sequence_len;

  generated_trace trace;
  if (bundle.kind == model_kind::random) {
    std::size_t n = cfg.random_flow_count ? cfg.random_flow_count : data.flows.size();
    trace = random_baseline(plan, n);
  } else if (bundle.agg == aggregation::global) {
    trace = generate_global(plan);
  } else {
    std::size_t pairs = cfg.pair_count ? cfg.pair_count : bundle.training_pair_count;
    trace = generate_ip_based(plan, pairs);
  }
  write_capture(out_pcap, trace.packets, data.cap.linktype);
  save_provenance(trace, out_provenance);
}

int cmd_evaluate(const std::filesystem::path& original_pcap, const std::filesystem::path& generated_pcap,
                 const std::filesystem::path& model_path, const pipeline_config& cfg,
                 const std::filesystem::path& out_report_csv, fidelity_report* out_report) {
  auto model = load_cluster_model(model_path);

  auto ingest = [&](const std::filesystem::path& path) {
    capture cap = read_capture(path);
    auto assembled = assemble_flows(cap.packets, cfg.flow);
    auto table =
        make_feature_table(assembled.flows, cap.packets, hex64(file_digest(path.string())));
    return std::make_pair(std::move(cap), std::move(table));
  };
  auto [orig_cap, orig_table] = ingest(original_pcap);
  auto [gen_cap, gen_table] = ingest(generated_pcap);

  auto orig_labels = assign_table(model, orig_table);
  auto gen_labels = assign_table(model, gen_table);
  std::uint32_t k = static_cast<std::uint32_t>(model.k);

  fidelity_report report;
  report.preservation = feature_preservation(orig_table, gen_table, cfg.alpha);

  auto orig_global = build_sequences(orig_table.meta, orig_labels, k, aggregation::global);
  auto gen_global = build_sequences(gen_table.meta, gen_labels, k, aggregation::global);
  auto orig_src = per_source_sequences(orig_table.meta, orig_labels, k);
  auto gen_src = per_source_sequences(gen_table.meta, gen_labels, k);
  for (int n = 2; n <= 4; ++n) {
    perplexity_record rec;
    rec.n = n;
    try {
      rec.original = ngram_perplexity(orig_global, n);
      rec.generated = ngram_perplexity(gen_global, n);
      rec.delta = std::abs(rec.original - rec.generated);
    } catch (const error&) {
      rec.original = rec.generated = rec.delta = 0;
    }
    // The per-source reading is reported alongside the global one because the
    // aggregation level of the comparison is ambiguous: perplexity of the
    // pooled per-source sequences, which stays defined even when generated
    // addresses were rewritten.
    try {
      double o = ngram_perplexity(orig_src, n);
      double g = ngram_perplexity(gen_src, n);
      rec.per_source_delta = std::abs(o - g);
    } catch (const error&) {
      rec.per_source_delta = 0;
    }
    report.perplexities.push_back(rec);
  }

  auto orig_pairs = build_sequences(orig_table.meta, orig_labels, k, aggregation::ip_pair);
  auto gen_pairs = build_sequences(gen_table.meta, gen_labels, k, aggregation::ip_pair);
  report.original = summarize(orig_pairs, orig_labels, orig_cap.stats.packets);
  report.generated = summarize(gen_pairs, gen_labels, gen_cap.stats.packets);

  save_report(report, out_report_csv);
  if (out_report) *out_report = report;
  return report.preservation.preserved_fraction() < cfg.preserved_floor ? 4 : 0;
}

void cmd_fixture(const fixture_spec& spec, const std::filesystem::path& out_pcap) {
  make_fixture_corpus(spec, out_pcap);
}

}  // namespace tgen
