#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tgen/cluster.hpp"
#include "tgen/evaluate.hpp"
#include "tgen/fixture.hpp"
#include "tgen/flow.hpp"
#include "tgen/generate.hpp"
#include "tgen/sequence.hpp"

namespace tgen {

struct pipeline_config {
  flow_config flow;
  std::size_t k = 100;
  std::size_t kmeans_max_iter = 100;
  std::size_t kmeans_restarts = 1;
  kmeans_init init = kmeans_init::random_rows;
  std::uint64_t seed = 1;  // master seed; stage seeds derive from it
  aggregation agg = aggregation::global;
  model_kind model = model_kind::markov;
  neural_lm_config neural;
  std::optional<double> t_start;  // defaults to the capture's first/last flow time
  std::optional<double> t_end;
  std::size_t pair_count = 0;  // 0: one generated sequence per training pair
  std::size_t max_sequence_len = 100000;
  double alpha = 0.01;
  double preserved_floor = 0.0;  // evaluate exits 4 below this fraction
  std::size_t random_flow_count = 0;  // 0: as many flows as the training data

  std::string to_text() const;
  static pipeline_config from_text(const std::string& text);
  static pipeline_config load(const std::filesystem::path& path);
};

std::uint64_t stage_seed(const pipeline_config& cfg, std::string_view stage);

// The trained sequence stage artifact: the model, the transition-time
// histogram and the generation window, all hash-checked against the cluster
// model.
struct sequence_bundle {
  model_kind kind = model_kind::markov;
  aggregation agg = aggregation::global;
  std::uint32_t k = 0;
  std::uint64_t catalog_hash = 0;
  std::optional<markov_model> markov;
  std::optional<neural_lm> neural;
  transition_histogram hist;
  timestamp t_start;
  timestamp t_end;
  std::size_t flow_count = 0;
  std::size_t training_pair_count = 0;
};

void save_sequence_bundle(const sequence_bundle& bundle, const std::filesystem::path& path);
sequence_bundle load_sequence_bundle(const std::filesystem::path& path);

// Stage commands; each reads the previous stage's files, validates catalog
// hashes and writes its artifact. They throw tgen::error on bad inputs.
void cmd_extract(const std::filesystem::path& pcap, const std::filesystem::path& out_csv,
                 const std::filesystem::path& out_sidecar, const pipeline_config& cfg);
void cmd_cluster(const std::filesystem::path& table_csv, const std::filesystem::path& table_sidecar,
                 const std::filesystem::path& out_model, const pipeline_config& cfg,
                 const std::vector<std::size_t>& silhouette_ks, std::string* silhouette_report);
void cmd_train(const std::filesystem::path& table_csv, const std::filesystem::path& table_sidecar,
               const std::filesystem::path& model_path, const std::filesystem::path& out_bundle,
               const pipeline_config& cfg);
void cmd_generate(const std::filesystem::path& pcap, const std::filesystem::path& table_csv,
                  const std::filesystem::path& table_sidecar, const std::filesystem::path& model_path,
                  const std::filesystem::path& bundle_path, const std::filesystem::path& out_pcap,
                  const std::filesystem::path& out_provenance, const pipeline_config& cfg);
// Returns the exit code (0 ok, 4 when the preserved fraction is below the
// configured floor) and fills the report.
int cmd_evaluate(const std::filesystem::path& original_pcap, const std::filesystem::path& generated_pcap,
                 const std::filesystem::path& model_path, const pipeline_config& cfg,
                 const std::filesystem::path& out_report_csv, fidelity_report* out_report);
void cmd_fixture(const fixture_spec& spec, const std::filesystem::path& out_pcap);

}  // namespace tgen
