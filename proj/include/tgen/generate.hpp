#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "tgen/cluster.hpp"
#include "tgen/flow.hpp"
#include "tgen/sequence.hpp"

namespace tgen {

enum class model_kind : std::uint8_t { markov, neural, random };

std::string model_kind_name(model_kind m);
std::optional<model_kind> model_kind_from(std::string_view name);

struct provenance_record {
  std::uint64_t gen_flow_id = 0;
  std::uint64_t source_flow_id = 0;
  std::uint32_t cluster = 0;
  timestamp scheduled;
  flow_key key;
  std::size_t sequence_index = 0;
  std::size_t packet_count = 0;
  // packet index range in the merged stream; ranges of overlapping flows may
  // interleave, packet_count is authoritative
  std::size_t first_packet = 0;
  std::size_t last_packet = 0;
};

struct generated_trace {
  std::vector<raw_packet> packets;         // merged, non-decreasing timestamps
  std::vector<std::uint64_t> packet_flow;  // gen_flow_id per packet
  std::vector<provenance_record> provenance;
};

struct generation_plan {
  aggregation agg = aggregation::global;
  model_kind kind = model_kind::markov;
  const markov_model* markov = nullptr;
  const neural_lm* neural = nullptr;
  const cluster_model* clusters = nullptr;
  std::span<const flow> flows;             // training flows (D*)
  std::span<const raw_packet> packets;     // training capture (D)
  std::span<const std::uint32_t> labels;   // cluster per training flow
  transition_histogram hist;
  timestamp t_start;
  timestamp t_end;
  std::uint64_t seed = 0;
  std::size_t max_sequence_len = 100000;
};

// First packet moved to new_start with every intra-flow delta preserved; when
// new_key is given the IP addresses are replaced on every packet (ports kept)
// and IP/TCP/UDP checksums recomputed.
std::vector<raw_packet> rebase_flow(std::span<const raw_packet> flow_packets, timestamp new_start,
                                    const std::optional<flow_key>& new_key);

generated_trace generate_global(const generation_plan& plan);
generated_trace generate_ip_based(const generation_plan& plan, std::size_t pair_count);
generated_trace random_baseline(const generation_plan& plan, std::size_t flow_count);

void save_provenance(const generated_trace& trace, const std::filesystem::path& path);

}  // namespace tgen
