#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tgen/flow.hpp"
#include "tgen/pcap.hpp"

namespace tgen {

enum class feature_level : std::uint8_t { raw, flow, app };
enum class feature_kind : std::uint8_t { numeric, nominal };

struct catalog_entry {
  std::string name;
  feature_level level;
  feature_kind kind;
};

// The engineered per-flow feature scheme: per-packet attributes aggregated by
// a fixed statistic set, plus flow-level and application-level features. The
// composition is a reconstruction (the original 205-feature list was never
// published); it is versioned through hash() and checked at every stage
// boundary.
//
// 15 per-packet attributes x 12 statistics + 9 flow-level + 8 DNS + 8 HTTP
// = 205 entries.
struct feature_catalog {
  std::vector<catalog_entry> entries;
  std::uint64_t hash() const;
};

const feature_catalog& build_catalog();

inline constexpr int kRawAttrCount = 15;
inline constexpr int kRawStatCount = 12;

struct feature_value {
  enum class state : std::uint8_t { absent, number, label };
  state st = state::absent;
  double num = 0.0;
  std::string label;

  static feature_value absent() { return {}; }
  static feature_value number_of(double v) {
    feature_value f;
    f.st = state::number;
    f.num = v;
    return f;
  }
  static feature_value label_of(std::string s) {
    feature_value f;
    f.st = state::label;
    f.label = std::move(s);
    return f;
  }
  bool is_absent() const { return st == state::absent; }
  bool operator==(const feature_value&) const = default;
};

struct feature_vector {
  std::uint64_t flow_id = 0;
  std::vector<feature_value> values;  // aligned to catalog order
};

struct flow_meta {
  flow_key key;
  timestamp first_time;
  close_reason close = close_reason::capture_end;
};

struct feature_table {
  std::uint64_t catalog_hash = 0;
  std::string source_digest;  // hex digest of the source capture
  std::vector<flow_meta> meta;
  std::vector<feature_vector> rows;
};

feature_vector extract_features(const flow& f, std::span<const raw_packet> packets,
                                const feature_catalog& catalog);

feature_table make_feature_table(std::span<const flow> flows, std::span<const raw_packet> packets,
                                 std::string source_digest = "");

// Delimited text table (header = catalog names, ABSENT = empty field) plus a
// JSON sidecar {catalog hash, flow count, source digest}.
void save_feature_table(const feature_table& table, const std::filesystem::path& csv_path,
                        const std::filesystem::path& sidecar_path);
feature_table load_feature_table(const std::filesystem::path& csv_path,
                                 const std::filesystem::path& sidecar_path);

}  // namespace tgen
