#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tgen/features.hpp"
#include "tgen/sequence.hpp"

namespace tgen {

struct ks_result {
  double statistic = 0.0;  // sup |ECDF_x - ECDF_y|
  double p_value = 1.0;
};

// Two-sample Kolmogorov-Smirnov. Exact p by seed-fixed permutation when
// n_x * n_y <= 10,000, asymptotic Kolmogorov distribution otherwise.
ks_result ks_two_sample(std::span<const double> x, std::span<const double> y);

struct ad_result {
  double statistic = 0.0;    // A2akN (midrank / tie-adjusted)
  double standardized = 0.0; // (A2 - (k-1)) / sigma
  double p_value = 0.25;     // interpolated, clamped to [0.001, 0.25]
};

// k-sample Anderson-Darling with midrank tie treatment.
ad_result ad_k_sample(std::span<const std::vector<double>> samples);

enum class test_status : std::uint8_t { preserved, not_preserved, untestable };

struct feature_test {
  std::string name;
  feature_kind kind = feature_kind::numeric;
  std::string test;  // "KS" or "AD"
  double statistic = 0.0;
  double p_value = 1.0;
  test_status status = test_status::untestable;
};

struct preservation_summary {
  std::vector<feature_test> features;
  std::size_t preserved = 0;
  std::size_t not_preserved = 0;
  std::size_t untestable = 0;
  double alpha = 0.01;

  double preserved_fraction() const {
    std::size_t testable = preserved + not_preserved;
    return testable == 0 ? 0.0 : static_cast<double>(preserved) / static_cast<double>(testable);
  }
};

// Numeric features through KS, nominal through AD, at significance alpha;
// features with fewer than two observations on either side are untestable.
preservation_summary feature_preservation(const feature_table& original,
                                          const feature_table& generated, double alpha = 0.01);

// 2^entropy of the empirical n-gram distribution over the sequences'
// real tokens (sentinels excluded), windows never crossing sequences.
double ngram_perplexity(std::span<const activity_sequence> seqs, int n);

double perplexity_delta(std::span<const activity_sequence> original,
                        std::span<const activity_sequence> generated, int n);

struct trace_summary {
  std::uint64_t packet_count = 0;
  std::size_t cluster_count = 0;     // distinct clusters present
  double mean_sequence_size = 0.0;   // real tokens per ip_pair sequence
};

trace_summary summarize(std::span<const activity_sequence> ip_sequences,
                        std::span<const std::uint32_t> labels, std::uint64_t packet_count);

struct perplexity_record {
  int n = 2;
  double original = 0.0;
  double generated = 0.0;
  double delta = 0.0;          // global aggregation
  double per_source_delta = 0.0;  // pooled per-source-IP sequences
};

struct fidelity_report {
  preservation_summary preservation;
  std::vector<perplexity_record> perplexities;  // n = 2, 3, 4
  trace_summary original;
  trace_summary generated;
};

// Sequences grouped by source address only (used for the per-source
// perplexity reading).
std::vector<activity_sequence> per_source_sequences(std::span<const flow_meta> meta,
                                                    std::span<const std::uint32_t> labels,
                                                    std::uint32_t k);

void save_report(const fidelity_report& report, const std::filesystem::path& csv_path);
std::string report_text(const fidelity_report& report);

}  // namespace tgen
