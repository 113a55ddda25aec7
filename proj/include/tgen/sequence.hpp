#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tgen/features.hpp"
#include "tgen/util.hpp"

namespace tgen {

enum class aggregation : std::uint8_t { global, ip_pair };

std::string aggregation_name(aggregation a);
std::optional<aggregation> aggregation_from(std::string_view name);

// Token ids: cluster ids in [0, k); START = k and END = k + 1 where
// sentinels apply.
struct vocab {
  std::uint32_t k = 0;
  bool has_sentinels = false;

  std::uint32_t start_id() const { return k; }
  std::uint32_t end_id() const { return k + 1; }
  std::size_t size() const { return k + (has_sentinels ? 2u : 0u); }
  bool is_sentinel(std::uint32_t t) const { return has_sentinels && t >= k; }
};

struct activity_sequence {
  aggregation agg = aggregation::global;
  std::optional<ip_pair> key;          // set in ip_pair mode
  std::vector<std::uint32_t> tokens;   // includes START/END in ip_pair mode
  std::vector<timestamp> times;        // aligned to tokens; sentinels carry the
                                       // adjacent real token's time

  std::size_t real_count(const vocab& v) const {
    std::size_t n = 0;
    for (auto t : tokens)
      if (!v.is_sentinel(t)) ++n;
    return n;
  }
};

// Orders labeled flows by (first_time, flow index) and groups them per the
// aggregation. GLOBAL yields exactly one sequence (possibly empty) without
// sentinels; IP_PAIR yields one START...END sequence per (src, dst) pair.
std::vector<activity_sequence> build_sequences(std::span<const flow_meta> meta,
                                               std::span<const std::uint32_t> labels,
                                               std::uint32_t k, aggregation agg);

struct markov_model {
  vocab voc;
  aggregation agg = aggregation::global;
  std::vector<double> start_prob;              // over voc.size()
  std::vector<std::vector<double>> transition;  // row-stochastic where defined
  std::vector<bool> row_defined;
  std::uint64_t catalog_hash = 0;
};

// Start distribution: empirical first real tokens per sequence in IP_PAIR
// mode; the unigram distribution in GLOBAL mode (a single global sequence has
// only one first token, which could not be sampled from).
markov_model fit_markov(std::span<const activity_sequence> seqs, std::uint32_t k);

std::vector<double> predict_next(const markov_model& model, std::span<const std::uint32_t> context);

struct neural_lm_config {
  int epochs = 20;
  int batch_size = 256;
  double learning_rate = 0.001;
  int embed_dim = 64;
  int context_len = 3;
  double rms_decay = 0.9;
  double rms_epsilon = 1e-8;
};

// Embedding lookup for the context tokens, concatenation, one linear layer to
// vocabulary logits, softmax. Trained by mini-batch gradient descent on the
// mean negative log-likelihood with RMSProp scaling.
struct neural_lm {
  vocab voc;  // always includes sentinels
  aggregation agg = aggregation::global;
  neural_lm_config cfg;
  std::uint64_t seed = 0;
  std::vector<double> embeddings;  // voc.size() x m
  std::vector<double> weights;     // (context_len * m) x voc.size()
  std::vector<double> bias;        // voc.size()
  std::vector<double> epoch_losses;
  std::uint64_t catalog_hash = 0;

  std::vector<double> logits(std::span<const std::uint32_t> context) const;
};

neural_lm fit_neural_lm(std::span<const activity_sequence> seqs, std::uint32_t k,
                        const neural_lm_config& cfg, std::uint64_t seed);

std::vector<double> predict_next(const neural_lm& model, std::span<const std::uint32_t> context);

// Training pairs exactly as fit_neural_lm builds them.
std::vector<std::pair<std::vector<std::uint32_t>, std::uint32_t>> training_pairs(
    std::span<const activity_sequence> seqs, const vocab& voc, int context_len);

// 2^(mean -log2 p(target | context)) over the given sequences.
double model_perplexity(const neural_lm& model, std::span<const activity_sequence> seqs);

// Mean cross-entropy loss (natural log) over explicit pairs; gradients of the
// same objective, exposed for the finite-difference check.
double neural_lm_loss(const neural_lm& model,
                      std::span<const std::pair<std::vector<std::uint32_t>, std::uint32_t>> pairs);
struct neural_lm_gradients {
  std::vector<double> embeddings;
  std::vector<double> weights;
  std::vector<double> bias;
};
neural_lm_gradients neural_lm_gradient(
    const neural_lm& model,
    std::span<const std::pair<std::vector<std::uint32_t>, std::uint32_t>> pairs);

struct transition_histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::uint64_t> counts;  // equal-width bins over [lo, hi]

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
  double sample(rng& gen) const;
};

// Histogram of t_{i+1} - t_i over adjacent real tokens within each sequence,
// with ceil(sqrt(flow_count)) bins.
transition_histogram fit_transition_times(std::span<const activity_sequence> seqs,
                                          std::size_t flow_count);

}  // namespace tgen
