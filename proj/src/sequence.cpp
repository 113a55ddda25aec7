#include "tgen/sequence.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "tgen/errors.hpp"

namespace tgen {

std::string aggregation_name(aggregation a) {
  return a == aggregation::global ? "global" : "ip_pair";
}

std::optional<aggregation> aggregation_from(std::string_view name) {
  if (name == "global") return aggregation::global;
  if (name == "ip_pair") return aggregation::ip_pair;
  return std::nullopt;
}

std::vector<activity_sequence> build_sequences(std::span<const flow_meta> meta,
                                               std::span<const std::uint32_t> labels,
                                               std::uint32_t k, aggregation agg) {
  if (meta.size() != labels.size()) throw error(errc::internal, "labels do not cover all flows");
  for (auto l : labels)
    if (l >= k) throw error(errc::unknown_token, "cluster id " + std::to_string(l) + " out of range");

  std::vector<std::size_t> order(meta.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (meta[a].first_time != meta[b].first_time) return meta[a].first_time < meta[b].first_time;
    return a < b;  // ties resolved by flow index
  });

  std::vector<activity_sequence> out;
  if (agg == aggregation::global) {
    activity_sequence s;
    s.agg = agg;
    for (std::size_t i : order) {
      s.tokens.push_back(labels[i]);
      s.times.push_back(meta[i].first_time);
    }
    out.push_back(std::move(s));
    return out;
  }

  vocab v{k, true};
  std::map<ip_pair, std::size_t> index;
  for (std::size_t i : order) {
    ip_pair pair{meta[i].key.src_addr, meta[i].key.dst_addr};
    auto it = index.find(pair);
    if (it == index.end()) {
      activity_sequence s;
      s.agg = agg;
      s.key = pair;
      s.tokens.push_back(v.start_id());
      s.times.push_back(meta[i].first_time);
      it = index.emplace(pair, out.size()).first;
      out.push_back(std::move(s));
    }
    auto& s = out[it->second];
    s.tokens.push_back(labels[i]);
    s.times.push_back(meta[i].first_time);
  }
  for (auto& s : out) {
    s.tokens.push_back(v.end_id());
    s.times.push_back(s.times.back());
  }
  // First-activity order, keyed for determinism.
  std::stable_sort(out.begin(), out.end(), [](const activity_sequence& a, const activity_sequence& b) {
    if (a.times.front() != b.times.front()) return a.times.front() < b.times.front();
    return a.key < b.key;
  });
  return out;
}

markov_model fit_markov(std::span<const activity_sequence> seqs, std::uint32_t k) {
  markov_model m;
  bool any = false;
  for (const auto& s : seqs)
    if (!s.tokens.empty()) any = true;
  if (seqs.empty() || !any) throw error(errc::empty_model, "no sequences to fit");

  m.agg = seqs.front().agg;
  m.voc = vocab{k, m.agg == aggregation::ip_pair};
  std::size_t v = m.voc.size();
  m.start_prob.assign(v, 0.0);
  m.transition.assign(v, std::vector<double>(v, 0.0));
  m.row_defined.assign(v, false);

  double starts = 0;
  for (const auto& s : seqs) {
    // First real token of each sequence feeds the start distribution.
    for (auto t : s.tokens) {
      if (m.voc.is_sentinel(t)) continue;
      m.start_prob[t] += 1;
      starts += 1;
      break;
    }
    for (std::size_t i = 0; i + 1 < s.tokens.size(); ++i)
      m.transition[s.tokens[i]][s.tokens[i + 1]] += 1;
  }
  if (m.agg == aggregation::global) {
    // Unigram start distribution: every token counts.
    std::fill(m.start_prob.begin(), m.start_prob.end(), 0.0);
    starts = 0;
    for (const auto& s : seqs)
      for (auto t : s.tokens) {
        m.start_prob[t] += 1;
        starts += 1;
      }
  }
  if (starts <= 0) throw error(errc::empty_model, "no start tokens observed");
  for (auto& p : m.start_prob) p /= starts;

  for (std::size_t a = 0; a < v; ++a) {
    double total = 0;
    for (double c : m.transition[a]) total += c;
    if (total > 0) {
      for (double& c : m.transition[a]) c /= total;
      m.row_defined[a] = true;
    }
  }
  return m;
}

std::vector<double> predict_next(const markov_model& model, std::span<const std::uint32_t> context) {
  if (context.empty()) return model.start_prob;
  std::uint32_t last = context.back();
  if (last >= model.voc.size())
    throw error(errc::unknown_token, "token " + std::to_string(last) + " outside the vocabulary");
  // Unobserved rows fall back to the start distribution.
  if (!model.row_defined[last]) return model.start_prob;
  return model.transition[last];
}

// --- neural LM ---

std::vector<std::pair<std::vector<std::uint32_t>, std::uint32_t>> training_pairs(
    std::span<const activity_sequence> seqs, const vocab& voc, int context_len) {
  std::vector<std::pair<std::vector<std::uint32_t>, std::uint32_t>> pairs;
  std::uint32_t pad = voc.start_id();
  for (const auto& s : seqs) {
    std::size_t begin = 0;
    if (!s.tokens.empty() && voc.has_sentinels && s.tokens.front() == pad && s.agg == aggregation::ip_pair)
      begin = 1;  // START is context, never a target
    for (std::size_t t = begin; t < s.tokens.size(); ++t) {
      std::vector<std::uint32_t> ctx(static_cast<std::size_t>(context_len), pad);
      for (int j = 0; j < context_len; ++j) {
        std::int64_t idx = static_cast<std::int64_t>(t) - context_len + j;
        if (idx >= 0) ctx[static_cast<std::size_t>(j)] = s.tokens[static_cast<std::size_t>(idx)];
      }
      pairs.emplace_back(std::move(ctx), s.tokens[t]);
    }
  }
  return pairs;
}

std::vector<double> neural_lm::logits(std::span<const std::uint32_t> context) const {
  std::size_t v = voc.size();
  std::size_t m = static_cast<std::size_t>(cfg.embed_dim);
  std::size_t ctx = static_cast<std::size_t>(cfg.context_len);
  if (context.size() != ctx) throw error(errc::internal, "context length mismatch");
  std::vector<double> x(ctx * m);
  for (std::size_t j = 0; j < ctx; ++j) {
    std::uint32_t tok = context[j];
    if (tok >= v) throw error(errc::unknown_token, "token " + std::to_string(tok) + " outside the vocabulary");
    std::copy_n(embeddings.begin() + static_cast<long>(tok * m), m, x.begin() + static_cast<long>(j * m));
  }
  std::vector<double> z(bias);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const double* w = &weights[i * v];
    for (std::size_t o = 0; o < v; ++o) z[o] += xi * w[o];
  }
  return z;
}

namespace {

std::vector<double> softmax(std::vector<double> z) {
  double zmax = *std::max_element(z.begin(), z.end());
  double total = 0;
  for (double& v : z) {
    v = std::exp(v - zmax);
    total += v;
  }
  for (double& v : z) v /= total;
  return z;
}

}  // namespace

std::vector<double> predict_next(const neural_lm& model, std::span<const std::uint32_t> context) {
  std::size_t ctx = static_cast<std::size_t>(model.cfg.context_len);
  std::vector<std::uint32_t> padded(ctx, model.voc.start_id());
  for (std::size_t j = 0; j < std::min(ctx, context.size()); ++j)
    padded[ctx - 1 - j] = context[context.size() - 1 - j];
  return softmax(model.logits(padded));
}

double neural_lm_loss(const neural_lm& model,
                      std::span<const std::pair<std::vector<std::uint32_t>, std::uint32_t>> pairs) {
  if (pairs.empty()) throw error(errc::empty_model, "no training pairs");
  double loss = 0;
  for (const auto& [ctx, target] : pairs) {
    auto p = softmax(model.logits(ctx));
    loss -= std::log(std::max(p[target], 1e-300));
  }
  return loss / static_cast<double>(pairs.size());
}

neural_lm_gradients neural_lm_gradient(
    const neural_lm& model,
    std::span<const std::pair<std::vector<std::uint32_t>, std::uint32_t>> pairs) {
  std::size_t v = model.voc.size();
  std::size_t m = static_cast<std::size_t>(model.cfg.embed_dim);
  std::size_t ctx = static_cast<std::size_t>(model.cfg.context_len);
  neural_lm_gradients g;
  g.embeddings.assign(model.embeddings.size(), 0.0);
  g.weights.assign(model.weights.size(), 0.0);
  g.bias.assign(model.bias.size(), 0.0);
  double scale = 1.0 / static_cast<double>(pairs.size());
  for (const auto& [context, target] : pairs) {
    auto p = softmax(model.logits(context));
    p[target] -= 1.0;  // dL/dz for cross entropy
    for (std::size_t o = 0; o < v; ++o) g.bias[o] += scale * p[o];
    for (std::size_t j = 0; j < ctx; ++j) {
      std::uint32_t tok = context[j];
      const double* emb = &model.embeddings[tok * m];
      double* gemb = &g.embeddings[tok * m];
      for (std::size_t d = 0; d < m; ++d) {
        std::size_t row = j * m + d;
        const double* w = &model.weights[row * v];
        double* gw = &g.weights[row * v];
        double dx = 0;
        for (std::size_t o = 0; o < v; ++o) {
          gw[o] += scale * emb[d] * p[o];
          dx += w[o] * p[o];
        }
        gemb[d] += scale * dx;
      }
    }
  }
  return g;
}

neural_lm fit_neural_lm(std::span<const activity_sequence> seqs, std::uint32_t k,
                        const neural_lm_config& cfg, std::uint64_t seed) {
  neural_lm model;
  model.voc = vocab{k, true};
  model.agg = seqs.empty() ? aggregation::global : seqs.front().agg;
  model.cfg = cfg;
  model.seed = seed;

  auto pairs = training_pairs(seqs, model.voc, cfg.context_len);
  if (pairs.empty()) throw error(errc::empty_model, "no training pairs");

  std::size_t v = model.voc.size();
  std::size_t m = static_cast<std::size_t>(cfg.embed_dim);
  std::size_t in_dim = static_cast<std::size_t>(cfg.context_len) * m;
  rng gen(seed);
  model.embeddings.resize(v * m);
  model.weights.resize(in_dim * v);
  model.bias.assign(v, 0.0);
  for (double& w : model.embeddings) w = gen.uniform(-0.1, 0.1);
  for (double& w : model.weights) w = gen.uniform(-0.1, 0.1);

  std::vector<double> cache_e(model.embeddings.size(), 0.0);
  std::vector<double> cache_w(model.weights.size(), 0.0);
  std::vector<double> cache_b(model.bias.size(), 0.0);
  auto rms_step = [&](std::vector<double>& param, std::vector<double>& cache,
                      const std::vector<double>& grad) {
    for (std::size_t i = 0; i < param.size(); ++i) {
      double gi = grad[i];
      cache[i] = cfg.rms_decay * cache[i] + (1.0 - cfg.rms_decay) * gi * gi;
      param[i] -= cfg.learning_rate * gi / (std::sqrt(cache[i]) + cfg.rms_epsilon);
    }
  };

  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t batch = static_cast<std::size_t>(std::max(cfg.batch_size, 1));
  using pair_t = std::pair<std::vector<std::uint32_t>, std::uint32_t>;
  std::vector<pair_t> scratch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    gen.shuffle(order);
    double epoch_loss = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::size_t end = std::min(order.size(), start + batch);
      scratch.clear();
      for (std::size_t i = start; i < end; ++i) scratch.push_back(pairs[order[i]]);
      epoch_loss += neural_lm_loss(model, scratch);
      auto grads = neural_lm_gradient(model, scratch);
      rms_step(model.embeddings, cache_e, grads.embeddings);
      rms_step(model.weights, cache_w, grads.weights);
      rms_step(model.bias, cache_b, grads.bias);
      ++batches;
    }
    model.epoch_losses.push_back(batches > 0 ? epoch_loss / static_cast<double>(batches) : 0.0);
  }
  return model;
}

double model_perplexity(const neural_lm& model, std::span<const activity_sequence> seqs) {
  auto pairs = training_pairs(seqs, model.voc, model.cfg.context_len);
  if (pairs.empty()) throw error(errc::insufficient_data, "no pairs to score");
  double bits = 0;
  for (const auto& [ctx, target] : pairs) {
    auto p = softmax(model.logits(ctx));
    bits -= std::log2(std::max(p[target], 1e-300));
  }
  return std::exp2(bits / static_cast<double>(pairs.size()));
}

// --- transition time histogram ---

transition_histogram fit_transition_times(std::span<const activity_sequence> seqs,
                                          std::size_t flow_count) {
  std::vector<double> deltas;
  for (const auto& s : seqs) {
    // Real-token positions only; sentinel transitions carry no time.
    std::vector<std::size_t> real;
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      bool sentinel = s.agg == aggregation::ip_pair && (i == 0 || i + 1 == s.tokens.size());
      if (!sentinel) real.push_back(i);
    }
    for (std::size_t i = 1; i < real.size(); ++i)
      deltas.push_back(s.times[real[i]].seconds() - s.times[real[i - 1]].seconds());
  }
  if (deltas.empty())
    throw error(errc::insufficient_data, "no adjacent activity pairs to build a histogram from");

  transition_histogram h;
  std::size_t bins = static_cast<std::size_t>(
      std::ceil(std::sqrt(static_cast<double>(std::max<std::size_t>(flow_count, 1)))));
  h.counts.assign(std::max<std::size_t>(bins, 1), 0);
  h.lo = *std::min_element(deltas.begin(), deltas.end());
  h.hi = *std::max_element(deltas.begin(), deltas.end());
  double width = h.hi - h.lo;
  for (double d : deltas) {
    std::size_t b = 0;
    if (width > 0) {
      double rel = (d - h.lo) / width * static_cast<double>(h.counts.size());
      b = std::min(h.counts.size() - 1, static_cast<std::size_t>(std::max(rel, 0.0)));
    }
    ++h.counts[b];
  }
  return h;
}

double transition_histogram::sample(rng& gen) const {
  std::uint64_t n = total();
  if (n == 0) throw error(errc::generation_config, "empty transition time histogram");
  std::uint64_t target = gen.below(n);
  std::size_t bin = 0;
  std::uint64_t acc = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    acc += counts[i];
    if (target < acc) {
      bin = i;
      break;
    }
  }
  if (hi <= lo) return lo;
  double width = (hi - lo) / static_cast<double>(counts.size());
  double left = lo + static_cast<double>(bin) * width;
  return left + gen.unit() * width;
}

}  // namespace tgen
