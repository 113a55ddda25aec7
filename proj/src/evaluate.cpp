#include "tgen/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "tgen/errors.hpp"
#include "tgen/util.hpp"

namespace tgen {

namespace {

double ks_statistic(std::vector<double> x, std::vector<double> y) {
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  double nx = static_cast<double>(x.size());
  double ny = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0;
  while (i < x.size() && j < y.size()) {
    double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] <= v) ++i;
    while (j < y.size() && y[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / nx - static_cast<double>(j) / ny));
  }
  return d;
}

// Asymptotic two-sided Kolmogorov survival function.
double kolmogorov_q(double lambda) {
  if (lambda <= 0) return 1.0;
  double sum = 0;
  for (int j = 1; j <= 100; ++j) {
    double term = 2.0 * std::pow(-1.0, j - 1) * std::exp(-2.0 * j * j * lambda * lambda);
    sum += term;
    if (std::abs(term) < 1e-12) break;
  }
  return std::min(1.0, std::max(0.0, sum));
}

}  // namespace

ks_result ks_two_sample(std::span<const double> x, std::span<const double> y) {
  if (x.empty() || y.empty()) throw error(errc::empty_input, "KS requires non-empty samples");
  ks_result r;
  std::vector<double> xv(x.begin(), x.end());
  std::vector<double> yv(y.begin(), y.end());
  r.statistic = ks_statistic(xv, yv);

  double nx = static_cast<double>(x.size());
  double ny = static_cast<double>(y.size());
  if (nx * ny <= 10000.0) {
    // Seed-fixed permutation distribution of D. The smaller sample always
    // takes the front of the shuffled pool so ks(x, y) == ks(y, x) exactly.
    constexpr std::uint64_t kPermSeed = 0x7467656e6b730001ull;
    constexpr int kPerms = 10000;
    std::size_t na = std::min(x.size(), y.size());
    std::size_t nb = std::max(x.size(), y.size());
    std::vector<double> pool(xv);
    pool.insert(pool.end(), yv.begin(), yv.end());
    std::sort(pool.begin(), pool.end());
    rng gen(kPermSeed);
    int at_least = 0;
    std::vector<double> pa(na), pb(nb);
    for (int p = 0; p < kPerms; ++p) {
      gen.shuffle(pool);
      pa.assign(pool.begin(), pool.begin() + static_cast<long>(na));
      pb.assign(pool.begin() + static_cast<long>(na), pool.end());
      if (ks_statistic(pa, pb) >= r.statistic - 1e-12) ++at_least;
    }
    r.p_value = static_cast<double>(at_least + 1) / static_cast<double>(kPerms + 1);
    if (r.statistic <= 1e-15) r.p_value = 1.0;  // identical ECDFs
  } else {
    double ne = nx * ny / (nx + ny);
    double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * r.statistic;
    r.p_value = kolmogorov_q(lambda);
  }
  return r;
}

ad_result ad_k_sample(std::span<const std::vector<double>> samples) {
  std::size_t k = samples.size();
  if (k < 2) throw error(errc::insufficient_data, "AD needs at least two samples");
  for (const auto& s : samples)
    if (s.size() < 2)
      throw error(errc::insufficient_data, "AD needs at least two observations per sample");

  std::vector<double> all;
  for (const auto& s : samples) all.insert(all.end(), s.begin(), s.end());
  std::sort(all.begin(), all.end());
  std::size_t n_total = all.size();
  std::vector<double> distinct;
  std::vector<double> mult;  // l_j
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j] == all[i]) ++j;
    distinct.push_back(all[i]);
    mult.push_back(static_cast<double>(j - i));
    i = j;
  }

  double N = static_cast<double>(n_total);
  double a2 = 0;
  for (std::size_t s = 0; s < k; ++s) {
    const auto& sample = samples[s];
    double ni = static_cast<double>(sample.size());
    std::vector<double> sorted(sample);
    std::sort(sorted.begin(), sorted.end());
    double inner = 0;
    double bj_cum = 0;   // observations strictly before the current distinct value
    double mij_cum = 0;  // sample-i observations strictly before it
    for (std::size_t j = 0; j < distinct.size(); ++j) {
      double lj = mult[j];
      double fij = static_cast<double>(
          std::upper_bound(sorted.begin(), sorted.end(), distinct[j]) -
          std::lower_bound(sorted.begin(), sorted.end(), distinct[j]));
      double maij = mij_cum + fij / 2.0;
      double baj = bj_cum + lj / 2.0;
      double denom = baj * (N - baj) - N * lj / 4.0;
      if (denom > 0) {
        double num = N * maij - ni * baj;
        inner += (lj / N) * num * num / denom;
      }
      bj_cum += lj;
      mij_cum += fij;
    }
    a2 += inner / ni;
  }
  a2 *= (N - 1.0) / N;

  // Variance of the statistic under the null (rank-based form).
  double H = 0;
  for (const auto& s : samples) H += 1.0 / static_cast<double>(s.size());
  double h = 0;
  for (std::size_t i = 1; i <= n_total - 1; ++i) h += 1.0 / static_cast<double>(i);
  double g = 0;
  for (std::size_t i = 1; i + 1 <= n_total - 1; ++i)
    for (std::size_t j = i + 1; j <= n_total - 1; ++j)
      g += 1.0 / (static_cast<double>(n_total - i) * static_cast<double>(j));
  double kk = static_cast<double>(k);
  double a = (4.0 * g - 6.0) * (kk - 1.0) + (10.0 - 6.0 * g) * H;
  double b = (2.0 * g - 4.0) * kk * kk + 8.0 * h * kk +
             (2.0 * g - 14.0 * h - 4.0) * H - 8.0 * h + 4.0 * g - 6.0;
  double c = (6.0 * h + 2.0 * g - 2.0) * kk * kk + (4.0 * h - 4.0 * g + 6.0) * kk +
             (2.0 * h - 6.0) * H + 4.0 * h;
  double d = (2.0 * h + 6.0) * kk * kk - 4.0 * h * kk;
  double var = (a * N * N * N + b * N * N + c * N + d) /
               ((N - 1.0) * (N - 2.0) * (N - 3.0));

  ad_result r;
  r.statistic = a2;
  double sigma = var > 0 ? std::sqrt(var) : 1.0;
  r.standardized = (a2 - (kk - 1.0)) / sigma;

  // Published percentile anchors for the standardized statistic; log-linear
  // interpolation inside the table, log-linear extrapolation with the edge
  // segment's slope outside it, clamped to [0.001, 1].
  static const double tm[4] = {0.326, 1.225, 1.960, 3.752};
  static const double pv[4] = {0.25, 0.10, 0.05, 0.01};
  double t = r.standardized;
  double logp;
  if (t <= tm[0]) {
    double slope = (std::log(pv[1]) - std::log(pv[0])) / (tm[1] - tm[0]);
    logp = std::log(pv[0]) + slope * (t - tm[0]);
  } else if (t >= tm[3]) {
    double slope = (std::log(pv[3]) - std::log(pv[2])) / (tm[3] - tm[2]);
    logp = std::log(pv[3]) + slope * (t - tm[3]);
  } else {
    logp = 0;
    for (int i = 0; i < 3; ++i) {
      if (t <= tm[i + 1]) {
        double frac = (t - tm[i]) / (tm[i + 1] - tm[i]);
        logp = std::log(pv[i]) + frac * (std::log(pv[i + 1]) - std::log(pv[i]));
        break;
      }
    }
  }
  r.p_value = std::min(1.0, std::max(0.001, std::exp(logp)));
  return r;
}

preservation_summary feature_preservation(const feature_table& original,
                                          const feature_table& generated, double alpha) {
  if (original.catalog_hash != generated.catalog_hash)
    throw error(errc::encoder_mismatch, "feature tables come from different catalogs");
  const feature_catalog& catalog = build_catalog();
  preservation_summary out;
  out.alpha = alpha;

  for (std::size_t fi = 0; fi < catalog.entries.size(); ++fi) {
    const auto& entry = catalog.entries[fi];
    feature_test ft;
    ft.name = entry.name;
    ft.kind = entry.kind;
    ft.test = entry.kind == feature_kind::numeric ? "KS" : "AD";

    if (entry.kind == feature_kind::numeric) {
      std::vector<double> xs, ys;
      for (const auto& row : original.rows)
        if (!row.values[fi].is_absent()) xs.push_back(row.values[fi].num);
      for (const auto& row : generated.rows)
        if (!row.values[fi].is_absent()) ys.push_back(row.values[fi].num);
      if (xs.size() < 2 || ys.size() < 2) {
        ft.status = test_status::untestable;
      } else {
        auto r = ks_two_sample(xs, ys);
        ft.statistic = r.statistic;
        ft.p_value = r.p_value;
        ft.status = r.p_value > alpha ? test_status::preserved : test_status::not_preserved;
      }
    } else {
      // Categories map to their index in the sorted union; midranks absorb
      // the ties.
      std::set<std::string> values;
      for (const auto& row : original.rows)
        if (!row.values[fi].is_absent()) values.insert(row.values[fi].label);
      for (const auto& row : generated.rows)
        if (!row.values[fi].is_absent()) values.insert(row.values[fi].label);
      std::map<std::string, double> code;
      double next = 0;
      for (const auto& v : values) code[v] = next++;
      std::vector<double> xs, ys;
      for (const auto& row : original.rows)
        if (!row.values[fi].is_absent()) xs.push_back(code[row.values[fi].label]);
      for (const auto& row : generated.rows)
        if (!row.values[fi].is_absent()) ys.push_back(code[row.values[fi].label]);
      if (xs.size() < 2 || ys.size() < 2) {
        ft.status = test_status::untestable;
      } else if (values.size() < 2) {
        // one shared category on both sides: trivially the same population
        ft.statistic = 0.0;
        ft.p_value = 1.0;
        ft.status = test_status::preserved;
      } else {
        std::vector<std::vector<double>> samples{xs, ys};
        auto r = ad_k_sample(samples);
        ft.statistic = r.standardized;
        ft.p_value = r.p_value;
        ft.status = r.p_value > alpha ? test_status::preserved : test_status::not_preserved;
      }
    }
    switch (ft.status) {
      case test_status::preserved: ++out.preserved; break;
      case test_status::not_preserved: ++out.not_preserved; break;
      case test_status::untestable: ++out.untestable; break;
    }
    out.features.push_back(std::move(ft));
  }
  return out;
}

double ngram_perplexity(std::span<const activity_sequence> seqs, int n) {
  if (n < 1 || n > 8) throw error(errc::insufficient_data, "unsupported n-gram size");
  std::map<std::vector<std::uint32_t>, std::uint64_t> counts;
  std::uint64_t total = 0;
  for (const auto& s : seqs) {
    std::vector<std::uint32_t> real;
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      bool sentinel = s.agg == aggregation::ip_pair && (i == 0 || i + 1 == s.tokens.size());
      if (!sentinel) real.push_back(s.tokens[i]);
    }
    if (real.size() < static_cast<std::size_t>(n)) continue;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= real.size(); ++i) {
      std::vector<std::uint32_t> gram(real.begin() + static_cast<long>(i),
                                      real.begin() + static_cast<long>(i) + n);
      ++counts[gram];
      ++total;
    }
  }
  if (total == 0)
    throw error(errc::insufficient_data,
                "not enough tokens for " + std::to_string(n) + "-gram perplexity");
  double h = 0;
  for (const auto& [gram, c] : counts) {
    double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log2(p);
  }
  return std::exp2(h);
}

double perplexity_delta(std::span<const activity_sequence> original,
                        std::span<const activity_sequence> generated, int n) {
  return std::abs(ngram_perplexity(original, n) - ngram_perplexity(generated, n));
}

std::vector<activity_sequence> per_source_sequences(std::span<const flow_meta> meta,
                                                    std::span<const std::uint32_t> labels,
                                                    std::uint32_t k) {
  if (meta.size() != labels.size()) throw error(errc::internal, "labels do not cover all flows");
  std::vector<std::size_t> order(meta.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (meta[a].first_time != meta[b].first_time) return meta[a].first_time < meta[b].first_time;
    return a < b;
  });
  (void)k;
  std::map<ip_addr, activity_sequence> by_src;
  for (std::size_t i : order) {
    auto& s = by_src[meta[i].key.src_addr];
    s.agg = aggregation::global;  // plain token runs, no sentinels
    s.tokens.push_back(labels[i]);
    s.times.push_back(meta[i].first_time);
  }
  std::vector<activity_sequence> out;
  out.reserve(by_src.size());
  for (auto& [src, s] : by_src) out.push_back(std::move(s));
  return out;
}

trace_summary summarize(std::span<const activity_sequence> ip_sequences,
                        std::span<const std::uint32_t> labels, std::uint64_t packet_count) {
  trace_summary s;
  s.packet_count = packet_count;
  std::set<std::uint32_t> clusters(labels.begin(), labels.end());
  s.cluster_count = clusters.size();
  if (!ip_sequences.empty()) {
    double total = 0;
    for (const auto& seq : ip_sequences) {
      std::size_t len = seq.tokens.size();
      if (seq.agg == aggregation::ip_pair && len >= 2) len -= 2;
      total += static_cast<double>(len);
    }
    s.mean_sequence_size = total / static_cast<double>(ip_sequences.size());
  }
  return s;
}

void save_report(const fidelity_report& report, const std::filesystem::path& csv_path) {
  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw error(errc::io, "cannot write " + csv_path.string());
  std::vector<std::string> fields = {"feature", "kind", "test", "statistic", "p_value", "status"};
  out << join_csv(fields) << '\n';
  for (const auto& f : report.preservation.features) {
    fields.clear();
    fields.push_back(f.name);
    fields.push_back(f.kind == feature_kind::numeric ? "numeric" : "nominal");
    fields.push_back(f.test);
    fields.push_back(format_double(f.statistic));
    fields.push_back(format_double(f.p_value));
    fields.push_back(f.status == test_status::preserved       ? "preserved"
                     : f.status == test_status::not_preserved ? "not_preserved"
                                                              : "untestable");
    out << join_csv(fields) << '\n';
  }
}

std::string report_text(const fidelity_report& report) {
  std::ostringstream os;
  const auto& p = report.preservation;
  os << "feature preservation (alpha=" << p.alpha << "): " << p.preserved << " preserved, "
     << p.not_preserved << " not preserved, " << p.untestable << " untestable ("
     << static_cast<int>(p.preserved_fraction() * 100.0 + 0.5) << "% of testable)\n";
  for (const auto& rec : report.perplexities) {
    os << rec.n << "-gram perplexity: original " << rec.original << ", generated " << rec.generated
       << ", |delta| " << rec.delta << ", per-source |delta| " << rec.per_source_delta << "\n";
  }
  os << "packets: original " << report.original.packet_count << ", generated "
     << report.generated.packet_count << "\n";
  os << "clusters present: original " << report.original.cluster_count << ", generated "
     << report.generated.cluster_count << "\n";
  os << "mean sequence size: original " << report.original.mean_sequence_size << ", generated "
     << report.generated.mean_sequence_size << "\n";
  return os.str();
}

}  // namespace tgen
