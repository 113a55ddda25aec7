#include "tgen/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include <json.hpp>

#include "tgen/errors.hpp"
#include "tgen/util.hpp"

namespace tgen {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}

}  // namespace

encoded_matrix encode(const feature_table& table) {
  if (table.rows.empty()) throw error(errc::empty_input, "cannot encode an empty feature table");
  const feature_catalog& catalog = build_catalog();
  if (table.catalog_hash != catalog.hash())
    throw error(errc::encoder_mismatch, "feature table catalog hash mismatch");

  std::size_t n = table.rows.size();
  encoder_spec spec;
  spec.catalog_hash = table.catalog_hash;
  std::vector<std::vector<double>> cols;  // raw (pre-scale) column values

  for (std::size_t fi = 0; fi < catalog.entries.size(); ++fi) {
    const auto& entry = catalog.entries[fi];
    if (entry.kind == feature_kind::numeric) {
      double sum = 0;
      std::size_t present = 0;
      for (const auto& row : table.rows) {
        const auto& v = row.values[fi];
        if (!v.is_absent()) {
          sum += v.num;
          ++present;
        }
      }
      double impute = present > 0 ? sum / static_cast<double>(present) : 0.0;
      std::vector<double> col(n);
      for (std::size_t r = 0; r < n; ++r) {
        const auto& v = table.rows[r].values[fi];
        col[r] = v.is_absent() ? impute : v.num;
      }
      encoder_column c{entry.name, "", impute, 1.0};
      spec.columns.push_back(c);
      cols.push_back(std::move(col));
    } else {
      // ABSENT nominal rows stay all-zero across the one-hot group.
      std::set<std::string> categories;
      for (const auto& row : table.rows) {
        const auto& v = row.values[fi];
        if (!v.is_absent()) categories.insert(v.label);
      }
      for (const auto& cat : categories) {
        std::vector<double> col(n);
        for (std::size_t r = 0; r < n; ++r) {
          const auto& v = table.rows[r].values[fi];
          col[r] = (!v.is_absent() && v.label == cat) ? 1.0 : 0.0;
        }
        spec.columns.push_back({entry.name, cat, 0.0, 1.0});
        cols.push_back(std::move(col));
      }
    }
  }

  // Scale to unit sample variance; zero-variance columns are dropped and
  // recorded.
  std::vector<std::size_t> kept;
  for (std::size_t ci = 0; ci < cols.size(); ++ci) {
    const auto& col = cols[ci];
    double mean = 0;
    for (double v : col) mean += v;
    mean /= static_cast<double>(n);
    double var = 0;
    for (double v : col) var += (v - mean) * (v - mean);
    var = n > 1 ? var / static_cast<double>(n - 1) : 0.0;
    if (var <= 0) {
      const auto& c = spec.columns[ci];
      spec.dropped.push_back(c.category.empty() ? c.feature : c.feature + "=" + c.category);
      continue;
    }
    spec.columns[ci].scale = std::sqrt(var);
    kept.push_back(ci);
  }
  std::vector<encoder_column> kept_cols;
  kept_cols.reserve(kept.size());
  for (std::size_t ci : kept) kept_cols.push_back(spec.columns[ci]);
  spec.columns = std::move(kept_cols);

  encoded_matrix m;
  m.rows = n;
  m.cols = kept.size();
  m.data.resize(n * kept.size());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < kept.size(); ++j)
      m.data[r * m.cols + j] = cols[kept[j]][r] / spec.columns[j].scale;
  m.spec = std::move(spec);
  return m;
}

namespace {

// Catalog positions for each encoder column, resolved once per table.
std::vector<std::size_t> column_sources(const encoder_spec& spec, const feature_catalog& catalog) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < catalog.entries.size(); ++i) index[catalog.entries[i].name] = i;
  std::vector<std::size_t> src(spec.columns.size());
  for (std::size_t j = 0; j < spec.columns.size(); ++j) {
    auto it = index.find(spec.columns[j].feature);
    if (it == index.end())
      throw error(errc::encoder_mismatch, "unknown encoder feature " + spec.columns[j].feature);
    src[j] = it->second;
  }
  return src;
}

void encode_row_into(const encoder_spec& spec, std::span<const std::size_t> src,
                     const feature_vector& row, double* out) {
  for (std::size_t j = 0; j < spec.columns.size(); ++j) {
    const auto& c = spec.columns[j];
    const auto& v = row.values[src[j]];
    double raw;
    if (c.category.empty()) {
      raw = v.is_absent() ? c.impute : v.num;
    } else {
      raw = (!v.is_absent() && v.label == c.category) ? 1.0 : 0.0;
    }
    out[j] = raw / c.scale;
  }
}

}  // namespace

std::vector<double> encode_row(const encoder_spec& spec, const feature_vector& row,
                               const feature_catalog& catalog) {
  auto src = column_sources(spec, catalog);
  std::vector<double> out(spec.columns.size());
  encode_row_into(spec, src, row, out.data());
  return out;
}

encoded_matrix encode_with(const encoder_spec& spec, const feature_table& table) {
  const feature_catalog& catalog = build_catalog();
  if (table.catalog_hash != spec.catalog_hash)
    throw error(errc::encoder_mismatch, "table catalog hash does not match the encoder");
  auto src = column_sources(spec, catalog);
  encoded_matrix m;
  m.rows = table.rows.size();
  m.cols = spec.columns.size();
  m.spec = spec;
  m.data.resize(m.rows * m.cols);
  for (std::size_t r = 0; r < table.rows.size(); ++r)
    encode_row_into(spec, src, table.rows[r], &m.data[r * m.cols]);
  return m;
}

cluster_model kmeans_fit(const encoded_matrix& x, std::size_t k, std::uint64_t seed,
                         std::size_t max_iter, const std::vector<double>* initial_centroids,
                         kmeans_init init, std::size_t restarts) {
  if (restarts > 1 && !initial_centroids) {
    cluster_model best;
    for (std::size_t r = 0; r < restarts; ++r) {
      auto m = kmeans_fit(x, k, derive_seed(seed, "restart" + std::to_string(r)), max_iter, nullptr,
                          init, 1);
      if (r == 0 || m.training_inertia < best.training_inertia) best = std::move(m);
    }
    best.seed = seed;
    return best;
  }
  if (k == 0) throw error(errc::insufficient_data, "k must be positive");
  if (x.rows < k)
    throw error(errc::insufficient_data, "k-means needs at least k rows: " + std::to_string(x.rows) +
                                             " < " + std::to_string(k));

  cluster_model model;
  model.k = k;
  model.dim = x.cols;
  model.seed = seed;
  model.catalog_hash = x.spec.catalog_hash;
  model.spec = x.spec;

  if (initial_centroids) {
    if (initial_centroids->size() != k * x.cols)
      throw error(errc::encoder_mismatch, "initial centroid shape mismatch");
    model.centroids = *initial_centroids;
  } else if (init == kmeans_init::plus_plus) {
    rng gen(seed);
    model.centroids.reserve(k * x.cols);
    auto first = x.row(gen.below(x.rows));
    model.centroids.insert(model.centroids.end(), first.begin(), first.end());
    std::vector<double> d2(x.rows);
    for (std::size_t c = 1; c < k; ++c) {
      for (std::size_t r = 0; r < x.rows; ++r) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j)
          best = std::min(best, sq_dist(x.row(r), std::span<const double>(model.centroids)
                                                       .subspan(j * x.cols, x.cols)));
        d2[r] = best;
      }
      double total = 0;
      for (double w : d2) total += w;
      std::size_t pick = total > 0 ? gen.categorical(d2) : static_cast<std::size_t>(gen.below(x.rows));
      auto row = x.row(pick);
      model.centroids.insert(model.centroids.end(), row.begin(), row.end());
    }
  } else {
    // Draw k distinct rows.
    rng gen(seed);
    std::vector<std::size_t> pool(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) pool[i] = i;
    model.centroids.reserve(k * x.cols);
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = i + static_cast<std::size_t>(gen.below(pool.size() - i));
      std::swap(pool[i], pool[j]);
      auto row = x.row(pool[i]);
      model.centroids.insert(model.centroids.end(), row.begin(), row.end());
    }
  }

  std::vector<std::uint32_t> labels(x.rows, 0);
  std::vector<std::uint32_t> prev_labels;
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    for (std::size_t r = 0; r < x.rows; ++r)
      labels[r] = static_cast<std::uint32_t>(assign(model, x.row(r)));
    if (labels == prev_labels) break;
    prev_labels = labels;

    std::vector<double> sums(k * x.cols, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t r = 0; r < x.rows; ++r) {
      auto row = x.row(r);
      double* dst = &sums[labels[r] * x.cols];
      for (std::size_t j = 0; j < x.cols; ++j) dst[j] += row[j];
      ++counts[labels[r]];
    }
    // Re-seed empty clusters to the point farthest from its assigned
    // centroid, taking successive farthest points for multiple empties.
    std::set<std::size_t> taken;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      double best = -1;
      std::size_t best_row = 0;
      for (std::size_t r = 0; r < x.rows; ++r) {
        if (taken.count(r)) continue;
        double d = sq_dist(x.row(r), model.centroid(labels[r]));
        if (d > best) {
          best = d;
          best_row = r;
        }
      }
      taken.insert(best_row);
      auto row = x.row(best_row);
      std::copy(row.begin(), row.end(), model.centroids.begin() + static_cast<long>(c * x.cols));
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      double inv = 1.0 / static_cast<double>(counts[c]);
      for (std::size_t j = 0; j < x.cols; ++j) model.centroids[c * x.cols + j] = sums[c * x.cols + j] * inv;
    }
  }

  double inertia = 0;
  for (std::size_t r = 0; r < x.rows; ++r)
    inertia += sq_dist(x.row(r), model.centroid(assign(model, x.row(r))));
  model.training_inertia = inertia;
  return model;
}

std::size_t assign(const cluster_model& model, std::span<const double> row) {
  if (row.size() != model.dim)
    throw error(errc::encoder_mismatch, "row dimension " + std::to_string(row.size()) +
                                            " does not match the model (" + std::to_string(model.dim) + ")");
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_c = 0;
  for (std::size_t c = 0; c < model.k; ++c) {
    double d = sq_dist(row, model.centroid(c));
    if (d < best) {  // ties keep the lowest cluster id
      best = d;
      best_c = c;
    }
  }
  return best_c;
}

std::vector<std::uint32_t> assign_all(const cluster_model& model, const encoded_matrix& x) {
  std::vector<std::uint32_t> labels(x.rows);
  for (std::size_t r = 0; r < x.rows; ++r)
    labels[r] = static_cast<std::uint32_t>(assign(model, x.row(r)));
  return labels;
}

std::vector<std::uint32_t> assign_table(const cluster_model& model, const feature_table& table) {
  if (table.catalog_hash != model.catalog_hash)
    throw error(errc::stage_mismatch, "feature table hash " + hex64(table.catalog_hash) +
                                          " does not match the cluster model hash " +
                                          hex64(model.catalog_hash));
  return assign_all(model, encode_with(model.spec, table));
}

silhouette_result silhouette(const encoded_matrix& x, std::span<const std::uint32_t> labels) {
  if (labels.size() != x.rows) throw error(errc::internal, "label count mismatch");
  std::map<std::uint32_t, std::size_t> sizes;
  for (auto l : labels) ++sizes[l];
  if (sizes.size() < 2)
    throw error(errc::undefined_silhouette, "silhouette needs at least two clusters");

  silhouette_result res;
  res.scores.resize(x.rows, 0.0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    if (sizes[labels[i]] == 1) {
      res.scores[i] = 0.0;  // singleton convention
      continue;
    }
    std::map<std::uint32_t, double> dist_sum;
    for (std::size_t j = 0; j < x.rows; ++j) {
      if (i == j) continue;
      dist_sum[labels[j]] += std::sqrt(sq_dist(x.row(i), x.row(j)));
    }
    double a = dist_sum[labels[i]] / static_cast<double>(sizes[labels[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [cluster, total] : dist_sum) {
      if (cluster == labels[i]) continue;
      b = std::min(b, total / static_cast<double>(sizes[cluster]));
    }
    double m = std::max(a, b);
    res.scores[i] = m > 0 ? (b - a) / m : 0.0;  // a == b == 0 -> 0 by convention
  }
  double total = 0;
  for (double s : res.scores) total += s;
  res.mean = total / static_cast<double>(res.scores.size());
  return res;
}

void save_cluster_model(const cluster_model& model, const std::filesystem::path& path) {
  nlohmann::json enc;
  for (const auto& c : model.spec.columns)
    enc.push_back({{"feature", c.feature}, {"category", c.category}, {"impute", c.impute}, {"scale", c.scale}});
  nlohmann::json j{{"format", "tgen.cluster.v1"},
                   {"k", model.k},
                   {"dim", model.dim},
                   {"seed", model.seed},
                   {"training_inertia", model.training_inertia},
                   {"catalog_hash", hex64(model.catalog_hash)},
                   {"encoder", {{"columns", enc}, {"dropped", model.spec.dropped}}},
                   {"centroids", model.centroids}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw error(errc::io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

cluster_model load_cluster_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw error(errc::io, "cannot open " + path.string());
  nlohmann::json j = nlohmann::json::parse(in);
  if (j.value("format", "") != "tgen.cluster.v1")
    throw error(errc::stage_mismatch, path.string() + " is not a cluster model file");
  cluster_model m;
  m.k = j.at("k").get<std::size_t>();
  m.dim = j.at("dim").get<std::size_t>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.training_inertia = j.at("training_inertia").get<double>();
  m.catalog_hash = std::stoull(j.at("catalog_hash").get<std::string>(), nullptr, 16);
  m.spec.catalog_hash = m.catalog_hash;
  for (const auto& c : j.at("encoder").at("columns")) {
    m.spec.columns.push_back({c.at("feature").get<std::string>(), c.at("category").get<std::string>(),
                              c.at("impute").get<double>(), c.at("scale").get<double>()});
  }
  m.spec.dropped = j.at("encoder").at("dropped").get<std::vector<std::string>>();
  m.centroids = j.at("centroids").get<std::vector<double>>();
  if (m.centroids.size() != m.k * m.dim)
    throw error(errc::io, "corrupt centroid matrix in " + path.string());
  return m;
}

}  // namespace tgen
