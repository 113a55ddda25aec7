#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "tgen/cluster.hpp"
#include "tgen/errors.hpp"
#include "tgen/util.hpp"

using namespace tgen;

namespace {

encoded_matrix matrix_of(const std::vector<std::vector<double>>& rows) {
  encoded_matrix m;
  m.rows = rows.size();
  m.cols = rows.empty() ? 0 : rows[0].size();
  for (const auto& r : rows) m.data.insert(m.data.end(), r.begin(), r.end());
  for (std::size_t j = 0; j < m.cols; ++j)
    m.spec.columns.push_back({"c" + std::to_string(j), "", 0.0, 1.0});
  return m;
}

double dist(std::span<const double> a, std::span<const double> b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(d);
}

// Exhaustive assignment enumeration: the optimal SSE over every labeling
// into at most k groups (centroid = group mean).
double brute_force_optimum(const encoded_matrix& x, std::size_t k) {
  std::size_t n = x.rows;
  std::vector<std::size_t> labels(n, 0);
  double best = std::numeric_limits<double>::infinity();
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= k;
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = c % k;
      c /= k;
    }
    std::vector<std::vector<double>> sums(k, std::vector<double>(x.cols, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto row = x.row(i);
      for (std::size_t j = 0; j < x.cols; ++j) sums[labels[i]][j] += row[j];
      ++counts[labels[i]];
    }
    double sse = 0;
    for (std::size_t i = 0; i < n; ++i) {
      auto row = x.row(i);
      for (std::size_t j = 0; j < x.cols; ++j) {
        double c2 = sums[labels[i]][j] / static_cast<double>(counts[labels[i]]);
        sse += (row[j] - c2) * (row[j] - c2);
      }
    }
    best = std::min(best, sse);
  }
  return best;
}

// Brute-force silhouette straight from the definition.
std::vector<double> silhouette_oracle(const encoded_matrix& x, const std::vector<std::uint32_t>& labels) {
  std::size_t n = x.rows;
  std::vector<double> scores(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t own = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (labels[j] == labels[i]) ++own;
    if (own == 1) {
      scores[i] = 0;
      continue;
    }
    double a = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && labels[j] == labels[i]) a += dist(x.row(i), x.row(j));
    a /= static_cast<double>(own - 1);
    double b = std::numeric_limits<double>::infinity();
    std::set<std::uint32_t> others(labels.begin(), labels.end());
    for (std::uint32_t c : others) {
      if (c == labels[i]) continue;
      double total = 0;
      std::size_t count = 0;
      for (std::size_t j = 0; j < n; ++j)
        if (labels[j] == c) {
          total += dist(x.row(i), x.row(j));
          ++count;
        }
      b = std::min(b, total / static_cast<double>(count));
    }
    double m = std::max(a, b);
    scores[i] = m > 0 ? (b - a) / m : 0.0;
  }
  return scores;
}

feature_table tiny_table() {
  // Mixed numeric/nominal/absent table for encoder tests.
  feature_table t;
  t.catalog_hash = build_catalog().hash();
  const auto& cat = build_catalog();
  rng gen(31);
  for (int r = 0; r < 20; ++r) {
    feature_vector row;
    row.flow_id = static_cast<std::uint64_t>(r);
    for (const auto& e : cat.entries) {
      if (e.kind == feature_kind::nominal) {
        if (e.level == feature_level::app) {
          row.values.push_back(r % 2 ? feature_value::absent()
                                     : feature_value::label_of(r % 4 ? "GET" : "POST"));
        } else {
          row.values.push_back(feature_value::label_of(r % 3 ? "TCP" : "UDP"));
        }
      } else if (e.level == feature_level::app) {
        row.values.push_back(r % 2 ? feature_value::absent()
                                   : feature_value::number_of(gen.uniform(0, 10)));
      } else if (e.name == "flow_week_day") {
        row.values.push_back(feature_value::number_of(3.0));  // constant column
      } else {
        row.values.push_back(feature_value::number_of(gen.uniform(-5, 5)));
      }
    }
    flow_meta m;
    m.key.src_addr = ip_addr::v4(10, 0, 0, static_cast<std::uint8_t>(r));
    m.key.dst_addr = ip_addr::v4(10, 0, 0, 99);
    m.first_time = timestamp::from_seconds(r * 3.0);
    t.meta.push_back(m);
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace

TEST_CASE("encoder one-hots nominals with exactly one live column per row") {
  auto t = tiny_table();
  auto x = encode(t);
  // find the flow_transport one-hot block
  std::vector<std::size_t> block;
  for (std::size_t j = 0; j < x.spec.columns.size(); ++j)
    if (x.spec.columns[j].feature == "flow_transport") block.push_back(j);
  REQUIRE(block.size() == 2);  // TCP and UDP both appear
  for (std::size_t r = 0; r < x.rows; ++r) {
    int hot = 0;
    for (std::size_t j : block)
      if (x.row(r)[j] != 0.0) ++hot;
    CHECK(hot == 1);
  }
}

TEST_CASE("constant columns are dropped and recorded") {
  auto t = tiny_table();
  auto x = encode(t);
  bool dropped = false;
  for (const auto& d : x.spec.dropped)
    if (d == "flow_week_day") dropped = true;
  CHECK(dropped);
  for (const auto& c : x.spec.columns) CHECK(c.feature != "flow_week_day");
}

TEST_CASE("every kept training column has unit sample variance") {
  auto t = tiny_table();
  auto x = encode(t);
  for (std::size_t j = 0; j < x.cols; ++j) {
    double mean = 0;
    for (std::size_t r = 0; r < x.rows; ++r) mean += x.row(r)[j];
    mean /= static_cast<double>(x.rows);
    double var = 0;
    for (std::size_t r = 0; r < x.rows; ++r) {
      double d = x.row(r)[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(x.rows - 1);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("encoding the training rows again reproduces the matrix") {
  auto t = tiny_table();
  auto x = encode(t);
  auto x2 = encode_with(x.spec, t);
  REQUIRE(x2.data.size() == x.data.size());
  for (std::size_t i = 0; i < x.data.size(); ++i)
    CHECK(x2.data[i] == doctest::Approx(x.data[i]).epsilon(1e-12));
}

TEST_CASE("empty table cannot be encoded") {
  feature_table t;
  t.catalog_hash = build_catalog().hash();
  CHECK_THROWS_AS(encode(t), error);
}

TEST_CASE("k-means separates two well-separated blobs") {
  rng gen(5);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 30; ++i)
    rows.push_back({gen.uniform(-0.5, 0.5), gen.uniform(-0.5, 0.5)});
  for (int i = 0; i < 30; ++i)
    rows.push_back({10 + gen.uniform(-0.5, 0.5), gen.uniform(-0.5, 0.5)});
  auto x = matrix_of(rows);
  auto model = kmeans_fit(x, 2, 1234);
  // centroids within 0.01 of the blob means (converged k-means centroids
  // are the exact means of the assigned points)
  double mean0 = 0, mean1 = 0;
  for (int i = 0; i < 30; ++i) mean0 += rows[static_cast<std::size_t>(i)][0] / 30.0;
  for (int i = 30; i < 60; ++i) mean1 += rows[static_cast<std::size_t>(i)][0] / 30.0;
  double lo = std::min(model.centroid(0)[0], model.centroid(1)[0]);
  double hi = std::max(model.centroid(0)[0], model.centroid(1)[0]);
  CHECK(std::abs(lo - mean0) < 0.01);
  CHECK(std::abs(hi - mean1) < 0.01);
  auto labels = assign_all(model, x);
  std::set<std::uint32_t> first(labels.begin(), labels.begin() + 30);
  std::set<std::uint32_t> second(labels.begin() + 30, labels.end());
  CHECK(first.size() == 1);
  CHECK(second.size() == 1);
  CHECK(*first.begin() != *second.begin());
}

TEST_CASE("k equal to the row count drives inertia to zero") {
  auto x = matrix_of({{0, 0}, {1, 0}, {2, 5}, {8, 8}});
  auto model = kmeans_fit(x, 4, 9);
  CHECK(model.training_inertia == doctest::Approx(0.0));
}

TEST_CASE("same data and seed fit identical centroids") {
  rng gen(77);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 40; ++i) rows.push_back({gen.uniform(0, 4), gen.uniform(0, 4)});
  auto x = matrix_of(rows);
  auto a = kmeans_fit(x, 5, 42);
  auto b = kmeans_fit(x, 5, 42);
  CHECK(a.centroids == b.centroids);
  CHECK(a.training_inertia == b.training_inertia);
}

TEST_CASE("fitted inertia never beats the exhaustive optimum, and matches from optimal start") {
  rng gen(3);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::vector<double>> rows;
    std::size_t n = 5 + gen.below(4);  // 5..8 points
    for (std::size_t i = 0; i < n; ++i) rows.push_back({gen.uniform(0, 10), gen.uniform(0, 10)});
    auto x = matrix_of(rows);
    std::size_t k = 2 + gen.below(2);  // 2..3
    double optimum = brute_force_optimum(x, k);
    auto fit = kmeans_fit(x, k, trial);
    CHECK(fit.training_inertia >= optimum - 1e-9);
  }
  // From the optimal centroids, Lloyd's stays at the optimum.
  auto x = matrix_of({{0, 0}, {0, 1}, {10, 0}, {10, 1}, {20, 0}, {20, 1}});
  double optimum = brute_force_optimum(x, 3);
  std::vector<double> init{0, 0.5, 10, 0.5, 20, 0.5};
  auto fit = kmeans_fit(x, 3, 0, 100, &init);
  CHECK(fit.training_inertia == doctest::Approx(optimum).epsilon(1e-12));
}

TEST_CASE("assigning the training rows is a fixed point of the fit") {
  rng gen(23);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 50; ++i) rows.push_back({gen.uniform(0, 6), gen.uniform(0, 6)});
  auto x = matrix_of(rows);
  auto model = kmeans_fit(x, 5, 91);
  auto labels = assign_all(model, x);
  // recomputing each centroid from its assigned rows reproduces the model
  std::vector<double> sums(5 * x.cols, 0.0);
  std::vector<std::size_t> counts(5, 0);
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t j = 0; j < x.cols; ++j) sums[labels[r] * x.cols + j] += x.row(r)[j];
    ++counts[labels[r]];
  }
  for (std::size_t c = 0; c < 5; ++c) {
    if (counts[c] == 0) continue;
    for (std::size_t j = 0; j < x.cols; ++j) {
      CHECK(model.centroid(c)[j] ==
            doctest::Approx(sums[c * x.cols + j] / static_cast<double>(counts[c])).epsilon(1e-9));
    }
  }
}

TEST_CASE("rows below k are an insufficient-data error") {
  auto x = matrix_of({{0, 0}, {1, 1}});
  CHECK_THROWS_AS(kmeans_fit(x, 3, 1), error);
}

TEST_CASE("assign matches a brute-force nearest-centroid scan, ties to the lowest id") {
  rng gen(11);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 25; ++i) rows.push_back({gen.uniform(0, 9), gen.uniform(0, 9)});
  auto x = matrix_of(rows);
  auto model = kmeans_fit(x, 4, 8);
  for (std::size_t r = 0; r < x.rows; ++r) {
    auto row = x.row(r);
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_c = 0;
    for (std::size_t c = 0; c < model.k; ++c) {
      double d = dist(row, model.centroid(c));
      if (d < best - 1e-15) {
        best = d;
        best_c = c;
      }
    }
    CHECK(assign(model, row) == best_c);
  }
  // exact tie between centroids 1 and 4 would pick 1; construct a 2-centroid tie
  cluster_model m;
  m.k = 2;
  m.dim = 1;
  m.centroids = {-1.0, 1.0};
  CHECK(assign(m, std::vector<double>{0.0}) == 0);
  // row equal to a centroid assigns there
  CHECK(assign(m, std::vector<double>{1.0}) == 1);
}

TEST_CASE("dimension mismatch is an encoder-mismatch error") {
  cluster_model m;
  m.k = 1;
  m.dim = 2;
  m.centroids = {0, 0};
  CHECK_THROWS_AS(assign(m, std::vector<double>{1.0}), error);
}

TEST_CASE("silhouette on the two-pair instance matches the hand computation") {
  auto x = matrix_of({{0, 0}, {0, 1}, {10, 0}, {10, 1}});
  std::vector<std::uint32_t> labels{0, 0, 1, 1};
  auto s = silhouette(x, labels);
  // a = 1; b = (10 + sqrt(101)) / 2 for every point by symmetry
  double b = (10.0 + std::sqrt(101.0)) / 2.0;
  double expected = (b - 1.0) / b;
  CHECK(s.mean == doctest::Approx(expected).epsilon(1e-12));
  CHECK(s.mean == doctest::Approx(0.9).epsilon(1e-3));
  auto oracle = silhouette_oracle(x, labels);
  for (std::size_t i = 0; i < labels.size(); ++i)
    CHECK(s.scores[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
}

TEST_CASE("a point assigned to the wrong blob scores negative") {
  auto x = matrix_of({{0, 0}, {0, 1}, {10, 0}, {10, 1}, {0.2, 0.5}});
  std::vector<std::uint32_t> labels{0, 0, 1, 1, 1};  // last point mislabeled
  auto s = silhouette(x, labels);
  CHECK(s.scores[4] < 0);
}

TEST_CASE("identical points in two clusters score zero by convention") {
  auto x = matrix_of({{1, 1}, {1, 1}, {1, 1}, {1, 1}});
  std::vector<std::uint32_t> labels{0, 0, 1, 1};
  auto s = silhouette(x, labels);
  CHECK(s.mean == doctest::Approx(0.0));
}

TEST_CASE("silhouette on random labelings matches the oracle") {
  rng gen(500);
  for (int trial = 0; trial < 8; ++trial) {
    std::vector<std::vector<double>> rows;
    std::size_t n = 10 + gen.below(20);
    for (std::size_t i = 0; i < n; ++i) rows.push_back({gen.uniform(0, 5), gen.uniform(0, 5)});
    auto x = matrix_of(rows);
    std::vector<std::uint32_t> labels(n);
    for (auto& l : labels) l = static_cast<std::uint32_t>(gen.below(3));
    std::set<std::uint32_t> present(labels.begin(), labels.end());
    if (present.size() < 2) labels[0] = (labels[0] + 1) % 3;
    auto s = silhouette(x, labels);
    auto oracle = silhouette_oracle(x, labels);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(s.scores[i] == doctest::Approx(oracle[i]).epsilon(1e-9));
      CHECK(s.scores[i] >= -1.0 - 1e-12);
      CHECK(s.scores[i] <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("single cluster silhouette is undefined") {
  auto x = matrix_of({{0, 0}, {1, 1}});
  std::vector<std::uint32_t> labels{0, 0};
  try {
    silhouette(x, labels);
    FAIL("expected undefined-silhouette");
  } catch (const error& e) {
    CHECK(e.code() == errc::undefined_silhouette);
  }
}

TEST_CASE("inertia is non-increasing over the final fit and labels are a partition") {
  rng gen(55);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 60; ++i) rows.push_back({gen.uniform(0, 8), gen.uniform(0, 8)});
  auto x = matrix_of(rows);
  // run with increasing iteration caps: inertia must never go up
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t it = 1; it <= 12; ++it) {
    auto m = kmeans_fit(x, 4, 2024, it);
    CHECK(m.training_inertia <= prev + 1e-9);
    prev = m.training_inertia;
    auto labels = assign_all(m, x);
    for (auto l : labels) CHECK(l < 4);
  }
}

TEST_CASE("cluster model round-trips through its json document") {
  rng gen(6);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 15; ++i) rows.push_back({gen.uniform(0, 3), gen.uniform(0, 3), gen.uniform(0, 3)});
  auto x = matrix_of(rows);
  x.spec.catalog_hash = 0xabcdef;
  auto model = kmeans_fit(x, 3, 77);
  auto path = std::filesystem::temp_directory_path() / "tgen_cluster_model.json";
  save_cluster_model(model, path);
  auto loaded = load_cluster_model(path);
  CHECK(loaded.k == model.k);
  CHECK(loaded.dim == model.dim);
  CHECK(loaded.centroids == model.centroids);
  CHECK(loaded.training_inertia == model.training_inertia);
  CHECK(loaded.catalog_hash == model.catalog_hash);
  CHECK(loaded.spec.columns.size() == model.spec.columns.size());
}

TEST_CASE("assign_table refuses a table with a different catalog hash") {
  auto t = tiny_table();
  auto x = encode(t);
  auto model = kmeans_fit(x, 2, 3);
  model.catalog_hash ^= 1;
  try {
    assign_table(model, t);
    FAIL("expected stage-mismatch");
  } catch (const error& e) {
    CHECK(e.code() == errc::stage_mismatch);
  }
}
