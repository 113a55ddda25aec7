#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tgen/features.hpp"

namespace tgen {

// One encoded column: either a scaled numeric feature or one one-hot category
// of a nominal feature. scale divides the raw value; impute replaces ABSENT
// numerics before scaling.
struct encoder_column {
  std::string feature;
  std::string category;  // empty for numeric columns
  double impute = 0.0;
  double scale = 1.0;
};

struct encoder_spec {
  std::uint64_t catalog_hash = 0;
  std::vector<encoder_column> columns;
  std::vector<std::string> dropped;  // zero-variance features/categories
};

struct encoded_matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major
  encoder_spec spec;

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data).subspan(r * cols, cols);
  }
};

// Fits the encoder on a training table: one-hot nominals, mean-impute ABSENT
// numerics, scale every kept column to unit sample variance.
encoded_matrix encode(const feature_table& table);

// Applies a fitted encoder to new rows; unseen nominal values map to all
// zeros.
std::vector<double> encode_row(const encoder_spec& spec, const feature_vector& row,
                               const feature_catalog& catalog);
encoded_matrix encode_with(const encoder_spec& spec, const feature_table& table);

struct cluster_model {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  double training_inertia = 0.0;
  std::uint64_t catalog_hash = 0;
  encoder_spec spec;
  std::vector<double> centroids;  // k x dim, row-major

  std::span<const double> centroid(std::size_t i) const {
    return std::span<const double>(centroids).subspan(i * dim, dim);
  }
};

enum class kmeans_init : std::uint8_t {
  random_rows,  // k distinct training rows, uniform
  plus_plus,    // D^2-weighted seeding
};

// Lloyd's iterations with Euclidean distance; init draws rows with the given
// seed unless explicit initial centroids are supplied. Empty clusters are
// re-seeded to the point farthest from its assigned centroid. With
// restarts > 1 the fit runs that many seeded inits and keeps the lowest
// inertia.
cluster_model kmeans_fit(const encoded_matrix& x, std::size_t k, std::uint64_t seed,
                         std::size_t max_iter = 100,
                         const std::vector<double>* initial_centroids = nullptr,
                         kmeans_init init = kmeans_init::random_rows, std::size_t restarts = 1);

std::size_t assign(const cluster_model& model, std::span<const double> row);
std::vector<std::uint32_t> assign_all(const cluster_model& model, const encoded_matrix& x);
std::vector<std::uint32_t> assign_table(const cluster_model& model, const feature_table& table);

struct silhouette_result {
  double mean = 0.0;
  std::vector<double> scores;
};

silhouette_result silhouette(const encoded_matrix& x, std::span<const std::uint32_t> labels);

void save_cluster_model(const cluster_model& model, const std::filesystem::path& path);
cluster_model load_cluster_model(const std::filesystem::path& path);

}  // namespace tgen
