#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tgen {

inline constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ull;

constexpr std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h = kFnvOffset);

// Stage seeds are derived from the master seed and the stage name so that a
// single config seed pins the whole pipeline.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stage);

std::string hex64(std::uint64_t v);

// FNV-1a over a whole file, for artifact digests.
std::uint64_t file_digest(const std::string& path);

// Deterministic sampling. std::uniform_int_distribution, std::shuffle and
// std::sample are implementation-defined, so everything random goes through
// this wrapper.
class rng {
public:
  explicit rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform integer in [0, n) via rejection sampling.
  std::uint64_t below(std::uint64_t n);

  // Uniform double in [0, 1) with 53 random bits.
  double unit();

  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  // Index sampled proportionally to non-negative weights (CDF scan).
  std::size_t categorical(std::span<const double> weights);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::mt19937_64 gen_;
};

// Shortest round-trip formatting; parse accepts exactly what format emits.
std::string format_double(double v);
double parse_double(std::string_view s);

std::vector<std::string> split_csv_line(std::string_view line);
// Values must not contain commas, quotes or newlines (all our tokens are
// plain identifiers / numbers); throws errc::internal otherwise.
std::string join_csv(std::span<const std::string> fields);

}  // namespace tgen
