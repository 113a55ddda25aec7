#include "tgen/util.hpp"

#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>

#include "tgen/errors.hpp"

namespace tgen {

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h) {
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= kFnvPrime;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view stage) {
  std::array<std::uint8_t, 8> le{};
  for (int i = 0; i < 8; ++i) le[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(master >> (8 * i));
  std::uint64_t h = fnv1a64(std::span<const std::uint8_t>(le.data(), le.size()));
  return fnv1a64(stage, h);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error(errc::io, "cannot open " + path);
  std::uint64_t h = kFnvOffset;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    auto n = static_cast<std::size_t>(in.gcount());
    h = fnv1a64(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(buf), n), h);
    if (!in) break;
  }
  return h;
}

std::uint64_t rng::below(std::uint64_t n) {
  if (n == 0) throw error(errc::internal, "rng::below(0)");
  if (n == 1) return 0;
  std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do {
    v = gen_();
  } while (v >= limit);
  return v % n;
}

double rng::unit() {
  return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
}

std::size_t rng::categorical(std::span<const double> weights) {
  double total = 0;
  for (double w : weights) total += w;
  if (!(total > 0)) throw error(errc::internal, "categorical with zero total weight");
  double u = unit() * total;
  double acc = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  // Fall out only through float round-off; return last positive weight.
  for (std::size_t i = weights.size(); i > 0; --i) {
    if (weights[i - 1] > 0) return i - 1;
  }
  return weights.size() - 1;
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw error(errc::internal, "to_chars failed");
  return std::string(buf, end);
}

double parse_double(std::string_view s) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw error(errc::bad_config, "bad numeric field: " + std::string(s));
  return v;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string join_csv(std::span<const std::string> fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const std::string& f = fields[i];
    if (f.find_first_of(",\"\n\r") != std::string::npos)
      throw error(errc::internal, "csv field contains a delimiter: " + f);
    if (i) out += ',';
    out += f;
  }
  return out;
}

}  // namespace tgen
