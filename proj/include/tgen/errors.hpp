#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tgen {

enum class errc {
  unsupported_format,
  truncated_capture,
  invalid_timestamp,
  io,
  empty_input,
  insufficient_data,
  encoder_mismatch,
  undefined_silhouette,
  empty_model,
  unknown_token,
  generation_config,
  runaway_sequence,
  stage_mismatch,
  bad_config,
  internal,
};

class error : public std::runtime_error {
public:
  error(errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  errc code() const { return code_; }

private:
  errc code_;
};

// Carries the number of packets successfully read before the file ran out.
class truncated_capture_error : public error {
public:
  truncated_capture_error(const std::string& what, std::uint64_t packets_read)
      : error(errc::truncated_capture, what), packets_read_(packets_read) {}
  std::uint64_t packets_read() const { return packets_read_; }

private:
  std::uint64_t packets_read_;
};

class runaway_sequence_error : public error {
public:
  runaway_sequence_error(const std::string& what, std::uint64_t seed, std::size_t sequence_index)
      : error(errc::runaway_sequence, what), seed_(seed), sequence_index_(sequence_index) {}
  std::uint64_t seed() const { return seed_; }
  std::size_t sequence_index() const { return sequence_index_; }

private:
  std::uint64_t seed_;
  std::size_t sequence_index_;
};

}  // namespace tgen
