#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tgen/flow.hpp"
#include "tgen/pcap.hpp"

namespace tgen {

// Deterministic synthetic corpus with three planted activity archetypes:
//   0: DNS query burst      (UDP client -> server:53)
//   1: HTTP request side    (TCP client -> server:80)
//   2: HTTP response side   (TCP server:80 -> client)
// arranged with a planted story structure per client/server pair (a DNS
// lookup is followed by an HTTP session with probability 0.9). Ground truth
// labels and the planted transition matrix are returned for tests.
struct fixture_spec {
  std::size_t pair_count = 20;
  double duration_s = 600.0;
  std::uint64_t seed = 1;
};

struct planted_flow {
  flow_key key;
  timestamp first_time;
  int archetype = 0;
};

struct fixture_truth {
  std::vector<planted_flow> flows;  // in first_time order
  std::size_t packet_count = 0;
  // planted per-pair story transitions: dns->http 0.9, dns->dns 0.1,
  // http->dns 0.65, http->end 0.35
  double p_dns_to_http = 0.9;
  double p_http_to_dns = 0.65;
};

fixture_truth make_fixture_corpus(const fixture_spec& spec, const std::filesystem::path& out_pcap);

}  // namespace tgen
