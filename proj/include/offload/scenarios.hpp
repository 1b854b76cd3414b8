// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

// Randomized-schedule checks of the replication and broker layers. Each run
// is driven by one seed: message latencies are jittered so every seed
// explores a different interleaving.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace offload::simlab {

struct StormReport {
  std::size_t requested = 0;
  std::size_t completed = 0;  // done callbacks fired
  std::vector<std::string> digests;
  std::vector<std::vector<std::string>> logs;  // applied guids per replica
  bool identical = false;
};

/// `replicas` replicas started together; `changes` request_change calls are
/// issued from random replicas at random instants within a few
/// milliseconds. Runs until every request completed (or a virtual-time
/// limit) and compares stores and applied sequences.
StormReport replication_storm(std::uint64_t seed, int replicas = 3, int changes = 100);

struct FanoutReport {
  std::size_t published = 0;
  std::size_t consumers = 0;
  std::size_t redeliveries = 0;
  std::size_t reconnects = 0;
  bool complete = false;   // every consumer acked every message
  bool identical = false;  // same order on every consumer
  bool ordered = false;    // that order is the exchange sequence
};

/// Publishers on separate connections publish to one fanout exchange;
/// consumers randomly ack, nack or drop their connection.
FanoutReport fanout_order(std::uint64_t seed, int publishers = 4, int consumers = 3,
                          int messages = 100);

struct RedeliveryReport {
  std::size_t published = 0;
  std::size_t deliveries = 0;
  std::size_t redeliveries = 0;
  bool bit_exact = false;      // every delivery encodes to the published bytes
  bool exactly_once_ack = false;
  bool flags_correct = false;  // redelivered set exactly on repeats
};

RedeliveryReport redelivery_check(std::uint64_t seed, int messages = 200);

}  // namespace offload::simlab
