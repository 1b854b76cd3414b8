// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

// Connection flows shared by clients and workers, plus queue naming.
//
// Connect (client shown; workers use the worker exchange, workerRegister and
// "worker.{id}"):
//   1. declare a temporary reply queue, bind it to the client exchange under
//      its own name and consume it;
//   2. publish clientRegister{username} (reply_to = temp queue) to the
//      orchestrator exchange;
//   3. receive sessionGrant{principal_id, orchestrator, blob_endpoint};
//   4. delete the temporary queue;
//   5. declare "client.{id}" and bind it to the client exchange under "{id}";
//   6. publish "{orchestrator}.clientConnect".

#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "offload/errors.hpp"
#include "offload/rng.hpp"
#include "offload/runtime.hpp"

namespace offload::protocol {

inline constexpr double kSessionTimeout = 5.0;

struct SessionGrant {
  std::string principal_id;
  std::string orchestrator;
  std::string blob_endpoint;
};

enum class Principal { client, worker };

std::string principal_queue(Principal kind, const std::string& id);
std::string principal_exchange(Principal kind);

Envelope make_envelope(Rng& rng, std::string_view type, const std::string& sender, json body,
                       std::optional<std::string> reply_to = std::nullopt);

struct ConnectOptions {
  Principal kind = Principal::client;
  /// Username for clients; saved worker id (possibly empty) for workers.
  std::string identity;
  std::string sender;
  double timeout_s = kSessionTimeout;
  /// Workers drop assignments addressed to a previous incarnation.
  bool purge = false;
};

using ConnectDone = std::function<void(std::optional<SessionGrant>, std::optional<Error>)>;

/// Runs the connect flow on `exec`/`channel`. `done` fires exactly once,
/// with Error(timeout) if no sessionGrant arrives in time.
void connect(Executor& exec, BrokerChannel& channel, Rng& rng, ConnectOptions options,
             ConnectDone done);

}  // namespace offload::protocol
