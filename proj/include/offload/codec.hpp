// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace offload {

class Rng;

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

std::string base64_encode(std::string_view data);
/// Throws Error(parse) on malformed input.
std::string base64_decode(std::string_view text);

/// RFC-4122 version-4 GUID rendered as lowercase hex with dashes. The random
/// bits come from `rng`, so simulations mint reproducible ids.
std::string make_guid(Rng& rng);

/// Same, seeded from the OS entropy source. For live processes.
std::string make_random_guid();

/// Version-4-shaped GUID derived from a hash of `name`; equal names give
/// equal GUIDs. Used for messages whose duplicates must be recognizable.
std::string derived_guid(std::string_view name);

bool is_guid(std::string_view text);

}  // namespace offload
