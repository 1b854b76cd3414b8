// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "offload/codec.hpp"
#include "offload/envelope.hpp"
#include "offload/errors.hpp"
#include "offload/rng.hpp"

using namespace offload;

namespace {

std::string random_text(Rng& rng) {
  static const std::string alphabet =
      "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 ._-/\"\\\n\t";
  std::string s;
  const auto len = rng.below(24);
  for (std::uint64_t i = 0; i < len; ++i) s += alphabet[rng.below(alphabet.size())];
  if (rng.below(10) == 0) s += "\xc3\xa9\xe2\x82\xac";  // non-ASCII UTF-8
  return s;
}

json random_value(Rng& rng, int depth) {
  switch (rng.below(depth > 2 ? 5 : 7)) {
    case 0: return nullptr;
    case 1: return rng.below(2) == 1;
    case 2: return static_cast<std::int64_t>(rng.next_u64() >> 12) - (std::int64_t{1} << 51);
    case 3: return rng.uniform(-1e6, 1e6);
    case 4: return random_text(rng);
    case 5: {
      json a = json::array();
      for (std::uint64_t i = 0, n = rng.below(4); i < n; ++i) a.push_back(random_value(rng, depth + 1));
      return a;
    }
    default: {
      json o = json::object();
      for (std::uint64_t i = 0, n = rng.below(4); i < n; ++i) o[random_text(rng)] = random_value(rng, depth + 1);
      return o;
    }
  }
}

Envelope random_envelope(Rng& rng) {
  const auto& types = registered_message_types();
  auto it = types.begin();
  std::advance(it, static_cast<long>(rng.below(types.size())));
  Envelope e;
  e.msg_id = make_guid(rng);
  e.msg_type = *it;
  e.sender = random_text(rng);
  if (rng.below(2) == 1) e.reply_to = random_text(rng);
  e.body = json::object();
  for (std::uint64_t i = 0, n = rng.below(5); i < n; ++i) e.body[random_text(rng)] = random_value(rng, 0);
  return e;
}

}  // namespace

TEST_CASE("registered message types", "[envelope]") {
  CHECK(registered_message_types().size() == 20);
  CHECK(registered_message_types().contains("changePublish"));
}

TEST_CASE("encode is canonical", "[envelope]") {
  Envelope e{"6f1c2e1a-8a57-4d6e-9d43-0e9b3f0b9a11", "heartbeat", "worker-1", std::nullopt,
             json{{"z", 1}, {"a", {{"y", 2}, {"b", 3}}}}};
  CHECK(encode(e) ==
        R"({"body":{"a":{"b":3,"y":2},"z":1},"msg_id":"6f1c2e1a-8a57-4d6e-9d43-0e9b3f0b9a11","msg_type":"heartbeat","sender":"worker-1"})");
  e.reply_to = "tmp.gen-1";
  CHECK(encode(e).find(R"("reply_to":"tmp.gen-1")") != std::string::npos);
}

TEST_CASE("encode rejects unregistered types", "[envelope]") {
  Envelope e{"6f1c2e1a-8a57-4d6e-9d43-0e9b3f0b9a11", "bogus", "n", std::nullopt, json::object()};
  try {
    encode(e);
    FAIL("expected schema error");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::schema);
  }
}

TEST_CASE("round trip property", "[envelope][property]") {
  Rng rng(1234);
  for (int i = 0; i < 10000; ++i) {
    const Envelope e = random_envelope(rng);
    const std::string bytes = encode(e);
    const Envelope back = decode(bytes);
    REQUIRE(back == e);
    REQUIRE(encode(back) == bytes);
  }
}

TEST_CASE("decode reports the offending field", "[envelope]") {
  auto code_of = [](const std::string& text) {
    try {
      decode(text);
    } catch (const Error& err) {
      return std::make_pair(err.code(), std::string(err.what()));
    }
    return std::make_pair(ErrorCode::domain, std::string("no error"));
  };
  Rng rng(7);
  const std::string good = encode(random_envelope(rng));
  for (std::size_t cut = 0; cut < good.size(); ++cut) {
    CHECK(code_of(good.substr(0, cut)).first == ErrorCode::parse);
  }
  auto [c1, w1] = code_of(R"({"body":{},"msg_type":"heartbeat","sender":"x"})");
  CHECK(c1 == ErrorCode::parse);
  CHECK(w1.find("msg_id") != std::string::npos);
  auto [c2, w2] = code_of(R"({"body":{},"msg_id":"x","msg_type":"heartbeat","sender":"x"})");
  CHECK(c2 == ErrorCode::parse);
  CHECK(w2.find("msg_id") != std::string::npos);
  auto [c3, w3] = code_of(
      R"({"body":[],"msg_id":"6f1c2e1a-8a57-4d6e-9d43-0e9b3f0b9a11","msg_type":"heartbeat","sender":"x"})");
  CHECK(c3 == ErrorCode::parse);
  CHECK(w3.find("body") != std::string::npos);
  auto [c4, w4] = code_of(
      R"({"body":{},"msg_id":"6f1c2e1a-8a57-4d6e-9d43-0e9b3f0b9a11","msg_type":"nope","sender":"x"})");
  CHECK(c4 == ErrorCode::parse);
  CHECK(w4.find("msg_type") != std::string::npos);
  auto [c5, w5] = code_of(
      R"({"body":{},"extra":1,"msg_id":"6f1c2e1a-8a57-4d6e-9d43-0e9b3f0b9a11","msg_type":"heartbeat","sender":"x"})");
  CHECK(c5 == ErrorCode::parse);
  CHECK(w5.find("extra") != std::string::npos);
}

TEST_CASE("routing keys", "[envelope]") {
  CHECK(RoutingKey::parse("clientRegister").kind == RoutingKey::Kind::client_register);
  CHECK(RoutingKey::parse("workerRegister").kind == RoutingKey::Kind::worker_register);
  auto k = RoutingKey::parse("orchA.clientConnect");
  CHECK(k.kind == RoutingKey::Kind::client_connect);
  CHECK(k.orchestrator == "orchA");
  k = RoutingKey::parse("orchA.workerConnect");
  CHECK(k.kind == RoutingKey::Kind::worker_connect);
  k = RoutingKey::parse("orchA.c-17");
  CHECK(k.kind == RoutingKey::Kind::orchestrator_principal);
  CHECK(k.orchestrator == "orchA");
  CHECK(k.principal == "c-17");
  k = RoutingKey::parse("c-17");
  CHECK(k.kind == RoutingKey::Kind::principal);
  CHECK(k.principal == "c-17");
  for (const char* bad : {"", "a..b", ".a", "a.", "a.b.c", "a*", "#", "a b"}) {
    INFO(bad);
    CHECK_THROWS_AS(RoutingKey::parse(bad), Error);
  }
  for (const std::string& key :
       {keys::client_register(), keys::worker_register(), keys::client_connect("o1"),
        keys::worker_connect("o1"), keys::to_orchestrator("o1", "w-3"), keys::to_principal("w-3")}) {
    CHECK(RoutingKey::parse(key).str() == key);
  }
}

TEST_CASE("codec helpers", "[envelope]") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(base64_encode("") == "");
  CHECK(base64_encode("f") == "Zg==");
  CHECK(base64_encode("fo") == "Zm8=");
  CHECK(base64_encode("foobar") == "Zm9vYmFy");
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    std::string s;
    for (std::uint64_t j = 0, n = rng.below(64); j < n; ++j) s += static_cast<char>(rng.below(256));
    CHECK(base64_decode(base64_encode(s)) == s);
  }
  CHECK_THROWS_AS(base64_decode("@@@@"), Error);
  Rng a(5), b(5);
  CHECK(make_guid(a) == make_guid(b));
  CHECK(is_guid(make_guid(a)));
  CHECK_FALSE(is_guid("not-a-guid"));
}
