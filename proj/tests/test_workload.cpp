#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "blockmeter/workload.hpp"

#include <set>

using namespace blockmeter;
using namespace blockmeter::workload;

namespace {

TransactionRequest request_for(const std::string& user) {
  return TransactionRequest{"tx-9", user, "update", {"CAR9", "Honda", "Civic", "Ana"}, {9, 9}, "simnet-fabric"};
}

}  // namespace

TEST_CASE("create_users") {
  CHECK(create_users(0, 42).empty());
  auto a = create_users(3, 42);
  auto b = create_users(3, 42);
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a[i].user_id == "user-" + std::to_string(i));
    CHECK(a[i].public_key == b[i].public_key);
    CHECK(a[i].private_key == b[i].private_key);
    CHECK(a[i].public_key.size() == 32);
  }
  CHECK(a[0].public_key != a[1].public_key);
}

TEST_CASE("different seeds give disjoint keys") {
  auto s42 = create_users(2, 42);
  auto s43 = create_users(2, 43);
  std::set<Bytes> keys;
  for (const auto& u : s42) keys.insert(u.public_key);
  for (const auto& u : s43) keys.insert(u.public_key);
  CHECK(keys.size() == 4);
}

TEST_CASE("generate_payload profiles") {
  const auto data = WorkloadProfile::defaults_for(WorkloadKind::data_heavy);
  const auto p = generate_payload(data, 42, 0);
  CHECK(p.function == "put");
  CHECK(p.payload.size() == 10240);

  const auto simple = WorkloadProfile::defaults_for(WorkloadKind::simple);
  CHECK(generate_payload(simple, 42, 0).function == "create");
  CHECK(generate_payload(simple, 42, 1).function == "read");
  CHECK(generate_payload(simple, 42, 2).function == "update");
  CHECK(generate_payload(simple, 42, 3).function == "create");
  CHECK(generate_payload(simple, 42, 0).args.size() == 4);
  CHECK(generate_payload(simple, 42, 0).payload.empty());

  const auto cpu = WorkloadProfile::defaults_for(WorkloadKind::cpu_heavy);
  const auto c = generate_payload(cpu, 42, 5);
  CHECK(c.function == "compute");
  CHECK(c.args == std::vector<std::string>{"100000"});
  CHECK(!c.payload.empty());
  CHECK(c.payload.size() <= 64);
}

TEST_CASE("property: generate_payload is a pure function of (profile, seed, index)") {
  for (auto kind : {WorkloadKind::simple, WorkloadKind::data_heavy, WorkloadKind::cpu_heavy}) {
    const auto prof = WorkloadProfile::defaults_for(kind);
    for (std::uint64_t i = 0; i < 50; ++i) {
      CHECK(generate_payload(prof, 7, i) == generate_payload(prof, 7, i));
    }
  }
  const auto data = WorkloadProfile::defaults_for(WorkloadKind::data_heavy);
  CHECK(generate_payload(data, 7, 1).payload != generate_payload(data, 7, 2).payload);
  CHECK(generate_payload(data, 7, 1).payload != generate_payload(data, 8, 1).payload);
}

TEST_CASE("property: data_heavy length equals payload_bytes for every index") {
  for (std::uint64_t bytes : {0ULL, 1ULL, 777ULL, 10240ULL, 65536ULL}) {
    WorkloadProfile p{WorkloadKind::data_heavy, bytes, 0};
    for (std::uint64_t i = 0; i < 20; ++i) REQUIRE(generate_payload(p, 1, i).payload.size() == bytes);
  }
}

TEST_CASE("sign and verify") {
  auto users = create_users(2, 42);
  auto s = sign(users[0], request_for("user-0"));
  CHECK(verify(s));
  CHECK(s.signer_public_key == users[0].public_key);
  CHECK(s.signature.size() == 64);

  SUBCASE("payload byte mutated") {
    s.request.payload[0] ^= 1;
    CHECK_FALSE(verify(s));
  }
  SUBCASE("signature zeroed") {
    std::fill(s.signature.begin(), s.signature.end(), 0);
    CHECK_FALSE(verify(s));
  }
  SUBCASE("public key swapped") {
    s.signer_public_key = users[1].public_key;
    CHECK_FALSE(verify(s));
  }
  SUBCASE("malformed material") {
    s.signature.resize(10);
    CHECK_FALSE(verify(s));
    s.signer_public_key.clear();
    CHECK_FALSE(verify(s));
  }
}

TEST_CASE("distinct users sign the same request differently") {
  auto users = create_users(2, 42);
  const auto r = request_for("user-0");
  CHECK(sign(users[0], r).signature != sign(users[1], r).signature);
  // deterministic scheme: same key, same bytes, same signature
  CHECK(sign(users[0], r).signature == sign(users[0], r).signature);
}

TEST_CASE("corrupt private key cannot sign") {
  auto users = create_users(1, 42);
  auto u = users[0];
  u.private_key[3] ^= 0x40;
  CHECK_THROWS_AS(sign(u, request_for("user-0")), Error);
  u.private_key.resize(5);
  CHECK_THROWS_AS(sign(u, request_for("user-0")), Error);
}

TEST_CASE("property: any single-field mutation breaks the signature") {
  auto users = create_users(1, 3);
  const auto base = sign(users[0], request_for("user-0"));
  std::vector<std::function<void(TransactionRequest&)>> mutations = {
      [](auto& r) { r.tx_id += "x"; },           [](auto& r) { r.user_id = "user-1"; },
      [](auto& r) { r.function = "read"; },      [](auto& r) { r.args.push_back(""); },
      [](auto& r) { r.args[0][0] ^= 1; },        [](auto& r) { r.payload.push_back(0); },
      [](auto& r) { r.payload.clear(); },        [](auto& r) { r.backend_id = "simnet-sawtooth"; },
  };
  for (std::size_t i = 0; i < mutations.size(); ++i) {
    auto s = base;
    mutations[i](s.request);
    CAPTURE(i);
    CHECK_FALSE(verify(s));
  }
}
