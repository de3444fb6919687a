#pragma once

#include "blockmeter/core.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace blockmeter::workload {

/// Name of the signature scheme recorded in run metadata.
inline constexpr std::string_view kSignatureScheme = "ed25519";

/// Accounts "user-0" .. "user-{n-1}".
///
/// Each key pair is an Ed25519 pair whose 32-byte seed is the first 32 bytes
/// of Rng(seed, streams::kUserKey, index). The same (seed, index) always
/// yields the same key material.
std::vector<UserAccount> create_users(std::size_t n, std::uint64_t seed);

struct Payload {
  std::string function;
  std::vector<std::string> args;
  Bytes payload;

  bool operator==(const Payload&) const = default;
};

/// Pure function of (profile, seed, index).
///
///  - simple: create/read/update round-robin over a car record
///    (id, make, model, owner) with an empty payload
///  - data_heavy: "put" with exactly payload_bytes pseudorandom bytes
///  - cpu_heavy: "compute" with the iteration count as the only argument and
///    an 8-byte operand seed as payload
Payload generate_payload(const WorkloadProfile& profile, std::uint64_t seed, std::uint64_t index);

/// Detached signature over canonical_bytes(request). Throws Error when the
/// private key is malformed or does not match its embedded public half.
SignedTransaction sign(const UserAccount& user, TransactionRequest request);

/// True iff the signature verifies; false on any malformed material.
bool verify(const SignedTransaction& signed_tx);

}  // namespace blockmeter::workload
