#include "blockmeter/workload.hpp"

#include <sodium.h>

#include <fmt/format.h>

#include <algorithm>
#include <array>

namespace blockmeter::workload {

namespace {

constexpr std::array<std::string_view, 3> kSimpleFunctions = {"create", "read", "update"};
constexpr std::array<std::string_view, 8> kMakes = {"Toyota", "Ford",    "Honda", "Tesla",
                                                    "Audi",   "Hyundai", "Fiat",  "Volvo"};

std::string short_token(Rng& rng, std::size_t len) {
  static constexpr char kAlphabet[] = "abcdefghijklmnopqrstuvwxyz0123456789";
  std::string out(len, ' ');
  for (auto& c : out) {
    c = kAlphabet[rng.below(sizeof(kAlphabet) - 1)];
  }
  return out;
}

}  // namespace

std::vector<UserAccount> create_users(std::size_t n, std::uint64_t seed) {
  init_crypto();
  std::vector<UserAccount> users;
  users.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::array<std::uint8_t, crypto_sign_SEEDBYTES> key_seed{};
    Rng rng(seed, streams::kUserKey, i);
    rng.fill(key_seed);

    UserAccount user;
    user.user_id = fmt::format("user-{}", i);
    user.public_key.resize(crypto_sign_PUBLICKEYBYTES);
    user.private_key.resize(crypto_sign_SECRETKEYBYTES);
    crypto_sign_seed_keypair(user.public_key.data(), user.private_key.data(), key_seed.data());
    sodium_memzero(key_seed.data(), key_seed.size());
    users.push_back(std::move(user));
  }
  return users;
}

Payload generate_payload(const WorkloadProfile& profile, std::uint64_t seed, std::uint64_t index) {
  Rng rng(seed, streams::kPayload, index);
  Payload out;
  switch (profile.kind) {
    case WorkloadKind::simple: {
      out.function = std::string(kSimpleFunctions[index % kSimpleFunctions.size()]);
      out.args = {fmt::format("CAR{}", index), std::string(kMakes[rng.below(kMakes.size())]),
                  short_token(rng, 6), short_token(rng, 8)};
      out.payload.resize(profile.payload_bytes);
      rng.fill(out.payload);
      break;
    }
    case WorkloadKind::data_heavy: {
      out.function = "put";
      out.args = {fmt::format("REC{}", index)};
      out.payload.resize(profile.payload_bytes);
      rng.fill(out.payload);
      break;
    }
    case WorkloadKind::cpu_heavy: {
      out.function = "compute";
      out.args = {std::to_string(profile.cpu_iterations)};
      out.payload.resize(8);
      rng.fill(out.payload);
      break;
    }
  }
  return out;
}

SignedTransaction sign(const UserAccount& user, TransactionRequest request) {
  init_crypto();
  if (user.private_key.size() != crypto_sign_SECRETKEYBYTES ||
      user.public_key.size() != crypto_sign_PUBLICKEYBYTES) {
    throw Error(fmt::format("signing failed for {}: malformed key material", user.user_id));
  }
  // An Ed25519 secret key is seed || public key; both halves must agree.
  std::array<std::uint8_t, crypto_sign_PUBLICKEYBYTES> derived_pk{};
  std::array<std::uint8_t, crypto_sign_SECRETKEYBYTES> scratch_sk{};
  crypto_sign_seed_keypair(derived_pk.data(), scratch_sk.data(), user.private_key.data());
  sodium_memzero(scratch_sk.data(), scratch_sk.size());
  if (!std::equal(derived_pk.begin(), derived_pk.end(),
                  user.private_key.begin() + crypto_sign_SEEDBYTES) ||
      !std::equal(derived_pk.begin(), derived_pk.end(), user.public_key.begin())) {
    throw Error(fmt::format("signing failed for {}: corrupt private key", user.user_id));
  }

  const Bytes message = canonical_bytes(request);
  SignedTransaction out;
  out.signature.resize(crypto_sign_BYTES);
  crypto_sign_detached(out.signature.data(), nullptr, message.data(), message.size(),
                       user.private_key.data());
  out.signer_public_key = user.public_key;
  out.request = std::move(request);
  return out;
}

bool verify(const SignedTransaction& signed_tx) {
  init_crypto();
  if (signed_tx.signature.size() != crypto_sign_BYTES ||
      signed_tx.signer_public_key.size() != crypto_sign_PUBLICKEYBYTES) {
    return false;
  }
  const Bytes message = canonical_bytes(signed_tx.request);
  return crypto_sign_verify_detached(signed_tx.signature.data(), message.data(), message.size(),
                                     signed_tx.signer_public_key.data()) == 0;
}

}  // namespace blockmeter::workload
