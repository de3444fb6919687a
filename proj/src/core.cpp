#include "blockmeter/core.hpp"

#include <sodium.h>

#include <fmt/format.h>

#include <array>
#include <cmath>

namespace blockmeter {

namespace {

void put_u64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

void put_field(Bytes& out, std::string_view s) {
  put_u64(out, s.size());
  out.insert(out.end(), s.begin(), s.end());
}

std::uint64_t splitmix(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

void init_crypto() {
  static const bool ok = sodium_init() >= 0;
  if (!ok) {
    throw Error("libsodium initialisation failed");
  }
}

std::string_view to_string(WorkloadKind kind) {
  switch (kind) {
    case WorkloadKind::simple: return "simple";
    case WorkloadKind::data_heavy: return "data_heavy";
    case WorkloadKind::cpu_heavy: return "cpu_heavy";
  }
  return "simple";
}

std::string_view to_string(TxStatus status) {
  switch (status) {
    case TxStatus::committed: return "committed";
    case TxStatus::rejected: return "rejected";
    case TxStatus::timeout: return "timeout";
    case TxStatus::error: return "error";
    case TxStatus::pending: return "pending";
  }
  return "error";
}

WorkloadKind parse_workload_kind(std::string_view text) {
  if (text == "simple") return WorkloadKind::simple;
  if (text == "data_heavy") return WorkloadKind::data_heavy;
  if (text == "cpu_heavy") return WorkloadKind::cpu_heavy;
  throw Error(fmt::format("unknown workload kind '{}'", text));
}

TxStatus parse_tx_status(std::string_view text) {
  if (text == "committed") return TxStatus::committed;
  if (text == "rejected") return TxStatus::rejected;
  if (text == "timeout") return TxStatus::timeout;
  if (text == "error") return TxStatus::error;
  if (text == "pending") return TxStatus::pending;
  throw Error(fmt::format("unknown transaction status '{}'", text));
}

WorkloadProfile WorkloadProfile::defaults_for(WorkloadKind kind) {
  WorkloadProfile p;
  p.kind = kind;
  if (kind == WorkloadKind::data_heavy) p.payload_bytes = kDefaultDataHeavyBytes;
  if (kind == WorkloadKind::cpu_heavy) p.cpu_iterations = kDefaultCpuIterations;
  return p;
}

void WorkloadProfile::validate() const {
  if (kind == WorkloadKind::simple && payload_bytes > kMaxSimplePayload) {
    throw Error(fmt::format("simple workload payload_bytes {} exceeds {}", payload_bytes,
                            kMaxSimplePayload));
  }
}

Bytes canonical_bytes(const TransactionRequest& request) {
  Bytes out;
  out.reserve(64 + request.payload.size());
  put_field(out, request.tx_id);
  put_field(out, request.user_id);
  put_field(out, request.function);
  put_u64(out, request.args.size());
  for (const auto& arg : request.args) {
    put_field(out, arg);
  }
  put_u64(out, request.payload.size());
  out.insert(out.end(), request.payload.begin(), request.payload.end());
  put_field(out, request.backend_id);
  return out;
}

Nanos latency_of(const TransactionRecord& record) {
  if (!record.end_ns) {
    throw Error("record not finalized");
  }
  if (*record.end_ns < record.start_ns) {
    throw Error(fmt::format("record {} has end_ns {} before start_ns {}", record.tx_id,
                            *record.end_ns, record.start_ns));
  }
  return *record.end_ns - record.start_ns;
}

WorkloadKind classify_function(std::string_view function) {
  if (function == "compute") return WorkloadKind::cpu_heavy;
  if (function == "put") return WorkloadKind::data_heavy;
  return WorkloadKind::simple;
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::uint64_t x = seed;
  std::uint64_t a = splitmix(x);
  x ^= stream;
  std::uint64_t b = splitmix(x);
  x ^= index * 0xd1b54a32d192ed03ULL;
  state_ = a ^ (b << 1) ^ splitmix(x);
}

std::uint64_t Rng::next() { return splitmix(state_); }

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double Rng::exponential(double mean) {
  if (mean <= 0.0) return 0.0;
  return -mean * std::log1p(-uniform());
}

std::uint64_t Rng::below(std::uint64_t bound) {
  // rejection sampling keeps the draw unbiased
  const std::uint64_t limit = max() - (max() % bound);
  std::uint64_t v = next();
  while (v >= limit) v = next();
  return v % bound;
}

void Rng::fill(std::span<std::uint8_t> out) {
  std::size_t i = 0;
  while (i < out.size()) {
    std::uint64_t v = next();
    for (int b = 0; b < 8 && i < out.size(); ++b, ++i) {
      out[i] = static_cast<std::uint8_t>(v >> (8 * b));
    }
  }
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xf]);
  }
  return out;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  init_crypto();
  const std::size_t len = sodium_base64_encoded_len(bytes.size(), sodium_base64_VARIANT_ORIGINAL);
  std::string out(len, '\0');
  sodium_bin2base64(out.data(), len, bytes.data(), bytes.size(), sodium_base64_VARIANT_ORIGINAL);
  out.resize(len - 1);  // drop the terminator
  return out;
}

Bytes base64_decode(std::string_view text) {
  init_crypto();
  Bytes out(text.size() / 4 * 3 + 3);
  std::size_t written = 0;
  const char* end = nullptr;
  if (sodium_base642bin(out.data(), out.size(), text.data(), text.size(), nullptr, &written, &end,
                        sodium_base64_VARIANT_ORIGINAL) != 0 ||
      end != text.data() + text.size()) {
    throw Error("invalid base64");
  }
  out.resize(written);
  return out;
}

}  // namespace blockmeter
