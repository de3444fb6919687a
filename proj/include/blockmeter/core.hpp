#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace blockmeter {

/// Monotonic nanoseconds relative to the experiment epoch.
using Nanos = std::int64_t;
using Bytes = std::vector<std::uint8_t>;

inline constexpr Nanos kNanosPerSecond = 1'000'000'000;

constexpr Nanos seconds_to_nanos(double s) { return static_cast<Nanos>(s * 1e9 + (s >= 0 ? 0.5 : -0.5)); }
constexpr double nanos_to_seconds(Nanos ns) { return static_cast<double>(ns) / 1e9; }
constexpr double nanos_to_millis(Nanos ns) { return static_cast<double>(ns) / 1e6; }

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class WorkloadKind { simple, data_heavy, cpu_heavy };

enum class TxStatus { committed, rejected, timeout, error, pending };

std::string_view to_string(WorkloadKind kind);
std::string_view to_string(TxStatus status);
WorkloadKind parse_workload_kind(std::string_view text);
TxStatus parse_tx_status(std::string_view text);

struct WorkloadProfile {
  WorkloadKind kind = WorkloadKind::simple;
  std::uint64_t payload_bytes = 0;
  std::uint64_t cpu_iterations = 0;

  static constexpr std::uint64_t kDefaultDataHeavyBytes = 10240;
  static constexpr std::uint64_t kDefaultCpuIterations = 100000;
  static constexpr std::uint64_t kMaxSimplePayload = 1024;

  /// Profile with the defaults for `kind` filled in.
  static WorkloadProfile defaults_for(WorkloadKind kind);

  /// Throws Error when the kind/size combination is invalid.
  void validate() const;

  bool operator==(const WorkloadProfile&) const = default;
};

struct UserAccount {
  std::string user_id;
  Bytes public_key;
  Bytes private_key;
};

struct TransactionRequest {
  std::string tx_id;
  std::string user_id;
  std::string function;
  std::vector<std::string> args;
  Bytes payload;
  std::string backend_id;

  bool operator==(const TransactionRequest&) const = default;
};

struct SignedTransaction {
  TransactionRequest request;
  Bytes signature;
  Bytes signer_public_key;
};

struct CommitReceipt {
  std::string tx_id;
  TxStatus status = TxStatus::error;
  std::optional<Nanos> commit_time;  // set iff committed
  std::optional<std::uint64_t> block_id;
  std::string detail;
};

struct TransactionRecord {
  std::string tx_id;
  Nanos start_ns = 0;
  std::optional<Nanos> end_ns;  // unset while in flight
  TxStatus status = TxStatus::pending;
  std::string backend_id;
  WorkloadKind workload_kind = WorkloadKind::simple;

  bool finalized() const { return end_ns.has_value(); }
  bool operator==(const TransactionRecord&) const = default;
};

struct ResourceSample {
  std::string node_id;
  Nanos t_ns = 0;
  double cpu_fraction = 0.0;
  std::uint64_t mem_bytes = 0;

  bool operator==(const ResourceSample&) const = default;
};

struct RateStep {
  double rate_tps = 0.0;
  double duration_s = 0.0;

  bool operator==(const RateStep&) const = default;
};

/// Length-prefixed encoding of the request in fixed field order:
/// tx_id, user_id, function, args (count then each arg), payload, backend_id.
/// Every length is a little-endian u64.
Bytes canonical_bytes(const TransactionRequest& request);

/// end_ns - start_ns. Throws when the record is open or has inverted stamps.
Nanos latency_of(const TransactionRecord& record);

/// Infers the workload class from the invoked function ("put", "compute").
WorkloadKind classify_function(std::string_view function);

/// Deterministic SplitMix64 stream keyed by (seed, stream, index).
///
/// Used for every seeded draw in the harness so that outputs do not depend
/// on the standard library's distribution implementations.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t index = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() { return next(); }

  std::uint64_t next();
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  /// Exponential draw with the given mean (0 when mean is 0).
  double exponential(double mean);
  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);
  void fill(std::span<std::uint8_t> out);

 private:
  std::uint64_t state_;
};

/// Stream identifiers for Rng so independent draws never share a sequence.
namespace streams {
inline constexpr std::uint64_t kUserKey = 0x75736572'6b657931ULL;
inline constexpr std::uint64_t kPayload = 0x7061796c'6f616431ULL;
inline constexpr std::uint64_t kTxId = 0x74786964'00000001ULL;
inline constexpr std::uint64_t kArrivals = 0x61727276'00000001ULL;
inline constexpr std::uint64_t kSim = 0x73696d6e'65740001ULL;
}  // namespace streams

/// Initialises libsodium once per process; safe to call repeatedly.
void init_crypto();

std::string to_hex(std::span<const std::uint8_t> bytes);
std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws Error on malformed input.
Bytes base64_decode(std::string_view text);

}  // namespace blockmeter
