#pragma once

#include "blockmeter/core.hpp"

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace blockmeter::simnet {

/// Per-transaction execution cost: base + k_d * bytes + k_c * iterations,
/// optionally scaled by a uniform factor in [1 - jitter, 1 + jitter].
struct ServiceModel {
  double base_service_s = 0.001;
  double data_coeff_s_per_byte = 1e-6;
  double cpu_coeff_s_per_iter = 2.5e-7;
  double jitter = 0.0;

  bool operator==(const ServiceModel&) const = default;
};

struct LedgerMemoryModel {
  std::uint64_t mem_base_bytes = 64ULL << 20;
  std::uint64_t mem_per_tx_bytes = 2ULL << 10;

  bool operator==(const LedgerMemoryModel&) const = default;
};

/// Endorse -> order -> validate pipeline.
struct FabricSimParams {
  std::uint32_t endorser_count = 2;
  std::uint32_t block_size = 10;
  double batch_timeout_s = 2.0;
  ServiceModel service;
  double validate_per_block_s = 0.002;
  double validate_per_tx_s = 0.0048;
  LedgerMemoryModel memory;

  void validate() const;
  bool operator==(const FabricSimParams&) const = default;
};

/// Batch -> PoET election -> sequential transaction processor.
struct SawtoothSimParams {
  std::uint32_t validator_count = 1;
  double mean_wait_s = 2.0;
  std::uint32_t block_size = 10;
  double batch_timeout_s = 2.0;
  ServiceModel service;
  LedgerMemoryModel memory;

  void validate() const;
  bool operator==(const SawtoothSimParams&) const = default;
};

double service_time(const WorkloadProfile& profile, const ServiceModel& model, Rng& rng);

/// Cost profile of a concrete transaction: payload length plus, for
/// "compute" calls, the iteration count carried in the first argument.
WorkloadProfile profile_of(const TransactionRequest& request);

/// Minimum of `validators` exponential waits with mean `mean_wait_s`.
double poet_wait(Rng& rng, std::uint32_t validators, double mean_wait_s);

/// Steady-state throughput bound in tps for a homogeneous workload.
double capacity_tps(const FabricSimParams& params, const WorkloadProfile& profile);
double capacity_tps(const SawtoothSimParams& params, const WorkloadProfile& profile);

struct PendingTx {
  std::uint64_t seq = 0;
  std::string tx_id;
  Nanos arrival_ns = 0;
  Nanos ready_ns = 0;  // time the transaction became eligible for a block
  Nanos service_ns = 0;
};

enum class CutTrigger { size, timeout };

struct Block {
  std::uint64_t block_id = 0;
  Nanos cut_ns = 0;
  CutTrigger trigger = CutTrigger::size;
  std::vector<PendingTx> txs;
};

/// FIFO of transactions waiting for a block; ready_ns is non-decreasing.
using OrderingQueue = std::deque<PendingTx>;

/// Cuts the first min(B, pending) ready transactions when at least B are
/// ready or the oldest has waited batch_timeout. Pending means ready_ns <= now.
std::optional<Block> cut_block(OrderingQueue& queue, Nanos now, std::uint32_t block_size,
                               Nanos batch_timeout, std::uint64_t block_id);

/// Earliest instant at which cut_block would fire if nothing else arrives.
std::optional<Nanos> next_cut_time(const OrderingQueue& queue, std::uint32_t block_size,
                                   Nanos batch_timeout);

struct CommitEvent {
  std::uint64_t seq = 0;
  std::string tx_id;
  Nanos commit_ns = 0;
  std::uint64_t block_id = 0;

  bool operator==(const CommitEvent&) const = default;
};

struct SimTx {
  std::uint64_t seq = 0;
  std::string tx_id;
  WorkloadProfile profile;
};

/// Single-owner discrete-event backend. Not thread-safe; callers serialise.
class Engine {
 public:
  virtual ~Engine() = default;

  /// Accepts a transaction at `now` (clamped to the engine clock).
  virtual void enqueue(const SimTx& tx, Nanos now) = 0;
  /// Runs the pipeline up to `until` and returns commits with commit_ns <= until
  /// in commit order. Throws when until precedes the clock.
  virtual std::vector<CommitEvent> advance(Nanos until) = 0;
  /// One sample per node. cpu_fraction covers the time since the previous
  /// snapshot; memory reflects commits emitted so far.
  virtual std::vector<ResourceSample> resource_snapshot(Nanos now) = 0;

  Nanos clock() const { return clock_; }
  std::uint64_t enqueued() const { return enqueued_; }
  std::uint64_t committed() const { return committed_; }
  std::uint64_t in_pipeline() const { return enqueued_ - committed_; }

  /// Emits one JSON object per line for every enqueue, cut and commit.
  void set_trace(std::ostream* out) { trace_ = out; }

 protected:
  Engine(std::string node_prefix, Nanos start_ns) : prefix_(std::move(node_prefix)), clock_(start_ns) {}

  void trace_enqueue(const PendingTx& tx);
  void trace_cut(const Block& block);
  void trace_commit(const CommitEvent& ev);

  std::string prefix_;
  Nanos clock_;
  std::uint64_t enqueued_ = 0;
  std::uint64_t committed_ = 0;
  std::ostream* trace_ = nullptr;
};

/// Accumulates busy intervals of one server for cpu accounting.
class BusyTracker {
 public:
  void add(Nanos start, Nanos end);
  /// Busy nanoseconds overlapping [from, to); drops intervals ending before `from`.
  Nanos busy_between(Nanos from, Nanos to);

 private:
  std::deque<std::pair<Nanos, Nanos>> intervals_;
};

class FabricEngine final : public Engine {
 public:
  FabricEngine(FabricSimParams params, std::uint64_t seed, std::string node_prefix = "simnet-fabric",
               Nanos start_ns = 0);

  void enqueue(const SimTx& tx, Nanos now) override;
  std::vector<CommitEvent> advance(Nanos until) override;
  std::vector<ResourceSample> resource_snapshot(Nanos now) override;

  const FabricSimParams& params() const { return params_; }

 private:
  struct Validating {
    Block block;
    Nanos commit_ns;
  };

  FabricSimParams params_;
  Rng service_rng_;
  std::vector<Nanos> endorser_free_;
  std::vector<BusyTracker> endorser_busy_;
  BusyTracker validator_busy_;
  Nanos last_release_ = 0;
  Nanos validator_free_ = 0;
  OrderingQueue ordering_;
  std::deque<Validating> validating_;
  std::uint64_t next_block_ = 0;
  Nanos last_snapshot_;
};

class SawtoothEngine final : public Engine {
 public:
  SawtoothEngine(SawtoothSimParams params, std::uint64_t seed,
                 std::string node_prefix = "simnet-sawtooth", Nanos start_ns = 0);

  void enqueue(const SimTx& tx, Nanos now) override;
  std::vector<CommitEvent> advance(Nanos until) override;
  std::vector<ResourceSample> resource_snapshot(Nanos now) override;

  const SawtoothSimParams& params() const { return params_; }

 private:
  struct Publishing {
    Block block;
    Nanos commit_ns;
  };

  SawtoothSimParams params_;
  Rng service_rng_;
  Rng election_rng_;
  BusyTracker processor_busy_;
  Nanos last_release_ = 0;
  Nanos publisher_free_ = 0;
  OrderingQueue batching_;
  std::deque<Publishing> publishing_;
  std::uint64_t next_block_ = 0;
  Nanos last_snapshot_;
};

}  // namespace blockmeter::simnet
