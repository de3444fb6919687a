#include "blockmeter/simnet.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <ostream>

namespace blockmeter::simnet {

namespace {

void check_service(const ServiceModel& s, std::string_view who) {
  if (s.base_service_s < 0 || s.data_coeff_s_per_byte < 0 || s.cpu_coeff_s_per_iter < 0) {
    throw Error(fmt::format("{}: service coefficients must be nonnegative", who));
  }
  if (s.jitter < 0 || s.jitter >= 1) {
    throw Error(fmt::format("{}: jitter must be in [0, 1)", who));
  }
}

std::string_view to_string(CutTrigger t) { return t == CutTrigger::size ? "size" : "timeout"; }

}  // namespace

void FabricSimParams::validate() const {
  check_service(service, "simnet-fabric");
  if (endorser_count < 1) throw Error("simnet-fabric: endorser_count must be >= 1");
  if (block_size < 1) throw Error("simnet-fabric: block_size must be >= 1");
  if (!(batch_timeout_s > 0)) throw Error("simnet-fabric: batch_timeout must be > 0");
  if (validate_per_block_s < 0 || validate_per_tx_s < 0) {
    throw Error("simnet-fabric: validation costs must be nonnegative");
  }
}

void SawtoothSimParams::validate() const {
  check_service(service, "simnet-sawtooth");
  if (validator_count < 1) throw Error("simnet-sawtooth: validator_count must be >= 1");
  if (block_size < 1) throw Error("simnet-sawtooth: block_size must be >= 1");
  if (!(batch_timeout_s > 0)) throw Error("simnet-sawtooth: batch_timeout must be > 0");
  if (mean_wait_s < 0) throw Error("simnet-sawtooth: mean_wait_s must be nonnegative");
}

double service_time(const WorkloadProfile& profile, const ServiceModel& model, Rng& rng) {
  double t = model.base_service_s +
             model.data_coeff_s_per_byte * static_cast<double>(profile.payload_bytes) +
             model.cpu_coeff_s_per_iter * static_cast<double>(profile.cpu_iterations);
  if (model.jitter > 0) {
    t *= 1.0 - model.jitter + 2.0 * model.jitter * rng.uniform();
  }
  return t;
}

WorkloadProfile profile_of(const TransactionRequest& request) {
  WorkloadProfile p;
  p.kind = classify_function(request.function);
  p.payload_bytes = request.payload.size();
  if (p.kind == WorkloadKind::cpu_heavy && !request.args.empty()) {
    const auto& a = request.args.front();
    std::uint64_t iters = 0;
    auto [ptr, ec] = std::from_chars(a.data(), a.data() + a.size(), iters);
    if (ec == std::errc{} && ptr == a.data() + a.size()) p.cpu_iterations = iters;
  }
  return p;
}

double poet_wait(Rng& rng, std::uint32_t validators, double mean_wait_s) {
  if (mean_wait_s <= 0) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (std::uint32_t i = 0; i < std::max<std::uint32_t>(validators, 1); ++i) {
    best = std::min(best, rng.exponential(mean_wait_s));
  }
  return best;
}

double capacity_tps(const FabricSimParams& params, const WorkloadProfile& profile) {
  Rng unused(0);
  ServiceModel flat = params.service;
  flat.jitter = 0;
  const double s = service_time(profile, flat, unused);
  const double endorse = s > 0 ? params.endorser_count / s : std::numeric_limits<double>::infinity();
  const double per_block = params.validate_per_block_s + params.validate_per_tx_s * params.block_size;
  const double pipeline =
      per_block > 0 ? params.block_size / per_block : std::numeric_limits<double>::infinity();
  return std::min(endorse, pipeline);
}

double capacity_tps(const SawtoothSimParams& params, const WorkloadProfile& profile) {
  Rng unused(0);
  ServiceModel flat = params.service;
  flat.jitter = 0;
  const double s = service_time(profile, flat, unused);
  const double per_block = params.mean_wait_s / params.validator_count + params.block_size * s;
  return per_block > 0 ? params.block_size / per_block : std::numeric_limits<double>::infinity();
}

std::optional<Nanos> next_cut_time(const OrderingQueue& queue, std::uint32_t block_size,
                                   Nanos batch_timeout) {
  if (queue.empty()) return std::nullopt;
  Nanos t = queue.front().ready_ns + batch_timeout;
  if (queue.size() >= block_size) {
    t = std::min(t, queue[block_size - 1].ready_ns);
  }
  return t;
}

std::optional<Block> cut_block(OrderingQueue& queue, Nanos now, std::uint32_t block_size,
                               Nanos batch_timeout, std::uint64_t block_id) {
  std::size_t pending = 0;
  while (pending < queue.size() && queue[pending].ready_ns <= now) ++pending;
  if (pending == 0) return std::nullopt;

  const bool by_size = pending >= block_size;
  const bool by_age = now - queue.front().ready_ns >= batch_timeout;
  if (!by_size && !by_age) return std::nullopt;

  Block block;
  block.block_id = block_id;
  block.cut_ns = now;
  block.trigger = by_size ? CutTrigger::size : CutTrigger::timeout;
  const std::size_t n = std::min<std::size_t>(pending, block_size);
  block.txs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    block.txs.push_back(std::move(queue.front()));
    queue.pop_front();
  }
  return block;
}

void BusyTracker::add(Nanos start, Nanos end) {
  if (end > start) intervals_.emplace_back(start, end);
}

Nanos BusyTracker::busy_between(Nanos from, Nanos to) {
  while (!intervals_.empty() && intervals_.front().second <= from) intervals_.pop_front();
  Nanos busy = 0;
  for (const auto& [s, e] : intervals_) {
    if (s >= to) break;
    busy += std::min(e, to) - std::max(s, from);
  }
  return busy;
}

void Engine::trace_enqueue(const PendingTx& tx) {
  if (!trace_) return;
  nlohmann::ordered_json j{{"ev", "enqueue"},       {"t_ns", tx.arrival_ns}, {"seq", tx.seq},
                           {"tx_id", tx.tx_id},     {"ready_ns", tx.ready_ns},
                           {"service_ns", tx.service_ns}};
  *trace_ << j.dump() << '\n';
}

void Engine::trace_cut(const Block& block) {
  if (!trace_) return;
  nlohmann::ordered_json j{{"ev", "cut"},
                           {"t_ns", block.cut_ns},
                           {"block_id", block.block_id},
                           {"size", block.txs.size()},
                           {"trigger", to_string(block.trigger)},
                           {"oldest_ready_ns", block.txs.front().ready_ns}};
  *trace_ << j.dump() << '\n';
}

void Engine::trace_commit(const CommitEvent& ev) {
  if (!trace_) return;
  nlohmann::ordered_json j{{"ev", "commit"},
                           {"t_ns", ev.commit_ns},
                           {"seq", ev.seq},
                           {"tx_id", ev.tx_id},
                           {"block_id", ev.block_id}};
  *trace_ << j.dump() << '\n';
}

// ---------------------------------------------------------------------------

FabricEngine::FabricEngine(FabricSimParams params, std::uint64_t seed, std::string node_prefix,
                           Nanos start_ns)
    : Engine(std::move(node_prefix), start_ns),
      params_(params),
      service_rng_(seed, streams::kSim, 1),
      endorser_free_(params.endorser_count, start_ns),
      endorser_busy_(params.endorser_count),
      last_release_(start_ns),
      validator_free_(start_ns),
      last_snapshot_(start_ns) {
  params_.validate();
}

void FabricEngine::enqueue(const SimTx& tx, Nanos now) {
  now = std::max(now, clock_);
  const auto svc = seconds_to_nanos(service_time(tx.profile, params_.service, service_rng_));

  // earliest-free endorser, lowest index on ties
  const auto it = std::min_element(endorser_free_.begin(), endorser_free_.end());
  const auto idx = static_cast<std::size_t>(it - endorser_free_.begin());
  const Nanos start = std::max(now, *it);
  const Nanos done = start + svc;
  *it = done;
  endorser_busy_[idx].add(start, done);

  PendingTx p{tx.seq, tx.tx_id, now, std::max(done, last_release_), svc};
  last_release_ = p.ready_ns;
  trace_enqueue(p);
  ordering_.push_back(std::move(p));
  ++enqueued_;
}

std::vector<CommitEvent> FabricEngine::advance(Nanos until) {
  if (until < clock_) {
    throw Error(fmt::format("advance to {} precedes clock {}", until, clock_));
  }
  const Nanos timeout = seconds_to_nanos(params_.batch_timeout_s);
  while (auto t = next_cut_time(ordering_, params_.block_size, timeout)) {
    if (*t > until) break;
    auto block = cut_block(ordering_, *t, params_.block_size, timeout, next_block_);
    if (!block) break;
    ++next_block_;
    trace_cut(*block);
    const Nanos start = std::max(*t, validator_free_);
    const Nanos commit =
        start + seconds_to_nanos(params_.validate_per_block_s +
                                 params_.validate_per_tx_s * static_cast<double>(block->txs.size()));
    validator_free_ = commit;
    validator_busy_.add(start, commit);
    validating_.push_back({std::move(*block), commit});
  }

  std::vector<CommitEvent> events;
  while (!validating_.empty() && validating_.front().commit_ns <= until) {
    auto& v = validating_.front();
    for (auto& tx : v.block.txs) {
      CommitEvent ev{tx.seq, std::move(tx.tx_id), v.commit_ns, v.block.block_id};
      trace_commit(ev);
      events.push_back(std::move(ev));
    }
    committed_ += v.block.txs.size();
    validating_.pop_front();
  }
  clock_ = until;
  return events;
}

std::vector<ResourceSample> FabricEngine::resource_snapshot(Nanos now) {
  const Nanos from = last_snapshot_;
  const Nanos span = now - from;
  last_snapshot_ = std::max(now, last_snapshot_);
  const auto fraction = [&](Nanos busy) {
    return span > 0 ? static_cast<double>(busy) / static_cast<double>(span) : 0.0;
  };
  const Nanos validating = span > 0 ? validator_busy_.busy_between(from, now) : 0;
  const std::uint64_t ledger =
      params_.memory.mem_base_bytes + params_.memory.mem_per_tx_bytes * committed_;

  std::vector<ResourceSample> out;
  out.push_back({fmt::format("{}/orderer0", prefix_), now, 0.0, params_.memory.mem_base_bytes});
  for (std::size_t i = 0; i < endorser_busy_.size(); ++i) {
    const Nanos endorsing = span > 0 ? endorser_busy_[i].busy_between(from, now) : 0;
    out.push_back({fmt::format("{}/peer{}", prefix_, i), now, fraction(endorsing + validating), ledger});
  }
  return out;
}

// ---------------------------------------------------------------------------

SawtoothEngine::SawtoothEngine(SawtoothSimParams params, std::uint64_t seed,
                               std::string node_prefix, Nanos start_ns)
    : Engine(std::move(node_prefix), start_ns),
      params_(params),
      service_rng_(seed, streams::kSim, 2),
      election_rng_(seed, streams::kSim, 3),
      last_release_(start_ns),
      publisher_free_(start_ns),
      last_snapshot_(start_ns) {
  params_.validate();
}

void SawtoothEngine::enqueue(const SimTx& tx, Nanos now) {
  now = std::max(now, clock_);
  const auto svc = seconds_to_nanos(service_time(tx.profile, params_.service, service_rng_));
  PendingTx p{tx.seq, tx.tx_id, now, std::max(now, last_release_), svc};
  last_release_ = p.ready_ns;
  trace_enqueue(p);
  batching_.push_back(std::move(p));
  ++enqueued_;
}

std::vector<CommitEvent> SawtoothEngine::advance(Nanos until) {
  if (until < clock_) {
    throw Error(fmt::format("advance to {} precedes clock {}", until, clock_));
  }
  const Nanos timeout = seconds_to_nanos(params_.batch_timeout_s);
  while (auto t = next_cut_time(batching_, params_.block_size, timeout)) {
    if (*t > until) break;
    auto block = cut_block(batching_, *t, params_.block_size, timeout, next_block_);
    if (!block) break;
    ++next_block_;
    trace_cut(*block);
    const Nanos start = std::max(*t, publisher_free_);
    const Nanos exec_start =
        start + seconds_to_nanos(poet_wait(election_rng_, params_.validator_count, params_.mean_wait_s));
    Nanos commit = exec_start;
    for (const auto& tx : block->txs) commit += tx.service_ns;
    publisher_free_ = commit;
    processor_busy_.add(exec_start, commit);
    publishing_.push_back({std::move(*block), commit});
  }

  std::vector<CommitEvent> events;
  while (!publishing_.empty() && publishing_.front().commit_ns <= until) {
    auto& p = publishing_.front();
    for (auto& tx : p.block.txs) {
      CommitEvent ev{tx.seq, std::move(tx.tx_id), p.commit_ns, p.block.block_id};
      trace_commit(ev);
      events.push_back(std::move(ev));
    }
    committed_ += p.block.txs.size();
    publishing_.pop_front();
  }
  clock_ = until;
  return events;
}

std::vector<ResourceSample> SawtoothEngine::resource_snapshot(Nanos now) {
  const Nanos from = last_snapshot_;
  const Nanos span = now - from;
  last_snapshot_ = std::max(now, last_snapshot_);
  const Nanos busy = span > 0 ? processor_busy_.busy_between(from, now) : 0;
  const double cpu = span > 0 ? static_cast<double>(busy) / static_cast<double>(span) : 0.0;
  const std::uint64_t ledger =
      params_.memory.mem_base_bytes + params_.memory.mem_per_tx_bytes * committed_;

  std::vector<ResourceSample> out;
  for (std::uint32_t i = 0; i < params_.validator_count; ++i) {
    out.push_back({fmt::format("{}/validator{}", prefix_, i), now, cpu, ledger});
  }
  return out;
}

}  // namespace blockmeter::simnet
