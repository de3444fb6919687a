#pragma once

#include "blockmeter/clock.hpp"
#include "blockmeter/core.hpp"

#include <json.hpp>

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

namespace blockmeter::monitor {

/// Serialised append-only JSON-lines file. Each line is flushed on write.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& path);

  void append(const nlohmann::ordered_json& line);
  std::uint64_t lines() const;
  void flush();

 private:
  mutable std::mutex mu_;
  std::ofstream out_;
  std::uint64_t lines_ = 0;
  std::filesystem::path path_;
};

nlohmann::ordered_json to_json(const TransactionRecord& record);
TransactionRecord record_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const ResourceSample& sample);
ResourceSample sample_from_json(const nlohmann::json& j);

std::vector<TransactionRecord> read_records(const std::filesystem::path& path);
std::vector<ResourceSample> read_samples(const std::filesystem::path& path);

struct RecordMeta {
  std::string backend_id;
  WorkloadKind workload_kind = WorkloadKind::simple;
};

/// Collects start/end stamps for every transaction and persists finalized
/// records. All methods are safe to call concurrently.
class Monitor {
 public:
  /// Writers may be null for purely in-memory use.
  Monitor(std::shared_ptr<JsonlWriter> records, std::shared_ptr<JsonlWriter> resources);

  /// Throws Error("duplicate start") if tx_id was seen before.
  void record_start(const std::string& tx_id, Nanos t_ns, RecordMeta meta = {});
  /// Throws on unknown tx_id or when t_ns precedes the start ("clock inversion").
  TransactionRecord record_end(const std::string& tx_id, Nanos t_ns, TxStatus status);

  /// Finalizes every open record as timeout at t_ns. Returns how many.
  std::size_t finalize_open(Nanos t_ns);

  /// Finalized or open (status pending, no end) record for tx_id.
  std::optional<TransactionRecord> lookup(const std::string& tx_id) const;

  void record_samples(const std::vector<ResourceSample>& batch);

  std::vector<TransactionRecord> finalized() const;
  std::vector<ResourceSample> samples() const;
  std::size_t open_count() const;
  std::uint64_t started_count() const;

 private:
  std::shared_ptr<JsonlWriter> records_out_;
  std::shared_ptr<JsonlWriter> resources_out_;

  mutable std::mutex mu_;
  std::unordered_map<std::string, TransactionRecord> open_;
  std::unordered_map<std::string, std::size_t> finalized_index_;
  std::vector<TransactionRecord> finalized_;
  std::vector<ResourceSample> samples_;
  std::map<std::string, Nanos> last_sample_t_;
  std::uint64_t started_ = 0;
};

/// Committed counts per tumbling window [k*w, (k+1)*w) by end_ns.
/// The series spans every record timestamp (and `span_ns` when given).
std::vector<std::uint64_t> throughput_series(const std::vector<TransactionRecord>& records,
                                             double window_s = 1.0,
                                             std::optional<Nanos> span_ns = std::nullopt);

/// Anything that can report resource usage for one or more nodes.
class ResourceSource {
 public:
  virtual ~ResourceSource() = default;
  /// Throws on read failure.
  virtual std::vector<ResourceSample> collect(Nanos now) = 0;
};

/// Adapts a callable, e.g. a SimAdapter's resource_snapshot.
class FunctionSource final : public ResourceSource {
 public:
  explicit FunctionSource(std::function<std::vector<ResourceSample>(Nanos)> fn) : fn_(std::move(fn)) {}
  std::vector<ResourceSample> collect(Nanos now) override { return fn_(now); }

 private:
  std::function<std::vector<ResourceSample>(Nanos)> fn_;
};

/// This process's CPU time and resident set, read from /proc/self.
class ProcessSource final : public ResourceSource {
 public:
  explicit ProcessSource(std::string node_id = "local");
  std::vector<ResourceSample> collect(Nanos now) override;

 private:
  std::string node_id_;
  std::optional<std::pair<Nanos, double>> last_;  // (now, cpu seconds)
};

/// One-shot container statistics over HTTP:
/// GET {endpoint}/containers/{id}/stats?stream=false per container.
class ContainerStatsSource final : public ResourceSource {
 public:
  ContainerStatsSource(std::string endpoint, std::vector<std::string> containers, const Clock& clock);
  std::vector<ResourceSample> collect(Nanos now) override;

 private:
  std::string host_;
  int port_;
  std::string base_path_;
  std::vector<std::string> containers_;
  const Clock& clock_;
};

/// cpu and memory from a Docker-style stats document.
ResourceSample parse_container_stats(const nlohmann::json& stats, std::string node_id, Nanos t_ns);

/// Periodic resource collection, one batch per source per tick.
///
/// start() runs a thread ticking at k * interval from the time of start;
/// each sample carries the collection completion time. sample_once() is the
/// same step for externally driven (virtual) time.
class Sampler {
 public:
  static constexpr double kMinInterval = 1.0;

  Sampler(Monitor& monitor, const Clock& clock, double interval_s);
  ~Sampler();

  void add_source(std::unique_ptr<ResourceSource> source);
  double interval_s() const { return interval_s_; }

  void start();
  void stop();
  void sample_once(Nanos now);

  std::uint64_t batches() const { return batches_.load(); }
  std::vector<Nanos> gaps() const;

 private:
  void run();

  Monitor& monitor_;
  const Clock& clock_;
  double interval_s_;
  std::vector<std::unique_ptr<ResourceSource>> sources_;
  std::atomic<std::uint64_t> batches_{0};
  mutable std::mutex gaps_mu_;
  std::vector<Nanos> gaps_;

  std::mutex run_mu_;
  std::condition_variable run_cv_;
  bool stop_requested_ = false;
  std::thread thread_;
};

}  // namespace blockmeter::monitor
