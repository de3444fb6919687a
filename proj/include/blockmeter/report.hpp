#pragma once

#include "blockmeter/core.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace blockmeter::report {

/// Nearest rank: the element at 1-based rank ceil(q * n) of the sorted
/// values. q must be in (0, 1]. Throws Error("no data") on empty input.
Nanos percentile(std::vector<Nanos> values, double q);

struct LatencyStats {
  double mean_ms = 0;
  double p50_ms = 0;
  double p95_ms = 0;
  double p99_ms = 0;
  double max_ms = 0;

  bool operator==(const LatencyStats&) const = default;
};

/// Summary over the latencies (ns) of committed records; nullopt when empty.
std::optional<LatencyStats> latency_stats(const std::vector<Nanos>& latencies);

struct NodeStats {
  std::string node_id;
  std::uint64_t samples = 0;
  double cpu_mean = 0;
  double cpu_max = 0;
  std::uint64_t mem_max_bytes = 0;

  bool operator==(const NodeStats&) const = default;
};

struct StepSummary {
  std::uint32_t step = 0;
  double target_tps = 0;
  double duration_s = 0;
  double start_s = 0;  // relative to the run origin
  std::uint64_t attempted = 0;
  std::uint64_t committed = 0;
  std::uint64_t failed = 0;
  std::uint64_t in_flight = 0;
  /// Commits landing in the step after its warmup prefix, per second.
  double achieved_tps = 0;
  double success_rate = 0;
  /// Committed records started after the warmup prefix; absent when none.
  std::optional<LatencyStats> latency;
  std::vector<NodeStats> resources;

  bool operator==(const StepSummary&) const = default;
};

struct Totals {
  std::uint64_t submitted = 0;
  std::uint64_t committed = 0;
  std::uint64_t failed = 0;
  std::uint64_t in_flight = 0;
  std::map<std::string, std::uint64_t> by_status;

  bool operator==(const Totals&) const = default;
};

struct ThroughputPoint {
  double t_s = 0;
  std::uint64_t count = 0;
  bool operator==(const ThroughputPoint&) const = default;
};

struct ResourcePoint {
  std::string node_id;
  double t_s = 0;
  double cpu = 0;
  double mem_mb = 0;
  bool operator==(const ResourcePoint&) const = default;
};

struct SummaryReport {
  double warmup_fraction = 0.1;
  std::vector<StepSummary> steps;
  std::vector<NodeStats> resources;
  Totals totals;
  std::vector<ThroughputPoint> throughput;  // 1 s commit windows from the origin
  std::vector<ResourcePoint> resource_series;

  bool operator==(const SummaryReport&) const = default;
};

struct SummarizeOptions {
  double warmup_fraction = 0.1;
  Nanos origin_ns = 0;
  /// Assign records starting after the last step to the last step instead
  /// of failing.
  bool absorb_tail = false;
};

/// Records are assigned to steps by start_ns; a record outside the step grid
/// is an error unless absorb_tail covers it.
SummaryReport summarize(const std::vector<TransactionRecord>& records, const std::vector<ResourceSample>& samples,
                        const std::vector<RateStep>& schedule, const SummarizeOptions& options);

nlohmann::ordered_json to_json(const SummaryReport& report);
SummaryReport report_from_json(const nlohmann::json& j);

inline constexpr const char* kSummaryCsvHeader =
    "step,target_tps,duration_s,attempted,committed,failed,in_flight,achieved_tps,success_rate,"
    "latency_mean_ms,p50_ms,p95_ms,p99_ms,max_ms";
inline constexpr const char* kThroughputCsvHeader = "t_s,count";
inline constexpr const char* kLatencyCsvHeader = "target_tps,p50_ms,p95_ms,p99_ms";
inline constexpr const char* kResourcesCsvHeader = "node,t_s,cpu,mem_mb";

/// summary.json, summary.csv, throughput.csv, latency_vs_load.csv, resources.csv.
void export_report(const SummaryReport& report, const std::filesystem::path& dir);
SummaryReport load_summary(const std::filesystem::path& summary_json);

struct ComparisonTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// One row per step keyed by target_tps with an (achieved_tps, p95_ms)
/// column pair per label. Throws Error listing divergent steps when the
/// reports do not share a step grid.
ComparisonTable compare(const std::vector<SummaryReport>& reports, const std::vector<std::string>& labels);
void write_csv(const ComparisonTable& table, const std::filesystem::path& path);

/// Shortest round-trip decimal form used in every export.
std::string format_number(double v);

}  // namespace blockmeter::report
