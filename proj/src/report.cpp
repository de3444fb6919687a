#include "blockmeter/report.hpp"

#include "blockmeter/monitor.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace blockmeter::report {

using nlohmann::json;
using nlohmann::ordered_json;

Nanos percentile(std::vector<Nanos> values, double q) {
  if (values.empty()) throw Error("no data");
  if (!(q > 0.0 && q <= 1.0)) throw Error(fmt::format("percentile rank {} outside (0, 1]", q));
  const auto n = values.size();
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1), values.end());
  return values[rank - 1];
}

std::optional<LatencyStats> latency_stats(const std::vector<Nanos>& latencies) {
  if (latencies.empty()) return std::nullopt;
  LatencyStats s;
  // integer sum keeps the mean independent of summation order
  const __int128 sum = std::accumulate(latencies.begin(), latencies.end(), static_cast<__int128>(0));
  s.mean_ms = static_cast<double>(sum) / static_cast<double>(latencies.size()) / 1e6;
  s.p50_ms = nanos_to_millis(percentile(latencies, 0.50));
  s.p95_ms = nanos_to_millis(percentile(latencies, 0.95));
  s.p99_ms = nanos_to_millis(percentile(latencies, 0.99));
  s.max_ms = nanos_to_millis(*std::max_element(latencies.begin(), latencies.end()));
  return s;
}

namespace {

std::vector<NodeStats> node_stats(const std::vector<const ResourceSample*>& samples) {
  struct Acc {
    std::uint64_t n = 0;
    double cpu_sum = 0, cpu_max = 0;
    std::uint64_t mem_max = 0;
  };
  std::map<std::string, Acc> by_node;
  for (const auto* s : samples) {
    auto& a = by_node[s->node_id];
    ++a.n;
    a.cpu_sum += s->cpu_fraction;
    a.cpu_max = std::max(a.cpu_max, s->cpu_fraction);
    a.mem_max = std::max(a.mem_max, s->mem_bytes);
  }
  std::vector<NodeStats> out;
  for (const auto& [id, a] : by_node) {
    out.push_back({id, a.n, a.cpu_sum / static_cast<double>(a.n), a.cpu_max, a.mem_max});
  }
  return out;
}

bool is_failure(TxStatus s) { return s == TxStatus::rejected || s == TxStatus::timeout || s == TxStatus::error; }

}  // namespace

SummaryReport summarize(const std::vector<TransactionRecord>& records, const std::vector<ResourceSample>& samples,
                        const std::vector<RateStep>& schedule, const SummarizeOptions& options) {
  if (schedule.empty()) throw Error("schedule has no steps");
  if (!(options.warmup_fraction >= 0 && options.warmup_fraction < 1)) {
    throw Error("warmup_fraction must be in [0, 1)");
  }
  const std::size_t k = schedule.size();
  std::vector<Nanos> starts(k + 1);
  starts[0] = options.origin_ns;
  for (std::size_t i = 0; i < k; ++i) starts[i + 1] = starts[i] + seconds_to_nanos(schedule[i].duration_s);
  const auto warm_start = [&](std::size_t i) {
    return starts[i] + static_cast<Nanos>(std::llround(options.warmup_fraction *
                                                       static_cast<double>(starts[i + 1] - starts[i])));
  };

  SummaryReport report;
  report.warmup_fraction = options.warmup_fraction;
  report.steps.resize(k);
  std::vector<std::vector<Nanos>> latencies(k);

  for (const auto& r : records) {
    if (r.start_ns < starts[0]) {
      throw Error(fmt::format("record {} starts before the first step", r.tx_id));
    }
    auto it = std::upper_bound(starts.begin(), starts.end(), r.start_ns);
    std::size_t step = static_cast<std::size_t>(it - starts.begin()) - 1;
    if (step >= k) {
      if (!options.absorb_tail) throw Error(fmt::format("record {} starts after the last step", r.tx_id));
      step = k - 1;
    }
    auto& s = report.steps[step];
    ++s.attempted;
    ++report.totals.submitted;
    ++report.totals.by_status[std::string(to_string(r.status))];
    if (r.status == TxStatus::committed) {
      ++s.committed;
      ++report.totals.committed;
      if (r.start_ns >= warm_start(step)) latencies[step].push_back(latency_of(r));
    } else if (is_failure(r.status)) {
      ++s.failed;
      ++report.totals.failed;
    } else {
      ++s.in_flight;
      ++report.totals.in_flight;
    }
  }

  // commit-time throughput inside each post-warmup window
  std::vector<Nanos> commit_times;
  for (const auto& r : records) {
    if (r.status == TxStatus::committed && r.end_ns) commit_times.push_back(*r.end_ns);
  }
  std::sort(commit_times.begin(), commit_times.end());

  for (std::size_t i = 0; i < k; ++i) {
    auto& s = report.steps[i];
    s.step = static_cast<std::uint32_t>(i);
    s.target_tps = schedule[i].rate_tps;
    s.duration_s = schedule[i].duration_s;
    s.start_s = nanos_to_seconds(starts[i] - starts[0]);
    const Nanos from = warm_start(i);
    const Nanos to = starts[i + 1];
    const auto n = std::lower_bound(commit_times.begin(), commit_times.end(), to) -
                   std::lower_bound(commit_times.begin(), commit_times.end(), from);
    s.achieved_tps = to > from ? static_cast<double>(n) / nanos_to_seconds(to - from) : 0.0;
    s.success_rate = s.attempted ? static_cast<double>(s.committed) / static_cast<double>(s.attempted) : 0.0;
    s.latency = latency_stats(latencies[i]);

    const bool last = i + 1 == k;
    std::vector<const ResourceSample*> in_step;
    for (const auto& smp : samples) {
      if (smp.t_ns >= starts[i] && (smp.t_ns < to || (last && options.absorb_tail))) in_step.push_back(&smp);
    }
    s.resources = node_stats(in_step);
  }

  std::vector<const ResourceSample*> all;
  for (const auto& smp : samples) all.push_back(&smp);
  report.resources = node_stats(all);

  std::vector<TransactionRecord> shifted;
  shifted.reserve(records.size());
  for (const auto& r : records) {
    auto c = r;
    c.start_ns -= starts[0];
    if (c.end_ns) c.end_ns = *c.end_ns - starts[0];
    shifted.push_back(std::move(c));
  }
  const auto series = monitor::throughput_series(shifted, 1.0, starts[k] - starts[0]);
  for (std::size_t i = 0; i < series.size(); ++i) report.throughput.push_back({static_cast<double>(i), series[i]});

  std::vector<const ResourceSample*> ordered = all;
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) {
    return std::tie(a->node_id, a->t_ns) < std::tie(b->node_id, b->t_ns);
  });
  for (const auto* smp : ordered) {
    report.resource_series.push_back({smp->node_id, nanos_to_seconds(smp->t_ns - starts[0]), smp->cpu_fraction,
                                      static_cast<double>(smp->mem_bytes) / (1024.0 * 1024.0)});
  }
  return report;
}

namespace {

ordered_json to_json(const NodeStats& n) {
  return {{"node_id", n.node_id},
          {"samples", n.samples},
          {"cpu_mean", n.cpu_mean},
          {"cpu_max", n.cpu_max},
          {"mem_max_bytes", n.mem_max_bytes}};
}

NodeStats node_from_json(const json& j) {
  return {j.at("node_id").get<std::string>(), j.at("samples").get<std::uint64_t>(), j.at("cpu_mean").get<double>(),
          j.at("cpu_max").get<double>(), j.at("mem_max_bytes").get<std::uint64_t>()};
}

ordered_json nodes_to_json(const std::vector<NodeStats>& nodes) {
  auto arr = ordered_json::array();
  for (const auto& n : nodes) arr.push_back(to_json(n));
  return arr;
}

std::vector<NodeStats> nodes_from_json(const json& j) {
  std::vector<NodeStats> out;
  for (const auto& n : j) out.push_back(node_from_json(n));
  return out;
}

}  // namespace

ordered_json to_json(const SummaryReport& report) {
  ordered_json j;
  j["warmup_fraction"] = report.warmup_fraction;
  auto steps = ordered_json::array();
  for (const auto& s : report.steps) {
    ordered_json o;
    o["step"] = s.step;
    o["target_tps"] = s.target_tps;
    o["duration_s"] = s.duration_s;
    o["start_s"] = s.start_s;
    o["attempted"] = s.attempted;
    o["committed"] = s.committed;
    o["failed"] = s.failed;
    o["in_flight"] = s.in_flight;
    o["achieved_tps"] = s.achieved_tps;
    o["success_rate"] = s.success_rate;
    if (s.latency) {
      o["latency"] = {{"mean_ms", s.latency->mean_ms},
                      {"p50_ms", s.latency->p50_ms},
                      {"p95_ms", s.latency->p95_ms},
                      {"p99_ms", s.latency->p99_ms},
                      {"max_ms", s.latency->max_ms}};
    } else {
      o["latency"] = nullptr;
    }
    o["resources"] = nodes_to_json(s.resources);
    steps.push_back(std::move(o));
  }
  j["steps"] = std::move(steps);
  j["resources"] = nodes_to_json(report.resources);
  j["totals"] = {{"submitted", report.totals.submitted},
                 {"committed", report.totals.committed},
                 {"failed", report.totals.failed},
                 {"in_flight", report.totals.in_flight},
                 {"by_status", report.totals.by_status}};
  auto tp = ordered_json::array();
  for (const auto& p : report.throughput) tp.push_back({{"t_s", p.t_s}, {"count", p.count}});
  j["throughput"] = std::move(tp);
  auto rs = ordered_json::array();
  for (const auto& p : report.resource_series) {
    rs.push_back({{"node", p.node_id}, {"t_s", p.t_s}, {"cpu", p.cpu}, {"mem_mb", p.mem_mb}});
  }
  j["resource_series"] = std::move(rs);
  return j;
}

SummaryReport report_from_json(const json& j) {
  try {
    SummaryReport r;
    r.warmup_fraction = j.at("warmup_fraction").get<double>();
    for (const auto& o : j.at("steps")) {
      StepSummary s;
      s.step = o.at("step").get<std::uint32_t>();
      s.target_tps = o.at("target_tps").get<double>();
      s.duration_s = o.at("duration_s").get<double>();
      s.start_s = o.at("start_s").get<double>();
      s.attempted = o.at("attempted").get<std::uint64_t>();
      s.committed = o.at("committed").get<std::uint64_t>();
      s.failed = o.at("failed").get<std::uint64_t>();
      s.in_flight = o.at("in_flight").get<std::uint64_t>();
      s.achieved_tps = o.at("achieved_tps").get<double>();
      s.success_rate = o.at("success_rate").get<double>();
      const auto& l = o.at("latency");
      if (!l.is_null()) {
        s.latency = LatencyStats{l.at("mean_ms").get<double>(), l.at("p50_ms").get<double>(),
                                 l.at("p95_ms").get<double>(), l.at("p99_ms").get<double>(),
                                 l.at("max_ms").get<double>()};
      }
      s.resources = nodes_from_json(o.at("resources"));
      r.steps.push_back(std::move(s));
    }
    r.resources = nodes_from_json(j.at("resources"));
    const auto& t = j.at("totals");
    r.totals.submitted = t.at("submitted").get<std::uint64_t>();
    r.totals.committed = t.at("committed").get<std::uint64_t>();
    r.totals.failed = t.at("failed").get<std::uint64_t>();
    r.totals.in_flight = t.at("in_flight").get<std::uint64_t>();
    r.totals.by_status = t.at("by_status").get<std::map<std::string, std::uint64_t>>();
    for (const auto& p : j.at("throughput")) {
      r.throughput.push_back({p.at("t_s").get<double>(), p.at("count").get<std::uint64_t>()});
    }
    for (const auto& p : j.at("resource_series")) {
      r.resource_series.push_back({p.at("node").get<std::string>(), p.at("t_s").get<double>(),
                                   p.at("cpu").get<double>(), p.at("mem_mb").get<double>()});
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(fmt::format("malformed summary: {}", e.what()));
  }
}

std::string format_number(double v) {
  if (v == 0) return "0";
  return fmt::format("{}", v);
}

namespace {

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw Error(fmt::format("write failed for {}", path.string()));
}

std::string opt_cell(const std::optional<LatencyStats>& l, double LatencyStats::*field) {
  return l ? format_number((*l).*field) : std::string();
}

}  // namespace

void export_report(const SummaryReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(fmt::format("cannot create {}: {}", dir.string(), ec.message()));

  {
    const auto p = dir / "summary.json";
    auto out = open_for_write(p);
    out << to_json(report).dump(2) << '\n';
    finish(out, p);
  }
  {
    const auto p = dir / "summary.csv";
    auto out = open_for_write(p);
    out << kSummaryCsvHeader << '\n';
    for (const auto& s : report.steps) {
      out << s.step << ',' << format_number(s.target_tps) << ',' << format_number(s.duration_s) << ','
          << s.attempted << ',' << s.committed << ',' << s.failed << ',' << s.in_flight << ','
          << format_number(s.achieved_tps) << ',' << format_number(s.success_rate) << ','
          << opt_cell(s.latency, &LatencyStats::mean_ms) << ',' << opt_cell(s.latency, &LatencyStats::p50_ms) << ','
          << opt_cell(s.latency, &LatencyStats::p95_ms) << ',' << opt_cell(s.latency, &LatencyStats::p99_ms) << ','
          << opt_cell(s.latency, &LatencyStats::max_ms) << '\n';
    }
    finish(out, p);
  }
  {
    const auto p = dir / "throughput.csv";
    auto out = open_for_write(p);
    out << kThroughputCsvHeader << '\n';
    for (const auto& t : report.throughput) out << format_number(t.t_s) << ',' << t.count << '\n';
    finish(out, p);
  }
  {
    const auto p = dir / "latency_vs_load.csv";
    auto out = open_for_write(p);
    out << kLatencyCsvHeader << '\n';
    for (const auto& s : report.steps) {
      out << format_number(s.target_tps) << ',' << opt_cell(s.latency, &LatencyStats::p50_ms) << ','
          << opt_cell(s.latency, &LatencyStats::p95_ms) << ',' << opt_cell(s.latency, &LatencyStats::p99_ms) << '\n';
    }
    finish(out, p);
  }
  {
    const auto p = dir / "resources.csv";
    auto out = open_for_write(p);
    out << kResourcesCsvHeader << '\n';
    for (const auto& r : report.resource_series) {
      out << r.node_id << ',' << format_number(r.t_s) << ',' << format_number(r.cpu) << ','
          << format_number(r.mem_mb) << '\n';
    }
    finish(out, p);
  }
}

SummaryReport load_summary(const std::filesystem::path& summary_json) {
  std::ifstream in(summary_json);
  if (!in) throw Error(fmt::format("cannot read {}", summary_json.string()));
  try {
    return report_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(fmt::format("{}: {}", summary_json.string(), e.what()));
  }
}

ComparisonTable compare(const std::vector<SummaryReport>& reports, const std::vector<std::string>& labels) {
  if (reports.empty()) throw Error("nothing to compare");
  if (labels.size() != reports.size()) {
    throw Error(fmt::format("{} labels for {} reports", labels.size(), reports.size()));
  }
  const auto& base = reports.front().steps;
  std::vector<std::string> divergent;
  for (std::size_t r = 1; r < reports.size(); ++r) {
    const auto& other = reports[r].steps;
    const std::size_t n = std::max(base.size(), other.size());
    for (std::size_t i = 0; i < n; ++i) {
      const bool same = i < base.size() && i < other.size() && base[i].target_tps == other[i].target_tps &&
                        base[i].duration_s == other[i].duration_s;
      if (same) continue;
      const auto describe = [&](const std::vector<StepSummary>& steps) {
        return i < steps.size() ? fmt::format("{} tps x {} s", format_number(steps[i].target_tps),
                                              format_number(steps[i].duration_s))
                                : std::string("missing");
      };
      divergent.push_back(fmt::format("step {}: {} has {}, {} has {}", i, labels[0], describe(base), labels[r],
                                      describe(other)));
    }
  }
  if (!divergent.empty()) {
    std::string msg = "step grids differ";
    for (const auto& d : divergent) msg += "; " + d;
    throw Error(msg);
  }

  ComparisonTable table;
  table.header.push_back("target_tps");
  for (const auto& l : labels) {
    table.header.push_back(l + "_achieved_tps");
    table.header.push_back(l + "_p95_ms");
  }
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<std::string> row{format_number(base[i].target_tps)};
    for (const auto& rep : reports) {
      const auto& s = rep.steps[i];
      row.push_back(format_number(s.achieved_tps));
      row.push_back(opt_cell(s.latency, &LatencyStats::p95_ms));
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

void write_csv(const ComparisonTable& table, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  const auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
  finish(out, path);
}

}  // namespace blockmeter::report
