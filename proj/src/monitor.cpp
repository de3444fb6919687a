#include "blockmeter/monitor.hpp"

#include "blockmeter/adapter.hpp"

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace blockmeter::monitor {

using nlohmann::json;
using nlohmann::ordered_json;

JsonlWriter::JsonlWriter(const std::filesystem::path& path) : out_(path, std::ios::trunc), path_(path) {
  if (!out_) throw Error(fmt::format("cannot open {} for writing", path.string()));
}

void JsonlWriter::append(const ordered_json& line) {
  const std::string text = line.dump();
  std::lock_guard lock(mu_);
  out_ << text << '\n';
  out_.flush();
  if (!out_) throw Error(fmt::format("write to {} failed", path_.string()));
  ++lines_;
}

std::uint64_t JsonlWriter::lines() const {
  std::lock_guard lock(mu_);
  return lines_;
}

void JsonlWriter::flush() {
  std::lock_guard lock(mu_);
  out_.flush();
}

ordered_json to_json(const TransactionRecord& r) {
  ordered_json j;
  j["tx_id"] = r.tx_id;
  j["start_ns"] = r.start_ns;
  if (r.end_ns) {
    j["end_ns"] = *r.end_ns;
  } else {
    j["end_ns"] = nullptr;
  }
  j["status"] = to_string(r.status);
  j["backend_id"] = r.backend_id;
  j["workload_kind"] = to_string(r.workload_kind);
  return j;
}

TransactionRecord record_from_json(const json& j) {
  TransactionRecord r;
  r.tx_id = j.at("tx_id").get<std::string>();
  r.start_ns = j.at("start_ns").get<Nanos>();
  if (j.contains("end_ns") && !j.at("end_ns").is_null()) r.end_ns = j.at("end_ns").get<Nanos>();
  r.status = parse_tx_status(j.at("status").get<std::string>());
  r.backend_id = j.at("backend_id").get<std::string>();
  r.workload_kind = parse_workload_kind(j.at("workload_kind").get<std::string>());
  return r;
}

ordered_json to_json(const ResourceSample& s) {
  return {{"node_id", s.node_id}, {"t_ns", s.t_ns}, {"cpu_fraction", s.cpu_fraction}, {"mem_bytes", s.mem_bytes}};
}

ResourceSample sample_from_json(const json& j) {
  return {j.at("node_id").get<std::string>(), j.at("t_ns").get<Nanos>(), j.at("cpu_fraction").get<double>(),
          j.at("mem_bytes").get<std::uint64_t>()};
}

namespace {

template <typename T, typename Parse>
std::vector<T> read_jsonl(const std::filesystem::path& path, Parse parse) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot read {}", path.string()));
  std::vector<T> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(parse(json::parse(line)));
    } catch (const std::exception& e) {
      throw Error(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
  return out;
}

}  // namespace

std::vector<TransactionRecord> read_records(const std::filesystem::path& path) {
  return read_jsonl<TransactionRecord>(path, record_from_json);
}

std::vector<ResourceSample> read_samples(const std::filesystem::path& path) {
  return read_jsonl<ResourceSample>(path, sample_from_json);
}

// ---------------------------------------------------------------------------

Monitor::Monitor(std::shared_ptr<JsonlWriter> records, std::shared_ptr<JsonlWriter> resources)
    : records_out_(std::move(records)), resources_out_(std::move(resources)) {}

void Monitor::record_start(const std::string& tx_id, Nanos t_ns, RecordMeta meta) {
  std::lock_guard lock(mu_);
  if (open_.contains(tx_id) || finalized_index_.contains(tx_id)) {
    throw Error(fmt::format("duplicate start for {}", tx_id));
  }
  TransactionRecord r;
  r.tx_id = tx_id;
  r.start_ns = t_ns;
  r.backend_id = std::move(meta.backend_id);
  r.workload_kind = meta.workload_kind;
  open_.emplace(tx_id, std::move(r));
  ++started_;
}

TransactionRecord Monitor::record_end(const std::string& tx_id, Nanos t_ns, TxStatus status) {
  if (status == TxStatus::pending) throw Error("cannot finalize a record as pending");
  TransactionRecord r;
  {
    std::lock_guard lock(mu_);
    auto it = open_.find(tx_id);
    if (it == open_.end()) throw Error(fmt::format("no open record for {}", tx_id));
    if (t_ns < it->second.start_ns) {
      throw Error(fmt::format("clock inversion for {}: end {} < start {}", tx_id, t_ns, it->second.start_ns));
    }
    r = std::move(it->second);
    open_.erase(it);
    r.end_ns = t_ns;
    r.status = status;
    finalized_index_.emplace(tx_id, finalized_.size());
    finalized_.push_back(r);
    // written under the lock so file order matches finalization order
    if (records_out_) records_out_->append(to_json(r));
  }
  return r;
}

std::size_t Monitor::finalize_open(Nanos t_ns) {
  std::vector<std::pair<Nanos, std::string>> open;
  {
    std::lock_guard lock(mu_);
    for (const auto& [id, r] : open_) open.emplace_back(r.start_ns, id);
  }
  // deterministic file order regardless of hash layout
  std::sort(open.begin(), open.end());
  std::size_t n = 0;
  for (const auto& [start, id] : open) {
    try {
      record_end(id, std::max(t_ns, start), TxStatus::timeout);
      ++n;
    } catch (const Error&) {
      // finalized concurrently by its own completion
    }
  }
  return n;
}

std::optional<TransactionRecord> Monitor::lookup(const std::string& tx_id) const {
  std::lock_guard lock(mu_);
  if (auto it = open_.find(tx_id); it != open_.end()) return it->second;
  if (auto it = finalized_index_.find(tx_id); it != finalized_index_.end()) return finalized_[it->second];
  return std::nullopt;
}

void Monitor::record_samples(const std::vector<ResourceSample>& batch) {
  std::lock_guard lock(mu_);
  for (const auto& s : batch) {
    auto [it, fresh] = last_sample_t_.try_emplace(s.node_id, s.t_ns);
    if (!fresh) {
      if (s.t_ns <= it->second) {
        spdlog::warn("dropping non-increasing sample for {} at {}", s.node_id, s.t_ns);
        continue;
      }
      it->second = s.t_ns;
    }
    samples_.push_back(s);
    if (resources_out_) resources_out_->append(to_json(s));
  }
}

std::vector<TransactionRecord> Monitor::finalized() const {
  std::lock_guard lock(mu_);
  return finalized_;
}

std::vector<ResourceSample> Monitor::samples() const {
  std::lock_guard lock(mu_);
  return samples_;
}

std::size_t Monitor::open_count() const {
  std::lock_guard lock(mu_);
  return open_.size();
}

std::uint64_t Monitor::started_count() const {
  std::lock_guard lock(mu_);
  return started_;
}

std::vector<std::uint64_t> throughput_series(const std::vector<TransactionRecord>& records, double window_s,
                                             std::optional<Nanos> span_ns) {
  if (!(window_s > 0)) throw Error("window_s must be > 0");
  const Nanos window = std::max<Nanos>(1, seconds_to_nanos(window_s));
  std::size_t n = 0;
  if (span_ns && *span_ns > 0) n = static_cast<std::size_t>((*span_ns + window - 1) / window);
  for (const auto& r : records) {
    const Nanos t = std::max<Nanos>(0, r.end_ns.value_or(r.start_ns));
    n = std::max(n, static_cast<std::size_t>(t / window) + 1);
  }
  std::vector<std::uint64_t> counts(n, 0);
  for (const auto& r : records) {
    if (r.status != TxStatus::committed || !r.end_ns || *r.end_ns < 0) continue;
    ++counts[static_cast<std::size_t>(*r.end_ns / window)];
  }
  return counts;
}

// ---------------------------------------------------------------------------

ProcessSource::ProcessSource(std::string node_id) : node_id_(std::move(node_id)) {}

std::vector<ResourceSample> ProcessSource::collect(Nanos now) {
  std::ifstream stat("/proc/self/stat");
  std::string content;
  if (!stat || !std::getline(stat, content)) throw Error("cannot read /proc/self/stat");
  // fields after the parenthesised command name; utime and stime are the 14th/15th
  const auto close = content.rfind(')');
  std::istringstream rest(content.substr(close + 2));
  std::vector<std::string> fields;
  for (std::string f; rest >> f;) fields.push_back(f);
  if (fields.size() < 13) throw Error("unexpected /proc/self/stat layout");
  const double ticks = static_cast<double>(sysconf(_SC_CLK_TCK));
  const double cpu_s = (std::stod(fields[11]) + std::stod(fields[12])) / ticks;

  std::ifstream statm("/proc/self/statm");
  std::uint64_t size_pages = 0, resident_pages = 0;
  if (!(statm >> size_pages >> resident_pages)) throw Error("cannot read /proc/self/statm");
  const auto page = static_cast<std::uint64_t>(sysconf(_SC_PAGESIZE));

  double fraction = 0.0;
  if (last_ && now > last_->first) {
    fraction = std::max(0.0, (cpu_s - last_->second) / nanos_to_seconds(now - last_->first));
  }
  last_ = {now, cpu_s};
  return {{node_id_, now, fraction, resident_pages * page}};
}

ResourceSample parse_container_stats(const json& stats, std::string node_id, Nanos t_ns) {
  const auto& cpu = stats.at("cpu_stats");
  const auto& pre = stats.at("precpu_stats");
  const double total = cpu.at("cpu_usage").at("total_usage").get<double>();
  const double pre_total = pre.at("cpu_usage").value("total_usage", 0.0);
  const double system = cpu.value("system_cpu_usage", 0.0);
  const double pre_system = pre.value("system_cpu_usage", 0.0);
  double online = cpu.value("online_cpus", 0.0);
  if (online <= 0 && cpu.at("cpu_usage").contains("percpu_usage")) {
    online = static_cast<double>(cpu.at("cpu_usage").at("percpu_usage").size());
  }
  if (online <= 0) online = 1;
  double fraction = 0.0;
  if (system - pre_system > 0 && total - pre_total >= 0) {
    fraction = (total - pre_total) / (system - pre_system) * online;
  }
  const auto mem = stats.at("memory_stats").value("usage", std::uint64_t{0});
  return {std::move(node_id), t_ns, fraction, mem};
}

ContainerStatsSource::ContainerStatsSource(std::string endpoint, std::vector<std::string> containers,
                                           const Clock& clock)
    : containers_(std::move(containers)), clock_(clock) {
  const auto ep = adapter::parse_endpoint(endpoint);
  host_ = ep.host;
  port_ = ep.port;
  base_path_ = ep.path == "/" ? "" : ep.path;
  while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
}

std::vector<ResourceSample> ContainerStatsSource::collect(Nanos) {
  httplib::Client client(host_, port_);
  client.set_connection_timeout(2, 0);
  client.set_read_timeout(5, 0);
  std::vector<json> docs;
  for (const auto& id : containers_) {
    auto res = client.Get(fmt::format("{}/containers/{}/stats?stream=false", base_path_, id));
    if (!res) throw Error(fmt::format("stats request for {} failed: {}", id, httplib::to_string(res.error())));
    if (res->status != 200) throw Error(fmt::format("stats request for {} returned HTTP {}", id, res->status));
    docs.push_back(json::parse(res->body));
  }
  // stamp with completion time: each stats call can take seconds
  const Nanos done = clock_.now();
  std::vector<ResourceSample> out;
  for (std::size_t i = 0; i < containers_.size(); ++i) {
    out.push_back(parse_container_stats(docs[i], containers_[i], done));
  }
  return out;
}

// ---------------------------------------------------------------------------

Sampler::Sampler(Monitor& monitor, const Clock& clock, double interval_s)
    : monitor_(monitor), clock_(clock), interval_s_(std::max(interval_s, kMinInterval)) {}

Sampler::~Sampler() { stop(); }

void Sampler::add_source(std::unique_ptr<ResourceSource> source) { sources_.push_back(std::move(source)); }

void Sampler::start() {
  if (thread_.joinable()) return;
  {
    std::lock_guard lock(run_mu_);
    stop_requested_ = false;
  }
  thread_ = std::thread([this] { run(); });
}

void Sampler::stop() {
  {
    std::lock_guard lock(run_mu_);
    stop_requested_ = true;
  }
  run_cv_.notify_all();
  if (thread_.joinable()) thread_.join();
}

void Sampler::sample_once(Nanos now) {
  bool any = false;
  for (auto& source : sources_) {
    try {
      auto batch = source->collect(now);
      monitor_.record_samples(batch);
      any = true;
    } catch (const std::exception& e) {
      spdlog::warn("resource sample gap at {:.3f}s: {}", nanos_to_seconds(now), e.what());
      std::lock_guard lock(gaps_mu_);
      gaps_.push_back(now);
    }
  }
  if (any) ++batches_;
}

std::vector<Nanos> Sampler::gaps() const {
  std::lock_guard lock(gaps_mu_);
  return gaps_;
}

void Sampler::run() {
  const auto* steady = dynamic_cast<const SteadyClock*>(&clock_);
  const Nanos origin = clock_.now();
  const Nanos interval = seconds_to_nanos(interval_s_);
  for (std::uint64_t k = 1;; ++k) {
    const Nanos target = origin + static_cast<Nanos>(k) * interval;
    std::unique_lock lock(run_mu_);
    if (steady) {
      run_cv_.wait_until(lock, steady->to_time_point(target), [&] { return stop_requested_; });
    } else {
      run_cv_.wait_for(lock, std::chrono::nanoseconds(std::max<Nanos>(0, target - clock_.now())),
                       [&] { return stop_requested_; });
    }
    if (stop_requested_) return;
    lock.unlock();
    sample_once(clock_.now());
    // a slow source must not produce a burst of back-to-back catch-up samples
    while (origin + static_cast<Nanos>(k + 1) * interval <= clock_.now()) ++k;
  }
}

}  // namespace blockmeter::monitor
