#include "blockmeter/experiment.hpp"

#include "blockmeter/workload.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

namespace blockmeter::experiment {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

const std::vector<std::string>& manifest() {
  static const std::vector<std::string> files = {"records.jsonl",  "resources.jsonl",     "meta.json",
                                                 "summary.json",   "summary.csv",         "throughput.csv",
                                                 "latency_vs_load.csv", "resources.csv"};
  return files;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({fmt::format("<file>: cannot read {}", path.string())});
  std::stringstream ss;
  ss << in.rdbuf();
  return validate_config(ss.str());
}

namespace {

struct Rig {
  std::unique_ptr<monitor::Monitor> monitor;
  std::unique_ptr<gateway::Gateway> gateway;
  std::vector<std::shared_ptr<adapter::Adapter>> adapters;
  std::vector<adapter::SimAdapter*> sims;
  std::unique_ptr<monitor::Sampler> sampler;
};

Rig build_rig(const ExperimentConfig& config, const Clock& clock, const fs::path& out_dir, gateway::TxIdMode ids) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(fmt::format("cannot create {}: {}", out_dir.string(), ec.message()));

  Rig rig;
  rig.monitor = std::make_unique<monitor::Monitor>(std::make_shared<monitor::JsonlWriter>(out_dir / "records.jsonl"),
                                                   std::make_shared<monitor::JsonlWriter>(out_dir / "resources.jsonl"));
  gateway::GatewayOptions opts;
  opts.inflight_cap = config.inflight_cap;
  opts.submit_timeout_s = config.submit_timeout_s;
  opts.tx_ids = ids;
  opts.seed = config.seed;
  rig.gateway = std::make_unique<gateway::Gateway>(*rig.monitor, clock,
                                                   workload::create_users(config.user_count, config.seed), opts);
  rig.sampler = std::make_unique<monitor::Sampler>(*rig.monitor, clock, config.sample_interval_s);

  for (const auto& spec : config.all_backends()) {
    std::shared_ptr<adapter::Adapter> a = adapter::make_adapter(spec, clock, config.seed);
    if (auto* sim = dynamic_cast<adapter::SimAdapter*>(a.get())) {
      rig.sims.push_back(sim);
      rig.sampler->add_source(std::make_unique<monitor::FunctionSource>(
          [sim](Nanos now) { return sim->resource_snapshot(now); }));
    }
    rig.gateway->register_adapter(a);
    rig.adapters.push_back(std::move(a));
  }
  if (!clock.is_virtual()) {
    rig.sampler->add_source(std::make_unique<monitor::ProcessSource>("blockmeter"));
    if (!config.stats_endpoint.empty()) {
      rig.sampler->add_source(
          std::make_unique<monitor::ContainerStatsSource>(config.stats_endpoint, config.containers, clock));
    }
  }
  return rig;
}

ordered_json schedule_json(const std::vector<RateStep>& schedule) {
  auto arr = ordered_json::array();
  for (const auto& s : schedule) arr.push_back({{"rate_tps", s.rate_tps}, {"duration_s", s.duration_s}});
  return arr;
}

std::vector<RateStep> schedule_from_json(const json& j) {
  std::vector<RateStep> out;
  for (const auto& s : j) out.push_back({s.at("rate_tps").get<double>(), s.at("duration_s").get<double>()});
  return out;
}

void write_meta(const fs::path& dir, const ExperimentConfig& config, std::string_view mode, bool virtual_clock,
                Nanos origin, const std::vector<RateStep>& schedule, bool absorb_tail, const ordered_json& stats) {
  ordered_json meta;
  meta["version"] = kVersion;
  meta["mode"] = mode;
  meta["signature_scheme"] = workload::kSignatureScheme;
  meta["clock"] = virtual_clock ? "virtual" : "real";
  meta["seed"] = config.seed;
  meta["origin_ns"] = origin;
  meta["warmup_fraction"] = config.warmup_fraction;
  meta["absorb_tail"] = absorb_tail;
  meta["schedule"] = schedule_json(schedule);
  meta["config"] = to_json(config);
  meta["run_stats"] = stats;
  const auto path = dir / "meta.json";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << meta.dump(2) << '\n';
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
}

report::SummaryReport summarize_dir(const fs::path& dir, const std::vector<RateStep>& schedule, Nanos origin,
                                    double warmup, bool absorb_tail) {
  const auto records = monitor::read_records(dir / "records.jsonl");
  std::vector<ResourceSample> samples;
  if (fs::exists(dir / "resources.jsonl")) samples = monitor::read_samples(dir / "resources.jsonl");
  return report::summarize(records, samples, schedule, {warmup, origin, absorb_tail});
}

void shutdown(Rig& rig, const Clock& clock, gateway::HttpServer* http, std::uint64_t& finalized) {
  finalized += rig.monitor->finalize_open(clock.now());
  for (auto& a : rig.adapters) a->stop();
  if (http) http->stop();
  rig.sampler->stop();
  finalized += rig.monitor->finalize_open(clock.now());
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& config, const fs::path& out_dir) {
  const bool virtual_time = config.all_simulated();
  VirtualClock vclock;
  SteadyClock sclock;
  const Clock& clock = virtual_time ? static_cast<const Clock&>(vclock) : sclock;

  // plan first so that a bad CSV fails before anything is written
  std::vector<RateStep> schedule = config.schedule;
  loadgen::ArrivalPlan plan;
  loadgen::RequestBuilder builder;
  if (!config.csv_path.empty()) {
    auto rows = loadgen::load_csv(config.csv_path);
    schedule = loadgen::schedule_for_rows(config.schedule, rows.size());
    plan = loadgen::build_plan_for_rows(config.schedule, rows.size(), config.user_count, config.seed, config.arrival);
    builder = loadgen::csv_builder(std::move(rows));
  } else {
    plan = loadgen::build_plan(schedule, config.user_count, config.seed, config.arrival);
    builder = loadgen::workload_builder(config.workload, config.seed);
  }

  Rig rig = build_rig(config, clock, out_dir, gateway::TxIdMode::seeded);
  std::unique_ptr<gateway::HttpServer> http;
  if (!virtual_time) {
    http = std::make_unique<gateway::HttpServer>(*rig.gateway, gateway::parse_listen(config.listen));
    http->start();
  }
  for (auto& a : rig.adapters) a->start();

  loadgen::InProcessTarget target(*rig.gateway, config.backend.backend_id, builder);
  const Nanos drain = seconds_to_nanos(config.submit_timeout_s + 2.0);
  Nanos origin = 0;
  loadgen::InjectionLog log;
  if (virtual_time) {
    std::vector<adapter::VirtualBackend*> backends(rig.sims.begin(), rig.sims.end());
    loadgen::VirtualPacer pacer(vclock, backends, rig.sampler.get(), 0);
    log = loadgen::inject(plan, target, pacer, origin, drain);
  } else {
    rig.sampler->start();
    origin = sclock.now() + 100'000'000;
    loadgen::RealPacer pacer(sclock);
    log = loadgen::inject(plan, target, pacer, origin, drain);
  }

  RunStats stats;
  shutdown(rig, clock, http.get(), stats.finalized_at_shutdown);
  stats.planned = plan.size();
  stats.dispatched = log.size();
  stats.backlog_rejections = rig.gateway->backlog_rejections();
  stats.late_commits = rig.gateway->late_commits();
  for (const auto& e : log) {
    stats.max_lateness_ms = std::max(stats.max_lateness_ms, nanos_to_millis(e.actual_send_ns - e.scheduled_ns));
  }

  ordered_json stats_json = {{"planned", stats.planned},
                             {"dispatched", stats.dispatched},
                             {"backlog_rejections", stats.backlog_rejections},
                             {"late_commits", stats.late_commits},
                             {"finalized_at_shutdown", stats.finalized_at_shutdown},
                             {"max_lateness_ms", stats.max_lateness_ms}};
  write_meta(out_dir, config, "run", virtual_time, origin, schedule, true, stats_json);
  rig.monitor.reset();  // closes the jsonl files

  RunResult result;
  result.report = summarize_dir(out_dir, schedule, origin, config.warmup_fraction, true);
  report::export_report(result.report, out_dir);
  result.log = std::move(log);
  result.stats = stats;
  return result;
}

ServeSession::ServeSession(ExperimentConfig config, fs::path out_dir)
    : config_(std::move(config)), out_dir_(std::move(out_dir)) {}

ServeSession::~ServeSession() {
  if (running_ && !stopped_) {
    try {
      stop();
    } catch (const std::exception& e) {
      spdlog::error("serve shutdown: {}", e.what());
    }
  }
}

void ServeSession::start() {
  Rig rig = build_rig(config_, clock_, out_dir_, gateway::TxIdMode::random);
  monitor_ = std::move(rig.monitor);
  gateway_ = std::move(rig.gateway);
  adapters_ = std::move(rig.adapters);
  sampler_ = std::move(rig.sampler);
  http_ = std::make_unique<gateway::HttpServer>(*gateway_, gateway::parse_listen(config_.listen));
  http_->start();
  for (auto& a : adapters_) a->start();
  sampler_->start();
  write_meta(out_dir_, config_, "serve", false, 0, config_.schedule, true, ordered_json::object());
  running_ = true;
}

int ServeSession::port() const { return http_ ? http_->port() : 0; }

report::SummaryReport ServeSession::stop() {
  if (!running_) throw Error("serve session was not started");
  if (stopped_) throw Error("serve session already stopped");
  stopped_ = true;

  Rig rig;
  rig.monitor = std::move(monitor_);
  rig.gateway = std::move(gateway_);
  rig.adapters = std::move(adapters_);
  rig.sampler = std::move(sampler_);
  std::uint64_t finalized = 0;
  shutdown(rig, clock_, http_.get(), finalized);

  const auto records = rig.monitor->finalized();
  Nanos origin = 0;
  if (!records.empty()) {
    origin = std::min_element(records.begin(), records.end(), [](const auto& a, const auto& b) {
               return a.start_ns < b.start_ns;
             })->start_ns;
  }
  ordered_json stats = {{"backlog_rejections", rig.gateway->backlog_rejections()},
                        {"late_commits", rig.gateway->late_commits()},
                        {"finalized_at_shutdown", finalized},
                        {"sample_batches", rig.sampler->batches()}};
  write_meta(out_dir_, config_, "serve", false, origin, config_.schedule, true, stats);

  monitor_ = std::move(rig.monitor);
  gateway_ = std::move(rig.gateway);
  sampler_ = std::move(rig.sampler);
  monitor_.reset();
  auto summary = summarize_dir(out_dir_, config_.schedule, origin, config_.warmup_fraction, true);
  report::export_report(summary, out_dir_);
  return summary;
}

void regenerate(const std::vector<fs::path>& dirs, std::vector<std::string> labels, const fs::path& compare_dir) {
  if (dirs.empty()) throw Error("no run directories given");
  if (labels.empty()) {
    for (const auto& d : dirs) labels.push_back(fs::path(d).lexically_normal().filename().string());
  }
  if (labels.size() != dirs.size()) {
    throw Error(fmt::format("{} labels given for {} directories", labels.size(), dirs.size()));
  }
  std::vector<report::SummaryReport> reports;
  for (const auto& dir : dirs) {
    for (const char* f : {"records.jsonl", "meta.json"}) {
      if (!fs::exists(dir / f)) throw Error(fmt::format("missing {}", (dir / f).string()));
    }
    std::ifstream in(dir / "meta.json");
    json meta;
    try {
      meta = json::parse(in);
      auto summary = summarize_dir(dir, schedule_from_json(meta.at("schedule")), meta.at("origin_ns").get<Nanos>(),
                                   meta.at("warmup_fraction").get<double>(), meta.value("absorb_tail", true));
      report::export_report(summary, dir);
      reports.push_back(std::move(summary));
    } catch (const json::exception& e) {
      throw Error(fmt::format("{}: {}", (dir / "meta.json").string(), e.what()));
    }
  }
  if (dirs.size() > 1) {
    auto table = report::compare(reports, labels);
    std::error_code ec;
    fs::create_directories(compare_dir, ec);
    report::write_csv(table, compare_dir / "compare.csv");
  }
}

namespace {

void apply_listen_env(ExperimentConfig& config) {
  if (const char* env = std::getenv("BLOCKMETER_LISTEN"); env && *env) config.listen = env;
}

void print_config_error(const ConfigError& e) {
  fmt::print(stderr, "invalid configuration:\n");
  for (const auto& p : e.problems()) fmt::print(stderr, "  {}\n", p);
}

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted.store(true); }

}  // namespace

int cmd_run(const fs::path& config_path, const fs::path& out_dir, std::optional<std::uint64_t> seed_override) {
  try {
    auto config = load_config(config_path);
    if (seed_override) config.seed = *seed_override;
    apply_listen_env(config);
    auto result = run_experiment(config, out_dir);
    fmt::print("{} submitted, {} committed, {} failed; reports in {}\n", result.report.totals.submitted,
               result.report.totals.committed, result.report.totals.failed, out_dir.string());
    return kOk;
  } catch (const ConfigError& e) {
    print_config_error(e);
    return kConfigError;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kRuntimeError;
  }
}

int cmd_serve(const fs::path& config_path, std::optional<fs::path> out_dir) {
  try {
    auto config = load_config(config_path);
    apply_listen_env(config);
    ServeSession session(config, out_dir.value_or(fs::path(config.out_dir)));
    g_interrupted = false;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    session.start();
    fmt::print("listening on {}:{}\n", gateway::parse_listen(config.listen).host, session.port());
    std::fflush(stdout);
    while (!g_interrupted.load()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    auto summary = session.stop();
    fmt::print("{} submitted, {} committed\n", summary.totals.submitted, summary.totals.committed);
    return kOk;
  } catch (const ConfigError& e) {
    print_config_error(e);
    return kConfigError;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kRuntimeError;
  }
}

int cmd_report(const std::vector<fs::path>& dirs, const std::vector<std::string>& labels, const fs::path& compare_dir) {
  try {
    regenerate(dirs, labels, compare_dir);
    return kOk;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kRuntimeError;
  }
}

}  // namespace blockmeter::experiment
