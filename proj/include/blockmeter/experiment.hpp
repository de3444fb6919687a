#pragma once

#include "blockmeter/adapter.hpp"
#include "blockmeter/clock.hpp"
#include "blockmeter/config.hpp"
#include "blockmeter/gateway.hpp"
#include "blockmeter/loadgen.hpp"
#include "blockmeter/monitor.hpp"
#include "blockmeter/report.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace blockmeter::experiment {

inline constexpr std::string_view kVersion = "0.1.0";

/// Files every completed run or serve session leaves behind.
const std::vector<std::string>& manifest();

struct RunStats {
  std::uint64_t planned = 0;
  std::uint64_t dispatched = 0;
  std::uint64_t backlog_rejections = 0;
  std::uint64_t late_commits = 0;
  std::uint64_t finalized_at_shutdown = 0;
  double max_lateness_ms = 0;
};

struct RunResult {
  report::SummaryReport report;
  loadgen::InjectionLog log;
  RunStats stats;
};

/// The whole orchestrated flow: users, plan, gateway, adapters, sampler,
/// injection, drain, shutdown, then reports into out_dir. Simulated-only
/// configs run on virtual time; anything else runs in real time with the
/// HTTP gateway listening as well.
RunResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir);

ExperimentConfig load_config(const std::filesystem::path& path);

/// Gateway, backends and sampler running standalone in real time until
/// stop(). Reports are written on stop.
class ServeSession {
 public:
  ServeSession(ExperimentConfig config, std::filesystem::path out_dir);
  ~ServeSession();

  /// Throws Error when the listen address cannot be bound.
  void start();
  /// Finalizes open records as timeout, stops everything, writes reports.
  report::SummaryReport stop();

  int port() const;
  gateway::Gateway& gateway() { return *gateway_; }
  monitor::Monitor& monitor() { return *monitor_; }
  const monitor::Sampler& sampler() const { return *sampler_; }

 private:
  ExperimentConfig config_;
  std::filesystem::path out_dir_;
  SteadyClock clock_;
  std::unique_ptr<monitor::Monitor> monitor_;
  std::unique_ptr<gateway::Gateway> gateway_;
  std::vector<std::shared_ptr<adapter::Adapter>> adapters_;
  std::unique_ptr<monitor::Sampler> sampler_;
  std::unique_ptr<gateway::HttpServer> http_;
  bool running_ = false;
  bool stopped_ = false;
};

/// Regenerates the summary exports in each run directory; with several
/// directories also writes compare.csv into compare_dir.
void regenerate(const std::vector<std::filesystem::path>& dirs, std::vector<std::string> labels,
                const std::filesystem::path& compare_dir);

enum ExitCode { kOk = 0, kConfigError = 1, kRuntimeError = 2 };

int cmd_run(const std::filesystem::path& config_path, const std::filesystem::path& out_dir,
            std::optional<std::uint64_t> seed_override);
/// Runs until SIGINT/SIGTERM.
int cmd_serve(const std::filesystem::path& config_path, std::optional<std::filesystem::path> out_dir);
int cmd_report(const std::vector<std::filesystem::path>& dirs, const std::vector<std::string>& labels,
               const std::filesystem::path& compare_dir);

}  // namespace blockmeter::experiment
