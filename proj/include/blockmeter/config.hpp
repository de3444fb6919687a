#pragma once

#include "blockmeter/core.hpp"
#include "blockmeter/simnet.hpp"

#include <json.hpp>

#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace blockmeter {

enum class AdapterKind { simulated, remote };
enum class ArrivalMode { uniform, poisson };

struct RemoteParams {
  std::string endpoint;
  std::uint32_t concurrency = 64;

  bool operator==(const RemoteParams&) const = default;
};

using BackendParams = std::variant<simnet::FabricSimParams, simnet::SawtoothSimParams, RemoteParams>;

struct BackendSpec {
  std::string backend_id;
  BackendParams params;
  std::string trace_path;  // simulated backends only; empty disables the event trace

  AdapterKind kind() const {
    return std::holds_alternative<RemoteParams>(params) ? AdapterKind::remote : AdapterKind::simulated;
  }
  bool operator==(const BackendSpec&) const = default;
};

struct ExperimentConfig {
  BackendSpec backend;
  std::vector<BackendSpec> extra_backends;
  WorkloadProfile workload;
  std::vector<RateStep> schedule;
  ArrivalMode arrival = ArrivalMode::uniform;
  std::uint32_t user_count = 10;
  std::uint64_t seed = 42;
  double warmup_fraction = 0.1;
  double sample_interval_s = 3.0;
  std::uint64_t inflight_cap = 100000;
  double submit_timeout_s = 30.0;
  std::string csv_path;
  std::string listen = "127.0.0.1:8380";
  std::string stats_endpoint;
  std::vector<std::string> containers;
  std::string out_dir = "blockmeter-serve";

  /// Primary backend followed by the extra ones.
  std::vector<BackendSpec> all_backends() const;
  bool all_simulated() const;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Carries one message per invalid field, each prefixed with its JSON path.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// "simnet-fabric", "simnet-sawtooth", and "remote" (also "remote-<name>").
const std::vector<std::string>& registered_backends();

/// Parses a JSON experiment config and applies every default.
ExperimentConfig validate_config(std::string_view raw);
ExperimentConfig validate_config(const nlohmann::json& raw);
inline ExperimentConfig validate_config(const std::string& raw) { return validate_config(std::string_view(raw)); }

nlohmann::ordered_json to_json(const ExperimentConfig& config);
std::string serialize(const ExperimentConfig& config);

}  // namespace blockmeter
