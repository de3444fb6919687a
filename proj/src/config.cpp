#include "blockmeter/config.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace blockmeter {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string join_path(std::string_view base, std::string_view key) {
  return base.empty() ? std::string(key) : fmt::format("{}.{}", base, key);
}

/// Typed accessors over one JSON object that record problems instead of throwing.
class Fields {
 public:
  Fields(const json& obj, std::string path, std::vector<std::string>& problems,
         std::vector<std::string_view> allowed)
      : obj_(obj), path_(std::move(path)), problems_(problems) {
    if (!obj_.is_object()) {
      fail_at(path_.empty() ? "<root>" : path_, "must be an object");
      return;
    }
    for (const auto& [key, _] : obj_.items()) {
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
        fail_at(join_path(path_, key), "unknown field");
      }
    }
  }

  bool has(std::string_view key) const { return obj_.is_object() && obj_.contains(key); }
  const json& at(std::string_view key) const { return obj_.at(key); }
  std::string path(std::string_view key) const { return join_path(path_, key); }

  void fail(std::string_view key, std::string_view msg) { fail_at(path(key), msg); }

  double number(std::string_view key, double fallback, double min, bool min_exclusive = false,
                double max = std::numeric_limits<double>::infinity(), bool max_exclusive = false) {
    if (!has(key)) return fallback;
    const auto& v = at(key);
    if (!v.is_number()) {
      fail(key, "must be a number");
      return fallback;
    }
    const double d = v.get<double>();
    const bool low = min_exclusive ? d <= min : d < min;
    const bool high = max_exclusive ? d >= max : d > max;
    if (!std::isfinite(d) || low || high) {
      fail(key, range_text(min, min_exclusive, max, max_exclusive));
      return fallback;
    }
    return d;
  }

  std::uint64_t integer(std::string_view key, std::uint64_t fallback, std::uint64_t min = 0) {
    if (!has(key)) return fallback;
    const auto& v = at(key);
    if (v.is_number_integer() && v.get<std::int64_t>() < 0) {
      fail(key, fmt::format("must be an integer >= {}", min));
      return fallback;
    }
    if (!v.is_number_unsigned() && !v.is_number_integer()) {
      fail(key, "must be an integer");
      return fallback;
    }
    const auto u = v.get<std::uint64_t>();
    if (u < min) {
      fail(key, fmt::format("must be an integer >= {}", min));
      return fallback;
    }
    return u;
  }

  std::string string(std::string_view key, std::string fallback, bool required = false) {
    if (!has(key)) {
      if (required) fail(key, "is required");
      return fallback;
    }
    const auto& v = at(key);
    if (!v.is_string()) {
      fail(key, "must be a string");
      return fallback;
    }
    return v.get<std::string>();
  }

 private:
  static std::string range_text(double min, bool min_ex, double max, bool max_ex) {
    std::string s = fmt::format("must be {} {}", min_ex ? ">" : ">=", min);
    if (std::isfinite(max)) s += fmt::format(" and {} {}", max_ex ? "<" : "<=", max);
    return s;
  }

  void fail_at(std::string_view path, std::string_view msg) {
    problems_.push_back(fmt::format("{}: {}", path, msg));
  }

  const json& obj_;
  std::string path_;
  std::vector<std::string>& problems_;
};

bool is_remote_id(std::string_view id) { return id == "remote" || id.starts_with("remote-"); }

simnet::ServiceModel parse_service(Fields& f) {
  simnet::ServiceModel s;
  s.base_service_s = f.number("base_service_s", s.base_service_s, 0);
  s.data_coeff_s_per_byte = f.number("data_coeff_s_per_byte", s.data_coeff_s_per_byte, 0);
  s.cpu_coeff_s_per_iter = f.number("cpu_coeff_s_per_iter", s.cpu_coeff_s_per_iter, 0);
  s.jitter = f.number("jitter", s.jitter, 0, false, 1, true);
  return s;
}

simnet::LedgerMemoryModel parse_memory(Fields& f) {
  simnet::LedgerMemoryModel m;
  m.mem_base_bytes = f.integer("mem_base_bytes", m.mem_base_bytes);
  m.mem_per_tx_bytes = f.integer("mem_per_tx_bytes", m.mem_per_tx_bytes);
  return m;
}

std::uint32_t to_u32(std::uint64_t v) {
  return static_cast<std::uint32_t>(std::min<std::uint64_t>(v, std::numeric_limits<std::uint32_t>::max()));
}

BackendSpec parse_backend(const std::string& id, const json* params, const std::string& path,
                          std::vector<std::string>& problems) {
  static const json kEmpty = json::object();
  const json& raw = params ? *params : kEmpty;
  BackendSpec spec;
  spec.backend_id = id;

  if (id == "simnet-fabric") {
    Fields f(raw, path, problems,
             {"endorser_count", "block_size", "batch_timeout", "base_service_s", "data_coeff_s_per_byte",
              "cpu_coeff_s_per_iter", "validate_per_block_s", "validate_per_tx_s", "jitter",
              "mem_base_bytes", "mem_per_tx_bytes", "trace_path"});
    simnet::FabricSimParams p;
    p.endorser_count = to_u32(f.integer("endorser_count", p.endorser_count, 1));
    p.block_size = to_u32(f.integer("block_size", p.block_size, 1));
    p.batch_timeout_s = f.number("batch_timeout", p.batch_timeout_s, 0, true);
    p.service = parse_service(f);
    p.validate_per_block_s = f.number("validate_per_block_s", p.validate_per_block_s, 0);
    p.validate_per_tx_s = f.number("validate_per_tx_s", p.validate_per_tx_s, 0);
    p.memory = parse_memory(f);
    spec.trace_path = f.string("trace_path", "");
    spec.params = p;
  } else if (id == "simnet-sawtooth") {
    Fields f(raw, path, problems,
             {"validator_count", "mean_wait_s", "block_size", "batch_timeout", "base_service_s",
              "data_coeff_s_per_byte", "cpu_coeff_s_per_iter", "jitter", "mem_base_bytes",
              "mem_per_tx_bytes", "trace_path"});
    simnet::SawtoothSimParams p;
    p.validator_count = to_u32(f.integer("validator_count", p.validator_count, 1));
    p.mean_wait_s = f.number("mean_wait_s", p.mean_wait_s, 0);
    p.block_size = to_u32(f.integer("block_size", p.block_size, 1));
    p.batch_timeout_s = f.number("batch_timeout", p.batch_timeout_s, 0, true);
    p.service = parse_service(f);
    p.memory = parse_memory(f);
    spec.trace_path = f.string("trace_path", "");
    spec.params = p;
  } else {
    Fields f(raw, path, problems, {"endpoint", "concurrency"});
    RemoteParams p;
    p.endpoint = f.string("endpoint", "", true);
    if (!p.endpoint.empty() && !p.endpoint.starts_with("http://")) {
      f.fail("endpoint", "must be an http:// URL");
    }
    p.concurrency = to_u32(f.integer("concurrency", p.concurrency, 1));
    spec.params = p;
  }
  return spec;
}

std::optional<std::string> check_backend_id(Fields& f, std::string_view key) {
  auto id = f.string(key, "", true);
  if (id.empty()) return std::nullopt;
  const auto& known = registered_backends();
  if (std::find(known.begin(), known.end(), id) == known.end() && !is_remote_id(id)) {
    f.fail(key, fmt::format("unknown backend '{}'; registered backends: {}", id,
                            fmt::join(known, ", ")));
    return std::nullopt;
  }
  return id;
}

ordered_json service_json(const simnet::ServiceModel& s, ordered_json& j) {
  j["base_service_s"] = s.base_service_s;
  j["data_coeff_s_per_byte"] = s.data_coeff_s_per_byte;
  j["cpu_coeff_s_per_iter"] = s.cpu_coeff_s_per_iter;
  j["jitter"] = s.jitter;
  return j;
}

ordered_json params_json(const BackendSpec& spec) {
  ordered_json j = ordered_json::object();
  if (const auto* f = std::get_if<simnet::FabricSimParams>(&spec.params)) {
    j["endorser_count"] = f->endorser_count;
    j["block_size"] = f->block_size;
    j["batch_timeout"] = f->batch_timeout_s;
    service_json(f->service, j);
    j["validate_per_block_s"] = f->validate_per_block_s;
    j["validate_per_tx_s"] = f->validate_per_tx_s;
    j["mem_base_bytes"] = f->memory.mem_base_bytes;
    j["mem_per_tx_bytes"] = f->memory.mem_per_tx_bytes;
  } else if (const auto* s = std::get_if<simnet::SawtoothSimParams>(&spec.params)) {
    j["validator_count"] = s->validator_count;
    j["mean_wait_s"] = s->mean_wait_s;
    j["block_size"] = s->block_size;
    j["batch_timeout"] = s->batch_timeout_s;
    service_json(s->service, j);
    j["mem_base_bytes"] = s->memory.mem_base_bytes;
    j["mem_per_tx_bytes"] = s->memory.mem_per_tx_bytes;
  } else {
    const auto& r = std::get<RemoteParams>(spec.params);
    j["endpoint"] = r.endpoint;
    j["concurrency"] = r.concurrency;
  }
  if (!spec.trace_path.empty()) j["trace_path"] = spec.trace_path;
  return j;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : Error(fmt::format("invalid config:\n  {}", fmt::join(problems, "\n  "))),
      problems_(std::move(problems)) {}

const std::vector<std::string>& registered_backends() {
  static const std::vector<std::string> kIds = {"simnet-fabric", "simnet-sawtooth", "remote"};
  return kIds;
}

std::vector<BackendSpec> ExperimentConfig::all_backends() const {
  std::vector<BackendSpec> out{backend};
  out.insert(out.end(), extra_backends.begin(), extra_backends.end());
  return out;
}

bool ExperimentConfig::all_simulated() const {
  const auto all = all_backends();
  return std::all_of(all.begin(), all.end(),
                     [](const BackendSpec& b) { return b.kind() == AdapterKind::simulated; });
}

ExperimentConfig validate_config(std::string_view raw) {
  json parsed;
  try {
    parsed = json::parse(raw);
  } catch (const json::parse_error& e) {
    throw ConfigError({fmt::format("<root>: not valid JSON ({})", e.what())});
  }
  return validate_config(parsed);
}

ExperimentConfig validate_config(const json& raw) {
  std::vector<std::string> problems;
  ExperimentConfig cfg;
  Fields top(raw, "", problems,
             {"backend_id", "backend_params", "extra_backends", "workload", "schedule", "arrival",
              "user_count", "seed", "warmup_fraction", "sample_interval_s", "inflight_cap",
              "submit_timeout_s", "csv_path", "listen", "stats_endpoint", "containers", "out_dir"});
  if (!raw.is_object()) throw ConfigError(std::move(problems));

  if (auto id = check_backend_id(top, "backend_id")) {
    cfg.backend = parse_backend(*id, top.has("backend_params") ? &top.at("backend_params") : nullptr,
                                "backend_params", problems);
  }

  if (top.has("extra_backends")) {
    const auto& list = top.at("extra_backends");
    if (!list.is_array()) {
      top.fail("extra_backends", "must be an array");
    } else {
      for (std::size_t i = 0; i < list.size(); ++i) {
        const std::string base = fmt::format("extra_backends[{}]", i);
        Fields f(list[i], base, problems, {"backend_id", "backend_params"});
        if (!list[i].is_object()) continue;
        if (auto id = check_backend_id(f, "backend_id")) {
          cfg.extra_backends.push_back(parse_backend(
              *id, f.has("backend_params") ? &f.at("backend_params") : nullptr, f.path("backend_params"),
              problems));
        }
      }
    }
  }
  {
    auto ids = std::vector<std::string>{cfg.backend.backend_id};
    for (const auto& b : cfg.extra_backends) {
      if (std::find(ids.begin(), ids.end(), b.backend_id) != ids.end()) {
        problems.push_back(fmt::format("extra_backends: duplicate backend_id '{}'", b.backend_id));
      }
      ids.push_back(b.backend_id);
    }
  }

  if (!top.has("workload")) {
    top.fail("workload", "is required");
  } else {
    Fields w(top.at("workload"), "workload", problems, {"kind", "payload_bytes", "cpu_iterations"});
    const auto kind_text = w.string("kind", "", true);
    if (!kind_text.empty()) {
      try {
        cfg.workload = WorkloadProfile::defaults_for(parse_workload_kind(kind_text));
      } catch (const Error&) {
        w.fail("kind", "must be one of simple, data_heavy, cpu_heavy");
      }
    }
    cfg.workload.payload_bytes = w.integer("payload_bytes", cfg.workload.payload_bytes);
    cfg.workload.cpu_iterations = w.integer("cpu_iterations", cfg.workload.cpu_iterations);
    if (cfg.workload.kind == WorkloadKind::simple &&
        cfg.workload.payload_bytes > WorkloadProfile::kMaxSimplePayload) {
      w.fail("payload_bytes", fmt::format("must be <= {} for the simple workload",
                                          WorkloadProfile::kMaxSimplePayload));
    }
  }

  if (!top.has("schedule")) {
    top.fail("schedule", "is required");
  } else if (!top.at("schedule").is_array() || top.at("schedule").empty()) {
    top.fail("schedule", "must be a non-empty array");
  } else {
    const auto& steps = top.at("schedule");
    for (std::size_t i = 0; i < steps.size(); ++i) {
      const std::string base = fmt::format("schedule[{}]", i);
      RateStep step;
      if (steps[i].is_array()) {
        // shorthand [rate_tps, duration_s]
        if (steps[i].size() != 2 || !steps[i][0].is_number() || !steps[i][1].is_number()) {
          problems.push_back(fmt::format("{}: must be [rate_tps, duration_s]", base));
          continue;
        }
        json obj{{"rate_tps", steps[i][0]}, {"duration_s", steps[i][1]}};
        Fields f(obj, base, problems, {"rate_tps", "duration_s"});
        step.rate_tps = f.number("rate_tps", 0, 0);
        step.duration_s = f.number("duration_s", 1, 0, true);
      } else {
        Fields f(steps[i], base, problems, {"rate_tps", "duration_s"});
        if (!f.has("rate_tps")) f.fail("rate_tps", "is required");
        if (!f.has("duration_s")) f.fail("duration_s", "is required");
        step.rate_tps = f.number("rate_tps", 0, 0);
        step.duration_s = f.number("duration_s", 1, 0, true);
      }
      cfg.schedule.push_back(step);
    }
  }

  const auto arrival = top.string("arrival", "uniform");
  if (arrival == "poisson") {
    cfg.arrival = ArrivalMode::poisson;
  } else if (arrival != "uniform") {
    top.fail("arrival", "must be 'uniform' or 'poisson'");
  }
  cfg.user_count = to_u32(top.integer("user_count", cfg.user_count, 1));
  cfg.seed = top.integer("seed", cfg.seed);
  cfg.warmup_fraction = top.number("warmup_fraction", cfg.warmup_fraction, 0, false, 1, true);
  cfg.sample_interval_s = top.number("sample_interval_s", cfg.sample_interval_s, 0, true);
  cfg.inflight_cap = top.integer("inflight_cap", cfg.inflight_cap, 1);
  cfg.submit_timeout_s = top.number("submit_timeout_s", cfg.submit_timeout_s, 0);
  cfg.csv_path = top.string("csv_path", "");
  cfg.listen = top.string("listen", cfg.listen);
  cfg.stats_endpoint = top.string("stats_endpoint", "");
  cfg.out_dir = top.string("out_dir", cfg.out_dir);
  if (top.has("containers")) {
    const auto& c = top.at("containers");
    if (!c.is_array() || !std::all_of(c.begin(), c.end(), [](const json& v) { return v.is_string(); })) {
      top.fail("containers", "must be an array of strings");
    } else {
      cfg.containers = c.get<std::vector<std::string>>();
    }
  }

  if (!problems.empty()) throw ConfigError(std::move(problems));
  return cfg;
}

ordered_json to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["backend_id"] = c.backend.backend_id;
  j["backend_params"] = params_json(c.backend);
  if (!c.extra_backends.empty()) {
    j["extra_backends"] = ordered_json::array();
    for (const auto& b : c.extra_backends) {
      j["extra_backends"].push_back({{"backend_id", b.backend_id}, {"backend_params", params_json(b)}});
    }
  }
  j["workload"] = {{"kind", to_string(c.workload.kind)},
                   {"payload_bytes", c.workload.payload_bytes},
                   {"cpu_iterations", c.workload.cpu_iterations}};
  j["schedule"] = ordered_json::array();
  for (const auto& s : c.schedule) {
    j["schedule"].push_back({{"rate_tps", s.rate_tps}, {"duration_s", s.duration_s}});
  }
  j["arrival"] = c.arrival == ArrivalMode::poisson ? "poisson" : "uniform";
  j["user_count"] = c.user_count;
  j["seed"] = c.seed;
  j["warmup_fraction"] = c.warmup_fraction;
  j["sample_interval_s"] = c.sample_interval_s;
  j["inflight_cap"] = c.inflight_cap;
  j["submit_timeout_s"] = c.submit_timeout_s;
  if (!c.csv_path.empty()) j["csv_path"] = c.csv_path;
  j["listen"] = c.listen;
  if (!c.stats_endpoint.empty()) j["stats_endpoint"] = c.stats_endpoint;
  if (!c.containers.empty()) j["containers"] = c.containers;
  j["out_dir"] = c.out_dir;
  return j;
}

std::string serialize(const ExperimentConfig& config) { return to_json(config).dump(2); }

}  // namespace blockmeter
