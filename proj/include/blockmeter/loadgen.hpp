#pragma once

#include "blockmeter/adapter.hpp"
#include "blockmeter/clock.hpp"
#include "blockmeter/config.hpp"
#include "blockmeter/core.hpp"
#include "blockmeter/gateway.hpp"
#include "blockmeter/monitor.hpp"

#include <condition_variable>
#include <filesystem>
#include <functional>
#include <istream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace blockmeter::loadgen {

struct PayloadRow {
  std::string user_id;
  std::string function;
  std::vector<std::string> args;
  Bytes payload;

  bool operator==(const PayloadRow&) const = default;
};

/// Header "user_id,function,args,payload_b64" in any column order; args is
/// ';'-joined. Fields may be double-quoted with "" escapes.
std::vector<PayloadRow> load_csv(const std::filesystem::path& path);
std::vector<PayloadRow> parse_csv(std::istream& in);

struct Arrival {
  Nanos arrival_ns = 0;  // offset from experiment start
  std::uint64_t payload_index = 0;
  std::uint32_t user_index = 0;
  std::uint32_t step = 0;

  bool operator==(const Arrival&) const = default;
};
using ArrivalPlan = std::vector<Arrival>;

/// round(rate * duration) arrivals per step. Uniform mode spaces them 1/rate
/// apart from the step start; Poisson mode draws the same count as sorted
/// uniform points in the step (a Poisson process conditioned on its count).
ArrivalPlan build_plan(const std::vector<RateStep>& schedule, std::uint32_t user_count, std::uint64_t seed,
                       ArrivalMode mode = ArrivalMode::uniform);

/// Schedule sized for a fixed number of payload rows. When the rows
/// outnumber the schedule's slots the final step is lengthened at its own
/// rate to fit them; fewer rows simply leave the tail of the plan unused.
/// Throws ConfigError if extra rows would need a zero-rate final step.
std::vector<RateStep> schedule_for_rows(const std::vector<RateStep>& schedule, std::size_t rows);

/// build_plan over schedule_for_rows, truncated to `rows` entries.
ArrivalPlan build_plan_for_rows(const std::vector<RateStep>& schedule, std::size_t rows, std::uint32_t user_count,
                                std::uint64_t seed, ArrivalMode mode = ArrivalMode::uniform);

struct InjectionEntry {
  std::uint64_t payload_index = 0;
  Nanos scheduled_ns = 0;
  Nanos actual_send_ns = 0;
  int http_status = 0;  // 0 when no response arrived
  std::string tx_id;
  std::string error;
  bool responded = false;
};
using InjectionLog = std::vector<InjectionEntry>;

struct SendResult {
  int http_status = 0;
  std::string tx_id;
  std::string error;
};

using RequestBuilder = std::function<gateway::SubmitBody(const Arrival&)>;

/// Request bodies from generated workload payloads.
RequestBuilder workload_builder(const WorkloadProfile& profile, std::uint64_t seed);
/// Request bodies from CSV rows indexed by payload_index.
RequestBuilder csv_builder(std::vector<PayloadRow> rows);

/// Where requests go. send() must return without waiting for the response.
class Target {
 public:
  virtual ~Target() = default;
  virtual void send(const Arrival& arrival, std::function<void(SendResult)> done) = 0;
};

/// Calls the gateway directly, bypassing TCP.
class InProcessTarget final : public Target {
 public:
  InProcessTarget(gateway::Gateway& gw, std::string backend_id, RequestBuilder build);
  void send(const Arrival& arrival, std::function<void(SendResult)> done) override;

 private:
  gateway::Gateway& gateway_;
  std::string backend_id_;
  RequestBuilder build_;
};

/// POSTs to http://host:port/api/{backend_id}/transactions, one connection
/// per request on its own thread.
class HttpTarget final : public Target {
 public:
  HttpTarget(std::string host, int port, std::string backend_id, RequestBuilder build, double timeout_s = 60.0);
  ~HttpTarget() override;

  void send(const Arrival& arrival, std::function<void(SendResult)> done) override;
  /// Blocks until every spawned request has finished.
  void join();

 private:
  std::string host_;
  int port_;
  std::string backend_id_;
  RequestBuilder build_;
  double timeout_s_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t running_ = 0;
};

/// Releases arrivals at their scheduled times.
class Pacer {
 public:
  virtual ~Pacer() = default;
  virtual Nanos now() const = 0;
  /// Returns once the clock has reached t; the result is the dispatch time.
  virtual Nanos wait_until(Nanos t) = 0;
  /// Lets time pass until done() holds or `limit` is reached.
  virtual void drain(const std::function<bool()>& done, Nanos limit) = 0;
};

class RealPacer final : public Pacer {
 public:
  explicit RealPacer(const SteadyClock& clock) : clock_(clock) {}
  Nanos now() const override { return clock_.now(); }
  Nanos wait_until(Nanos t) override;
  void drain(const std::function<bool()>& done, Nanos limit) override;

 private:
  const SteadyClock& clock_;
};

/// Drives a VirtualClock: before each step the virtual backends' completions
/// and sampler ticks up to the target time fire in time order, each with the
/// clock set to its own timestamp.
class VirtualPacer final : public Pacer {
 public:
  VirtualPacer(VirtualClock& clock, std::vector<adapter::VirtualBackend*> backends,
               monitor::Sampler* sampler = nullptr, Nanos sampler_origin = 0);

  Nanos now() const override { return clock_.now(); }
  Nanos wait_until(Nanos t) override;
  void drain(const std::function<bool()>& done, Nanos limit) override;

  static constexpr Nanos kDrainStep = 10'000'000;

 private:
  void release_until(Nanos t);

  VirtualClock& clock_;
  std::vector<adapter::VirtualBackend*> backends_;
  monitor::Sampler* sampler_;
  Nanos next_tick_ = 0;
  Nanos tick_ns_ = 0;
};

/// Open-loop injection: entry i is dispatched at origin + plan[i].arrival_ns
/// whatever the state of earlier requests. Waits up to `drain_limit` after
/// the last dispatch for outstanding responses; entries still unanswered
/// then carry error "no response".
InjectionLog inject(const ArrivalPlan& plan, Target& target, Pacer& pacer, Nanos origin, Nanos drain_limit);

}  // namespace blockmeter::loadgen
