#pragma once

#include "blockmeter/clock.hpp"
#include "blockmeter/config.hpp"
#include "blockmeter/core.hpp"
#include "blockmeter/simnet.hpp"

#include <json.hpp>

#include <atomic>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <queue>
#include <string>
#include <thread>
#include <vector>

namespace blockmeter::adapter {

struct AdapterDescriptor {
  std::string backend_id;
  AdapterKind kind = AdapterKind::simulated;
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
};

using Completion = std::function<void(CommitReceipt)>;

/// Translates signed transactions into backend submissions.
///
/// Every accepted call to submit_async invokes `done` exactly once, no later
/// than the deadline (plus driver granularity). A transaction whose signature
/// does not verify completes immediately as rejected.
class Adapter {
 public:
  virtual ~Adapter() = default;

  virtual const AdapterDescriptor& descriptor() const = 0;
  virtual void submit_async(SignedTransaction tx, Nanos deadline, Completion done) = 0;

  /// Blocking form of submit_async. Not usable with a virtually clocked adapter.
  CommitReceipt submit(SignedTransaction tx, Nanos deadline);

  virtual void start() {}
  /// Completes every outstanding submission; later submits complete with error.
  virtual void stop() {}

  /// Receipts that arrived after their transaction had already timed out.
  virtual std::uint64_t late_commits() const { return 0; }
};

struct TimedCompletion {
  Nanos t = 0;
  CommitReceipt receipt;
  Completion done;
};

/// A backend whose completions are released by an external time driver.
class VirtualBackend {
 public:
  virtual ~VirtualBackend() = default;
  /// Completions with timestamps <= t in time order; the caller fires them.
  virtual std::vector<TimedCompletion> collect_until(Nanos t) = 0;
};

/// Adapter over an in-process simnet engine.
///
/// With a SteadyClock a driver thread advances the engine every millisecond.
/// With a VirtualClock nothing runs on its own; the experiment pacer calls
/// collect_until() and fires the returned completions.
class SimAdapter final : public Adapter, public VirtualBackend {
 public:
  SimAdapter(const BackendSpec& spec, const Clock& clock, std::uint64_t seed);
  ~SimAdapter() override;

  const AdapterDescriptor& descriptor() const override { return descriptor_; }
  void submit_async(SignedTransaction tx, Nanos deadline, Completion done) override;
  void start() override;
  void stop() override;
  std::uint64_t late_commits() const override { return late_commits_.load(); }

  std::vector<TimedCompletion> collect_until(Nanos t) override;
  /// Releases due completions, then samples every simulated node.
  std::vector<ResourceSample> resource_snapshot(Nanos now);

  std::uint64_t enqueued() const;
  std::uint64_t committed() const;
  std::uint64_t rejected() const { return rejected_.load(); }

 private:
  struct Outstanding {
    std::string tx_id;
    Nanos deadline;
    Completion done;
  };
  using DeadlineEntry = std::pair<Nanos, std::uint64_t>;

  void drive();
  static void fire(std::vector<TimedCompletion>& completions);

  AdapterDescriptor descriptor_;
  const Clock& clock_;
  std::unique_ptr<std::ofstream> trace_;
  mutable std::mutex mu_;
  std::unique_ptr<simnet::Engine> engine_;
  std::map<std::uint64_t, Outstanding> outstanding_;
  std::priority_queue<DeadlineEntry, std::vector<DeadlineEntry>, std::greater<>> deadlines_;
  std::uint64_t next_seq_ = 0;
  bool stopped_ = false;
  std::atomic<std::uint64_t> late_commits_{0};
  std::atomic<std::uint64_t> rejected_{0};

  std::atomic<bool> running_{false};
  std::thread driver_;
};

/// Forwards transactions to external middleware over HTTP using the neutral
/// wire format. Requests run on a fixed pool of workers.
class RemoteAdapter final : public Adapter {
 public:
  RemoteAdapter(std::string backend_id, RemoteParams params, const Clock& clock);
  ~RemoteAdapter() override;

  const AdapterDescriptor& descriptor() const override { return descriptor_; }
  void submit_async(SignedTransaction tx, Nanos deadline, Completion done) override;
  void start() override;
  void stop() override;
  std::uint64_t late_commits() const override { return late_commits_.load(); }

 private:
  struct Job {
    SignedTransaction tx;
    Nanos deadline;
    Completion done;
  };

  void work();
  CommitReceipt remote_submit(const SignedTransaction& tx, Nanos deadline);

  AdapterDescriptor descriptor_;
  RemoteParams params_;
  const Clock& clock_;
  std::string host_;
  int port_ = 80;
  std::string path_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Job> jobs_;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
  std::atomic<std::uint64_t> late_commits_{0};
};

/// Wire body POSTed to remote middleware.
nlohmann::ordered_json wire_request(const SignedTransaction& tx);

/// Parses "http://host[:port][/path]". Throws Error on anything else.
struct Endpoint {
  std::string host;
  int port = 80;
  std::string path = "/";
};
Endpoint parse_endpoint(std::string_view url);

std::unique_ptr<Adapter> make_adapter(const BackendSpec& spec, const Clock& clock, std::uint64_t seed);

}  // namespace blockmeter::adapter
