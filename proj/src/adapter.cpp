#include "blockmeter/adapter.hpp"

#include "blockmeter/workload.hpp"

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include <charconv>
#include <future>

namespace blockmeter::adapter {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

CommitReceipt make_receipt(const std::string& tx_id, TxStatus status, std::string detail = {}) {
  CommitReceipt r;
  r.tx_id = tx_id;
  r.status = status;
  r.detail = std::move(detail);
  return r;
}

ordered_json describe(const BackendSpec& spec) {
  ordered_json j = ordered_json::object();
  if (const auto* f = std::get_if<simnet::FabricSimParams>(&spec.params)) {
    j = {{"model", "fabric"}, {"endorser_count", f->endorser_count}, {"block_size", f->block_size},
         {"batch_timeout", f->batch_timeout_s}};
  } else if (const auto* s = std::get_if<simnet::SawtoothSimParams>(&spec.params)) {
    j = {{"model", "sawtooth"}, {"validator_count", s->validator_count}, {"mean_wait_s", s->mean_wait_s},
         {"block_size", s->block_size}};
  } else {
    j = {{"endpoint", std::get<RemoteParams>(spec.params).endpoint}};
  }
  return j;
}

}  // namespace

CommitReceipt Adapter::submit(SignedTransaction tx, Nanos deadline) {
  auto promise = std::make_shared<std::promise<CommitReceipt>>();
  auto future = promise->get_future();
  submit_async(std::move(tx), deadline, [promise](CommitReceipt r) { promise->set_value(std::move(r)); });
  return future.get();
}

// ---------------------------------------------------------------------------

SimAdapter::SimAdapter(const BackendSpec& spec, const Clock& clock, std::uint64_t seed)
    : clock_(clock) {
  descriptor_.backend_id = spec.backend_id;
  descriptor_.kind = AdapterKind::simulated;
  descriptor_.params = describe(spec);
  const Nanos start = clock.now();
  if (const auto* f = std::get_if<simnet::FabricSimParams>(&spec.params)) {
    engine_ = std::make_unique<simnet::FabricEngine>(*f, seed, spec.backend_id, start);
  } else if (const auto* s = std::get_if<simnet::SawtoothSimParams>(&spec.params)) {
    engine_ = std::make_unique<simnet::SawtoothEngine>(*s, seed, spec.backend_id, start);
  } else {
    throw Error(fmt::format("backend {} is not a simulated backend", spec.backend_id));
  }
  if (!spec.trace_path.empty()) {
    trace_ = std::make_unique<std::ofstream>(spec.trace_path, std::ios::trunc);
    if (!*trace_) throw Error(fmt::format("cannot open trace file {}", spec.trace_path));
    engine_->set_trace(trace_.get());
  }
}

SimAdapter::~SimAdapter() { stop(); }

void SimAdapter::start() {
  if (clock_.is_virtual() || running_.exchange(true)) return;
  driver_ = std::thread([this] { drive(); });
}

void SimAdapter::stop() {
  if (running_.exchange(false) && driver_.joinable()) driver_.join();
  std::vector<TimedCompletion> leftovers;
  {
    std::lock_guard lock(mu_);
    if (stopped_) return;
    stopped_ = true;
    const Nanos now = std::max(clock_.now(), engine_->clock());
    for (auto& [seq, o] : outstanding_) {
      leftovers.push_back({now, make_receipt(o.tx_id, TxStatus::timeout, "backend stopped"), std::move(o.done)});
    }
    outstanding_.clear();
    if (trace_) trace_->flush();
  }
  fire(leftovers);
}

void SimAdapter::submit_async(SignedTransaction tx, Nanos deadline, Completion done) {
  const auto& tx_id = tx.request.tx_id;
  if (!workload::verify(tx)) {
    ++rejected_;
    done(make_receipt(tx_id, TxStatus::rejected, "bad signature"));
    return;
  }
  std::unique_lock lock(mu_);
  if (stopped_) {
    lock.unlock();
    done(make_receipt(tx_id, TxStatus::error, "backend stopped"));
    return;
  }
  const Nanos now = std::max(clock_.now(), engine_->clock());
  if (deadline <= now) {
    lock.unlock();
    done(make_receipt(tx_id, TxStatus::timeout, "deadline already passed"));
    return;
  }
  const auto seq = next_seq_++;
  engine_->enqueue({seq, tx_id, simnet::profile_of(tx.request)}, now);
  outstanding_.emplace(seq, Outstanding{tx_id, deadline, std::move(done)});
  deadlines_.emplace(deadline, seq);
}

std::vector<TimedCompletion> SimAdapter::collect_until(Nanos t) {
  std::lock_guard lock(mu_);
  std::vector<TimedCompletion> out;
  if (stopped_) return out;
  t = std::max(t, engine_->clock());
  auto events = engine_->advance(t);

  std::size_t i = 0;
  while (true) {
    while (!deadlines_.empty() && !outstanding_.contains(deadlines_.top().second)) deadlines_.pop();
    const bool have_commit = i < events.size();
    const bool have_deadline = !deadlines_.empty() && deadlines_.top().first <= t;
    if (!have_commit && !have_deadline) break;

    // a commit exactly at the deadline still counts as committed
    if (have_commit && (!have_deadline || events[i].commit_ns <= deadlines_.top().first)) {
      auto& ev = events[i++];
      auto it = outstanding_.find(ev.seq);
      if (it == outstanding_.end()) {
        ++late_commits_;
        continue;
      }
      CommitReceipt r = make_receipt(it->second.tx_id, TxStatus::committed);
      r.commit_time = ev.commit_ns;
      r.block_id = ev.block_id;
      out.push_back({ev.commit_ns, std::move(r), std::move(it->second.done)});
      outstanding_.erase(it);
    } else {
      const auto [deadline, seq] = deadlines_.top();
      deadlines_.pop();
      auto it = outstanding_.find(seq);
      out.push_back({deadline, make_receipt(it->second.tx_id, TxStatus::timeout, "deadline exceeded"),
                     std::move(it->second.done)});
      outstanding_.erase(it);
    }
  }
  return out;
}

std::vector<ResourceSample> SimAdapter::resource_snapshot(Nanos now) {
  auto due = collect_until(now);
  fire(due);
  std::lock_guard lock(mu_);
  return engine_->resource_snapshot(std::max(now, engine_->clock()));
}

std::uint64_t SimAdapter::enqueued() const {
  std::lock_guard lock(mu_);
  return engine_->enqueued();
}

std::uint64_t SimAdapter::committed() const {
  std::lock_guard lock(mu_);
  return engine_->committed();
}

void SimAdapter::fire(std::vector<TimedCompletion>& completions) {
  for (auto& c : completions) {
    if (c.done) c.done(std::move(c.receipt));
  }
}

void SimAdapter::drive() {
  while (running_.load()) {
    std::this_thread::sleep_for(std::chrono::microseconds(500));
    auto due = collect_until(clock_.now());
    fire(due);
  }
}

// ---------------------------------------------------------------------------

Endpoint parse_endpoint(std::string_view url) {
  constexpr std::string_view kScheme = "http://";
  if (!url.starts_with(kScheme)) throw Error(fmt::format("unsupported endpoint '{}'", url));
  std::string_view rest = url.substr(kScheme.size());
  Endpoint ep;
  const auto slash = rest.find('/');
  std::string_view authority = rest.substr(0, slash);
  ep.path = slash == std::string_view::npos ? "/" : std::string(rest.substr(slash));
  const auto colon = authority.rfind(':');
  if (colon != std::string_view::npos) {
    const auto port_text = authority.substr(colon + 1);
    auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), ep.port);
    if (ec != std::errc{} || ptr != port_text.data() + port_text.size() || ep.port <= 0 || ep.port > 65535) {
      throw Error(fmt::format("bad port in endpoint '{}'", url));
    }
    authority = authority.substr(0, colon);
  }
  if (authority.empty()) throw Error(fmt::format("missing host in endpoint '{}'", url));
  ep.host = std::string(authority);
  return ep;
}

ordered_json wire_request(const SignedTransaction& tx) {
  const auto& r = tx.request;
  return {{"tx_id", r.tx_id},
          {"user_id", r.user_id},
          {"function", r.function},
          {"args", r.args},
          {"payload_b64", base64_encode(r.payload)},
          {"signature_b64", base64_encode(tx.signature)},
          {"public_key_b64", base64_encode(tx.signer_public_key)}};
}

RemoteAdapter::RemoteAdapter(std::string backend_id, RemoteParams params, const Clock& clock)
    : params_(std::move(params)), clock_(clock) {
  if (clock.is_virtual()) throw Error("remote backends require a real-time clock");
  descriptor_.backend_id = std::move(backend_id);
  descriptor_.kind = AdapterKind::remote;
  descriptor_.params = {{"endpoint", params_.endpoint}, {"concurrency", params_.concurrency}};
  const auto ep = parse_endpoint(params_.endpoint);
  host_ = ep.host;
  port_ = ep.port;
  path_ = ep.path;
}

RemoteAdapter::~RemoteAdapter() { stop(); }

void RemoteAdapter::start() {
  std::lock_guard lock(mu_);
  if (!workers_.empty() || stopping_) return;
  for (std::uint32_t i = 0; i < std::max<std::uint32_t>(params_.concurrency, 1); ++i) {
    workers_.emplace_back([this] { work(); });
  }
}

void RemoteAdapter::stop() {
  std::deque<Job> abandoned;
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
    abandoned.swap(jobs_);
  }
  cv_.notify_all();
  for (auto& w : workers_) {
    if (w.joinable()) w.join();
  }
  workers_.clear();
  for (auto& job : abandoned) {
    job.done(make_receipt(job.tx.request.tx_id, TxStatus::timeout, "backend stopped"));
  }
}

void RemoteAdapter::submit_async(SignedTransaction tx, Nanos deadline, Completion done) {
  if (!workload::verify(tx)) {
    done(make_receipt(tx.request.tx_id, TxStatus::rejected, "bad signature"));
    return;
  }
  std::unique_lock lock(mu_);
  if (stopping_) {
    lock.unlock();
    done(make_receipt(tx.request.tx_id, TxStatus::error, "backend stopped"));
    return;
  }
  if (workers_.empty()) {
    // not started: run inline so the blocking submit() form works standalone
    lock.unlock();
    done(remote_submit(tx, deadline));
    return;
  }
  jobs_.push_back({std::move(tx), deadline, std::move(done)});
  lock.unlock();
  cv_.notify_one();
}

void RemoteAdapter::work() {
  while (true) {
    Job job;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stopping_ || !jobs_.empty(); });
      if (jobs_.empty()) return;
      job = std::move(jobs_.front());
      jobs_.pop_front();
    }
    job.done(remote_submit(job.tx, job.deadline));
  }
}

CommitReceipt RemoteAdapter::remote_submit(const SignedTransaction& tx, Nanos deadline) {
  const auto& tx_id = tx.request.tx_id;
  const Nanos remaining = deadline - clock_.now();
  if (remaining <= 0) return make_receipt(tx_id, TxStatus::timeout, "deadline already passed");

  httplib::Client client(host_, port_);
  const auto budget = std::chrono::nanoseconds(remaining);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(budget);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(budget - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  try {
    auto res = client.Post(path_, wire_request(tx).dump(), "application/json");
    const Nanos now = clock_.now();
    if (!res) {
      if (now >= deadline) return make_receipt(tx_id, TxStatus::timeout, "deadline exceeded");
      return make_receipt(tx_id, TxStatus::error, httplib::to_string(res.error()));
    }
    if (res->status < 200 || res->status >= 300) {
      return make_receipt(tx_id, TxStatus::error, fmt::format("HTTP {}", res->status));
    }
    const auto body = json::parse(res->body);
    const auto status = parse_tx_status(body.at("status").get<std::string>());
    if (body.contains("tx_id") && body.at("tx_id").get<std::string>() != tx_id) {
      return make_receipt(tx_id, TxStatus::error, "response tx_id mismatch");
    }
    if (status != TxStatus::committed && status != TxStatus::rejected && status != TxStatus::error) {
      return make_receipt(tx_id, TxStatus::error, fmt::format("unexpected status {}", to_string(status)));
    }
    if (now > deadline) {
      if (status == TxStatus::committed) ++late_commits_;
      return make_receipt(tx_id, TxStatus::timeout, "deadline exceeded");
    }
    CommitReceipt r = make_receipt(tx_id, status);
    if (status == TxStatus::committed) r.commit_time = now;
    return r;
  } catch (const std::exception& e) {
    return make_receipt(tx_id, TxStatus::error, fmt::format("bad response: {}", e.what()));
  }
}

std::unique_ptr<Adapter> make_adapter(const BackendSpec& spec, const Clock& clock, std::uint64_t seed) {
  if (spec.kind() == AdapterKind::remote) {
    return std::make_unique<RemoteAdapter>(spec.backend_id, std::get<RemoteParams>(spec.params), clock);
  }
  return std::make_unique<SimAdapter>(spec, clock, seed);
}

}  // namespace blockmeter::adapter
