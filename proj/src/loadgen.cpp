#include "blockmeter/loadgen.hpp"

#include "blockmeter/workload.hpp"

#include <fmt/format.h>
#include <httplib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <thread>

namespace blockmeter::loadgen {

namespace {

const std::vector<std::string> kColumns = {"user_id", "function", "args", "payload_b64"};

// One CSV record per physical line; quoted fields may contain commas and "".
std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      if (!field.empty() || was_quoted) throw Error(fmt::format("line {}: stray quote", line_no));
      quoted = was_quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
      was_quoted = false;
    } else {
      if (was_quoted) throw Error(fmt::format("line {}: text after closing quote", line_no));
      field += c;
    }
  }
  if (quoted) throw Error(fmt::format("line {}: unterminated quote", line_no));
  out.push_back(std::move(field));
  return out;
}

std::vector<std::string> split_args(const std::string& text) {
  std::vector<std::string> out;
  if (text.empty()) return out;
  std::size_t from = 0;
  for (;;) {
    auto at = text.find(';', from);
    out.push_back(text.substr(from, at - from));
    if (at == std::string::npos) break;
    from = at + 1;
  }
  return out;
}

}  // namespace

std::vector<PayloadRow> parse_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  const auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };
  if (!next_line()) throw Error("missing header line");
  if (line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);

  const auto header = split_csv_line(line, line_no);
  std::map<std::string, std::size_t> at;
  for (std::size_t i = 0; i < header.size(); ++i) at.emplace(header[i], i);
  for (const auto& col : kColumns) {
    if (!at.contains(col)) throw Error(fmt::format("header is missing column \"{}\"", col));
  }

  std::vector<PayloadRow> rows;
  while (next_line()) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line, line_no);
    if (fields.size() != header.size()) {
      throw Error(fmt::format("line {}: expected {} fields, found {}", line_no, header.size(), fields.size()));
    }
    PayloadRow row;
    row.user_id = fields[at["user_id"]];
    row.function = fields[at["function"]];
    row.args = split_args(fields[at["args"]]);
    try {
      row.payload = base64_decode(fields[at["payload_b64"]]);
    } catch (const Error&) {
      throw Error(fmt::format("line {}: payload_b64 is not valid base64", line_no));
    }
    if (row.user_id.empty()) throw Error(fmt::format("line {}: empty user_id", line_no));
    if (row.function.empty()) throw Error(fmt::format("line {}: empty function", line_no));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<PayloadRow> load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot read {}", path.string()));
  try {
    return parse_csv(in);
  } catch (const Error& e) {
    throw Error(fmt::format("{}: {}", path.string(), e.what()));
  }
}

ArrivalPlan build_plan(const std::vector<RateStep>& schedule, std::uint32_t user_count, std::uint64_t seed,
                       ArrivalMode mode) {
  if (schedule.empty()) throw ConfigError({"schedule: must not be empty"});
  if (user_count == 0) throw ConfigError({"user_count: must be >= 1"});
  std::vector<std::string> problems;
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (!(schedule[i].rate_tps >= 0)) problems.push_back(fmt::format("schedule[{}].rate_tps: must be >= 0", i));
    if (!(schedule[i].duration_s > 0)) problems.push_back(fmt::format("schedule[{}].duration_s: must be > 0", i));
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));

  ArrivalPlan plan;
  Nanos step_start = 0;
  std::uint64_t index = 0;
  for (std::size_t s = 0; s < schedule.size(); ++s) {
    const auto& step = schedule[s];
    const auto n = static_cast<std::uint64_t>(std::llround(step.rate_tps * step.duration_s));
    std::vector<Nanos> offsets;
    offsets.reserve(n);
    if (mode == ArrivalMode::uniform) {
      for (std::uint64_t j = 0; j < n; ++j) offsets.push_back(seconds_to_nanos(static_cast<double>(j) / step.rate_tps));
    } else {
      Rng rng(seed, streams::kArrivals, s);
      const Nanos span = seconds_to_nanos(step.duration_s);
      for (std::uint64_t j = 0; j < n; ++j) {
        offsets.push_back(std::min<Nanos>(span - 1, static_cast<Nanos>(rng.uniform() * static_cast<double>(span))));
      }
      std::sort(offsets.begin(), offsets.end());
    }
    for (Nanos off : offsets) {
      plan.push_back({step_start + off, index, static_cast<std::uint32_t>(index % user_count),
                      static_cast<std::uint32_t>(s)});
      ++index;
    }
    step_start += seconds_to_nanos(step.duration_s);
  }
  return plan;
}

std::vector<RateStep> schedule_for_rows(const std::vector<RateStep>& schedule, std::size_t rows) {
  if (schedule.empty()) throw ConfigError({"schedule: must not be empty"});
  std::uint64_t slots = 0;
  for (const auto& s : schedule) slots += static_cast<std::uint64_t>(std::llround(s.rate_tps * s.duration_s));
  auto out = schedule;
  if (rows <= slots) return out;
  auto& last = out.back();
  if (!(last.rate_tps > 0)) {
    throw ConfigError({fmt::format("schedule[{}].rate_tps: csv has {} rows but the schedule holds {}",
                                   out.size() - 1, rows, slots)});
  }
  last.duration_s += static_cast<double>(rows - slots) / last.rate_tps;
  // guard against the rounded count falling short by floating-point error
  while (std::llround(last.rate_tps * last.duration_s) <
         static_cast<long long>(rows - slots) + std::llround(schedule.back().rate_tps * schedule.back().duration_s)) {
    last.duration_s += 0.5 / last.rate_tps;
  }
  return out;
}

ArrivalPlan build_plan_for_rows(const std::vector<RateStep>& schedule, std::size_t rows, std::uint32_t user_count,
                                std::uint64_t seed, ArrivalMode mode) {
  auto plan = build_plan(schedule_for_rows(schedule, rows), user_count, seed, mode);
  if (plan.size() > rows) plan.resize(rows);
  return plan;
}

RequestBuilder workload_builder(const WorkloadProfile& profile, std::uint64_t seed) {
  return [profile, seed](const Arrival& a) {
    auto p = workload::generate_payload(profile, seed, a.payload_index);
    gateway::SubmitBody body;
    body.user_id = fmt::format("user-{}", a.user_index);
    body.function = std::move(p.function);
    body.args = std::move(p.args);
    body.payload = std::move(p.payload);
    return body;
  };
}

RequestBuilder csv_builder(std::vector<PayloadRow> rows) {
  auto shared = std::make_shared<const std::vector<PayloadRow>>(std::move(rows));
  return [shared](const Arrival& a) {
    if (a.payload_index >= shared->size()) throw Error(fmt::format("no csv row for index {}", a.payload_index));
    const auto& row = (*shared)[a.payload_index];
    return gateway::SubmitBody{row.user_id, row.function, row.args, row.payload};
  };
}

InProcessTarget::InProcessTarget(gateway::Gateway& gw, std::string backend_id, RequestBuilder build)
    : gateway_(gw), backend_id_(std::move(backend_id)), build_(std::move(build)) {}

void InProcessTarget::send(const Arrival& arrival, std::function<void(SendResult)> done) {
  gateway_.submit_async(backend_id_, build_(arrival), [done = std::move(done)](gateway::Response r) {
    SendResult result;
    result.http_status = r.status;
    if (r.body.contains("tx_id")) result.tx_id = r.body["tx_id"].get<std::string>();
    if (r.body.contains("error")) result.error = r.body["error"].get<std::string>();
    done(std::move(result));
  });
}

HttpTarget::HttpTarget(std::string host, int port, std::string backend_id, RequestBuilder build, double timeout_s)
    : host_(std::move(host)),
      port_(port),
      backend_id_(std::move(backend_id)),
      build_(std::move(build)),
      timeout_s_(timeout_s) {}

HttpTarget::~HttpTarget() { join(); }

void HttpTarget::send(const Arrival& arrival, std::function<void(SendResult)> done) {
  auto body = gateway::to_json(build_(arrival)).dump();
  {
    std::lock_guard lock(mu_);
    ++running_;
  }
  std::thread([this, body = std::move(body), done = std::move(done)] {
    SendResult result;
    {
      httplib::Client client(host_, port_);
      const auto t = std::chrono::duration<double>(timeout_s_);
      client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(t));
      client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(t));
      client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(t));
      auto res = client.Post(fmt::format("/api/{}/transactions", backend_id_), body, "application/json");
      if (!res) {
        result.error = httplib::to_string(res.error());
      } else {
        result.http_status = res->status;
        try {
          auto j = nlohmann::json::parse(res->body);
          if (j.contains("tx_id")) result.tx_id = j["tx_id"].get<std::string>();
          if (j.contains("error")) result.error = j["error"].get<std::string>();
        } catch (const nlohmann::json::exception&) {
          result.error = "unparseable response body";
        }
      }
    }
    done(std::move(result));
    std::lock_guard lock(mu_);
    if (--running_ == 0) cv_.notify_all();
  }).detach();
}

void HttpTarget::join() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return running_ == 0; });
}

Nanos RealPacer::wait_until(Nanos t) {
  std::this_thread::sleep_until(clock_.to_time_point(t));
  return clock_.now();
}

void RealPacer::drain(const std::function<bool()>& done, Nanos limit) {
  while (!done() && clock_.now() < limit) std::this_thread::sleep_for(std::chrono::milliseconds(1));
}

VirtualPacer::VirtualPacer(VirtualClock& clock, std::vector<adapter::VirtualBackend*> backends,
                           monitor::Sampler* sampler, Nanos sampler_origin)
    : clock_(clock), backends_(std::move(backends)), sampler_(sampler) {
  if (sampler_) {
    tick_ns_ = seconds_to_nanos(sampler_->interval_s());
    next_tick_ = sampler_origin + tick_ns_;
  }
}

void VirtualPacer::release_until(Nanos t) {
  std::vector<std::pair<std::size_t, adapter::TimedCompletion>> due;
  for (std::size_t i = 0; i < backends_.size(); ++i) {
    for (auto& c : backends_[i]->collect_until(t)) due.emplace_back(i, std::move(c));
  }
  std::stable_sort(due.begin(), due.end(), [](const auto& a, const auto& b) { return a.second.t < b.second.t; });
  for (auto& [_, c] : due) {
    if (c.t > clock_.now()) clock_.set(c.t);
    c.done(std::move(c.receipt));
  }
}

Nanos VirtualPacer::wait_until(Nanos t) {
  if (t < clock_.now()) return clock_.now();
  while (sampler_ && next_tick_ <= t) {
    release_until(next_tick_);
    clock_.set(next_tick_);
    sampler_->sample_once(next_tick_);
    next_tick_ += tick_ns_;
  }
  release_until(t);
  clock_.set(t);
  return t;
}

void VirtualPacer::drain(const std::function<bool()>& done, Nanos limit) {
  while (!done() && clock_.now() < limit) wait_until(std::min(limit, clock_.now() + kDrainStep));
}

InjectionLog inject(const ArrivalPlan& plan, Target& target, Pacer& pacer, Nanos origin, Nanos drain_limit) {
  struct State {
    std::mutex mu;
    InjectionLog log;
    std::size_t responded = 0;
  };
  auto state = std::make_shared<State>();
  state->log.resize(plan.size());

  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto& a = plan[i];
    const Nanos scheduled = origin + a.arrival_ns;
    const Nanos sent = pacer.wait_until(scheduled);
    {
      std::lock_guard lock(state->mu);
      auto& e = state->log[i];
      e.payload_index = a.payload_index;
      e.scheduled_ns = scheduled;
      e.actual_send_ns = sent;
    }
    try {
      target.send(a, [state, i](SendResult r) {
        std::lock_guard lock(state->mu);
        auto& e = state->log[i];
        if (e.responded) return;
        e.http_status = r.http_status;
        e.tx_id = std::move(r.tx_id);
        e.error = std::move(r.error);
        e.responded = true;
        ++state->responded;
      });
    } catch (const Error& err) {
      std::lock_guard lock(state->mu);
      auto& e = state->log[i];
      e.error = err.what();
      e.responded = true;
      ++state->responded;
    }
  }

  pacer.drain(
      [&] {
        std::lock_guard lock(state->mu);
        return state->responded == plan.size();
      },
      pacer.now() + drain_limit);

  std::lock_guard lock(state->mu);
  InjectionLog out = state->log;
  for (auto& e : out) {
    if (!e.responded && e.error.empty()) e.error = "no response";
  }
  return out;
}

}  // namespace blockmeter::loadgen
