#include "blockmeter/gateway.hpp"

#include "blockmeter/workload.hpp"

#include <fmt/format.h>
#include <httplib.h>
#include <sodium.h>
#include <spdlog/spdlog.h>

#include <charconv>
#include <future>

namespace blockmeter::gateway {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

Response error_response(int status, std::string message, std::string field = {}) {
  Response r;
  r.status = status;
  r.body = {{"error", std::move(message)}};
  if (!field.empty()) r.body["field"] = std::move(field);
  return r;
}

}  // namespace

SubmitBody parse_submit_body(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error&) {
    throw BodyError("body", "body is not valid JSON");
  }
  if (!j.is_object()) throw BodyError("body", "body must be a JSON object");

  SubmitBody body;
  const auto text_field = [&](const char* name) -> std::string {
    if (!j.contains(name) || !j[name].is_string() || j[name].get<std::string>().empty()) {
      throw BodyError(name, fmt::format("{} must be a non-empty string", name));
    }
    return j[name].get<std::string>();
  };
  body.user_id = text_field("user_id");
  body.function = text_field("function");
  if (j.contains("args")) {
    const auto& a = j["args"];
    if (!a.is_array()) throw BodyError("args", "args must be an array of strings");
    for (const auto& v : a) {
      if (!v.is_string()) throw BodyError("args", "args must be an array of strings");
      body.args.push_back(v.get<std::string>());
    }
  }
  if (j.contains("payload_b64")) {
    if (!j["payload_b64"].is_string()) throw BodyError("payload_b64", "payload_b64 must be a string");
    const auto& text = j["payload_b64"].get_ref<const std::string&>();
    if (text.size() / 4 * 3 > kMaxPayloadBytes + 3) {
      throw BodyError("payload_b64", "payload exceeds 16 MiB");
    }
    try {
      body.payload = base64_decode(text);
    } catch (const Error&) {
      throw BodyError("payload_b64", "payload_b64 is not valid base64");
    }
    if (body.payload.size() > kMaxPayloadBytes) throw BodyError("payload_b64", "payload exceeds 16 MiB");
  }
  return body;
}

ordered_json to_json(const SubmitBody& body) {
  return {{"user_id", body.user_id},
          {"function", body.function},
          {"args", body.args},
          {"payload_b64", base64_encode(body.payload)}};
}

Gateway::Gateway(monitor::Monitor& monitor, const Clock& clock, std::vector<UserAccount> users,
                 GatewayOptions options)
    : monitor_(monitor), clock_(clock), options_(options), id_rng_(options.seed, streams::kTxId) {
  for (auto& u : users) {
    auto id = u.user_id;
    users_.emplace(std::move(id), std::move(u));
  }
  init_crypto();
}

void Gateway::register_adapter(std::shared_ptr<adapter::Adapter> adapter) {
  std::unique_lock lock(adapters_mu_);
  const auto& id = adapter->descriptor().backend_id;
  if (adapters_.contains(id)) throw Error(fmt::format("backend {} already registered", id));
  adapters_.emplace(id, std::move(adapter));
}

void Gateway::remove_adapter(const std::string& backend_id) {
  std::unique_lock lock(adapters_mu_);
  adapters_.erase(backend_id);
}

std::vector<std::string> Gateway::backend_ids() const {
  std::shared_lock lock(adapters_mu_);
  std::vector<std::string> out;
  for (const auto& [id, _] : adapters_) out.push_back(id);
  return out;
}

std::shared_ptr<adapter::Adapter> Gateway::find(const std::string& backend_id) const {
  std::shared_lock lock(adapters_mu_);
  auto it = adapters_.find(backend_id);
  return it == adapters_.end() ? nullptr : it->second;
}

std::uint64_t Gateway::late_commits() const {
  std::shared_lock lock(adapters_mu_);
  std::uint64_t n = 0;
  for (const auto& [_, a] : adapters_) n += a->late_commits();
  return n;
}

std::string Gateway::next_tx_id() {
  std::array<std::uint8_t, 16> raw{};
  if (options_.tx_ids == TxIdMode::seeded) {
    std::lock_guard lock(id_mu_);
    id_rng_.fill(raw);
  } else {
    randombytes_buf(raw.data(), raw.size());
  }
  return to_hex(raw);
}

void Gateway::submit_async(const std::string& backend_id, std::string_view raw_body, ResponseCallback respond) {
  if (!find(backend_id)) {
    respond(error_response(404, fmt::format("unknown backend '{}'", backend_id)));
    return;
  }
  SubmitBody body;
  try {
    body = parse_submit_body(raw_body);
  } catch (const BodyError& e) {
    respond(error_response(400, e.what(), e.field()));
    return;
  }
  submit_async(backend_id, body, std::move(respond));
}

void Gateway::submit_async(const std::string& backend_id, const SubmitBody& body, ResponseCallback respond) {
  auto adapter = find(backend_id);
  if (!adapter) {
    respond(error_response(404, fmt::format("unknown backend '{}'", backend_id)));
    return;
  }
  auto user = users_.find(body.user_id);
  if (body.user_id.empty() || user == users_.end()) {
    respond(error_response(400, fmt::format("unknown user_id '{}'", body.user_id), "user_id"));
    return;
  }
  if (body.function.empty()) {
    respond(error_response(400, "function must be a non-empty string", "function"));
    return;
  }
  if (body.payload.size() > kMaxPayloadBytes) {
    respond(error_response(400, "payload exceeds 16 MiB", "payload_b64"));
    return;
  }
  if (inflight_.fetch_add(1) >= options_.inflight_cap) {
    inflight_.fetch_sub(1);
    ++backlog_rejections_;
    respond(error_response(503, "backlog cap exceeded"));
    return;
  }

  TransactionRequest request;
  request.tx_id = next_tx_id();
  request.user_id = body.user_id;
  request.function = body.function;
  request.args = body.args;
  request.payload = body.payload;
  request.backend_id = backend_id;

  const Nanos start = clock_.now();
  const std::string tx_id = request.tx_id;
  monitor_.record_start(tx_id, start, {backend_id, classify_function(request.function)});

  SignedTransaction signed_tx;
  try {
    signed_tx = workload::sign(user->second, std::move(request));
  } catch (const Error& e) {
    monitor_.record_end(tx_id, clock_.now(), TxStatus::error);
    inflight_.fetch_sub(1);
    respond(error_response(500, e.what()));
    return;
  }

  const Nanos deadline = start + seconds_to_nanos(options_.submit_timeout_s);
  adapter->submit_async(std::move(signed_tx), deadline,
                        [this, tx_id, start, respond = std::move(respond)](CommitReceipt receipt) {
                          const Nanos end = clock_.now();
                          TransactionRecord record;
                          try {
                            record = monitor_.record_end(tx_id, end, receipt.status);
                          } catch (const Error&) {
                            // already finalized at shutdown; report the stored outcome
                            ++late_receipts_;
                            record = monitor_.lookup(tx_id).value_or(TransactionRecord{});
                            if (!record.end_ns) record.end_ns = end;
                          }
                          inflight_.fetch_sub(1);
                          Response r;
                          r.body = {{"tx_id", tx_id},
                                    {"status", to_string(record.status)},
                                    {"latency_ms", nanos_to_millis(*record.end_ns - start)}};
                          respond(std::move(r));
                        });
}

Response Gateway::handle_submit(const std::string& backend_id, std::string_view raw_body) {
  std::promise<Response> promise;
  auto future = promise.get_future();
  submit_async(backend_id, raw_body, [&promise](Response r) { promise.set_value(std::move(r)); });
  return future.get();
}

Response Gateway::handle_status(const std::string& tx_id) const {
  auto record = monitor_.lookup(tx_id);
  if (!record) return error_response(404, fmt::format("unknown tx_id '{}'", tx_id));
  Response r;
  r.body = monitor::to_json(*record);
  if (!record->end_ns) r.body.erase("end_ns");
  return r;
}

ListenAddress parse_listen(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0) {
    throw Error(fmt::format("listen address '{}' must be host:port", text));
  }
  ListenAddress a;
  a.host = std::string(text.substr(0, colon));
  const auto port = text.substr(colon + 1);
  auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), a.port);
  if (ec != std::errc{} || ptr != port.data() + port.size() || a.port < 0 || a.port > 65535) {
    throw Error(fmt::format("listen address '{}' has an invalid port", text));
  }
  return a;
}

HttpServer::HttpServer(Gateway& gateway, ListenAddress address, std::size_t threads)
    : gateway_(gateway), address_(std::move(address)), server_(std::make_unique<httplib::Server>()) {
  server_->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  server_->set_keep_alive_max_count(1000000);
  // no SO_REUSEPORT: a second server on the same port must fail to bind
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
  });

  const auto send = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  server_->Post(R"(/api/([^/]+)/transactions)", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, gateway_.handle_submit(req.matches[1], req.body));
  });
  server_->Get(R"(/api/transactions/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, gateway_.handle_status(req.matches[1]));
  });
  server_->Get("/healthz", [](const httplib::Request&, httplib::Response& res) { res.set_content("ok", "text/plain"); });
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::start() {
  if (thread_.joinable()) return;
  if (address_.port == 0) {
    port_ = server_->bind_to_any_port(address_.host);
    if (port_ <= 0) throw Error(fmt::format("cannot listen on {}:0", address_.host));
  } else {
    if (!server_->bind_to_port(address_.host, address_.port)) {
      throw Error(fmt::format("cannot listen on {}:{} (address in use?)", address_.host, address_.port));
    }
    port_ = address_.port;
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void HttpServer::stop() {
  if (!thread_.joinable()) return;
  server_->stop();
  thread_.join();
}

}  // namespace blockmeter::gateway
