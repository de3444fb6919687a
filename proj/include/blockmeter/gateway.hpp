#pragma once

#include "blockmeter/adapter.hpp"
#include "blockmeter/clock.hpp"
#include "blockmeter/core.hpp"
#include "blockmeter/monitor.hpp"

#include <json.hpp>

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

namespace httplib {
class Server;
}

namespace blockmeter::gateway {

inline constexpr std::size_t kMaxPayloadBytes = 16u << 20;

struct SubmitBody {
  std::string user_id;
  std::string function;
  std::vector<std::string> args;
  Bytes payload;
};

/// Validation failure attributable to one body field.
class BodyError : public Error {
 public:
  BodyError(std::string field, const std::string& message) : Error(message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Parses {"user_id","function","args","payload_b64"}. Throws BodyError.
SubmitBody parse_submit_body(std::string_view json_text);
nlohmann::ordered_json to_json(const SubmitBody& body);

struct Response {
  int status = 200;
  nlohmann::ordered_json body;
};

enum class TxIdMode { seeded, random };

struct GatewayOptions {
  std::uint64_t inflight_cap = 100000;
  double submit_timeout_s = 30.0;
  TxIdMode tx_ids = TxIdMode::random;
  std::uint64_t seed = 42;
};

/// Transaction handler behind the HTTP surface: validates and normalises
/// submissions, stamps start/end times in the monitor, signs on behalf of
/// the user, and routes to the registered adapter.
class Gateway {
 public:
  using ResponseCallback = std::function<void(Response)>;

  Gateway(monitor::Monitor& monitor, const Clock& clock, std::vector<UserAccount> users,
          GatewayOptions options);

  /// Throws Error when the backend id is already registered.
  void register_adapter(std::shared_ptr<adapter::Adapter> adapter);
  void remove_adapter(const std::string& backend_id);
  std::vector<std::string> backend_ids() const;

  /// Non-blocking: `respond` runs once the adapter's receipt is available
  /// (or immediately for 4xx/5xx responses).
  void submit_async(const std::string& backend_id, const SubmitBody& body, ResponseCallback respond);
  void submit_async(const std::string& backend_id, std::string_view raw_body, ResponseCallback respond);

  /// Synchronous request semantics, as served over HTTP.
  Response handle_submit(const std::string& backend_id, std::string_view raw_body);
  Response handle_status(const std::string& tx_id) const;

  std::uint64_t inflight() const { return inflight_.load(); }
  std::uint64_t backlog_rejections() const { return backlog_rejections_.load(); }
  std::uint64_t late_commits() const;
  std::uint64_t late_receipts() const { return late_receipts_.load(); }

 private:
  std::string next_tx_id();
  std::shared_ptr<adapter::Adapter> find(const std::string& backend_id) const;

  monitor::Monitor& monitor_;
  const Clock& clock_;
  std::unordered_map<std::string, UserAccount> users_;
  GatewayOptions options_;

  mutable std::shared_mutex adapters_mu_;
  std::map<std::string, std::shared_ptr<adapter::Adapter>> adapters_;

  std::mutex id_mu_;
  Rng id_rng_;

  std::atomic<std::uint64_t> inflight_{0};
  std::atomic<std::uint64_t> backlog_rejections_{0};
  std::atomic<std::uint64_t> late_receipts_{0};
};

struct ListenAddress {
  std::string host = "127.0.0.1";
  int port = 8380;
};
/// "host:port"; throws Error when malformed.
ListenAddress parse_listen(std::string_view text);

/// HTTP/1.1 surface:
///   POST /api/{backend_id}/transactions
///   GET  /api/transactions/{tx_id}
///   GET  /healthz
class HttpServer {
 public:
  HttpServer(Gateway& gateway, ListenAddress address, std::size_t threads = 256);
  ~HttpServer();

  /// Binds and begins serving on a background thread. Throws Error if the
  /// address cannot be bound. Port 0 picks a free port.
  void start();
  void stop();
  int port() const { return port_; }
  const std::string& host() const { return address_.host; }

 private:
  Gateway& gateway_;
  ListenAddress address_;
  int port_ = 0;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace blockmeter::gateway
