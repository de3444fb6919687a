#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "blockmeter/experiment.hpp"
#include "support.hpp"

#include <fmt/format.h>

#include <httplib.h>

#include <csignal>
#include <set>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>

using namespace blockmeter;
using namespace blockmeter::experiment;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fabric_config(double rate, double dur, const std::string& extra = "") {
  return fmt::format(R"({{"backend_id":"simnet-fabric","workload":{{"kind":"simple"}},
    "schedule":[{{"rate_tps":{},"duration_s":{}}}],"seed":7{}}})",
                     rate, dur, extra);
}

void expect_manifest(const fs::path& dir) {
  for (const auto& f : manifest()) {
    CAPTURE(f);
    CHECK(fs::exists(dir / f));
  }
}

int run_binary(const std::string& args) {
  const std::string cmd = std::string(BLOCKMETER_BIN) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

bool wait_healthy(int port) {
  httplib::Client c("127.0.0.1", port);
  c.set_connection_timeout(1, 0);
  for (int i = 0; i < 200; ++i) {
    if (auto r = c.Get("/healthz"); r && r->status == 200) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
  }
  return false;
}

json post(int port, const std::string& backend, const std::string& user = "user-0") {
  httplib::Client c("127.0.0.1", port);
  c.set_read_timeout(60, 0);
  auto r = c.Post("/api/" + backend + "/transactions",
                  json{{"user_id", user}, {"function", "write"}, {"args", {"k"}}}.dump(), "application/json");
  REQUIRE(r);
  REQUIRE(r->status == 200);
  return json::parse(r->body);
}

}  // namespace

TEST_CASE("run writes the full manifest") {
  testing::TempDir dir;
  testing::write_file(dir / "c.json", fabric_config(50, 5));
  CHECK(cmd_run(dir / "c.json", dir / "out", std::nullopt) == kOk);
  expect_manifest(dir / "out");
  CHECK(testing::read_lines(dir / "out" / "records.jsonl").size() == 250);
  const auto meta = json::parse(testing::read_file(dir / "out" / "meta.json"));
  CHECK(meta["version"] == std::string(kVersion));
  CHECK(meta["seed"] == 7);
  CHECK(meta["clock"] == "virtual");
  CHECK(meta["config"]["backend_id"] == "simnet-fabric");
  CHECK(meta["run_stats"]["planned"] == 250);
}

TEST_CASE("seeded runs are byte-identical") {
  testing::TempDir dir;
  testing::write_file(dir / "c.json", fabric_config(80, 4));
  REQUIRE(cmd_run(dir / "c.json", dir / "a", std::nullopt) == kOk);
  REQUIRE(cmd_run(dir / "c.json", dir / "b", std::nullopt) == kOk);
  REQUIRE(cmd_run(dir / "c.json", dir / "c", 8) == kOk);
  for (const char* f : {"records.jsonl", "summary.json", "resources.jsonl", "summary.csv"}) {
    CAPTURE(f);
    CHECK(testing::read_file(dir / "a" / f) == testing::read_file(dir / "b" / f));
  }
  CHECK(testing::read_file(dir / "a" / "records.jsonl") != testing::read_file(dir / "c" / "records.jsonl"));
}

TEST_CASE("csv payload file drives exactly one attempt per row") {
  testing::TempDir dir;
  std::string csv = "user_id,function,args,payload_b64\n";
  for (int i = 0; i < 100; ++i) csv += fmt::format("user-{},put,k{};v,AAEC\n", i % 3, i);
  testing::write_file(dir / "p.csv", csv);
  testing::write_file(dir / "c.json",
                      fabric_config(40, 1, fmt::format(R"(,"user_count":3,"csv_path":"{}")", (dir / "p.csv").string())));
  REQUIRE(cmd_run(dir / "c.json", dir / "out", std::nullopt) == kOk);
  const auto records = monitor::read_records(dir / "out" / "records.jsonl");
  CHECK(records.size() == 100);
  const auto summary = report::load_summary(dir / "out" / "summary.json");
  CHECK(summary.totals.submitted == 100);
  CHECK(summary.totals.committed == 100);
  // the final step was stretched to fit the rows
  CHECK(summary.steps.back().duration_s == doctest::Approx(2.5));
}

TEST_CASE("report regenerates identical summaries and compares runs") {
  testing::TempDir dir;
  testing::write_file(dir / "f.json", fabric_config(30, 4));
  testing::write_file(dir / "s.json", R"({"backend_id":"simnet-sawtooth","workload":{"kind":"simple"},
    "schedule":[{"rate_tps":30,"duration_s":4}],"seed":7})");
  REQUIRE(cmd_run(dir / "f.json", dir / "fab", std::nullopt) == kOk);
  REQUIRE(cmd_run(dir / "s.json", dir / "saw", std::nullopt) == kOk);

  std::map<std::string, std::string> before;
  for (const auto& f : manifest()) before[f] = testing::read_file(dir / "fab" / f);
  CHECK(cmd_report({dir / "fab"}, {}, dir / "cmp") == kOk);
  for (const auto& f : manifest()) {
    CAPTURE(f);
    CHECK(testing::read_file(dir / "fab" / f) == before[f]);
  }
  CHECK_FALSE(fs::exists(dir / "cmp" / "compare.csv"));

  CHECK(cmd_report({dir / "fab", dir / "saw"}, {}, dir / "cmp") == kOk);
  const auto lines = testing::read_lines(dir / "cmp" / "compare.csv");
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == "target_tps,fab_achieved_tps,fab_p95_ms,saw_achieved_tps,saw_p95_ms");
  CHECK(cmd_report({dir / "fab", dir / "saw"}, {"x"}, dir / "cmp") == kRuntimeError);

  fs::remove(dir / "saw" / "records.jsonl");
  CHECK(cmd_report({dir / "saw"}, {}, dir / "cmp") != kOk);
}

TEST_CASE("config errors exit 1") {
  testing::TempDir dir;
  testing::write_file(dir / "bad.json", R"({"backend_id":"nosuch","schedule":[{"rate_tps":-1,"duration_s":1}]})");
  CHECK(cmd_run(dir / "bad.json", dir / "out", std::nullopt) == kConfigError);
  CHECK_FALSE(fs::exists(dir / "out" / "records.jsonl"));
  CHECK(cmd_run(dir / "absent.json", dir / "out", std::nullopt) == kConfigError);
  testing::write_file(dir / "csv.json", fabric_config(10, 1, R"(,"csv_path":"/nonexistent.csv")"));
  CHECK(cmd_run(dir / "csv.json", dir / "out2", std::nullopt) == kRuntimeError);
  CHECK_FALSE(fs::exists(dir / "out2"));
}

TEST_CASE("serve persists externally posted transactions") {
  testing::TempDir dir;
  auto config = validate_config(fabric_config(10, 5, R"(,"listen":"127.0.0.1:0","sample_interval_s":1)"));
  config.backend.params = [] {
    simnet::FabricSimParams p;
    p.batch_timeout_s = 0.1;
    return p;
  }();
  ServeSession session(config, dir / "serve");
  session.start();
  REQUIRE(wait_healthy(session.port()));
  auto body = post(session.port(), "simnet-fabric");
  CHECK(body["status"] == "committed");
  const auto summary = session.stop();
  CHECK(summary.totals.committed == 1);
  CHECK(testing::read_lines(dir / "serve" / "records.jsonl").size() == 1);
  expect_manifest(dir / "serve");
  const auto meta = json::parse(testing::read_file(dir / "serve" / "meta.json"));
  CHECK(meta["mode"] == "serve");
  CHECK(meta["clock"] == "real");
}

TEST_CASE("serve with two backends answers on both paths") {
  testing::TempDir dir;
  auto config = validate_config(fabric_config(
      10, 5, R"(,"listen":"127.0.0.1:0","extra_backends":[{"backend_id":"simnet-sawtooth","backend_params":{"mean_wait_s":0.1,"batch_timeout":0.1}}])"));
  std::get<simnet::FabricSimParams>(config.backend.params).batch_timeout_s = 0.1;
  ServeSession session(config, dir / "serve");
  session.start();
  REQUIRE(wait_healthy(session.port()));
  CHECK(post(session.port(), "simnet-fabric")["status"] == "committed");
  CHECK(post(session.port(), "simnet-sawtooth", "user-1")["status"] == "committed");
  const auto records = [&] {
    session.stop();
    return monitor::read_records(dir / "serve" / "records.jsonl");
  }();
  REQUIRE(records.size() == 2);
  std::set<std::string> backends;
  for (const auto& r : records) backends.insert(r.backend_id);
  CHECK(backends == std::set<std::string>{"simnet-fabric", "simnet-sawtooth"});
}

TEST_CASE("stopping serve with transactions in flight records them as timeout") {
  testing::TempDir dir;
  auto config = validate_config(fabric_config(10, 5, R"(,"listen":"127.0.0.1:0","submit_timeout_s":60)"));
  ServeSession session(config, dir / "serve");
  session.start();
  std::atomic<int> answered{0};
  for (int i = 0; i < 3; ++i) {
    session.gateway().submit_async("simnet-fabric", gateway::SubmitBody{"user-0", "write", {}, {}},
                                   [&](gateway::Response r) {
                                     CHECK(r.body["status"] == "timeout");
                                     ++answered;
                                   });
  }
  std::this_thread::sleep_for(std::chrono::milliseconds(100));
  const auto summary = session.stop();
  CHECK(answered == 3);
  CHECK(summary.totals.by_status.at("timeout") == 3);
  for (const auto& r : monitor::read_records(dir / "serve" / "records.jsonl")) CHECK(r.status == TxStatus::timeout);
}

TEST_CASE("binary exit codes") {
  testing::TempDir dir;
  testing::write_file(dir / "ok.json", fabric_config(20, 2));
  testing::write_file(dir / "bad.json", R"({"backend_id":"simnet-fabric","schedule":[{"rate_tps":-1,"duration_s":1}]})");
  CHECK(run_binary("run --config " + (dir / "ok.json").string() + " --out " + (dir / "o").string()) == 0);
  expect_manifest(dir / "o");
  CHECK(run_binary("run --config " + (dir / "bad.json").string() + " --out " + (dir / "x").string()) == 1);
  CHECK(run_binary("run --out " + (dir / "x").string()) == 1);
  CHECK(run_binary("bogus") == 1);
  CHECK(run_binary("report " + (dir / "o").string()) == 0);
  CHECK(run_binary("report " + (dir / "nothing").string()) == 2);

  // a real-time run cannot start when its listen port is taken
  httplib::Server squatter;
  const int port = squatter.bind_to_any_port("127.0.0.1");
  testing::write_file(dir / "remote.json",
                      fmt::format(R"({{"backend_id":"remote","backend_params":{{"endpoint":"http://127.0.0.1:1/"}},"workload":{{"kind":"simple"}},
      "schedule":[{{"rate_tps":1,"duration_s":1}}],"listen":"127.0.0.1:{}"}})",
                                  port));
  CHECK(run_binary("run --config " + (dir / "remote.json").string() + " --out " + (dir / "r").string()) == 2);
}

TEST_CASE("serve binary exits cleanly on SIGINT") {
  testing::TempDir dir;
  testing::write_file(dir / "c.json", fabric_config(10, 5));
  const int port = testing::unused_port();
  const std::string out = (dir / "serve").string();
  const std::string cfg = (dir / "c.json").string();
  std::fflush(nullptr);
  const pid_t pid = fork();
  REQUIRE(pid >= 0);
  if (pid == 0) {
    setenv("BLOCKMETER_LISTEN", fmt::format("127.0.0.1:{}", port).c_str(), 1);
    freopen("/dev/null", "w", stdout);
    execl(BLOCKMETER_BIN, BLOCKMETER_BIN, "serve", "--config", cfg.c_str(), "--out", out.c_str(), nullptr);
    _exit(127);
  }
  REQUIRE(wait_healthy(port));
  ::kill(pid, SIGINT);
  int status = 0;
  ::waitpid(pid, &status, 0);
  REQUIRE(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 0);
  expect_manifest(dir / "serve");
}
