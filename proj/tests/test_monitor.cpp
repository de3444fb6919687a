#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "blockmeter/monitor.hpp"
#include "support.hpp"

#include <httplib.h>

#include <numeric>
#include <thread>

using namespace blockmeter;
using namespace blockmeter::monitor;

namespace {

TransactionRecord rec(std::string id, Nanos start, std::optional<Nanos> end, TxStatus s = TxStatus::committed) {
  TransactionRecord r;
  r.tx_id = std::move(id);
  r.start_ns = start;
  r.end_ns = end;
  r.status = s;
  r.backend_id = "simnet-fabric";
  return r;
}

class FailingSource final : public ResourceSource {
 public:
  std::vector<ResourceSample> collect(Nanos) override { throw Error("source offline"); }
};

class CountingSource final : public ResourceSource {
 public:
  explicit CountingSource(const Clock& c) : clock_(c) {}
  std::vector<ResourceSample> collect(Nanos) override { return {{"n0", clock_.now(), 0.5, 1}, {"n1", clock_.now(), 0.25, 2}}; }

 private:
  const Clock& clock_;
};

}  // namespace

TEST_CASE("record_start and record_end") {
  Monitor m(nullptr, nullptr);
  m.record_start("a", 100, {"simnet-fabric", WorkloadKind::data_heavy});
  CHECK(m.open_count() == 1);
  auto open = m.lookup("a");
  REQUIRE(open);
  CHECK(open->status == TxStatus::pending);
  CHECK_FALSE(open->end_ns);

  CHECK_THROWS_WITH(m.record_start("a", 200), doctest::Contains("duplicate start"));
  CHECK_THROWS_WITH(m.record_end("a", 50, TxStatus::committed), doctest::Contains("clock inversion"));
  CHECK_THROWS_AS(m.record_end("zzz", 500, TxStatus::committed), Error);

  auto r = m.record_end("a", 2'600, TxStatus::committed);
  CHECK(latency_of(r) == 2'500);
  CHECK(r.workload_kind == WorkloadKind::data_heavy);
  CHECK(m.open_count() == 0);
  CHECK(m.lookup("a")->status == TxStatus::committed);
  CHECK_THROWS_AS(m.record_end("a", 3'000, TxStatus::committed), Error);
  CHECK_THROWS_WITH(m.record_start("a", 4'000), doctest::Contains("duplicate start"));
}

TEST_CASE("10000 concurrent starts lose nothing") {
  Monitor m(nullptr, nullptr);
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&m, t] {
      for (int i = t; i < 10000; i += 8) m.record_start("tx" + std::to_string(i), i);
    });
  }
  for (auto& th : threads) th.join();
  CHECK(m.open_count() == 10000);
  CHECK(m.started_count() == 10000);
}

TEST_CASE("records file is append-only and matches finalized records") {
  testing::TempDir dir;
  {
    Monitor m(std::make_shared<JsonlWriter>(dir / "records.jsonl"), nullptr);
    for (int i = 0; i < 5; ++i) m.record_start("t" + std::to_string(i), i * 10);
    m.record_end("t3", 100, TxStatus::committed);
    m.record_end("t1", 110, TxStatus::rejected);
    CHECK(m.finalize_open(500) == 3);
    CHECK(m.open_count() == 0);
    const auto back = read_records(dir / "records.jsonl");
    CHECK(back == m.finalized());
    REQUIRE(back.size() == 5);
    CHECK(back[0].tx_id == "t3");
    // shutdown finalization in start order, as timeout at shutdown time
    CHECK(back[2].tx_id == "t0");
    CHECK(back[3].tx_id == "t2");
    CHECK(back[4].tx_id == "t4");
    CHECK(back[4].status == TxStatus::timeout);
    CHECK(*back[4].end_ns == 500);
  }
  const auto lines = testing::read_lines(dir / "records.jsonl");
  CHECK(lines.size() == 5);
  CHECK(lines[0] ==
        R"({"tx_id":"t3","start_ns":30,"end_ns":100,"status":"committed","backend_id":"","workload_kind":"simple"})");
}

TEST_CASE("read_records reports the bad line") {
  testing::TempDir dir;
  testing::write_file(dir / "r.jsonl",
                      R"({"tx_id":"a","start_ns":1,"end_ns":2,"status":"committed","backend_id":"b","workload_kind":"simple"})"
                      "\nnot json\n");
  CHECK_THROWS_WITH(read_records(dir / "r.jsonl"), doctest::Contains("2"));
}

TEST_CASE("sample json round trip") {
  ResourceSample s{"peer0", 3'000'000'000, 0.125, 67108864};
  CHECK(sample_from_json(to_json(s)) == s);
  auto r = rec("x", 5, 9, TxStatus::timeout);
  CHECK(record_from_json(to_json(r)) == r);
}

TEST_CASE("throughput_series examples") {
  const Nanos s = kNanosPerSecond;
  std::vector<TransactionRecord> five;
  for (int i = 0; i < 5; ++i) five.push_back(rec("a" + std::to_string(i), 0, i * 100'000'000));
  CHECK(throughput_series(five) == std::vector<std::uint64_t>{5});

  std::vector<TransactionRecord> two = {rec("a", 0, s / 2), rec("b", 0, 3 * s / 2)};
  CHECK(throughput_series(two) == std::vector<std::uint64_t>{1, 1});

  std::vector<TransactionRecord> failed = {rec("a", 0, s / 2, TxStatus::timeout), rec("b", s, 2 * s, TxStatus::error)};
  CHECK(throughput_series(failed, 1.0, 4 * s) == std::vector<std::uint64_t>{0, 0, 0, 0});
  CHECK(throughput_series({}, 1.0, 3 * s) == std::vector<std::uint64_t>{0, 0, 0});
  CHECK(throughput_series({}).empty());
}

TEST_CASE("property: throughput conservation under re-bucketing") {
  Rng rng(3);
  std::vector<TransactionRecord> recs;
  std::size_t committed = 0;
  for (int i = 0; i < 2000; ++i) {
    const Nanos start = static_cast<Nanos>(rng.below(30 * kNanosPerSecond));
    const Nanos end = start + static_cast<Nanos>(rng.below(5 * kNanosPerSecond));
    const auto status = rng.below(4) == 0 ? TxStatus::timeout : TxStatus::committed;
    committed += status == TxStatus::committed;
    recs.push_back(rec("t" + std::to_string(i), start, end, status));
  }
  for (double w : {0.1, 0.25, 1.0, 3.0, 7.5, 100.0}) {
    const auto series = throughput_series(recs, w);
    CAPTURE(w);
    CHECK(std::accumulate(series.begin(), series.end(), std::uint64_t{0}) == committed);
  }
  // cumulative commits never exceed cumulative starts
  const auto commits = throughput_series(recs, 1.0);
  std::vector<std::uint64_t> starts(commits.size());
  for (const auto& r : recs) ++starts[static_cast<std::size_t>(r.start_ns / kNanosPerSecond)];
  std::uint64_t c = 0, a = 0;
  for (std::size_t i = 0; i < commits.size(); ++i) {
    c += commits[i];
    a += starts[i];
    REQUIRE(c <= a);
  }
}

TEST_CASE("record_samples keeps per-node timestamps strictly increasing") {
  Monitor m(nullptr, nullptr);
  m.record_samples({{"n", 10, 0, 1}, {"n", 20, 0, 1}, {"n", 20, 0, 1}, {"m", 5, 0, 1}, {"n", 15, 0, 1}});
  const auto s = m.samples();
  REQUIRE(s.size() == 3);
  CHECK(s[2].node_id == "m");
}

TEST_CASE("sampler with an always-failing source records gaps") {
  VirtualClock clock;
  Monitor m(nullptr, nullptr);
  Sampler sampler(m, clock, 3.0);
  sampler.add_source(std::make_unique<FailingSource>());
  for (int k = 1; k <= 5; ++k) sampler.sample_once(k * 3 * kNanosPerSecond);
  CHECK(m.samples().empty());
  CHECK(sampler.gaps().size() == 5);
  CHECK(sampler.batches() == 0);
}

TEST_CASE("sampler interval floors at one second") {
  VirtualClock clock;
  Monitor m(nullptr, nullptr);
  CHECK(Sampler(m, clock, 0.2).interval_s() == 1.0);
  CHECK(Sampler(m, clock, 3.0).interval_s() == 3.0);
}

TEST_CASE("real-time sampler cadence") {
  SteadyClock clock;
  Monitor m(nullptr, nullptr);
  Sampler sampler(m, clock, 1.0);
  sampler.add_source(std::make_unique<CountingSource>(clock));
  sampler.add_source(std::make_unique<FailingSource>());
  sampler.start();
  std::this_thread::sleep_for(std::chrono::milliseconds(3500));
  sampler.stop();
  CHECK(sampler.batches() == 3);
  CHECK(sampler.gaps().size() == 3);
  std::vector<Nanos> n0;
  for (const auto& s : m.samples()) {
    if (s.node_id == "n0") n0.push_back(s.t_ns);
  }
  REQUIRE(n0.size() == 3);
  for (std::size_t i = 1; i < n0.size(); ++i) {
    CHECK(n0[i] - n0[i - 1] >= 500'000'000);
    CHECK(n0[i] - n0[i - 1] <= 1'500'000'000);
  }
}

TEST_CASE("process source reports this process") {
  ProcessSource p("self");
  auto first = p.collect(0);
  REQUIRE(first.size() == 1);
  CHECK(first[0].node_id == "self");
  CHECK(first[0].mem_bytes > 0);
  CHECK(first[0].cpu_fraction >= 0);
}

TEST_CASE("container stats parsing") {
  auto doc = nlohmann::json::parse(R"({
    "cpu_stats":{"cpu_usage":{"total_usage":3000},"system_cpu_usage":20000,"online_cpus":4},
    "precpu_stats":{"cpu_usage":{"total_usage":1000},"system_cpu_usage":10000},
    "memory_stats":{"usage":123456}})");
  auto s = parse_container_stats(doc, "peer0", 7);
  CHECK(s.cpu_fraction == doctest::Approx(2000.0 / 10000.0 * 4));
  CHECK(s.mem_bytes == 123456);
  CHECK(s.t_ns == 7);
}

TEST_CASE("container stats source over HTTP") {
  httplib::Server srv;
  srv.Get(R"(/containers/([^/]+)/stats)", [](const httplib::Request& req, httplib::Response& res) {
    if (req.matches[1] == "broken") {
      res.status = 500;
      return;
    }
    CHECK(req.get_param_value("stream") == "false");
    res.set_content(R"({"cpu_stats":{"cpu_usage":{"total_usage":10},"system_cpu_usage":100,"online_cpus":1},
        "precpu_stats":{"cpu_usage":{"total_usage":0},"system_cpu_usage":0},"memory_stats":{"usage":42}})",
                    "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();

  SteadyClock clock;
  ContainerStatsSource ok("http://127.0.0.1:" + std::to_string(port), {"peer0", "peer1"}, clock);
  auto batch = ok.collect(clock.now());
  REQUIRE(batch.size() == 2);
  CHECK(batch[1].node_id == "peer1");
  CHECK(batch[0].mem_bytes == 42);
  CHECK(batch[0].cpu_fraction == doctest::Approx(0.1));

  ContainerStatsSource bad("http://127.0.0.1:" + std::to_string(port), {"broken"}, clock);
  CHECK_THROWS_AS(bad.collect(clock.now()), Error);
  srv.stop();
  th.join();
}
