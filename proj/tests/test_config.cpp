#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "blockmeter/config.hpp"

using namespace blockmeter;
using nlohmann::json;

namespace {

std::vector<std::string> problems_of(std::string_view text) {
  try {
    validate_config(text);
  } catch (const ConfigError& e) {
    return e.problems();
  }
  return {};
}

bool mentions(const std::vector<std::string>& problems, std::string_view needle) {
  for (const auto& p : problems) {
    if (p.find(needle) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("minimal config gets every default") {
  auto c = validate_config(
      std::string_view(R"({"backend_id":"simnet-fabric","workload":{"kind":"simple"},"schedule":[{"rate_tps":10,"duration_s":5}]})"));
  CHECK(c.seed == 42);
  CHECK(c.user_count == 10);
  CHECK(c.warmup_fraction == 0.1);
  CHECK(c.sample_interval_s == 3.0);
  CHECK(c.inflight_cap == 100000);
  CHECK(c.submit_timeout_s == 30.0);
  CHECK(c.listen == "127.0.0.1:8380");
  CHECK(c.arrival == ArrivalMode::uniform);
  REQUIRE(c.schedule.size() == 1);
  CHECK(c.schedule[0] == RateStep{10, 5});
  const auto& f = std::get<simnet::FabricSimParams>(c.backend.params);
  CHECK(f.block_size == 10);
  CHECK(f.batch_timeout_s == 2.0);
  CHECK(f.endorser_count == 2);
  CHECK(f == simnet::FabricSimParams{});
  CHECK(c.backend.kind() == AdapterKind::simulated);
  CHECK(c.all_simulated());
}

TEST_CASE("workload defaults follow the kind") {
  auto c = validate_config(
      std::string_view(R"({"backend_id":"simnet-sawtooth","workload":{"kind":"data_heavy"},"schedule":[[5,2]]})"));
  CHECK(c.workload.payload_bytes == 10240);
  CHECK(c.schedule[0] == RateStep{5, 2});
  CHECK(std::get<simnet::SawtoothSimParams>(c.backend.params) == simnet::SawtoothSimParams{});
  c = validate_config(std::string_view(R"({"backend_id":"simnet-fabric","workload":{"kind":"cpu_heavy"},"schedule":[[5,2]]})"));
  CHECK(c.workload.cpu_iterations == 100000);
}

TEST_CASE("negative rate names its field path") {
  const auto p = problems_of(R"({"backend_id":"simnet-fabric","workload":{"kind":"simple"},"schedule":[{"rate_tps":-1,"duration_s":5}]})");
  CHECK(mentions(p, "schedule[0].rate_tps"));
}

TEST_CASE("unknown backend lists the registered ones") {
  const auto p = problems_of(R"({"backend_id":"nosuch","workload":{"kind":"simple"},"schedule":[[1,1]]})");
  REQUIRE(!p.empty());
  CHECK(mentions(p, "nosuch"));
  CHECK(mentions(p, "simnet-fabric"));
  CHECK(mentions(p, "simnet-sawtooth"));
}

TEST_CASE("every invalid field is reported at once") {
  const auto p = problems_of(R"({"backend_id":"simnet-fabric","workload":{"kind":"medium"},
      "schedule":[{"rate_tps":1,"duration_s":0},{"rate_tps":"x","duration_s":1}],
      "user_count":0,"warmup_fraction":1.0,"bogus":1,
      "backend_params":{"block_size":0,"batch_timeout":-2,"colour":"red"}})");
  CHECK(mentions(p, "workload.kind"));
  CHECK(mentions(p, "schedule[0].duration_s"));
  CHECK(mentions(p, "schedule[1].rate_tps"));
  CHECK(mentions(p, "user_count"));
  CHECK(mentions(p, "warmup_fraction"));
  CHECK(mentions(p, "bogus"));
  CHECK(mentions(p, "backend_params.block_size"));
  CHECK(mentions(p, "backend_params.batch_timeout"));
  CHECK(mentions(p, "backend_params.colour"));
}

TEST_CASE("schema violations") {
  CHECK(mentions(problems_of("not json"), "JSON"));
  CHECK(mentions(problems_of("[]"), "object"));
  CHECK(mentions(problems_of(R"({"workload":{"kind":"simple"},"schedule":[[1,1]]})"), "backend_id"));
  CHECK(mentions(problems_of(R"({"backend_id":"simnet-fabric","workload":{"kind":"simple"},"schedule":[]})"),
                 "schedule"));
  CHECK(mentions(problems_of(R"({"backend_id":"simnet-fabric","workload":{"kind":"simple","payload_bytes":5000},"schedule":[[1,1]]})"),
                 "workload.payload_bytes"));
  CHECK(mentions(problems_of(R"({"backend_id":"remote","workload":{"kind":"simple"},"schedule":[[1,1]]})"),
                 "backend_params.endpoint"));
}

TEST_CASE("remote and extra backends") {
  auto c = validate_config(std::string_view(R"({"backend_id":"remote-fabric",
      "backend_params":{"endpoint":"http://127.0.0.1:9000/tx"},
      "extra_backends":[{"backend_id":"simnet-sawtooth"}],
      "workload":{"kind":"simple"},"schedule":[[1,1]]})"));
  CHECK(c.backend.kind() == AdapterKind::remote);
  CHECK(std::get<RemoteParams>(c.backend.params).endpoint == "http://127.0.0.1:9000/tx");
  CHECK(std::get<RemoteParams>(c.backend.params).concurrency == 64);
  REQUIRE(c.extra_backends.size() == 1);
  CHECK(c.all_backends().size() == 2);
  CHECK_FALSE(c.all_simulated());

  CHECK(mentions(problems_of(R"({"backend_id":"simnet-fabric","extra_backends":[{"backend_id":"simnet-fabric"}],
      "workload":{"kind":"simple"},"schedule":[[1,1]]})"),
                 "duplicate"));
}

TEST_CASE("property: serialize is a fixed point of validate") {
  const std::vector<std::string> inputs = {
      R"({"backend_id":"simnet-fabric","workload":{"kind":"simple"},"schedule":[[10,5]]})",
      R"({"backend_id":"simnet-sawtooth","workload":{"kind":"cpu_heavy","cpu_iterations":7},"schedule":[[1,2],[3,4]],
          "arrival":"poisson","seed":9,"backend_params":{"validator_count":4,"jitter":0.1,"trace_path":"t.jsonl"}})",
      R"({"backend_id":"remote","backend_params":{"endpoint":"http://h:1/x","concurrency":3},
          "extra_backends":[{"backend_id":"simnet-fabric","backend_params":{"block_size":3}}],
          "workload":{"kind":"data_heavy","payload_bytes":99},"schedule":[[0.5,7.25]],"csv_path":"a.csv",
          "stats_endpoint":"http://127.0.0.1:2375","containers":["peer0","peer1"],"out_dir":"o"})",
  };
  for (const auto& in : inputs) {
    const auto once = validate_config(std::string_view(in));
    const auto text = serialize(once);
    const auto twice = validate_config(std::string_view(text));
    CHECK(once == twice);
    CHECK(serialize(twice) == text);
  }
}

TEST_CASE("registered backends") {
  const auto& ids = registered_backends();
  CHECK(std::find(ids.begin(), ids.end(), "simnet-fabric") != ids.end());
  CHECK(std::find(ids.begin(), ids.end(), "simnet-sawtooth") != ids.end());
}
