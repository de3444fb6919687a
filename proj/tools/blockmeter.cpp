#include "blockmeter/experiment.hpp"

#include <CLI11.hpp>

#include <optional>

namespace bx = blockmeter::experiment;

int main(int argc, char** argv) {
  CLI::App app{"blockmeter: throughput, latency and resource measurement for transaction backends"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(bx::kVersion));

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;

  auto* run = app.add_subcommand("run", "run an orchestrated experiment and write its reports");
  run->add_option("--config", config_path, "experiment config (JSON)")->required();
  run->add_option("--out", out_dir, "output directory")->required();
  run->add_option("--seed", seed, "override the config seed");

  std::optional<std::string> serve_out;
  auto* serve = app.add_subcommand("serve", "run the gateway standalone until interrupted");
  serve->add_option("--config", config_path, "experiment config (JSON)")->required();
  serve->add_option("--out", serve_out, "output directory (default: config out_dir)");

  std::vector<std::string> dirs;
  std::vector<std::string> labels;
  std::string compare_dir = ".";
  auto* report = app.add_subcommand("report", "regenerate summaries; several dirs also write compare.csv");
  report->add_option("dirs", dirs, "run directories")->required()->expected(1, -1);
  report->add_option("--labels", labels, "comma-separated labels, one per dir")->delimiter(',');
  report->add_option("--out", compare_dir, "where compare.csv goes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : bx::kConfigError;
  }

  if (*run) return bx::cmd_run(config_path, out_dir, seed);
  if (*serve) {
    std::optional<std::filesystem::path> out;
    if (serve_out) out = *serve_out;
    return bx::cmd_serve(config_path, out);
  }
  std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
  return bx::cmd_report(paths, labels, compare_dir);
}
