// vicpass: experiment pipeline for windowed stiffness estimation and tank-based
// variable impedance control.
//
//   vicpass [--config PATH] [--seed U64] [--out DIR] [--jobs N] <command>
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 acceptance failure (report).

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "vicpass/pipeline.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Windowed stiffness estimation and energy-tank variable impedance control experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", vicpass::kToolVersion);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  app.add_option("--config", config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "RNG seed, overrides the config");
  app.add_option("--out", out, "Run directory, overrides the config");
  app.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen", "Generate the demonstration datasets");
  auto* estimate = app.add_subcommand("estimate", "Estimate stiffness and write the error tables");
  auto* trn = app.add_subcommand("train", "Train the kernel model on estimated stiffness");
  auto* predict = app.add_subcommand("predict", "Predict stiffness along the demonstrations");
  auto* simulate = app.add_subcommand("simulate", "Run the controller grid and passivity audits");
  auto* report = app.add_subcommand("report", "Aggregate run directories into a digest");
  std::vector<std::string> report_runs;
  report->add_option("runs", report_runs, "Run directories (default: --out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    vicpass::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = vicpass::load_experiment_config(config_path);
    if (seed) {
      cfg.seed = *seed;
      cfg.demogen.seed = *seed;
    }
    if (!out.empty()) cfg.out = out;
    std::ostream& log = std::cerr;

    if (gen->parsed()) vicpass::cmd_gen(cfg, jobs, log);
    if (estimate->parsed()) vicpass::cmd_estimate(cfg, jobs, log);
    if (trn->parsed()) vicpass::cmd_train(cfg, log);
    if (predict->parsed()) vicpass::cmd_predict(cfg, log);
    if (simulate->parsed()) vicpass::cmd_simulate(cfg, jobs, log);
    if (report->parsed()) {
      std::vector<std::filesystem::path> runs(report_runs.begin(), report_runs.end());
      if (runs.empty()) runs.push_back(cfg.out);
      return vicpass::cmd_report(runs, cfg.out, log);
    }
  } catch (const vicpass::ConfigError& e) {
    std::cerr << "vicpass: configuration error: " << e.what() << "\n";
    return kExitData;
  } catch (const vicpass::Error& e) {
    std::cerr << "vicpass: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "vicpass: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
