// Command line front end: run experiments from declarative configs, validate
// configs, check the quantizer contracts, summarize existing traces.
//
// Exit codes: 0 ok, 1 runtime error, 2 config error.

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <iostream>
#include <string>

#include "fedem/config.hpp"
#include "fedem/harness.hpp"
#include "fedem/trace.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

int load_config(const std::string& path, fedem::ExperimentConfig& out) {
  auto parsed = fedem::parse_config_file(path);
  if (!parsed.ok()) {
    std::cerr << "config errors in " << path << ":\n";
    for (const auto& e : parsed.errors) std::cerr << "  - " << e << "\n";
    return kExitConfig;
  }
  out = std::move(*parsed.config);
  return kExitOk;
}

std::string default_output_dir() {
  const char* env = std::getenv("FEDEM_OUTPUT_DIR");
  return env ? env : "runs";
}

int cmd_run(const std::string& config_path, std::string output_dir,
            bool workers_parallel) {
  fedem::ExperimentConfig config;
  if (const int rc = load_config(config_path, config)) return rc;
  if (workers_parallel) config.workers_parallel = true;
  if (output_dir.empty()) output_dir = default_output_dir();

  try {
    const auto result = fedem::run_experiment(config, output_dir);
    if (result.truncated) {
      std::cerr << "run truncated: " << result.error << "\n";
      std::cerr << "partial trace: " << result.trace_path << "\n";
      return kExitRuntime;
    }
    std::cout << "trace: " << result.trace_path << "\n";
    std::cout << "manifest: " << result.manifest_path << "\n";
    std::cout << "resolved gamma = " << result.resolved_gamma
              << ", alpha = " << result.resolved_alpha
              << ", rounds = " << result.resolved_k_max
              << ", omega = " << result.variance_bound << "\n";
    if (!std::isnan(result.summary))
      std::cout << "mean-field summary (uniform over rounds) = "
                << result.summary << "\n";
    if (result.missem_relative_error >= 0.0)
      std::cout << "relative recovery error = "
                << result.missem_relative_error << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_validate(const std::string& config_path) {
  fedem::ExperimentConfig config;
  if (const int rc = load_config(config_path, config)) return rc;
  std::cout << "ok\n";
  return kExitOk;
}

int cmd_quant_test(int vectors, int trials, std::uint64_t seed) {
  bool all_ok = true;
  for (const auto& res :
       fedem::quantizer_contract_suite(vectors, trials, seed)) {
    const bool ok = res.passed();
    all_ok = all_ok && ok;
    std::cout << (ok ? "PASS" : "FAIL") << "  " << res.name
              << "  (worst mean deviation " << res.worst_mean_sigmas
              << " sigma, second-moment margin "
              << res.worst_second_moment_margin << ")\n";
  }
  return all_ok ? kExitOk : kExitRuntime;
}

int cmd_summarize(const std::string& trace_path, std::int64_t burn_in) {
  try {
    const auto trace = fedem::read_trace_csv(trace_path);
    std::cout << fedem::uniform_k_summary(trace, burn_in) << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated expectation-maximization simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_dir;
  bool workers_parallel = false;
  auto* run = app.add_subcommand("run", "run an experiment from a config");
  run->add_option("-c,--config", config_path, "experiment config file")
      ->required();
  run->add_option("-o,--output", output_dir,
                  "output directory (default $FEDEM_OUTPUT_DIR or ./runs)");
  run->add_flag("--workers-parallel", workers_parallel,
                "execute workers concurrently (results are identical)");

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "check a config file");
  validate->add_option("-c,--config", validate_path, "experiment config file")
      ->required();

  int vectors = 20;
  int trials = 100000;
  std::uint64_t seed = 20240901;
  auto* quant =
      app.add_subcommand("quant-test", "statistical quantizer contract suite");
  quant->add_option("--vectors", vectors, "random vectors per operator");
  quant->add_option("--trials", trials, "Monte-Carlo trials per vector");
  quant->add_option("--seed", seed, "seed");

  std::string trace_path;
  std::int64_t burn_in = 0;
  auto* summarize =
      app.add_subcommand("summarize", "uniform-round mean-field summary");
  summarize->add_option("-t,--trace", trace_path, "trace CSV")->required();
  summarize->add_option("--burn-in", burn_in, "rounds to skip");

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) return cmd_run(config_path, output_dir, workers_parallel);
  if (validate->parsed()) return cmd_validate(validate_path);
  if (quant->parsed()) return cmd_quant_test(vectors, trials, seed);
  if (summarize->parsed()) return cmd_summarize(trace_path, burn_in);
  return kExitConfig;
}
