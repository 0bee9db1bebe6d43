#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedem/config.hpp"
#include "fedem/fedem.hpp"

using namespace fedem;

namespace {

const char* kMinimalGmm = R"(
algorithm = fedem
seed = 11

[model]
kind = gmm-synthetic
workers = 4
total = 80

[run]
gamma = 0.05
alpha = 0.5
batch = 5
k-max = 20
)";

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("minimal config parses with defaults and renders round-trip") {
  const auto parsed = parse_config(kMinimalGmm);
  REQUIRE(parsed.ok());
  const auto& c = *parsed.config;
  CHECK(c.algorithm == Algorithm::FedEm);
  CHECK(c.model.components == 2);
  CHECK(c.quantizer.kind == "identity");
  CHECK(c.run.v_init == "mean-field");
  CHECK(c.run.diag_every == 1);

  const std::string rendered = render_config(c);
  const auto again = parse_config(rendered);
  REQUIRE(again.ok());
  CHECK(render_config(*again.config) == rendered);
}

TEST_CASE("unknown keys and malformed values are all reported") {
  const auto parsed = parse_config(R"(
algorithm = fedem
typo-key = 3

[model]
kind = gmm-synthetic
workers = four
total = 80

[run]
gamma = fast
k-max = 20
)");
  CHECK(!parsed.ok());
  auto has_error_containing = [&](const std::string& needle) {
    for (const auto& e : parsed.errors)
      if (e.find(needle) != std::string::npos) return true;
    return false;
  };
  CHECK(has_error_containing("typo-key"));
  CHECK(has_error_containing("model.workers"));
  CHECK(has_error_containing("run.gamma"));
}

TEST_CASE("partial participation is rejected for the variance-reduced loop") {
  const auto parsed = parse_config(R"(
algorithm = vr-fedem
[model]
kind = gmm-synthetic
workers = 4
total = 80
[run]
gamma = 0.05
p = 0.5
batch = 5
k-out = 3
k-in = 10
)");
  CHECK(!parsed.ok());
  bool found = false;
  for (const auto& e : parsed.errors)
    found = found || (e.find("run.p") != std::string::npos &&
                      e.find("vr-fedem") != std::string::npos);
  CHECK(found);
}

TEST_CASE("auto-theorem gamma requires the constants section") {
  const auto missing = parse_config(R"(
algorithm = fedem
[model]
kind = gmm-synthetic
workers = 4
total = 80
[run]
gamma = auto-theorem
batch = 5
k-max = 10
)");
  CHECK(!missing.ok());

  const auto ok = parse_config(R"(
algorithm = fedem
[model]
kind = gmm-synthetic
workers = 4
total = 80
[quantizer]
kind = block-p
block = 3
[run]
gamma = auto-theorem
batch = 5
k-max = 10
[constants]
v-min = 1.0
grad-lipschitz = 2.0
field-lipschitz = 1.5
)");
  REQUIRE(ok.ok());

  // resolved step size equals the closed-form cap
  const auto result = run_experiment(*ok.config, "config_test_out");
  const double omega = result.variance_bound;
  CHECK(omega == doctest::Approx(std::sqrt(3.0) - 1.0));
  CHECK(result.resolved_gamma ==
        doctest::Approx(max_step_size(1.0, 2.0, 1.5, 4, omega, 1.0))
            .epsilon(1e-12));
  std::filesystem::remove_all("config_test_out");
}

TEST_CASE("experiment runs are deterministic and parallel-invariant") {
  auto parsed = parse_config(kMinimalGmm);
  REQUIRE(parsed.ok());

  const auto r1 = run_experiment(*parsed.config, "config_det_a");
  const auto r2 = run_experiment(*parsed.config, "config_det_b");
  CHECK(slurp(r1.trace_path) == slurp(r2.trace_path));
  CHECK(!slurp(r1.trace_path).empty());

  // the manifest is itself a valid config that reruns identically
  const auto manifest = parse_config_file(r1.manifest_path);
  REQUIRE(manifest.ok());
  const auto r3 = run_experiment(*manifest.config, "config_det_c");
  CHECK(slurp(r3.trace_path) == slurp(r1.trace_path));

  parsed.config->workers_parallel = true;
  const auto r4 = run_experiment(*parsed.config, "config_det_d");
  CHECK(slurp(r4.trace_path) == slurp(r1.trace_path));

  for (const char* dir :
       {"config_det_a", "config_det_b", "config_det_c", "config_det_d"})
    std::filesystem::remove_all(dir);
}

TEST_CASE("epoch budgets resolve to round counts") {
  auto parsed = parse_config(R"(
algorithm = fedem
[model]
kind = gmm-synthetic
workers = 4
total = 80
[run]
gamma = 0.05
batch = 5
epochs = 10
)");
  REQUIRE(parsed.ok());
  const auto result = run_experiment(*parsed.config, "config_epoch_out");
  // 10 epochs * 80 examples / (4 workers * batch 5) = 40 rounds
  CHECK(result.resolved_k_max == 40);
  CHECK(result.trace.size() == 40);
  std::filesystem::remove_all("config_epoch_out");
}

TEST_CASE("render round-trips for every algorithm family") {
  const char* texts[] = {
      R"(algorithm = naive
[model]
kind = gmm-synthetic
workers = 4
total = 80
[run]
gamma = 0.05
batch = 5
k-max = 3
)",
      R"(algorithm = exact-em
[model]
kind = gmm-synthetic
workers = 4
total = 80
[run]
k-max = 3
)",
      R"(algorithm = vr-fedem
[model]
kind = gmm-synthetic
workers = 4
total = 80
[quantizer]
kind = dithering
levels = 4
[run]
gamma = 0.05
batch = 5
k-out = 2
k-in = 3
)",
      R"(algorithm = missem
[model]
kind = missem-synthetic
rows = 8
cols = 6
servers = 2
[run]
gamma = 0.3
batch = 6
k-max = 4
rank = 2
)",
  };
  for (const char* text : texts) {
    const auto parsed = parse_config(text);
    REQUIRE_MESSAGE(parsed.ok(), text);
    const std::string rendered = render_config(*parsed.config);
    const auto again = parse_config(rendered);
    REQUIRE_MESSAGE(again.ok(), rendered);
    CHECK(render_config(*again.config) == rendered);
  }
}

TEST_CASE("keys from another kind or algorithm are rejected, not ignored") {
  const auto parsed = parse_config(R"(
algorithm = fedem
[model]
kind = gmm-synthetic
workers = 4
total = 80
rows = 7
[run]
gamma = 0.05
batch = 5
k-max = 10
k-in = 20
)");
  CHECK(!parsed.ok());
  bool model_key = false, run_key = false;
  for (const auto& e : parsed.errors) {
    model_key = model_key || e.find("model.rows") != std::string::npos;
    run_key = run_key || e.find("run.k-in") != std::string::npos;
  }
  CHECK(model_key);
  CHECK(run_key);

  const auto exact = parse_config(R"(
algorithm = exact-em
[model]
kind = gmm-synthetic
workers = 4
total = 80
[quantizer]
kind = block-p
block = 3
[run]
k-max = 5
)");
  CHECK(!exact.ok());
}

TEST_CASE("missem synthetic config runs end to end") {
  const auto parsed = parse_config(R"(
algorithm = missem
seed = 3
[model]
kind = missem-synthetic
rows = 12
cols = 8
rank = 2
servers = 3
observed-fraction = 0.6
noise-sd = 0.05
[run]
gamma = 0.5
alpha = 0.5
batch = 8
k-max = 60
rank = 2
)");
  REQUIRE(parsed.ok());
  const auto result = run_experiment(*parsed.config, "config_missem_out");
  CHECK(!result.truncated);
  CHECK(result.missem_relative_error >= 0.0);
  CHECK(result.missem_relative_error < 1.0);
  CHECK(std::filesystem::exists("config_missem_out/imputed.csv"));
  CHECK(std::filesystem::exists("config_missem_out/trends.csv"));
  std::filesystem::remove_all("config_missem_out");
}
