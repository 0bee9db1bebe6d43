#include <doctest.h>

#include <Eigen/SVD>

#include <cmath>

#include "fedem/harness.hpp"
#include "support/affine_model.hpp"
#include "support/gmm_fixtures.hpp"

using namespace fedem;
using fedem_test::AffineModel;
using fedem_test::make_gmm;
using fedem_test::start_statistic;

TEST_CASE("naive baseline equals the exact step without noise sources") {
  // p = 1, identity quantizer, full batch, gamma = 1: one exact EM step,
  // heterogeneity is harmless without compression noise
  const auto model = make_gmm(80, 4, SplitMode::SortedHeterogeneous);
  const Statistic s0 = start_statistic(model);
  FedEmConfig config;
  config.gamma = 1.0;
  config.alpha = 0.5;
  config.batch = model.examples_per_worker();
  config.rounds = 1;
  config.diag_every = 0;
  config.memory_gap_every = 0;
  ServerState server;
  server.estimate = s0;
  server.memory_mean = Statistic::Zero(model.statistic_dim());
  naive_baseline_round(model, QuantizerSpec::identity(), config, server);
  CHECK((server.estimate - exact_em_step(model, s0)).norm() < 1e-12);
}

TEST_CASE("naive baseline matches fedem under pinned draws when unbiased") {
  // full participation, no compression: the memory terms cancel exactly
  const auto model = make_gmm(60, 3);
  const Statistic s0 = start_statistic(model);
  FedEmConfig config;
  config.gamma = 0.3;
  config.alpha = 0.4;
  config.batch = 5;
  config.rounds = 25;
  config.seed = 31;
  config.diag_every = 0;
  config.memory_gap_every = 0;

  const auto naive =
      run_naive_baseline(model, QuantizerSpec::identity(), config, &s0);
  const auto fed =
      run_fedem(model, QuantizerSpec::identity(), config, &s0);
  // same streams feed both loops, so the only difference is rounding
  Statistic naive_final = naive.server.estimate;
  Statistic fed_final = fed.server.estimate;
  CHECK((naive_final - fed_final).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("exact-em driver decreases the objective and counts full passes") {
  const auto model = make_gmm(60, 3);
  const Statistic s0 = start_statistic(model);
  const auto run = run_exact_em(model, 10, 0, &s0);
  REQUIRE(run.trace.size() == 10);
  CHECK(run.trace[0].ce_evals == 60);
  CHECK(run.trace[9].ce_evals == 600);
  for (size_t i = 1; i < run.trace.size(); ++i)
    CHECK(run.trace[i].objective <= run.trace[i - 1].objective + 1e-9);
}

TEST_CASE("constants estimate: affine field recovers the spectral norm") {
  const int q = 3;
  Eigen::MatrixXd a(q, q);
  a << 0.5, 0.2, 0.0, 0.0, -0.3, 0.1, 0.2, 0.0, 0.8;
  // conditional expectation matrix M = A + I gives mean field A s + c
  const Eigen::MatrixXd m = a + Eigen::MatrixXd::Identity(q, q);
  std::vector<Eigen::VectorXd> offsets = {Eigen::VectorXd::Constant(q, 0.3),
                                          Eigen::VectorXd::Constant(q, -0.1)};
  AffineModel model(m, offsets, 4, 0.0, 8);

  const double spectral =
      Eigen::JacobiSVD<Eigen::MatrixXd>(a).singularValues()(0);
  const auto est =
      estimate_constants(model, Statistic::Zero(q), 1000, 1.0, 12);
  CHECK(est.field_lipschitz == doctest::Approx(spectral).epsilon(0.05));
  CHECK(est.field_lipschitz <= spectral + 1e-9);  // secants never exceed it
  CHECK(est.max_ratio >= est.median_ratio);
  CHECK(est.probes == 1000);

  // constant mean field: identity conditional expectations
  AffineModel constant(Eigen::MatrixXd::Identity(q, q), offsets, 4, 0.0, 8);
  const auto zero_est =
      estimate_constants(constant, Statistic::Zero(q), 100, 1.0, 12);
  CHECK(zero_est.field_lipschitz < 1e-12);

  CHECK_THROWS_AS(estimate_constants(model, Statistic::Zero(q), 5, 1.0, 12),
                  std::invalid_argument);
}

TEST_CASE("uniform-round summary averages the diagnostic column") {
  std::vector<RoundTrace> trace(2);
  trace[0].mean_field_norm_sq = 1.0;
  trace[1].mean_field_norm_sq = 3.0;
  CHECK(uniform_k_summary(trace) == doctest::Approx(2.0));
  CHECK(uniform_k_summary(trace, 1) == doctest::Approx(3.0));

  std::vector<RoundTrace> constant(5);
  for (auto& row : constant) row.mean_field_norm_sq = 0.7;
  CHECK(uniform_k_summary(constant) == doctest::Approx(0.7));

  // thinned rows are skipped
  constant[2].mean_field_norm_sq = std::numeric_limits<double>::quiet_NaN();
  CHECK(uniform_k_summary(constant) == doctest::Approx(0.7));

  CHECK_THROWS_AS(uniform_k_summary({}), std::invalid_argument);
}
