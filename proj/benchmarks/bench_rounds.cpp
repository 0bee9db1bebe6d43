#include <benchmark/benchmark.h>

#include <memory>

#include "fedem/fedem.hpp"
#include "fedem/gmm.hpp"
#include "fedem/vrfedem.hpp"

namespace {

struct Fixture {
  std::unique_ptr<fedem::GmmModel> model_ptr;
  fedem::Statistic start;
  fedem::QuantizerSpec quantizer;
  const fedem::GmmModel& model;

  static Fixture make(int total, int workers) {
    fedem::GmmTheta truth;
    truth.weights = Eigen::Vector2d(0.5, 0.5);
    truth.means.resize(2, 2);
    truth.means.col(0) = Eigen::Vector2d(-1.0, -1.0);
    truth.means.col(1) = Eigen::Vector2d(1.0, 1.0);
    truth.sigma = 0.5 * Eigen::Matrix2d::Identity();
    const auto data = fedem::generate_synthetic(
        truth, total, workers, fedem::SplitMode::Iid, 11);
    fedem::GmmOptions options;
    options.fixed_sigma = true;
    options.sigma = truth.sigma;
    auto model = std::make_unique<fedem::GmmModel>(data.points, workers, 2,
                                                   options);
    fedem::Rng rng(5);
    fedem::Statistic start = model->default_initial_statistic(rng);
    const auto quantizer =
        fedem::QuantizerSpec::uniform_blocks(2, 4, model->statistic_dim());
    const fedem::GmmModel& ref = *model;
    return Fixture{std::move(model), std::move(start), quantizer, ref};
  }
};

void BM_FedEmRound(benchmark::State& state) {
  auto fixture = Fixture::make(10000, 100);
  fedem::FedEmConfig config;
  config.gamma = 1e-2;
  config.alpha = 1e-2;
  config.participation = 0.75;
  config.batch = 20;
  config.seed = 3;
  config.diag_every = 0;  // measure the algorithm, not the instrumentation
  config.memory_gap_every = 0;

  std::vector<fedem::WorkerState> workers(fixture.model.worker_count());
  const auto ctx =
      fixture.model.make_context(fixture.model.m_step(fixture.start));
  for (int i = 0; i < fixture.model.worker_count(); ++i)
    workers[i].memory =
        fedem::worker_statistic(fixture.model, i, *ctx) - fixture.start;
  fedem::ServerState server;
  server.estimate = fixture.start;
  server.memory_mean = fedem::pairwise_sum(
                           0, fixture.model.worker_count(),
                           [&](int i) -> fedem::Statistic {
                             return workers[i].memory;
                           }) /
                       fixture.model.worker_count();

  for (auto _ : state)
    fedem::fedem_round(fixture.model, fixture.quantizer, config, server,
                       workers);
  state.SetItemsProcessed(state.iterations() * 100 * 20);
}

void BM_VrInnerStep(benchmark::State& state) {
  auto fixture = Fixture::make(10000, 100);
  fedem::VrConfig config;
  config.outer_rounds = 1;
  config.inner_rounds = 1;
  config.batch = 5;
  config.gamma = 1e-2;
  config.alpha = 1e-2;
  config.seed = 3;
  config.diag_every = 0;
  config.memory_gap_every = 0;
  auto run = fedem::run_vrfedem(fixture.model, fixture.quantizer, config,
                                &fixture.start);
  std::int64_t k = 1;
  for (auto _ : state)
    fedem::vr_inner_step(fixture.model, fixture.quantizer, config, run.server,
                         run.workers, 1, ++k);
  state.SetItemsProcessed(state.iterations() * 100 * 10);
}

void BM_FullPass(benchmark::State& state) {
  auto fixture = Fixture::make(10000, 100);
  const auto theta = fixture.model.m_step(fixture.start);
  for (auto _ : state) {
    const auto ctx = fixture.model.make_context(theta);
    benchmark::DoNotOptimize(fedem::full_statistic(fixture.model, *ctx));
  }
  state.SetItemsProcessed(state.iterations() * 10000);
}

}  // namespace

BENCHMARK(BM_FedEmRound);
BENCHMARK(BM_VrInnerStep);
BENCHMARK(BM_FullPass);
