#include "fedem/fedem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>

namespace fedem {

void FedEmConfig::validate(int examples_per_worker,
                           double variance_bound) const {
  if (gamma <= 0.0) throw std::invalid_argument("fedem: gamma must be > 0");
  if (alpha <= 0.0) throw std::invalid_argument("fedem: alpha must be > 0");
  if (participation <= 0.0 || participation > 1.0)
    throw std::invalid_argument("fedem: participation must lie in (0, 1]");
  if (batch < 1 || batch > examples_per_worker)
    throw std::invalid_argument("fedem: batch must lie in [1, m]");
  if (rounds < 0) throw std::invalid_argument("fedem: rounds must be >= 0");
  if (enforce_theory_alpha && alpha * (1.0 + variance_bound) > 1.0 + 1e-12)
    throw std::invalid_argument(
        "fedem: theory mode requires alpha * (1 + omega) <= 1");
}

Statistic oracle_statistic(const Model& model, int worker,
                           const EvalContext& ctx, int batch, Rng& rng) {
  const int m = model.examples_per_worker();
  if (batch == m) return worker_statistic(model, worker, ctx);
  std::vector<int> picks(batch);
  for (int t = 0; t < batch; ++t) picks[t] = rng.uniform_int(m);
  Statistic s = pairwise_sum(0, batch, [&](int t) {
    return model.conditional_expectation(worker, picks[t], ctx);
  });
  return s / static_cast<double>(batch);
}

Statistic oracle_statistic(const Model& model, int worker,
                           const Statistic& estimate, int batch, Rng& rng) {
  const auto ctx = model.make_context(model.m_step(estimate));
  return oracle_statistic(model, worker, *ctx, batch, rng);
}

void for_each_worker(int workers, bool parallel,
                     const std::function<void(int)>& body) {
  if (!parallel || workers < 2) {
    for (int i = 0; i < workers; ++i) body(i);
    return;
  }
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const int threads = static_cast<int>(std::min<unsigned>(hw, 8u));
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (int i = t; i < workers; i += threads) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

double memory_consistency_gap(const ServerState& server,
                              const std::vector<WorkerState>& workers) {
  const int n = static_cast<int>(workers.size());
  Statistic mean = pairwise_sum(
      0, n, [&](int i) -> Statistic { return workers[i].memory; });
  mean /= static_cast<double>(n);
  return (server.memory_mean - mean).lpNorm<Eigen::Infinity>();
}

DiagnosticPass diagnostic_pass(const Model& model, const Statistic& estimate,
                               const EvalContext& ctx,
                               const std::vector<Statistic>* memories,
                               bool with_objective, const ThetaVector& theta) {
  const int n = model.worker_count();
  std::vector<Statistic> per_worker(n);
  for (int i = 0; i < n; ++i) per_worker[i] = worker_statistic(model, i, ctx);
  DiagnosticPass out;
  out.mean_field = pairwise_sum(0, n, [&](int i) -> Statistic {
                     return per_worker[i];
                   }) / static_cast<double>(n) -
                   estimate;
  if (memories) {
    out.memory_gap = pairwise_sum_scalar(0, n, [&](int i) {
                       return ((*memories)[i] - (per_worker[i] - estimate))
                           .squaredNorm();
                     }) /
                     static_cast<double>(n);
  }
  if (with_objective) out.objective = model.objective(theta);
  return out;
}

RoundOutput fedem_round(const Model& model, const QuantizerSpec& quantizer,
                        const FedEmConfig& config, ServerState& server,
                        std::vector<WorkerState>& workers) {
  const int n = model.worker_count();
  if (static_cast<int>(workers.size()) != n)
    throw StateError("fedem_round: worker state count mismatch");
  const double state_tol =
      1e-9 * (1.0 + server.memory_mean.lpNorm<Eigen::Infinity>());
  if (memory_consistency_gap(server, workers) > state_tol)
    throw StateError(
        "fedem_round: server memory diverged from the worker memory mean");

  const ThetaVector theta = model.m_step(server.estimate);
  const auto ctx = model.make_context(theta);

  const bool diag_round =
      config.diag_every > 0 && server.round % config.diag_every == 0;
  const bool gap_round = config.memory_gap_every > 0 &&
                         server.round % config.memory_gap_every == 0;

  RoundOutput out;
  out.trace.t = 0;
  out.trace.k = server.round;
  if (diag_round || gap_round) {
    std::vector<Statistic> memories;
    if (gap_round) {
      memories.reserve(n);
      for (const auto& w : workers) memories.push_back(w.memory);
    }
    const auto diag =
        diagnostic_pass(model, server.estimate, *ctx,
                        gap_round ? &memories : nullptr, diag_round, theta);
    if (diag_round) {
      out.trace.mean_field_norm_sq = diag.mean_field.squaredNorm();
      out.trace.objective = diag.objective;
    }
    if (gap_round) out.trace.memory_gap = diag.memory_gap;
  }

  // worker phase: per-(worker, round, purpose) streams keep the result
  // independent of execution order
  std::vector<char> active(n, 0);
  std::vector<Eigen::VectorXd> payload(n);
  std::vector<std::int64_t> bit_cost(n, 0);
  for_each_worker(n, config.workers_parallel, [&](int i) {
    if (config.participation < 1.0) {
      Rng part = stream_for(config.seed, server.round, i,
                            StreamPurpose::Participation);
      if (part.uniform() >= config.participation) return;
    }
    active[i] = 1;
    Rng batch_rng =
        stream_for(config.seed, server.round, i, StreamPurpose::Batch);
    const Statistic draw =
        oracle_statistic(model, i, *ctx, config.batch, batch_rng);
    const Statistic delta = draw - workers[i].memory - server.estimate;
    Rng quant_rng =
        stream_for(config.seed, server.round, i, StreamPurpose::Quantize);
    auto compressed = quantize(quantizer, delta, quant_rng);
    payload[i] = std::move(compressed.payload);
    bit_cost[i] = compressed.bit_cost;
  });

  std::vector<int> participants;
  participants.reserve(n);
  for (int i = 0; i < n; ++i)
    if (active[i]) participants.push_back(i);

  Statistic sum = Statistic::Zero(model.statistic_dim());
  if (!participants.empty()) {
    sum = pairwise_sum(0, static_cast<int>(participants.size()),
                       [&](int idx) -> Statistic {
                         return payload[participants[idx]];
                       });
  }

  out.update_direction =
      server.memory_mean +
      sum / (static_cast<double>(n) * config.participation);
  server.estimate += config.gamma * out.update_direction;
  for (int i : participants) workers[i].memory += config.alpha * payload[i];
  server.memory_mean += (config.alpha / static_cast<double>(n)) * sum;

  for (int i : participants) {
    server.bits += bit_cost[i];
    server.ce_evals += config.batch;
  }
  server.round += 1;

  out.trace.update_norm_sq = out.update_direction.squaredNorm();
  out.trace.bits = server.bits;
  out.trace.ce_evals = server.ce_evals;
  return out;
}

double participation_variance_bound(double omega, double participation) {
  return omega + (1.0 - participation) * (1.0 + omega) / participation;
}

double max_step_size(double v_min, double grad_lipschitz,
                     double field_lipschitz, int workers, double omega,
                     double participation) {
  const double first = v_min / (2.0 * grad_lipschitz);
  const double omega_p = participation_variance_bound(omega, participation);
  if (omega_p <= 0.0) return first;
  const double second =
      participation * std::sqrt(static_cast<double>(workers)) /
      (2.0 * std::sqrt(2.0) * field_lipschitz * (1.0 + omega) *
       std::sqrt(omega_p));
  return std::min(first, second);
}

double tuned_step_size(double objective_gap, int workers, std::int64_t rounds,
                       double grad_lipschitz, double omega, double sigma_sq,
                       double step_cap) {
  if (sigma_sq <= 0.0) return step_cap;
  const double tuned = std::sqrt(
      objective_gap * static_cast<double>(workers) /
      (static_cast<double>(rounds) * grad_lipschitz * (1.0 + 5.0 * omega) *
       sigma_sq));
  return std::min(tuned, step_cap);
}

FedEmRun run_fedem(const Model& model, const QuantizerSpec& quantizer,
                   const FedEmConfig& config, const Statistic* initial,
                   const char* algo_tag, std::vector<RoundTrace>* sink) {
  quantizer.validate(model.statistic_dim());
  config.validate(model.examples_per_worker(),
                  quantizer.variance_bound(model.statistic_dim()));

  const int n = model.worker_count();
  const std::int64_t total = static_cast<std::int64_t>(n) *
                             static_cast<std::int64_t>(model.examples_per_worker());
  FedEmRun run;
  if (initial) {
    run.server.estimate = *initial;
  } else {
    Rng init_rng = stream_for(config.seed, 0, 0, StreamPurpose::Init);
    run.server.estimate = model.initial_statistic(init_rng);
  }

  run.workers.resize(n);
  if (config.memory_init == MemoryInit::MeanField) {
    const auto ctx = model.make_context(model.m_step(run.server.estimate));
    for (int i = 0; i < n; ++i)
      run.workers[i].memory =
          worker_statistic(model, i, *ctx) - run.server.estimate;
    run.server.ce_evals += total;
  } else {
    for (auto& w : run.workers)
      w.memory = Statistic::Zero(model.statistic_dim());
  }
  run.server.memory_mean =
      pairwise_sum(0, n, [&](int i) -> Statistic {
        return run.workers[i].memory;
      }) /
      static_cast<double>(n);

  run.trace.reserve(static_cast<size_t>(config.rounds));
  for (std::int64_t k = 0; k < config.rounds; ++k) {
    auto round = fedem_round(model, quantizer, config, run.server, run.workers);
    round.trace.algo = algo_tag;
    round.trace.epoch = static_cast<double>(run.server.ce_evals) /
                        static_cast<double>(total);
    if (sink) sink->push_back(round.trace);
    run.trace.push_back(std::move(round.trace));
  }
  return run;
}

}  // namespace fedem
