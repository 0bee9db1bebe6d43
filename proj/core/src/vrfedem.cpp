#include "fedem/vrfedem.hpp"

#include <cmath>
#include <stdexcept>

namespace fedem {

int VrConfig::resolved_batch(double variance_bound) const {
  if (batch > 0) return batch;
  if (inner_rounds == 0) return 1;
  const double w = 1.0 + variance_bound;
  return static_cast<int>(std::ceil(static_cast<double>(inner_rounds) / (w * w)));
}

void VrConfig::validate(int examples_per_worker, double variance_bound) const {
  if (outer_rounds < 1)
    throw std::invalid_argument("vr-fedem: outer_rounds must be >= 1");
  if (inner_rounds < 0)
    throw std::invalid_argument("vr-fedem: inner_rounds must be >= 0");
  if (gamma <= 0.0) throw std::invalid_argument("vr-fedem: gamma must be > 0");
  if (alpha <= 0.0) throw std::invalid_argument("vr-fedem: alpha must be > 0");
  const int b = resolved_batch(variance_bound);
  if (b < 1 || b > examples_per_worker)
    throw std::invalid_argument("vr-fedem: batch must lie in [1, m]");
  if (enforce_theory_alpha && alpha * (1.0 + variance_bound) > 1.0 + 1e-12)
    throw std::invalid_argument(
        "vr-fedem: theory mode requires alpha * (1 + omega) <= 1");
}

double memory_consistency_gap(const VrServerState& server,
                              const std::vector<VrWorkerState>& workers) {
  const int n = static_cast<int>(workers.size());
  Statistic mean = pairwise_sum(
      0, n, [&](int i) -> Statistic { return workers[i].memory; });
  mean /= static_cast<double>(n);
  return (server.memory_mean - mean).lpNorm<Eigen::Infinity>();
}

RoundOutput vr_inner_step(const Model& model, const QuantizerSpec& quantizer,
                          const VrConfig& config, VrServerState& server,
                          std::vector<VrWorkerState>& workers, std::int64_t t,
                          std::int64_t k) {
  const int n = model.worker_count();
  const int m = model.examples_per_worker();
  const int batch =
      config.resolved_batch(quantizer.variance_bound(model.statistic_dim()));
  if (static_cast<int>(workers.size()) != n)
    throw StateError("vr_inner_step: worker state count mismatch");
  const double state_tol =
      1e-9 * (1.0 + server.memory_mean.lpNorm<Eigen::Infinity>());
  if (memory_consistency_gap(server, workers) > state_tol)
    throw StateError(
        "vr_inner_step: server memory diverged from the worker memory mean");

  const ThetaVector theta = model.m_step(server.estimate);
  const auto ctx = model.make_context(theta);
  // the correction term is identically zero while the two iterates coincide
  const bool corrected =
      (server.estimate.array() != server.prev_estimate.array()).any();
  std::unique_ptr<const EvalContext> prev_ctx;
  if (corrected) prev_ctx = model.make_context(model.m_step(server.prev_estimate));

  const std::int64_t step_index = static_cast<std::int64_t>(
      hash_combine(static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(k)));

  RoundOutput out;
  out.trace.t = t;
  out.trace.k = k;
  const std::int64_t flat = t * std::max(1, config.inner_rounds) + k;
  const bool diag_round =
      config.diag_every > 0 && flat % config.diag_every == 0;
  const bool gap_round =
      config.memory_gap_every > 0 && flat % config.memory_gap_every == 0;
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

  std::vector<Eigen::VectorXd> payload(n);
  std::vector<std::int64_t> bit_cost(n, 0);
  for_each_worker(n, config.workers_parallel, [&](int i) {
    if (corrected) {
      Rng batch_rng =
          stream_for(config.seed, step_index, i, StreamPurpose::Batch);
      if (batch == m) {
        workers[i].control += worker_statistic(model, i, *ctx) -
                              worker_statistic(model, i, *prev_ctx);
      } else {
        std::vector<int> picks(batch);
        for (int b = 0; b < batch; ++b) picks[b] = batch_rng.uniform_int(m);
        Statistic corr = pairwise_sum(0, batch, [&](int b) -> Statistic {
          return model.conditional_expectation(i, picks[b], *ctx) -
                 model.conditional_expectation(i, picks[b], *prev_ctx);
        });
        workers[i].control += corr / static_cast<double>(batch);
      }
    }
    const Statistic delta =
        workers[i].control - server.estimate - workers[i].memory;
    Rng quant_rng =
        stream_for(config.seed, step_index, i, StreamPurpose::Quantize);
    auto compressed = quantize(quantizer, delta, quant_rng);
    payload[i] = std::move(compressed.payload);
    bit_cost[i] = compressed.bit_cost;
  });

  const Statistic sum =
      pairwise_sum(0, n, [&](int i) -> Statistic { return payload[i]; });
  out.update_direction = server.memory_mean + sum / static_cast<double>(n);
  server.prev_estimate = server.estimate;
  server.estimate += config.gamma * out.update_direction;
  for (int i = 0; i < n; ++i) workers[i].memory += config.alpha * payload[i];
  server.memory_mean += (config.alpha / static_cast<double>(n)) * sum;
  for (int i = 0; i < n; ++i) server.bits += bit_cost[i];
  server.ce_evals += 2ll * batch * n;

  out.trace.update_norm_sq = out.update_direction.squaredNorm();
  out.trace.bits = server.bits;
  out.trace.ce_evals = server.ce_evals;
  return out;
}

void vr_outer_refresh(const Model& model, VrServerState& server,
                      std::vector<VrWorkerState>& workers) {
  const auto ctx = model.make_context(model.m_step(server.estimate));
  const int n = model.worker_count();
  for (int i = 0; i < n; ++i)
    workers[i].control = worker_statistic(model, i, *ctx);
  server.prev_estimate = server.estimate;
  server.ce_evals += static_cast<std::int64_t>(n) * model.examples_per_worker();
}

double vr_step_size(double v_min, double v_max, double grad_lipschitz,
                    double field_lipschitz, int workers, double omega) {
  const double penalty =
      4.0 * std::sqrt(2.0) * (v_max / grad_lipschitz) *
      (field_lipschitz / std::sqrt(static_cast<double>(workers))) *
      (1.0 + omega) * std::sqrt(omega + (1.0 + 10.0 * omega) / 8.0);
  return (v_min / grad_lipschitz) / (1.0 + penalty);
}

VrRun run_vrfedem(const Model& model, const QuantizerSpec& quantizer,
                  const VrConfig& config, const Statistic* initial,
                  const VrObserver& observer, std::vector<RoundTrace>* sink) {
  quantizer.validate(model.statistic_dim());
  config.validate(model.examples_per_worker(),
                  quantizer.variance_bound(model.statistic_dim()));

  const int n = model.worker_count();
  const std::int64_t total =
      static_cast<std::int64_t>(n) * model.examples_per_worker();

  VrRun run;
  if (initial) {
    run.server.estimate = *initial;
  } else {
    Rng init_rng = stream_for(config.seed, 0, 0, StreamPurpose::Init);
    run.server.estimate = model.initial_statistic(init_rng);
  }
  run.server.prev_estimate = run.server.estimate;

  // init pass: exact control statistics; memories start at the local mean
  // field, reusing the same pass at no extra cost
  run.workers.resize(n);
  {
    const ThetaVector theta = model.m_step(run.server.estimate);
    const auto ctx = model.make_context(theta);
    for (int i = 0; i < n; ++i) {
      run.workers[i].control = worker_statistic(model, i, *ctx);
      run.workers[i].memory = run.workers[i].control - run.server.estimate;
    }
    run.server.ce_evals += total;
    run.server.memory_mean =
        pairwise_sum(0, n, [&](int i) -> Statistic {
          return run.workers[i].memory;
        }) /
        static_cast<double>(n);

    RoundTrace init_row;
    init_row.algo = "vr-fedem";
    init_row.t = 0;
    init_row.k = 0;
    const auto diag =
        diagnostic_pass(model, run.server.estimate, *ctx, nullptr, true, theta);
    init_row.mean_field_norm_sq = diag.mean_field.squaredNorm();
    init_row.objective = diag.objective;
    init_row.bits = 0;
    init_row.ce_evals = run.server.ce_evals;
    init_row.epoch = static_cast<double>(run.server.ce_evals) /
                     static_cast<double>(total);
    if (sink) sink->push_back(init_row);
    run.trace.push_back(std::move(init_row));
  }

  for (int t = 1; t <= config.outer_rounds; ++t) {
    for (int k = 0; k < config.inner_rounds; ++k) {
      auto step = vr_inner_step(model, quantizer, config, run.server,
                                run.workers, t, k);
      step.trace.algo = "vr-fedem";
      step.trace.epoch = static_cast<double>(run.server.ce_evals) /
                         static_cast<double>(total);
      if (sink) sink->push_back(step.trace);
      run.trace.push_back(std::move(step.trace));
      if (observer) observer(t, k, run.server, run.workers);
    }
    if (t < config.outer_rounds)
      vr_outer_refresh(model, run.server, run.workers);
  }
  return run;
}

}  // namespace fedem
