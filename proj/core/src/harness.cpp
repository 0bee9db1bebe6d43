#include "fedem/harness.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedem {

RoundOutput naive_baseline_round(const Model& model,
                                 const QuantizerSpec& quantizer,
                                 const FedEmConfig& config,
                                 ServerState& server) {
  const int n = model.worker_count();
  const ThetaVector theta = model.m_step(server.estimate);
  const auto ctx = model.make_context(theta);

  const bool diag_round =
      config.diag_every > 0 && server.round % config.diag_every == 0;
  RoundOutput out;
  out.trace.t = 0;
  out.trace.k = server.round;
  if (diag_round) {
    const auto diag =
        diagnostic_pass(model, server.estimate, *ctx, nullptr, true, theta);
    out.trace.mean_field_norm_sq = diag.mean_field.squaredNorm();
    out.trace.objective = diag.objective;
  }

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
    const Statistic delta = draw - server.estimate;  // no memory compensation
    Rng quant_rng =
        stream_for(config.seed, server.round, i, StreamPurpose::Quantize);
    auto compressed = quantize(quantizer, delta, quant_rng);
    payload[i] = std::move(compressed.payload);
    bit_cost[i] = compressed.bit_cost;
  });

  std::vector<int> participants;
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
      sum / (static_cast<double>(n) * config.participation);
  server.estimate += config.gamma * out.update_direction;
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

FedEmRun run_naive_baseline(const Model& model, const QuantizerSpec& quantizer,
                            const FedEmConfig& config,
                            const Statistic* initial,
                            std::vector<RoundTrace>* sink) {
  quantizer.validate(model.statistic_dim());
  config.validate(model.examples_per_worker(),
                  quantizer.variance_bound(model.statistic_dim()));
  const std::int64_t total = static_cast<std::int64_t>(model.worker_count()) *
                             model.examples_per_worker();
  FedEmRun run;
  if (initial) {
    run.server.estimate = *initial;
  } else {
    Rng init_rng = stream_for(config.seed, 0, 0, StreamPurpose::Init);
    run.server.estimate = model.initial_statistic(init_rng);
  }
  run.server.memory_mean = Statistic::Zero(model.statistic_dim());
  for (std::int64_t k = 0; k < config.rounds; ++k) {
    auto round = naive_baseline_round(model, quantizer, config, run.server);
    round.trace.algo = "naive";
    round.trace.epoch = static_cast<double>(run.server.ce_evals) /
                        static_cast<double>(total);
    if (sink) sink->push_back(round.trace);
    run.trace.push_back(std::move(round.trace));
  }
  return run;
}

FedEmRun run_exact_em(const Model& model, std::int64_t rounds,
                      std::uint64_t seed, const Statistic* initial,
                      int diag_every, std::vector<RoundTrace>* sink) {
  const std::int64_t total = static_cast<std::int64_t>(model.worker_count()) *
                             model.examples_per_worker();
  FedEmRun run;
  if (initial) {
    run.server.estimate = *initial;
  } else {
    Rng init_rng = stream_for(seed, 0, 0, StreamPurpose::Init);
    run.server.estimate = model.initial_statistic(init_rng);
  }
  run.server.memory_mean = Statistic::Zero(model.statistic_dim());
  for (std::int64_t k = 0; k < rounds; ++k) {
    const ThetaVector theta = model.m_step(run.server.estimate);
    const auto ctx = model.make_context(theta);
    const Statistic next = full_statistic(model, *ctx);
    RoundTrace row;
    row.algo = "exact-em";
    row.t = 0;
    row.k = k;
    if (diag_every > 0 && k % diag_every == 0) {
      row.mean_field_norm_sq = (next - run.server.estimate).squaredNorm();
      row.objective = model.objective(theta);
    }
    row.update_norm_sq = (next - run.server.estimate).squaredNorm();
    run.server.estimate = next;
    run.server.ce_evals += total;
    run.server.round += 1;
    row.ce_evals = run.server.ce_evals;
    row.bits = 0;
    row.epoch = static_cast<double>(run.server.ce_evals) /
                static_cast<double>(total);
    if (sink) sink->push_back(row);
    run.trace.push_back(std::move(row));
  }
  return run;
}

ConstantsEstimate estimate_constants(const Model& model, const Statistic& base,
                                     int probes, double radius,
                                     std::uint64_t seed) {
  if (probes < 10)
    throw std::invalid_argument("estimate_constants: need at least 10 probes");
  Rng rng = stream_for(seed, 0, 0, StreamPurpose::Probe);
  const int q = model.statistic_dim();
  std::vector<double> ratios;
  ratios.reserve(probes);
  for (int p = 0; p < probes; ++p) {
    Statistic a(q), b(q);
    for (int i = 0; i < q; ++i) {
      a[i] = base[i] + radius * rng.normal();
      b[i] = base[i] + radius * rng.normal();
    }
    const double dist = (a - b).norm();
    if (dist == 0.0) continue;
    try {
      const double ratio =
          (mean_field(model, a) - mean_field(model, b)).norm() / dist;
      ratios.push_back(ratio);
    } catch (const ModelError&) {
      // probe left the model's feasible region; skip the pair
    }
  }
  if (ratios.empty())
    throw ModelError(
        "estimate_constants: every probe pair was degenerate; shrink the "
        "probe radius");
  ConstantsEstimate out;
  out.probes = static_cast<int>(ratios.size());
  if (ratios.empty()) return out;
  std::sort(ratios.begin(), ratios.end());
  out.max_ratio = ratios.back();
  out.median_ratio = ratios[ratios.size() / 2];
  out.field_lipschitz = out.max_ratio;
  return out;
}

double uniform_k_summary(const std::vector<RoundTrace>& trace,
                         std::int64_t burn_in) {
  if (trace.empty())
    throw std::invalid_argument("uniform_k_summary: empty trace");
  double sum = 0.0;
  std::int64_t count = 0;
  for (size_t i = 0; i < trace.size(); ++i) {
    if (static_cast<std::int64_t>(i) < burn_in) continue;
    if (std::isnan(trace[i].mean_field_norm_sq)) continue;
    sum += trace[i].mean_field_norm_sq;
    ++count;
  }
  if (count == 0)
    throw std::invalid_argument(
        "uniform_k_summary: no mean-field diagnostics in range");
  return sum / static_cast<double>(count);
}

QuantizerContractResult check_quantizer_contract(const QuantizerSpec& spec,
                                                 const std::string& name,
                                                 int dim, int vectors,
                                                 int trials,
                                                 std::uint64_t seed) {
  QuantizerContractResult res;
  res.name = name;
  res.vectors = vectors;
  const double omega = spec.variance_bound(dim);
  for (int v = 0; v < vectors; ++v) {
    Rng vec_rng = stream_for(seed, v, 0, StreamPurpose::Data);
    Eigen::VectorXd x(dim);
    for (int i = 0; i < dim; ++i) x[i] = 2.0 * vec_rng.normal();
    Rng mc_rng = stream_for(seed, v, 1, StreamPurpose::Quantize);
    const auto mom = empirical_moments(spec, x, trials, mc_rng);

    // vector-level test: || empirical mean - x || against three times the
    // aggregate standard error of the mean vector
    const double agg_se = mom.mean_std_err.norm();
    const double mean_err = (mom.mean - x).norm();
    if (agg_se == 0.0) {
      // deterministic operator: only accumulation rounding is allowed
      if (mean_err > 1e-12 * (1.0 + x.norm())) res.mean_ok = false;
    } else {
      res.worst_mean_sigmas =
          std::max(res.worst_mean_sigmas, mean_err / agg_se);
      if (mean_err > 3.0 * agg_se) res.mean_ok = false;
    }
    const double bound = (1.0 + omega) * x.squaredNorm();
    const double margin = mom.second_moment - bound -
                          3.0 * mom.second_moment_std_err -
                          1e-12 * (1.0 + bound);
    res.worst_second_moment_margin =
        std::max(res.worst_second_moment_margin, margin);
    if (margin > 0.0) res.second_moment_ok = false;

    if (spec.kind == QuantizerKind::BlockP) {
      const double exact = block_exact_mse(spec, x);
      // MSE is a mean of trials i.i.d. squared errors; reuse the second
      // moment band scale as a conservative spread proxy
      const double band =
          3.0 * mom.second_moment_std_err + 1e-9 * (1.0 + exact);
      if (std::abs(mom.mse - exact) > band) res.mse_formula_ok = false;
    }
  }
  return res;
}

std::vector<QuantizerContractResult> quantizer_contract_suite(
    int vectors, int trials, std::uint64_t seed) {
  std::vector<QuantizerContractResult> out;
  out.push_back(check_quantizer_contract(QuantizerSpec::identity(), "identity-q8",
                                         8, vectors, trials, seed));
  out.push_back(check_quantizer_contract(QuantizerSpec::dithering(2.0, 1),
                                         "dithering-r2-s1-q16", 16, vectors,
                                         trials, hash_combine(seed, 1)));
  out.push_back(check_quantizer_contract(QuantizerSpec::dithering(2.0, 4),
                                         "dithering-r2-s4-q64", 64, vectors,
                                         trials, hash_combine(seed, 2)));
  out.push_back(check_quantizer_contract(
      QuantizerSpec::uniform_blocks(2, 4, 16), "block2-len4-q16", 16, vectors,
      trials, hash_combine(seed, 3)));
  out.push_back(check_quantizer_contract(QuantizerSpec::block(2, {4, 9}),
                                         "block2-4+9-q13", 13, vectors, trials,
                                         hash_combine(seed, 4)));
  out.push_back(check_quantizer_contract(
      QuantizerSpec::uniform_blocks(1, 8, 64), "block1-len8-q64", 64, vectors,
      trials, hash_combine(seed, 5)));
  out.push_back(check_quantizer_contract(QuantizerSpec::block(2, {64}),
                                         "block2-single-q64", 64, vectors,
                                         trials, hash_combine(seed, 6)));
  return out;
}

}  // namespace fedem
