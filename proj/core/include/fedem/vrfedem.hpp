#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fedem/fedem.hpp"
#include "fedem/model.hpp"
#include "fedem/quantizer.hpp"
#include "fedem/trace.hpp"

namespace fedem {

/// Variance-reduced federated EM: an outer/inner loop where each worker
/// keeps a running control statistic updated by minibatch differences and
/// refreshed by an exact full pass at the start of every outer loop. Full
/// participation only.
struct VrConfig {
  int outer_rounds = 1;  // >= 1
  int inner_rounds = 0;  // >= 0
  int batch = 0;         // 0 resolves to ceil(inner_rounds / (1+omega)^2)
  double gamma = 1e-2;
  double alpha = 0.5;
  std::uint64_t seed = 0;
  int diag_every = 1;
  int memory_gap_every = 10;
  bool workers_parallel = false;
  bool enforce_theory_alpha = false;

  int resolved_batch(double variance_bound) const;
  void validate(int examples_per_worker, double variance_bound) const;
};

struct VrWorkerState {
  Statistic memory;   // running estimate of the local mean field
  Statistic control;  // running estimate of the local statistic
};

struct VrServerState {
  Statistic estimate;
  Statistic prev_estimate;  // iterate of the previous inner step
  Statistic memory_mean;
  std::int64_t bits = 0;
  std::int64_t ce_evals = 0;
};

/// One inner step (t, k): control-statistic correction on the sampled batch,
/// memory-compensated compression, server aggregation.
/// Accounts 2 * batch conditional expectations per worker, matching one
/// evaluation of the batch at the current and one at the previous
/// parameters (the k = 0 correction is exactly zero and is skipped, but is
/// accounted identically for comparability).
RoundOutput vr_inner_step(const Model& model, const QuantizerSpec& quantizer,
                          const VrConfig& config, VrServerState& server,
                          std::vector<VrWorkerState>& workers, std::int64_t t,
                          std::int64_t k);

/// Exact full-batch reset of every worker's control statistic at the current
/// estimate. Memories and the estimate are untouched; costs one full pass.
void vr_outer_refresh(const Model& model, VrServerState& server,
                      std::vector<VrWorkerState>& workers);

/// Theory-backed constant step size for the variance-reduced loop.
double vr_step_size(double v_min, double v_max, double grad_lipschitz,
                    double field_lipschitz, int workers, double omega);

struct VrRun {
  std::vector<RoundTrace> trace;
  VrServerState server;
  std::vector<VrWorkerState> workers;
};

/// Observer invoked after every inner step with (t, k) one-based/zero-based
/// as in the loop, after state updates.
using VrObserver = std::function<void(
    int t, int k, const VrServerState&, const std::vector<VrWorkerState>&)>;

/// Loop driver: init pass (control statistics and mean-field memories), then
/// outer_rounds x inner_rounds inner steps with a refresh between outer
/// loops. Emits one trace row for the init pass (t = 0) and one per inner
/// step. Total accounted conditional expectations:
/// n*m*outer_rounds + 2*n*batch*inner_rounds*outer_rounds.
VrRun run_vrfedem(const Model& model, const QuantizerSpec& quantizer,
                  const VrConfig& config, const Statistic* initial = nullptr,
                  const VrObserver& observer = nullptr,
                  std::vector<RoundTrace>* sink = nullptr);

double memory_consistency_gap(const VrServerState& server,
                              const std::vector<VrWorkerState>& workers);

}  // namespace fedem
