#pragma once

#include <cstdint>
#include <vector>

#include "fedem/model.hpp"
#include "fedem/quantizer.hpp"
#include "fedem/rng.hpp"
#include "fedem/trace.hpp"

namespace fedem {

enum class MemoryInit { MeanField, Zeros };

struct FedEmConfig {
  double gamma = 1e-2;          // step size, > 0
  double alpha = 0.5;           // memory step, in (0, 1/(1+omega)] in theory mode
  double participation = 1.0;   // p in (0, 1]
  int batch = 1;                // b in [1, m]; b == m runs the exact full-batch oracle
  std::int64_t rounds = 0;      // k_max
  MemoryInit memory_init = MemoryInit::MeanField;
  std::uint64_t seed = 0;
  int diag_every = 1;        // cadence of the exact mean-field/objective pass; 0 = off
  int memory_gap_every = 10;  // cadence of the memory-gap column; 0 = off
  bool workers_parallel = false;
  bool enforce_theory_alpha = false;

  /// Throws std::invalid_argument listing the violated constraint.
  void validate(int examples_per_worker, double variance_bound) const;
};

struct WorkerState {
  Statistic memory;  // per-worker running estimate of the local mean field
};

struct ServerState {
  Statistic estimate;     // current expectation-space iterate
  Statistic memory_mean;  // aggregated memory, equals the mean of worker memories
  std::int64_t round = 0;
  std::int64_t bits = 0;      // cumulative uplink bits
  std::int64_t ce_evals = 0;  // cumulative conditional-expectation evaluations
};

/// Unbiased oracle for the worker's statistic at m_step(estimate): the mean
/// over a size-`batch` minibatch drawn uniformly with replacement. batch ==
/// examples_per_worker computes the exact mean instead (no sampling).
Statistic oracle_statistic(const Model& model, int worker,
                           const Statistic& estimate, int batch, Rng& rng);
Statistic oracle_statistic(const Model& model, int worker,
                           const EvalContext& ctx, int batch, Rng& rng);

struct RoundOutput {
  RoundTrace trace;            // algo column left empty, epoch unscaled (= ce)
  Statistic update_direction;  // the stochastic field applied to the estimate
};

/// One round over all workers: Bernoulli participation, oracle draw,
/// memory-compensated compression, server aggregation and memory update.
/// Throws StateError when server and worker memories are inconsistent.
RoundOutput fedem_round(const Model& model, const QuantizerSpec& quantizer,
                        const FedEmConfig& config, ServerState& server,
                        std::vector<WorkerState>& workers);

/// Largest admissible constant step size (theory-backed); infinite second
/// branch collapses to the first when compression and participation noise
/// vanish.
double max_step_size(double v_min, double grad_lipschitz,
                     double field_lipschitz, int workers, double omega,
                     double participation);

/// Participation-inflated compression constant.
double participation_variance_bound(double omega, double participation);

/// Horizon-tuned step size, capped at `step_cap`; returns the cap when the
/// oracle noise sigma_sq is zero.
double tuned_step_size(double objective_gap, int workers, std::int64_t rounds,
                       double grad_lipschitz, double omega, double sigma_sq,
                       double step_cap);

struct FedEmRun {
  std::vector<RoundTrace> trace;
  ServerState server;
  std::vector<WorkerState> workers;
};

/// Loop driver. `initial` pins the starting estimate; by default the model's
/// initial statistic (seeded) is used. Deterministic for a given seed.
/// Rows are also appended to `sink` as they are produced, so a caller can
/// flush a partial trace when a round throws.
FedEmRun run_fedem(const Model& model, const QuantizerSpec& quantizer,
                   const FedEmConfig& config, const Statistic* initial = nullptr,
                   const char* algo_tag = "fedem",
                   std::vector<RoundTrace>* sink = nullptr);

/// Infinity-norm gap between the server memory and the recomputed mean of
/// worker memories; fedem_round enforces this to stay at rounding level.
double memory_consistency_gap(const ServerState& server,
                              const std::vector<WorkerState>& workers);

/// Splits worker indices across threads when `parallel`; always produces
/// the same per-worker results regardless of the thread count.
void for_each_worker(int workers, bool parallel,
                     const std::function<void(int)>& body);

/// Exact mean field and related diagnostics computed in one data pass.
struct DiagnosticPass {
  Statistic mean_field;
  double objective = 0.0;
  double memory_gap = 0.0;  // only filled when worker memories are supplied
};
DiagnosticPass diagnostic_pass(const Model& model, const Statistic& estimate,
                               const EvalContext& ctx,
                               const std::vector<Statistic>* memories,
                               bool with_objective, const ThetaVector& theta);

}  // namespace fedem
