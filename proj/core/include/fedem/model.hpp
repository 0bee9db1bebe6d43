#pragma once

#include <memory>

#include "fedem/errors.hpp"
#include "fedem/rng.hpp"
#include "fedem/statistic.hpp"

namespace fedem {

/// Decoded parameters plus whatever per-parameter precomputation the
/// evaluators need (e.g. a covariance factorization). Built once per round
/// and shared read-only by all workers.
class EvalContext {
 public:
  virtual ~EvalContext() = default;
};

/// Contract for one latent-variable model in the expectation space.
///
/// A model owns its data shards (worker_count() shards of
/// examples_per_worker() examples each) and supplies:
///   - the per-example conditional expectation of the complete-data
///     sufficient statistics, as a function of the parameters,
///   - the m-step map from a statistic vector to parameters,
///   - the normalized negative penalized log-likelihood.
///
/// The m-step map is deterministic: identical inputs yield identical
/// parameters. Evaluators are reentrant; contexts are immutable.
class Model {
 public:
  virtual ~Model() = default;

  virtual int statistic_dim() const = 0;      // q
  virtual int worker_count() const = 0;       // n
  virtual int examples_per_worker() const = 0;  // m

  /// m-step: the unique minimizer of the penalized complete-data objective
  /// for statistic s. Throws DegenerateModelError at degenerate points.
  virtual ThetaVector m_step(const Statistic& s) const = 0;

  virtual std::unique_ptr<const EvalContext> make_context(
      const ThetaVector& theta) const = 0;

  /// Conditional expectation of the complete-data sufficient statistics of
  /// example `example` on worker `worker`, under the context's parameters.
  virtual Statistic conditional_expectation(int worker, int example,
                                            const EvalContext& ctx) const = 0;

  /// Normalized negative penalized log-likelihood at theta.
  virtual double objective(const ThetaVector& theta) const = 0;

  /// A reasonable (seeded) starting point in the expectation space.
  virtual Statistic initial_statistic(Rng& rng) const = 0;
};

/// Per-worker average of conditional expectations (exact, pairwise).
Statistic worker_statistic(const Model& model, int worker,
                           const EvalContext& ctx);
Statistic worker_statistic(const Model& model, int worker,
                           const ThetaVector& theta);

/// Average of worker_statistic over all workers (exact, pairwise).
Statistic full_statistic(const Model& model, const EvalContext& ctx);

/// One exact EM step in the expectation space. Reference oracle for every
/// federated variant.
Statistic exact_em_step(const Model& model, const Statistic& s);

/// Mean field whose roots are the EM fixed points. Shares the arithmetic
/// path of exact_em_step, so exact_em_step(s) - s == mean_field(s) exactly.
Statistic mean_field(const Model& model, const Statistic& s);

/// Per-worker mean field contribution.
Statistic worker_mean_field(const Model& model, int worker,
                            const Statistic& s);

/// Objective in the expectation space: model objective at m_step(s).
double objective_value(const Model& model, const Statistic& s);

}  // namespace fedem
