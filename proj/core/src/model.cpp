#include "fedem/model.hpp"

#include <string>

namespace fedem {

Statistic pairwise_sum(int lo, int hi,
                       const std::function<Statistic(int)>& term) {
  const int count = hi - lo;
  if (count <= 0) throw ModelError("pairwise_sum over an empty range");
  if (count <= 8) {
    Statistic acc = term(lo);
    for (int i = lo + 1; i < hi; ++i) acc += term(i);
    return acc;
  }
  const int mid = lo + count / 2;
  return pairwise_sum(lo, mid, term) + pairwise_sum(mid, hi, term);
}

double pairwise_sum_scalar(int lo, int hi,
                           const std::function<double(int)>& term) {
  const int count = hi - lo;
  if (count <= 0) return 0.0;
  if (count <= 8) {
    double acc = 0.0;
    for (int i = lo; i < hi; ++i) acc += term(i);
    return acc;
  }
  const int mid = lo + count / 2;
  return pairwise_sum_scalar(lo, mid, term) + pairwise_sum_scalar(mid, hi, term);
}

bool all_finite(const Statistic& s) { return s.allFinite(); }

Statistic worker_statistic(const Model& model, int worker,
                           const EvalContext& ctx) {
  if (worker < 0 || worker >= model.worker_count()) {
    throw ModelError("worker index " + std::to_string(worker) +
                     " out of range [0, " +
                     std::to_string(model.worker_count()) + ")");
  }
  const int m = model.examples_per_worker();
  Statistic s = pairwise_sum(0, m, [&](int j) {
    return model.conditional_expectation(worker, j, ctx);
  });
  s /= static_cast<double>(m);
  return s;
}

Statistic worker_statistic(const Model& model, int worker,
                           const ThetaVector& theta) {
  const auto ctx = model.make_context(theta);
  return worker_statistic(model, worker, *ctx);
}

Statistic full_statistic(const Model& model, const EvalContext& ctx) {
  const int n = model.worker_count();
  Statistic s = pairwise_sum(
      0, n, [&](int i) { return worker_statistic(model, i, ctx); });
  s /= static_cast<double>(n);
  return s;
}

Statistic exact_em_step(const Model& model, const Statistic& s) {
  if (!all_finite(s)) throw ModelError("exact_em_step: non-finite statistic");
  const auto ctx = model.make_context(model.m_step(s));
  return full_statistic(model, *ctx);
}

Statistic mean_field(const Model& model, const Statistic& s) {
  return exact_em_step(model, s) - s;
}

Statistic worker_mean_field(const Model& model, int worker,
                            const Statistic& s) {
  const auto ctx = model.make_context(model.m_step(s));
  return worker_statistic(model, worker, *ctx) - s;
}

double objective_value(const Model& model, const Statistic& s) {
  if (!all_finite(s)) throw ModelError("objective_value: non-finite statistic");
  return model.objective(model.m_step(s));
}

}  // namespace fedem
