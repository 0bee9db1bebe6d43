#pragma once

#include <Eigen/Dense>

#include <functional>

namespace fedem {

/// A point of the expectation space: a length-q vector of complete-data
/// sufficient statistics. Layout within the vector is model-defined and
/// documented per model; the algorithms treat it opaquely.
using Statistic = Eigen::VectorXd;

/// Canonical flat encoding of a model parameter record.
using ThetaVector = Eigen::VectorXd;

/// Pairwise sum of term(i) for i in [lo, hi). All reductions over workers
/// and examples go through this so that floating-point drift stays bounded
/// and the result does not depend on accumulation chunking.
Statistic pairwise_sum(int lo, int hi,
                       const std::function<Statistic(int)>& term);

double pairwise_sum_scalar(int lo, int hi,
                           const std::function<double(int)>& term);

bool all_finite(const Statistic& s);

}  // namespace fedem
