#pragma once

#include <cstdint>

#include "fedem/gmm.hpp"

namespace fedem_test {

inline fedem::GmmTheta separated_truth_2d() {
  fedem::GmmTheta truth;
  truth.weights = Eigen::Vector2d(0.5, 0.5);
  truth.means.resize(2, 2);
  truth.means.col(0) = Eigen::Vector2d(-1.0, -1.0);
  truth.means.col(1) = Eigen::Vector2d(1.0, 1.0);
  truth.sigma = 0.5 * Eigen::Matrix2d::Identity();
  return truth;
}

inline fedem::GmmModel make_gmm(int total, int workers,
                                fedem::SplitMode split = fedem::SplitMode::Iid,
                                bool fixed_sigma = true,
                                std::uint64_t seed = 1234) {
  const auto truth = separated_truth_2d();
  const auto data = fedem::generate_synthetic(truth, total, workers, split, seed);
  fedem::GmmOptions options;
  options.fixed_sigma = fixed_sigma;
  if (fixed_sigma) options.sigma = truth.sigma;
  return fedem::GmmModel(data.points, workers, 2, options);
}

/// A deterministic, reasonably generic starting statistic.
inline fedem::Statistic start_statistic(const fedem::GmmModel& model,
                                        std::uint64_t seed = 5) {
  fedem::Rng rng(seed);
  return model.default_initial_statistic(rng);
}

}  // namespace fedem_test
