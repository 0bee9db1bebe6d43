#pragma once

// Test-only model with an affine mean field: the m-step is the identity and
// every conditional expectation is matrix * theta + worker offset + a
// centered per-example offset. The exact mean field is then
//   h(s) = (matrix - I) s + mean(worker offsets),
// which makes closed-form checks of oracle and smoothness-probe behavior
// possible.

#include <memory>
#include <vector>

#include "fedem/model.hpp"
#include "fedem/rng.hpp"

namespace fedem_test {

class AffineModel final : public fedem::Model {
 public:
  AffineModel(Eigen::MatrixXd matrix, std::vector<Eigen::VectorXd> offsets,
              int examples, double example_spread, std::uint64_t seed)
      : matrix_(std::move(matrix)),
        offsets_(std::move(offsets)),
        examples_(examples) {
    const int q = static_cast<int>(matrix_.rows());
    const int n = static_cast<int>(offsets_.size());
    fedem::Rng rng(seed);
    example_offsets_.resize(n);
    for (int i = 0; i < n; ++i) {
      example_offsets_[i].resize(examples_);
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(q);
      for (int j = 0; j < examples_; ++j) {
        Eigen::VectorXd e(q);
        for (int d = 0; d < q; ++d) e[d] = example_spread * rng.normal();
        example_offsets_[i][j] = e;
        mean += e;
      }
      mean /= static_cast<double>(examples_);
      for (int j = 0; j < examples_; ++j) example_offsets_[i][j] -= mean;
    }
  }

  int statistic_dim() const override {
    return static_cast<int>(matrix_.rows());
  }
  int worker_count() const override {
    return static_cast<int>(offsets_.size());
  }
  int examples_per_worker() const override { return examples_; }

  fedem::ThetaVector m_step(const fedem::Statistic& s) const override {
    return s;
  }

  std::unique_ptr<const fedem::EvalContext> make_context(
      const fedem::ThetaVector& theta) const override {
    auto ctx = std::make_unique<Ctx>();
    ctx->theta = theta;
    return ctx;
  }

  fedem::Statistic conditional_expectation(
      int worker, int example, const fedem::EvalContext& ctx) const override {
    const auto& theta = static_cast<const Ctx&>(ctx).theta;
    return matrix_ * theta + offsets_[worker] +
           example_offsets_[worker][example];
  }

  double objective(const fedem::ThetaVector& theta) const override {
    return 0.5 * theta.squaredNorm();
  }

  fedem::Statistic initial_statistic(fedem::Rng&) const override {
    return fedem::Statistic::Zero(statistic_dim());
  }

  // exact h(s)
  fedem::Statistic exact_mean_field(const fedem::Statistic& s) const {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(statistic_dim());
    for (const auto& d : offsets_) mean += d;
    mean /= static_cast<double>(offsets_.size());
    return matrix_ * s + mean - s;
  }

 private:
  struct Ctx final : fedem::EvalContext {
    fedem::ThetaVector theta;
  };

  Eigen::MatrixXd matrix_;
  std::vector<Eigen::VectorXd> offsets_;
  int examples_;
  std::vector<std::vector<Eigen::VectorXd>> example_offsets_;
};

}  // namespace fedem_test
