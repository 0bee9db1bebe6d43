#pragma once

#include <atomic>
#include <memory>
#include <string>
#include <vector>

#include "fedem/model.hpp"
#include "fedem/rng.hpp"

namespace fedem {

/// Parameters of a Gaussian mixture with shared covariance.
struct GmmTheta {
  Eigen::VectorXd weights;  // simplex, length G
  Eigen::MatrixXd means;    // p x G, one column per component
  Eigen::MatrixXd sigma;    // p x p symmetric positive definite

  /// Flat layout: [weights, means column-major, sigma column-major].
  ThetaVector encode() const;
  static GmmTheta decode(const ThetaVector& v, int components, int dim);
};

struct GmmOptions {
  bool fixed_sigma = false;        // keep sigma at its configured value
  Eigen::MatrixXd sigma;           // required when fixed_sigma
  double weight_floor = 1e-12;     // below this, the m-step raises
  double cov_eig_floor = 1e-10;    // minimum eigenvalue before jitter kicks in
  double cov_jitter = 1e-8;        // added to the diagonal when floored
};

/// Gaussian mixture model over n equally sized data shards.
///
/// Statistic layout (q = G + G*p): entries [0, G) are the mean
/// responsibilities per component; entries [G + l*p, G + (l+1)*p) are the
/// responsibility-weighted data averages of component l.
class GmmModel final : public Model {
 public:
  /// data is N x p with N divisible by `workers`; shard i owns rows
  /// [i*m, (i+1)*m) with m = N / workers.
  GmmModel(Eigen::MatrixXd data, int workers, int components,
           GmmOptions options = {});

  int statistic_dim() const override { return components_ * (1 + dim_); }
  int worker_count() const override { return workers_; }
  int examples_per_worker() const override { return per_worker_; }
  int components() const { return components_; }
  int dim() const { return dim_; }
  const Eigen::MatrixXd& data() const { return data_; }
  const Eigen::MatrixXd& second_moment() const { return second_moment_; }

  ThetaVector m_step(const Statistic& s) const override;
  GmmTheta m_step_theta(const Statistic& s) const;

  std::unique_ptr<const EvalContext> make_context(
      const ThetaVector& theta) const override;
  Statistic conditional_expectation(int worker, int example,
                                    const EvalContext& ctx) const override;
  double objective(const ThetaVector& theta) const override;

  /// Full-data statistic under theta; used to build initial estimates.
  Statistic statistic_from_theta(const GmmTheta& theta) const;

  /// Uniform weights, means sampled from the data, empirical covariance
  /// (the configured sigma in fixed-sigma mode).
  Statistic default_initial_statistic(Rng& rng) const;
  Statistic initial_statistic(Rng& rng) const override {
    return default_initial_statistic(rng);
  }

  /// Times the covariance eigenvalue floor was applied.
  long covariance_floor_events() const { return floor_events_.load(); }

 private:
  Eigen::MatrixXd data_;  // N x p
  int workers_;
  int per_worker_;
  int components_;
  int dim_;
  GmmOptions options_;
  Eigen::MatrixXd second_moment_;  // (1/N) sum y y^T
  mutable std::atomic<long> floor_events_{0};
};

/// Component posteriors for one observation, log-sum-exp normalized.
Eigen::VectorXd responsibilities(const GmmTheta& theta,
                                 const Eigen::VectorXd& y);

/// Closed-form m-step for a statistic s given the precomputed data second
/// moment. Vanishing component weight raises DegenerateModelError; a
/// non-positive-definite covariance is repaired by diagonal jitter
/// (`floor_events` incremented when supplied).
GmmTheta gmm_m_step(const Statistic& s, const Eigen::MatrixXd& second_moment,
                    const GmmOptions& options, int components, int dim,
                    std::atomic<long>* floor_events = nullptr);

enum class SplitMode { Iid, SortedHeterogeneous };

struct SyntheticGmmData {
  Eigen::MatrixXd points;   // N x p, already arranged into contiguous shards
  std::vector<int> labels;  // latent component of each row
};

/// Draws N points from the mixture and arranges them into n contiguous
/// shards: in arrival order for Iid, ordered by latent label for
/// SortedHeterogeneous (maximal inter-worker skew).
SyntheticGmmData generate_synthetic(const GmmTheta& truth, int total_points,
                                    int workers, SplitMode split,
                                    std::uint64_t seed);

/// Columnar shard file: header "worker,y0,...,y{p-1}", one row per example.
void save_shards_csv(const Eigen::MatrixXd& points, int workers,
                     const std::string& path);
Eigen::MatrixXd load_shards_csv(const std::string& path, int* workers_out);

}  // namespace fedem
