#pragma once

#include <cstdint>
#include <vector>

#include "fedem/rng.hpp"
#include "fedem/statistic.hpp"

namespace fedem {

enum class QuantizerKind { Identity, Dithering, BlockP };

/// An unbiased stochastic compression operator: E[quantize(x)] = x and
/// E||quantize(x)||^2 <= (1 + variance_bound()) ||x||^2.
struct QuantizerSpec {
  QuantizerKind kind = QuantizerKind::Identity;

  // dithering
  double norm_order = 2.0;  // r >= 1
  int levels = 1;           // number of rounding levels, >= 1

  // block quantization
  int block_norm = 2;             // p in {1, 2}
  std::vector<int> block_lengths;  // must partition the vector dimension

  static QuantizerSpec identity();
  static QuantizerSpec dithering(double norm_order, int levels);
  static QuantizerSpec block(int block_norm, std::vector<int> block_lengths);
  /// Blocks of `block_len` covering dim, last block shorter if needed.
  static QuantizerSpec uniform_blocks(int block_norm, int block_len, int dim);

  /// Throws std::invalid_argument when the spec is malformed or does not
  /// partition a vector of dimension `dim`.
  void validate(int dim) const;

  /// Certified variance constant: identity -> 0; block-2 -> max_l(sqrt(q_l)-1);
  /// block-1 -> max_l(q_l - 1); dithering at r=2 -> min(q/levels^2,
  /// sqrt(q)/levels), other r -> the stochastic-rounding bound
  /// q^max(1, 2/r) / (4 levels^2).
  double variance_bound(int dim) const;

  /// Uplink bits of one message under the documented encoding (used for the
  /// bits column only, not a wire-format claim).
  std::int64_t message_bits(int dim) const;
};

/// One compressed message: the vector the server uses in aggregation plus
/// its accounted bit cost. Identical seeds produce identical payloads.
struct CompressedDelta {
  Eigen::VectorXd payload;
  std::int64_t bit_cost = 0;
};

CompressedDelta quantize(const QuantizerSpec& spec, const Eigen::VectorXd& x,
                         Rng& rng);

/// Deterministic dithering core with the uniform noise injected; exposed for
/// hand-pinned tests. xi must have the dimension of x with entries in [0,1).
Eigen::VectorXd dither_with_noise(const QuantizerSpec& spec,
                                  const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& xi);

/// Deterministic block quantization core: coordinate j fires when
/// u[j] < |x_j| / ||x_(block)||_p.
Eigen::VectorXd block_quantize_with_uniforms(const QuantizerSpec& spec,
                                             const Eigen::VectorXd& x,
                                             const Eigen::VectorXd& u);

/// Exact mean squared error of block quantization:
/// sum_l (||x_(l)||_1 ||x_(l)||_p - ||x_(l)||^2).
double block_exact_mse(const QuantizerSpec& spec, const Eigen::VectorXd& x);

struct EmpiricalMoments {
  Eigen::VectorXd mean;
  double mse = 0.0;              // average ||quantize(x) - x||^2
  double second_moment = 0.0;    // average ||quantize(x)||^2
  Eigen::VectorXd mean_std_err;  // per-coordinate standard error of the mean
  double second_moment_std_err = 0.0;
};

/// Monte-Carlo estimates of E[quantize(x)] and E||quantize(x) - x||^2.
EmpiricalMoments empirical_moments(const QuantizerSpec& spec,
                                   const Eigen::VectorXd& x, int trials,
                                   Rng& rng);

}  // namespace fedem
