#include "fedem/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "fedem/errors.hpp"

namespace fedem {

namespace {

double lp_norm(const Eigen::VectorXd& x, double order) {
  if (order == 2.0) return x.norm();
  if (order == 1.0) return x.lpNorm<1>();
  double acc = 0.0;
  for (int i = 0; i < x.size(); ++i) acc += std::pow(std::abs(x[i]), order);
  return std::pow(acc, 1.0 / order);
}

int bits_per_level(int levels) {
  // levels index ranges over {0, ..., levels}
  int b = 0;
  while ((1 << b) < levels + 1) ++b;
  return b;
}

}  // namespace

QuantizerSpec QuantizerSpec::identity() { return QuantizerSpec{}; }

QuantizerSpec QuantizerSpec::dithering(double norm_order, int levels) {
  QuantizerSpec s;
  s.kind = QuantizerKind::Dithering;
  s.norm_order = norm_order;
  s.levels = levels;
  return s;
}

QuantizerSpec QuantizerSpec::block(int block_norm,
                                   std::vector<int> block_lengths) {
  QuantizerSpec s;
  s.kind = QuantizerKind::BlockP;
  s.block_norm = block_norm;
  s.block_lengths = std::move(block_lengths);
  return s;
}

QuantizerSpec QuantizerSpec::uniform_blocks(int block_norm, int block_len,
                                            int dim) {
  std::vector<int> lens;
  for (int off = 0; off < dim; off += block_len)
    lens.push_back(std::min(block_len, dim - off));
  return block(block_norm, std::move(lens));
}

void QuantizerSpec::validate(int dim) const {
  if (dim <= 0) throw std::invalid_argument("quantizer: dimension must be positive");
  switch (kind) {
    case QuantizerKind::Identity:
      return;
    case QuantizerKind::Dithering:
      if (norm_order < 1.0)
        throw std::invalid_argument("dithering: norm order must be >= 1");
      if (levels < 1)
        throw std::invalid_argument("dithering: level count must be >= 1");
      return;
    case QuantizerKind::BlockP: {
      if (block_norm != 1 && block_norm != 2)
        throw std::invalid_argument("block quantizer: norm must be 1 or 2");
      int total = 0;
      for (int l : block_lengths) {
        if (l <= 0)
          throw std::invalid_argument("block quantizer: block lengths must be positive");
        total += l;
      }
      if (total != dim)
        throw std::invalid_argument(
            "block quantizer: block lengths sum to " + std::to_string(total) +
            ", expected " + std::to_string(dim));
      return;
    }
  }
}

double QuantizerSpec::variance_bound(int dim) const {
  switch (kind) {
    case QuantizerKind::Identity:
      return 0.0;
    case QuantizerKind::Dithering: {
      const double q = static_cast<double>(dim);
      const double s = static_cast<double>(levels);
      if (norm_order == 2.0) return std::min(q / (s * s), std::sqrt(q) / s);
      const double expo = std::max(1.0, 2.0 / norm_order);
      return std::pow(q, expo) / (4.0 * s * s);
    }
    case QuantizerKind::BlockP: {
      double w = 0.0;
      for (int l : block_lengths) {
        const double ql = static_cast<double>(l);
        w = std::max(w, block_norm == 2 ? std::sqrt(ql) - 1.0 : ql - 1.0);
      }
      return w;
    }
  }
  return 0.0;
}

std::int64_t QuantizerSpec::message_bits(int dim) const {
  switch (kind) {
    case QuantizerKind::Identity:
      return 64ll * dim;
    case QuantizerKind::Dithering:
      return 64 + static_cast<std::int64_t>(dim) * (1 + bits_per_level(levels));
    case QuantizerKind::BlockP: {
      std::int64_t bits = 0;
      for (int l : block_lengths) bits += 64 + l;
      return bits;
    }
  }
  return 0;
}

Eigen::VectorXd dither_with_noise(const QuantizerSpec& spec,
                                  const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& xi) {
  const double norm = lp_norm(x, spec.norm_order);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(x.size());
  if (norm == 0.0) return out;
  const double s = static_cast<double>(spec.levels);
  for (int i = 0; i < x.size(); ++i) {
    const double level = std::floor(s * std::abs(x[i]) / norm + xi[i]);
    out[i] = (norm / s) * (x[i] < 0 ? -level : level);
  }
  return out;
}

Eigen::VectorXd block_quantize_with_uniforms(const QuantizerSpec& spec,
                                             const Eigen::VectorXd& x,
                                             const Eigen::VectorXd& u) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(x.size());
  int off = 0;
  for (int l : spec.block_lengths) {
    const auto seg = x.segment(off, l);
    const double norm = lp_norm(seg, static_cast<double>(spec.block_norm));
    if (norm > 0.0) {
      for (int j = 0; j < l; ++j) {
        const double prob = std::abs(seg[j]) / norm;
        if (u[off + j] < prob) out[off + j] = seg[j] < 0 ? -norm : norm;
      }
    }
    off += l;
  }
  return out;
}

CompressedDelta quantize(const QuantizerSpec& spec, const Eigen::VectorXd& x,
                         Rng& rng) {
  if (!x.allFinite()) throw ModelError("quantize: non-finite input");
  const int dim = static_cast<int>(x.size());
  spec.validate(dim);
  CompressedDelta out;
  out.bit_cost = spec.message_bits(dim);
  switch (spec.kind) {
    case QuantizerKind::Identity:
      out.payload = x;
      break;
    case QuantizerKind::Dithering: {
      Eigen::VectorXd xi(dim);
      for (int i = 0; i < dim; ++i) xi[i] = rng.uniform();
      out.payload = dither_with_noise(spec, x, xi);
      break;
    }
    case QuantizerKind::BlockP: {
      Eigen::VectorXd u(dim);
      for (int i = 0; i < dim; ++i) u[i] = rng.uniform();
      out.payload = block_quantize_with_uniforms(spec, x, u);
      break;
    }
  }
  return out;
}

double block_exact_mse(const QuantizerSpec& spec, const Eigen::VectorXd& x) {
  double mse = 0.0;
  int off = 0;
  for (int l : spec.block_lengths) {
    const auto seg = x.segment(off, l);
    mse += seg.lpNorm<1>() * lp_norm(seg, static_cast<double>(spec.block_norm)) -
           seg.squaredNorm();
    off += l;
  }
  return mse;
}

namespace {

// compensated (Kahan) accumulators keep the Monte-Carlo averages accurate
// enough that deterministic operators show zero empirical bias
struct KahanScalar {
  double sum = 0.0, carry = 0.0;
  void add(double v) {
    const double y = v - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
};

struct KahanVector {
  Eigen::VectorXd sum, carry;
  explicit KahanVector(int dim)
      : sum(Eigen::VectorXd::Zero(dim)), carry(Eigen::VectorXd::Zero(dim)) {}
  void add(const Eigen::VectorXd& v) {
    const Eigen::VectorXd y = v - carry;
    const Eigen::VectorXd t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
};

}  // namespace

EmpiricalMoments empirical_moments(const QuantizerSpec& spec,
                                   const Eigen::VectorXd& x, int trials,
                                   Rng& rng) {
  if (trials < 1) throw std::invalid_argument("empirical_moments: trials >= 1");
  const int dim = static_cast<int>(x.size());
  KahanVector sum(dim), sum_sq(dim);
  KahanScalar mse_sum, m2_sum, m2_sq_sum;
  for (int t = 0; t < trials; ++t) {
    const auto q = quantize(spec, x, rng);
    sum.add(q.payload);
    sum_sq.add(q.payload.cwiseProduct(q.payload));
    mse_sum.add((q.payload - x).squaredNorm());
    const double m2 = q.payload.squaredNorm();
    m2_sum.add(m2);
    m2_sq_sum.add(m2 * m2);
  }
  EmpiricalMoments out;
  const double nt = static_cast<double>(trials);
  out.mean = sum.sum / nt;
  out.mse = mse_sum.sum / nt;
  out.second_moment = m2_sum.sum / nt;
  out.mean_std_err.resize(dim);
  for (int i = 0; i < dim; ++i) {
    const double var =
        std::max(0.0, sum_sq.sum[i] / nt - out.mean[i] * out.mean[i]);
    out.mean_std_err[i] = std::sqrt(var / nt);
  }
  const double m2_var = std::max(
      0.0, m2_sq_sum.sum / nt - out.second_moment * out.second_moment);
  out.second_moment_std_err = std::sqrt(m2_var / nt);
  return out;
}

}  // namespace fedem
