#include "fedem/gmm.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fedem {

namespace {

struct GmmContext final : public EvalContext {
  GmmTheta theta;
  Eigen::LLT<Eigen::MatrixXd> chol;     // of sigma
  Eigen::VectorXd log_weights;
  double half_log_det = 0.0;

  explicit GmmContext(GmmTheta t) : theta(std::move(t)) {
    chol.compute(theta.sigma);
    if (chol.info() != Eigen::Success)
      throw DegenerateModelError("gmm: covariance is not positive definite");
    half_log_det = 0.0;
    const auto& l = chol.matrixLLT();
    for (int i = 0; i < l.rows(); ++i) half_log_det += std::log(l(i, i));
    log_weights = theta.weights.array().log();
  }

  // log N(y; mu_l, sigma) up to the shared -p/2 log(2 pi) constant
  double log_component_density(const Eigen::VectorXd& y, int l) const {
    Eigen::VectorXd d = y - theta.means.col(l);
    chol.matrixL().solveInPlace(d);
    return -0.5 * d.squaredNorm() - half_log_det;
  }

  Eigen::VectorXd posterior(const Eigen::VectorXd& y) const {
    const int g = static_cast<int>(theta.weights.size());
    Eigen::VectorXd logits(g);
    for (int l = 0; l < g; ++l)
      logits[l] = log_weights[l] + log_component_density(y, l);
    const double top = logits.maxCoeff();
    Eigen::VectorXd w = (logits.array() - top).exp();
    w /= w.sum();
    return w;
  }
};

}  // namespace

ThetaVector GmmTheta::encode() const {
  const int g = static_cast<int>(weights.size());
  const int p = static_cast<int>(means.rows());
  ThetaVector v(g + g * p + p * p);
  v.head(g) = weights;
  v.segment(g, g * p) = Eigen::Map<const Eigen::VectorXd>(means.data(), g * p);
  v.tail(p * p) = Eigen::Map<const Eigen::VectorXd>(sigma.data(), p * p);
  return v;
}

GmmTheta GmmTheta::decode(const ThetaVector& v, int components, int dim) {
  GmmTheta t;
  t.weights = v.head(components);
  t.means = Eigen::Map<const Eigen::MatrixXd>(v.data() + components, dim,
                                              components);
  t.sigma = Eigen::Map<const Eigen::MatrixXd>(
      v.data() + components + components * dim, dim, dim);
  return t;
}

Eigen::VectorXd responsibilities(const GmmTheta& theta,
                                 const Eigen::VectorXd& y) {
  if (!y.allFinite()) throw ModelError("responsibilities: non-finite input");
  GmmContext ctx(theta);
  return ctx.posterior(y);
}

GmmModel::GmmModel(Eigen::MatrixXd data, int workers, int components,
                   GmmOptions options)
    : data_(std::move(data)),
      workers_(workers),
      components_(components),
      dim_(static_cast<int>(data_.cols())),
      options_(std::move(options)) {
  const int n_rows = static_cast<int>(data_.rows());
  if (workers_ <= 0 || n_rows % workers_ != 0)
    throw ModelError("gmm: data size must be divisible by the worker count");
  per_worker_ = n_rows / workers_;
  if (components_ <= 0) throw ModelError("gmm: need at least one component");
  if (options_.fixed_sigma &&
      (options_.sigma.rows() != dim_ || options_.sigma.cols() != dim_))
    throw ModelError("gmm: fixed-sigma mode needs a p x p covariance");
  second_moment_ = (data_.transpose() * data_) / static_cast<double>(n_rows);
}

GmmTheta gmm_m_step(const Statistic& s, const Eigen::MatrixXd& second_moment,
                    const GmmOptions& options, int components, int dim,
                    std::atomic<long>* floor_events) {
  if (!all_finite(s)) throw ModelError("gmm m-step: non-finite statistic");
  const int g = components, p = dim;
  GmmTheta theta;
  theta.weights.resize(g);
  theta.means.resize(p, g);

  double total = 0.0;
  for (int l = 0; l < g; ++l) {
    if (s[l] < options.weight_floor)
      throw DegenerateModelError("gmm m-step: component " + std::to_string(l) +
                                 " weight statistic " + std::to_string(s[l]) +
                                 " below floor");
    total += s[l];
  }
  for (int l = 0; l < g; ++l) {
    theta.weights[l] = s[l] / total;
    theta.means.col(l) = s.segment(g + l * p, p) / s[l];
  }

  if (options.fixed_sigma) {
    theta.sigma = options.sigma;
    return theta;
  }
  Eigen::MatrixXd sigma = second_moment;
  for (int l = 0; l < g; ++l)
    sigma -= s[l] * theta.means.col(l) * theta.means.col(l).transpose();
  sigma = 0.5 * (sigma + sigma.transpose().eval());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma);
  if (eig.eigenvalues().minCoeff() < options.cov_eig_floor) {
    sigma += options.cov_jitter * Eigen::MatrixXd::Identity(p, p);
    if (floor_events) floor_events->fetch_add(1, std::memory_order_relaxed);
    if (Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sigma)
            .eigenvalues()
            .minCoeff() <= 0.0)
      throw DegenerateModelError("gmm m-step: covariance not repairable");
  }
  theta.sigma = sigma;
  return theta;
}

GmmTheta GmmModel::m_step_theta(const Statistic& s) const {
  return gmm_m_step(s, second_moment_, options_, components_, dim_,
                    &floor_events_);
}

ThetaVector GmmModel::m_step(const Statistic& s) const {
  return m_step_theta(s).encode();
}

std::unique_ptr<const EvalContext> GmmModel::make_context(
    const ThetaVector& theta) const {
  return std::make_unique<GmmContext>(
      GmmTheta::decode(theta, components_, dim_));
}

Statistic GmmModel::conditional_expectation(int worker, int example,
                                            const EvalContext& ctx) const {
  const auto& gctx = static_cast<const GmmContext&>(ctx);
  const Eigen::VectorXd y =
      data_.row(worker * per_worker_ + example).transpose();
  const Eigen::VectorXd rho = gctx.posterior(y);
  Statistic s(statistic_dim());
  s.head(components_) = rho;
  for (int l = 0; l < components_; ++l)
    s.segment(components_ + l * dim_, dim_) = rho[l] * y;
  return s;
}

double GmmModel::objective(const ThetaVector& theta) const {
  GmmContext ctx(GmmTheta::decode(theta, components_, dim_));
  const Eigen::MatrixXd sigma_inv_m2 = ctx.chol.solve(second_moment_);
  const Eigen::MatrixXd sigma_inv_means = ctx.chol.solve(ctx.theta.means);
  Eigen::VectorXd base(components_);
  for (int l = 0; l < components_; ++l)
    base[l] = ctx.log_weights[l] -
              0.5 * ctx.theta.means.col(l).dot(sigma_inv_means.col(l));
  const int n_rows = static_cast<int>(data_.rows());
  const double log_lik = pairwise_sum_scalar(0, n_rows, [&](int i) {
    Eigen::VectorXd logits =
        base + sigma_inv_means.transpose() * data_.row(i).transpose();
    const double top = logits.maxCoeff();
    return top + std::log((logits.array() - top).exp().sum());
  });
  return ctx.half_log_det + 0.5 * sigma_inv_m2.trace() -
         log_lik / static_cast<double>(n_rows);
}

Statistic GmmModel::statistic_from_theta(const GmmTheta& theta) const {
  const auto ctx = make_context(theta.encode());
  return full_statistic(*this, *ctx);
}

Statistic GmmModel::default_initial_statistic(Rng& rng) const {
  GmmTheta theta;
  theta.weights = Eigen::VectorXd::Constant(components_, 1.0 / components_);
  theta.means.resize(dim_, components_);
  for (int l = 0; l < components_; ++l) {
    const int row = rng.uniform_int(static_cast<int>(data_.rows()));
    theta.means.col(l) = data_.row(row).transpose();
  }
  if (options_.fixed_sigma) {
    theta.sigma = options_.sigma;
  } else {
    const Eigen::VectorXd mean =
        data_.colwise().mean().transpose();
    theta.sigma = second_moment_ - mean * mean.transpose();
    theta.sigma += 1e-6 * Eigen::MatrixXd::Identity(dim_, dim_);
  }
  return statistic_from_theta(theta);
}

SyntheticGmmData generate_synthetic(const GmmTheta& truth, int total_points,
                                    int workers, SplitMode split,
                                    std::uint64_t seed) {
  if (workers <= 0 || total_points % workers != 0)
    throw ModelError("generate_synthetic: N must be divisible by n");
  const int p = static_cast<int>(truth.means.rows());
  const int g = static_cast<int>(truth.weights.size());
  Eigen::LLT<Eigen::MatrixXd> chol(truth.sigma);
  if (chol.info() != Eigen::Success)
    throw ModelError("generate_synthetic: covariance not positive definite");

  Rng rng = stream_for(seed, 0, 0, StreamPurpose::Data);
  SyntheticGmmData out;
  out.points.resize(total_points, p);
  out.labels.resize(total_points);
  Eigen::VectorXd cum(g);
  double acc = 0.0;
  for (int l = 0; l < g; ++l) {
    acc += truth.weights[l];
    cum[l] = acc;
  }
  for (int i = 0; i < total_points; ++i) {
    const double u = rng.uniform();
    int z = 0;
    while (z + 1 < g && u >= cum[z]) ++z;
    Eigen::VectorXd noise(p);
    for (int d = 0; d < p; ++d) noise[d] = rng.normal();
    out.points.row(i) =
        (truth.means.col(z) + chol.matrixL() * noise).transpose();
    out.labels[i] = z;
  }

  if (split == SplitMode::SortedHeterogeneous) {
    std::vector<int> order(total_points);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return out.labels[a] < out.labels[b];
    });
    Eigen::MatrixXd sorted(total_points, p);
    std::vector<int> sorted_labels(total_points);
    for (int i = 0; i < total_points; ++i) {
      sorted.row(i) = out.points.row(order[i]);
      sorted_labels[i] = out.labels[order[i]];
    }
    out.points = std::move(sorted);
    out.labels = std::move(sorted_labels);
  }
  return out;
}

void save_shards_csv(const Eigen::MatrixXd& points, int workers,
                     const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  const int p = static_cast<int>(points.cols());
  const int m = static_cast<int>(points.rows()) / workers;
  f << "worker";
  for (int d = 0; d < p; ++d) f << ",y" << d;
  f << "\n";
  f.precision(17);
  for (int i = 0; i < points.rows(); ++i) {
    f << (i / m);
    for (int d = 0; d < p; ++d) f << ',' << points(i, d);
    f << "\n";
  }
}

Eigen::MatrixXd load_shards_csv(const std::string& path, int* workers_out) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(f, line))
    throw std::runtime_error(path + ": empty shard file");
  // rows grouped by the worker column; file order within a shard is kept
  std::vector<std::vector<std::vector<double>>> shards;
  size_t dim = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    int worker = -1;
    while (std::getline(ss, cell, ',')) {
      if (worker < 0)
        worker = std::stoi(cell);
      else
        row.push_back(std::stod(cell));
    }
    if (worker < 0) throw std::runtime_error(path + ": malformed row");
    if (dim == 0) dim = row.size();
    if (row.size() != dim)
      throw std::runtime_error(path + ": inconsistent column counts");
    if (static_cast<size_t>(worker) >= shards.size())
      shards.resize(worker + 1);
    shards[worker].push_back(std::move(row));
  }
  if (shards.empty()) throw std::runtime_error(path + ": no data rows");
  const size_t per_worker = shards[0].size();
  size_t total = 0;
  for (const auto& shard : shards) {
    if (shard.size() != per_worker)
      throw std::runtime_error(path + ": shards have unequal sizes");
    total += shard.size();
  }
  Eigen::MatrixXd points(total, dim);
  int at = 0;
  for (const auto& shard : shards)
    for (const auto& row : shard) {
      for (size_t j = 0; j < dim; ++j)
        points(at, static_cast<int>(j)) = row[j];
      ++at;
    }
  if (workers_out) *workers_out = static_cast<int>(shards.size());
  return points;
}

}  // namespace fedem
