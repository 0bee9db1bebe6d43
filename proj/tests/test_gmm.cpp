#include <doctest.h>

#include <cmath>
#include <fstream>

#include "fedem/gmm.hpp"
#include "support/fd_tools.hpp"
#include "support/gmm_fixtures.hpp"

using namespace fedem;
using fedem_test::directional_derivative;
using fedem_test::minimize_fd;

namespace {

// complete-data objective minimized by the m-step:
// -<s, phi(theta)> + psi(theta) with psi carrying the data second moment
double q_objective(const Statistic& s, const GmmTheta& theta,
                   const Eigen::MatrixXd& second_moment) {
  const int g = static_cast<int>(theta.weights.size());
  const int p = static_cast<int>(theta.means.rows());
  const Eigen::MatrixXd inv = theta.sigma.inverse();
  double val = 0.5 * std::log(theta.sigma.determinant()) +
               0.5 * (inv * second_moment).trace();
  for (int l = 0; l < g; ++l) {
    const Eigen::VectorXd mu = theta.means.col(l);
    val -= s[l] * (std::log(theta.weights[l]) - 0.5 * mu.dot(inv * mu));
    val -= s.segment(g + l * p, p).dot(inv * mu);
  }
  return val;
}

}  // namespace

TEST_CASE("responsibilities: degenerate, symmetric, and direct-quotient cases") {
  GmmTheta one;
  one.weights = Eigen::VectorXd::Ones(1);
  one.means = Eigen::MatrixXd::Constant(1, 1, 2.0);
  one.sigma = Eigen::MatrixXd::Identity(1, 1);
  Eigen::VectorXd y(1);
  y << 7.0;
  CHECK(responsibilities(one, y)[0] == doctest::Approx(1.0));

  GmmTheta two;
  two.weights = Eigen::Vector2d(0.5, 0.5);
  two.means.resize(1, 2);
  two.means << -1.0, 1.0;
  two.sigma = Eigen::MatrixXd::Identity(1, 1);
  Eigen::VectorXd mid(1);
  mid << 0.0;
  const auto rho_mid = responsibilities(two, mid);
  CHECK(rho_mid[0] == doctest::Approx(0.5));
  CHECK(rho_mid[1] == doctest::Approx(0.5));

  Eigen::VectorXd off(1);
  off << 0.5;
  const auto rho = responsibilities(two, off);
  const double d1 = std::exp(-0.5 * (0.5 + 1.0) * (0.5 + 1.0));
  const double d2 = std::exp(-0.5 * (0.5 - 1.0) * (0.5 - 1.0));
  CHECK(rho[0] == doctest::Approx(d1 / (d1 + d2)));
  CHECK(rho.sum() == doctest::Approx(1.0));

  Eigen::VectorXd bad(1);
  bad << std::nan("");
  CHECK_THROWS_AS(responsibilities(two, bad), ModelError);
}

TEST_CASE("m-step: uniform statistics give uniform weights") {
  const int g = 4, p = 2;
  Statistic s(g + g * p);
  for (int l = 0; l < g; ++l) {
    s[l] = 0.25;
    s.segment(g + l * p, p) = 0.25 * Eigen::Vector2d(l - 1.5, 1.5 - l);
  }
  GmmOptions options;
  options.fixed_sigma = true;
  options.sigma = Eigen::Matrix2d::Identity();
  const GmmTheta theta =
      gmm_m_step(s, Eigen::Matrix2d::Identity() * 5.0, options, g, p);
  for (int l = 0; l < g; ++l)
    CHECK(theta.weights[l] == doctest::Approx(0.25));
  CHECK(theta.weights.sum() == doctest::Approx(1.0));
}

TEST_CASE("m-step arithmetic, degenerate covariance floor, weight floor") {
  // 1-D data {-1, +1}: M2 = 1; s puts all mass exactly on the data, so the
  // closed-form covariance collapses to zero and the jitter path fires
  Statistic s(4);
  s << 0.5, 0.5, -0.5, 0.5;
  GmmOptions options;  // estimated covariance
  std::atomic<long> events{0};
  const GmmTheta theta = gmm_m_step(s, Eigen::MatrixXd::Identity(1, 1),
                                    options, 2, 1, &events);
  CHECK(theta.weights[0] == doctest::Approx(0.5));
  CHECK(theta.means(0, 0) == doctest::Approx(-1.0));
  CHECK(theta.means(0, 1) == doctest::Approx(1.0));
  CHECK(events.load() == 1);
  CHECK(theta.sigma(0, 0) > 0.0);  // floored, still positive definite

  Statistic dead = s;
  dead[0] = 1e-15;
  CHECK_THROWS_AS(
      gmm_m_step(dead, Eigen::MatrixXd::Identity(1, 1), options, 2, 1),
      DegenerateModelError);
}

TEST_CASE("m-step output is a stationary point of the complete-data objective") {
  Rng rng(31);
  const int g = 2, p = 2;
  for (int trial = 0; trial < 5; ++trial) {
    Statistic s(g + g * p);
    s[0] = 0.4 + 0.1 * rng.uniform();
    s[1] = 1.0 - s[0];
    Eigen::Vector2d mu0(rng.normal(), rng.normal());
    Eigen::Vector2d mu1(rng.normal(), rng.normal());
    s.segment(g, p) = s[0] * mu0;
    s.segment(g + p, p) = s[1] * mu1;
    // second moment chosen so the optimal covariance is well conditioned
    Eigen::Matrix2d rnd;
    rnd << rng.normal(), rng.normal(), rng.normal(), rng.normal();
    const Eigen::Matrix2d target =
        rnd * rnd.transpose() + 0.5 * Eigen::Matrix2d::Identity();
    const Eigen::Matrix2d m2 = target + s[0] * mu0 * mu0.transpose() +
                               s[1] * mu1 * mu1.transpose();

    GmmOptions options;
    const GmmTheta opt = gmm_m_step(s, m2, options, g, p);
    CHECK((opt.sigma - target).norm() < 1e-10);

    // directional derivatives along the feasible directions vanish
    auto objective_at = [&](const GmmTheta& th) {
      return q_objective(s, th, m2);
    };
    // simplex tangent for the weights
    {
      auto f = [&](const Eigen::VectorXd& x) {
        GmmTheta th = opt;
        th.weights[0] = opt.weights[0] + x[0];
        th.weights[1] = opt.weights[1] - x[0];
        return objective_at(th);
      };
      CHECK(std::abs(directional_derivative(f, Eigen::VectorXd::Zero(1),
                                            Eigen::VectorXd::Ones(1))) < 1e-6);
    }
    // means, coordinate-wise
    for (int l = 0; l < g; ++l) {
      for (int d = 0; d < p; ++d) {
        auto f = [&](const Eigen::VectorXd& x) {
          GmmTheta th = opt;
          th.means(d, l) += x[0];
          return objective_at(th);
        };
        CHECK(std::abs(directional_derivative(f, Eigen::VectorXd::Zero(1),
                                              Eigen::VectorXd::Ones(1))) <
              1e-6);
      }
    }
    // symmetric covariance directions
    for (int a = 0; a < p; ++a) {
      for (int b = a; b < p; ++b) {
        auto f = [&](const Eigen::VectorXd& x) {
          GmmTheta th = opt;
          th.sigma(a, b) += x[0];
          th.sigma(b, a) = th.sigma(a, b);
          return objective_at(th);
        };
        CHECK(std::abs(directional_derivative(f, Eigen::VectorXd::Zero(1),
                                              Eigen::VectorXd::Ones(1))) <
              1e-6);
      }
    }
  }
}

TEST_CASE("closed form m-step matches an independent numerical minimizer") {
  Rng rng(57);
  const int g = 2, p = 2;
  int checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Statistic s(g + g * p);
    s[0] = 0.35 + 0.3 * rng.uniform();
    s[1] = 1.0 - s[0];
    Eigen::Vector2d mu0(rng.normal(), rng.normal());
    Eigen::Vector2d mu1(rng.normal(), rng.normal());
    s.segment(g, p) = s[0] * mu0;
    s.segment(g + p, p) = s[1] * mu1;
    Eigen::Matrix2d rnd;
    rnd << rng.normal(), rng.normal(), rng.normal(), rng.normal();
    const Eigen::Matrix2d target =
        0.5 * rnd * rnd.transpose() + Eigen::Matrix2d::Identity();
    const Eigen::Matrix2d m2 = target + s[0] * mu0 * mu0.transpose() +
                               s[1] * mu1 * mu1.transpose();
    GmmOptions options;
    const GmmTheta opt = gmm_m_step(s, m2, options, g, p);

    // unconstrained reparameterization: weight logits, free means, Cholesky
    // factor with log diagonal
    auto decode = [&](const Eigen::VectorXd& x) {
      GmmTheta th;
      const double a0 = x[0], a1 = x[1];
      const double top = std::max(a0, a1);
      const double z = std::exp(a0 - top) + std::exp(a1 - top);
      th.weights = Eigen::Vector2d(std::exp(a0 - top) / z,
                                   std::exp(a1 - top) / z);
      th.means.resize(p, g);
      th.means << x[2], x[4], x[3], x[5];
      Eigen::Matrix2d chol = Eigen::Matrix2d::Zero();
      chol(0, 0) = std::exp(x[6]);
      chol(1, 0) = x[7];
      chol(1, 1) = std::exp(x[8]);
      th.sigma = chol * chol.transpose();
      return th;
    };
    auto f = [&](const Eigen::VectorXd& x) {
      return q_objective(s, decode(x), m2);
    };

    // start from a perturbation of the closed form
    Eigen::VectorXd x0(9);
    const Eigen::LLT<Eigen::Matrix2d> llt(opt.sigma);
    const Eigen::Matrix2d chol = llt.matrixL();
    x0 << std::log(opt.weights[0]), std::log(opt.weights[1]),
        opt.means(0, 0), opt.means(1, 0), opt.means(0, 1), opt.means(1, 1),
        std::log(chol(0, 0)), chol(1, 0), std::log(chol(1, 1));
    for (int i = 0; i < 9; ++i) x0[i] += 0.15 * rng.normal();

    const Eigen::VectorXd x_star = minimize_fd(f, x0, 20000, 1e-10);
    const GmmTheta num = decode(x_star);
    CHECK((num.weights - opt.weights).norm() < 1e-5);
    CHECK((num.means - opt.means).norm() < 1e-5);
    CHECK((num.sigma - opt.sigma).norm() < 1e-5);
    ++checked;
  }
  CHECK(checked == 20);
}

TEST_CASE("fixed-sigma mode never touches the covariance") {
  const auto model = fedem_test::make_gmm(60, 3, SplitMode::Iid, true);
  Statistic s = fedem_test::start_statistic(model);
  const Eigen::MatrixXd sigma0 = model.m_step_theta(s).sigma;
  for (int k = 0; k < 10; ++k) {
    s = exact_em_step(model, s);
    CHECK(model.m_step_theta(s).sigma == sigma0);  // bit-identical
  }
}

TEST_CASE("synthetic generation: degenerate weights, shard sizes, iid frequencies") {
  GmmTheta truth = fedem_test::separated_truth_2d();
  truth.weights = Eigen::Vector2d(1.0, 0.0);
  const auto all_one = generate_synthetic(truth, 100, 10, SplitMode::Iid, 3);
  for (int lbl : all_one.labels) CHECK(lbl == 0);

  truth.weights = Eigen::Vector2d(0.3, 0.7);
  const int n_pts = 10000, workers = 100;
  const auto data =
      generate_synthetic(truth, n_pts, workers, SplitMode::Iid, 9);
  CHECK(data.points.rows() == n_pts);
  CHECK(n_pts / workers == 100);  // m = N / n
  // per-shard label frequency within 3 sigma of the truth
  const int m = n_pts / workers;
  const double se = std::sqrt(0.3 * 0.7 / m);
  int outliers = 0;
  for (int w = 0; w < workers; ++w) {
    int count = 0;
    for (int j = 0; j < m; ++j) count += data.labels[w * m + j] == 0;
    if (std::abs(count / static_cast<double>(m) - 0.3) > 3.0 * se) ++outliers;
  }
  CHECK(outliers <= 3);  // 3 sigma leaves ~0.27% expected misses

  const auto sorted =
      generate_synthetic(truth, 1000, 10, SplitMode::SortedHeterogeneous, 9);
  CHECK(std::is_sorted(sorted.labels.begin(), sorted.labels.end()));

  CHECK_THROWS_AS(generate_synthetic(truth, 101, 10, SplitMode::Iid, 9),
                  ModelError);
}

TEST_CASE("shard csv round trips and regroups interleaved rows") {
  const auto truth = fedem_test::separated_truth_2d();
  const auto data = generate_synthetic(truth, 40, 4, SplitMode::Iid, 77);
  const std::string path = "shards_roundtrip_test.csv";
  save_shards_csv(data.points, 4, path);
  int workers = 0;
  const Eigen::MatrixXd back = load_shards_csv(path, &workers);
  CHECK(workers == 4);
  CHECK((back - data.points).norm() == 0.0);
  std::remove(path.c_str());

  // rows listed out of worker order are grouped by the worker column
  {
    std::ofstream f("shards_interleaved_test.csv");
    f << "worker,y0\n1,10\n0,1\n1,20\n0,2\n";
  }
  int w2 = 0;
  const Eigen::MatrixXd grouped = load_shards_csv("shards_interleaved_test.csv", &w2);
  CHECK(w2 == 2);
  CHECK(grouped(0, 0) == 1.0);
  CHECK(grouped(1, 0) == 2.0);
  CHECK(grouped(2, 0) == 10.0);
  CHECK(grouped(3, 0) == 20.0);
  std::remove("shards_interleaved_test.csv");
}
