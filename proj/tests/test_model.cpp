#include <doctest.h>

#include <cmath>

#include "fedem/gmm.hpp"
#include "fedem/model.hpp"
#include "support/gmm_fixtures.hpp"

using namespace fedem;
using fedem_test::make_gmm;
using fedem_test::separated_truth_2d;
using fedem_test::start_statistic;

namespace {

// model wrapped in a rescaled parameter codec: m-step doubles the flat
// vector, evaluation halves it back. s-space behavior must be bit-identical
// because the algorithms only ever see the composition.
class RescaledCodec final : public Model {
 public:
  explicit RescaledCodec(const Model& inner) : inner_(inner) {}
  int statistic_dim() const override { return inner_.statistic_dim(); }
  int worker_count() const override { return inner_.worker_count(); }
  int examples_per_worker() const override {
    return inner_.examples_per_worker();
  }
  ThetaVector m_step(const Statistic& s) const override {
    return 2.0 * inner_.m_step(s);
  }
  std::unique_ptr<const EvalContext> make_context(
      const ThetaVector& theta) const override {
    return inner_.make_context(0.5 * theta);
  }
  Statistic conditional_expectation(int worker, int example,
                                    const EvalContext& ctx) const override {
    return inner_.conditional_expectation(worker, example, ctx);
  }
  double objective(const ThetaVector& theta) const override {
    return inner_.objective(0.5 * theta);
  }
  Statistic initial_statistic(Rng& rng) const override {
    return inner_.initial_statistic(rng);
  }

 private:
  const Model& inner_;
};

}  // namespace

TEST_CASE("single-component mixture forces unit responsibilities") {
  // one component: worker statistic is (1, shard mean)
  Eigen::MatrixXd data(6, 1);
  data << 0.0, 1.0, 2.0, 3.0, 4.0, 5.0;
  GmmOptions options;
  options.fixed_sigma = true;
  options.sigma = Eigen::MatrixXd::Identity(1, 1);
  GmmModel model(data, 2, 1, options);

  GmmTheta theta;
  theta.weights = Eigen::VectorXd::Ones(1);
  theta.means = Eigen::MatrixXd::Constant(1, 1, 10.0);  // anywhere
  theta.sigma = options.sigma;
  const Statistic s0 = worker_statistic(model, 0, theta.encode());
  CHECK(s0[0] == doctest::Approx(1.0));
  CHECK(s0[1] == doctest::Approx(1.0));  // mean of {0,1,2}
  const Statistic s1 = worker_statistic(model, 1, theta.encode());
  CHECK(s1[1] == doctest::Approx(4.0));  // mean of {3,4,5}
  CHECK_THROWS_AS(worker_statistic(model, 5, theta.encode()), ModelError);
}

TEST_CASE("worker statistic matches a hand brute-force over the latent space") {
  // 1-D, 2 components, worker data {-1, +1}, mu = (-1, +1), pi = (1/2, 1/2)
  Eigen::MatrixXd data(2, 1);
  data << -1.0, 1.0;
  GmmOptions options;
  options.fixed_sigma = true;
  options.sigma = Eigen::MatrixXd::Identity(1, 1);
  GmmModel model(data, 1, 2, options);

  GmmTheta theta;
  theta.weights = Eigen::Vector2d(0.5, 0.5);
  theta.means.resize(1, 2);
  theta.means << -1.0, 1.0;
  theta.sigma = options.sigma;

  // direct density quotient per point, summed over z in {1, 2}
  auto brute = [&](double y) {
    const double d1 = 0.5 * std::exp(-0.5 * (y + 1.0) * (y + 1.0));
    const double d2 = 0.5 * std::exp(-0.5 * (y - 1.0) * (y - 1.0));
    Eigen::Vector4d s;
    const double r1 = d1 / (d1 + d2), r2 = d2 / (d1 + d2);
    s << r1, r2, y * r1, y * r2;
    return s;
  };
  const Eigen::Vector4d expect = 0.5 * (brute(-1.0) + brute(1.0));
  const Statistic got = worker_statistic(model, 0, theta.encode());
  CHECK((got - expect).norm() < 1e-12);
}

TEST_CASE("mean field is the exact-EM increment and vanishes at fixed points") {
  const GmmModel model = make_gmm(60, 3);
  const Statistic s = start_statistic(model);

  const Statistic step = exact_em_step(model, s);
  const Statistic field = mean_field(model, s);
  CHECK((step - s - field).norm() == 0.0);  // same arithmetic path

  // single-worker reduction: h = worker mean field
  const GmmModel solo = make_gmm(60, 1);
  const Statistic s1 = start_statistic(solo);
  CHECK((mean_field(solo, s1) - worker_mean_field(solo, 0, s1)).norm() <
        1e-14);

  // near-converged iterate has a tiny mean field
  Statistic iterate = s;
  for (int k = 0; k < 500; ++k) iterate = exact_em_step(model, iterate);
  CHECK(mean_field(model, iterate).norm() < 1e-6);
  CHECK((exact_em_step(model, iterate) - iterate).norm() < 1e-6);
}

TEST_CASE("exact EM monotonically decreases the objective") {
  const GmmModel model = make_gmm(100, 5, SplitMode::Iid, false);
  Statistic s = start_statistic(model);
  double prev = objective_value(model, s);
  CHECK(std::isfinite(prev));
  for (int k = 0; k < 50; ++k) {
    s = exact_em_step(model, s);
    const double now = objective_value(model, s);
    CHECK(now <= prev + 1e-9);
    prev = now;
  }
}

TEST_CASE("objective equals a direct log-density evaluation") {
  // single Gaussian centered on its data: compare with the density sum minus
  // the constant (p/2) log(2 pi)
  const int n_pts = 40;
  Rng rng(3);
  Eigen::MatrixXd data(n_pts, 2);
  for (int i = 0; i < n_pts; ++i) {
    data(i, 0) = rng.normal();
    data(i, 1) = 0.5 * rng.normal();
  }
  GmmOptions options;
  GmmModel model(data, 4, 1, options);

  GmmTheta theta;
  theta.weights = Eigen::VectorXd::Ones(1);
  theta.means = data.colwise().mean().transpose();
  theta.sigma = Eigen::Matrix2d::Identity();

  const Eigen::Matrix2d inv = theta.sigma.inverse();
  double direct = 0.0;
  for (int i = 0; i < n_pts; ++i) {
    const Eigen::Vector2d d = data.row(i).transpose() - theta.means.col(0);
    direct += -0.5 * d.dot(inv * d) - 0.5 * std::log(theta.sigma.determinant());
  }
  const double expect = -direct / n_pts;  // negative normalized log-density
  CHECK(model.objective(theta.encode()) == doctest::Approx(expect));

  // duplicating the data leaves the per-example value unchanged
  Eigen::MatrixXd doubled(2 * n_pts, 2);
  doubled << data, data;
  GmmModel model2(doubled, 4, 1, options);
  CHECK(model2.objective(theta.encode()) ==
        doctest::Approx(model.objective(theta.encode())));
}

TEST_CASE("s-space iterates are invariant under a rescaled parameter codec") {
  const GmmModel base = make_gmm(60, 3);
  const RescaledCodec wrapped(base);
  Statistic a = start_statistic(base);
  Statistic b = a;
  for (int k = 0; k < 20; ++k) {
    a = exact_em_step(base, a);
    b = exact_em_step(wrapped, b);
  }
  CHECK(a == b);  // bit-identical: scaling by 2 is exact
}

TEST_CASE("theta codec round trips exactly") {
  const auto truth = separated_truth_2d();
  const ThetaVector v = truth.encode();
  const GmmTheta back = GmmTheta::decode(v, 2, 2);
  CHECK(back.weights == truth.weights);
  CHECK(back.means == truth.means);
  CHECK(back.sigma == truth.sigma);
  CHECK(back.encode() == v);
}
