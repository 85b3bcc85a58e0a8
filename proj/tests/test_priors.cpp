#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <vector>

#include "drp/linops.hpp"
#include "drp/priors.hpp"
#include "drp/tensor.hpp"
#include "test_util.hpp"

using namespace drp;

namespace {

// Model with an explicit dense covariance so the test can rebuild every
// closed form independently.
struct DenseFixture {
  Shape shape;
  Image mean;
  Eigen::MatrixXd sigma;
  double noise_std;
  std::shared_ptr<GaussianPriorModel> model;

  DenseFixture(Shape s, LinearOperator h, double noise, std::uint64_t seed)
      : shape(s), mean(s), noise_std(noise) {
    SplitMix64 rng(seed);
    mean = testutil::uniform_image(s, rng, -0.5, 0.5);
    sigma = testutil::random_spd(static_cast<int>(s.size()), rng);
    model = std::make_shared<GaussianPriorModel>(mean, sigma, h, noise);
  }

  // Observation covariance and helpers rebuilt from scratch.
  Eigen::MatrixXd dense_h() const { return materialize(model->degradation()); }
  Eigen::MatrixXd obs_cov() const {
    const Eigen::MatrixXd hd = dense_h();
    Eigen::MatrixXd c = hd * sigma * hd.transpose();
    c += noise_std * noise_std *
         Eigen::MatrixXd::Identity(c.rows(), c.cols());
    return 0.5 * (c + c.transpose());
  }
};

double reference_log_density(const DenseFixture& fx, const Image& s) {
  const Eigen::MatrixXd c = fx.obs_cov();
  const Eigen::VectorXd d = s.to_vector() - fx.dense_h() * fx.mean.to_vector();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(c);
  const double quad = d.dot(ldlt.solve(d));
  const double logdet = ldlt.vectorD().array().log().sum();
  const double p = static_cast<double>(c.rows());
  return -0.5 * (quad + logdet + p * std::log(2.0 * M_PI));
}

}  // namespace

TEST_CASE("scalar model closed forms: posterior mean, density, gradient, smoothness") {
  Image mu(Shape{1, 1, 1}, {0.0});
  GaussianPriorModel m(mu, IsotropicCovariance{1.0},
                       identity_operator(Shape{1, 1, 1}), 1.0);

  // C_s = 2, so E[x|s] = s/2
  Image s(Shape{1, 1, 1}, {3.0});
  CHECK(m.restore(s)[0] == doctest::Approx(1.5).epsilon(1e-14));

  Image zero(Shape{1, 1, 1}, {0.0});
  CHECK(m.log_density(zero) ==
        doctest::Approx(-0.5 * (std::log(2.0) + std::log(2.0 * M_PI))).epsilon(1e-14));

  // h(x) = -log p(x) at tau = sigma = 1; grad h(x) = x / 2
  CHECK(m.regularizer(1.0, s) == doctest::Approx(-m.log_density(s)).epsilon(1e-14));
  CHECK(m.regularizer_grad(1.0, s)[0] == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(m.regularizer_grad(2.0, s)[0] == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(m.grad_lipschitz(1.0) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("restoring the degraded mean returns the mean, and restore is affine") {
  DenseFixture fx(Shape{1, 2, 3}, blur_operator(gaussian_kernel(1, 0.5), Shape{1, 2, 3}),
                  0.4, 21);
  const Image h_mu = fx.model->degradation().forward(fx.mean);
  CHECK(testutil::rel_diff(fx.model->restore(h_mu), fx.mean) < 1e-12);

  SplitMix64 rng(22);
  const Image s1 = testutil::gaussian_image(fx.model->observation_shape(), rng);
  const Image s2 = testutil::gaussian_image(fx.model->observation_shape(), rng);
  const double a = 0.3;
  Image mix = a * s1;
  mix += (1.0 - a) * s2;
  Image want = a * fx.model->restore(s1);
  want += (1.0 - a) * fx.model->restore(s2);
  CHECK(testutil::rel_diff(fx.model->restore(mix), want) < 1e-12);
}

TEST_CASE("posterior mean agrees with an importance-sampled Monte Carlo estimate") {
  const Shape xs{1, 1, 4};
  SplitMix64 rng(31);
  Eigen::MatrixXd h(3, 4);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) h(i, j) = rng.next_gaussian() * 0.7;
  Image mu = testutil::uniform_image(xs, rng, -0.3, 0.3);
  Eigen::MatrixXd sigma = testutil::random_spd(4, rng);
  const double noise = 0.7;
  GaussianPriorModel model(mu, sigma, dense_operator(h), noise);

  Image s_img(Shape{1, 1, 3});
  const Eigen::VectorXd s =
      h * mu.to_vector() + 0.5 * Eigen::Vector3d(0.9, -0.4, 0.2);
  for (int i = 0; i < 3; ++i) s_img[i] = s(i);
  const Eigen::VectorXd analytic = model.restore(s_img).to_vector();

  // draw from the prior, weight by the Gaussian likelihood of s
  const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(sigma).matrixL();
  const int draws = 1000000;
  std::vector<double> logw(draws);
  Eigen::MatrixXd xsamp(4, draws);
  double logw_max = -1e300;
  for (int t = 0; t < draws; ++t) {
    Eigen::Vector4d g;
    for (int i = 0; i < 4; ++i) g(i) = rng.next_gaussian();
    const Eigen::Vector4d x = mu.to_vector() + chol * g;
    xsamp.col(t) = x;
    const double r2 = (s - h * x).squaredNorm();
    logw[t] = -r2 / (2.0 * noise * noise);
    logw_max = std::max(logw_max, logw[t]);
  }
  Eigen::Vector4d num = Eigen::Vector4d::Zero();
  double den = 0.0;
  for (int t = 0; t < draws; ++t) {
    const double w = std::exp(logw[t] - logw_max);
    num += w * xsamp.col(t);
    den += w;
  }
  const Eigen::Vector4d est = num / den;
  // ratio-estimator standard error per coordinate
  Eigen::Vector4d se2 = Eigen::Vector4d::Zero();
  for (int t = 0; t < draws; ++t) {
    const double w = std::exp(logw[t] - logw_max);
    const Eigen::Vector4d dvec = xsamp.col(t) - est;
    se2 += (w * w) * dvec.cwiseProduct(dvec);
  }
  se2 /= den * den;
  for (int i = 0; i < 4; ++i) {
    const double se = std::sqrt(se2(i));
    CHECK(std::abs(est(i) - analytic(i)) < 4.0 * se + 1e-4);
  }
}

TEST_CASE("observation log density matches a from-scratch dense computation") {
  DenseFixture fx(Shape{1, 2, 2}, decimation_operator(2, Shape{1, 2, 2}), 0.3, 41);
  SplitMix64 rng(42);
  for (int t = 0; t < 10; ++t) {
    const Image s = testutil::gaussian_image(fx.model->observation_shape(), rng);
    const double got = fx.model->log_density(s);
    const double want = reference_log_density(fx, s);
    CHECK(got == doctest::Approx(want).epsilon(1e-11));
  }
}

TEST_CASE("observation density integrates to one on a scalar model") {
  Image mu(Shape{1, 1, 1}, {0.2});
  GaussianPriorModel m(mu, IsotropicCovariance{0.8},
                       scale_operator(1.5, identity_operator(Shape{1, 1, 1})), 0.5);
  // C_s = 1.5^2 * 0.8 + 0.25 = 2.05
  const double sd = std::sqrt(2.05);
  const double center = 1.5 * 0.2;
  const double lo = center - 12.0 * sd, hi = center + 12.0 * sd;
  const int n = 40000;  // even, composite Simpson
  const double hstep = (hi - lo) / n;
  auto dens = [&](double t) {
    Image s(Shape{1, 1, 1}, {t});
    return std::exp(m.log_density(s));
  };
  double acc = dens(lo) + dens(hi);
  for (int i = 1; i < n; ++i) acc += dens(lo + i * hstep) * (i % 2 ? 4.0 : 2.0);
  const double integral = acc * hstep / 3.0;
  CHECK(integral == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("regularizer is bounded below with the minimum at the prior mean") {
  DenseFixture fx(Shape{1, 2, 2}, blur_operator(identity_kernel(), Shape{1, 2, 2}), 0.6, 51);
  const double tau = 1.7;
  const double floor = fx.model->regularizer(tau, fx.mean);
  SplitMix64 rng(52);
  for (int t = 0; t < 1000; ++t) {
    const Image x = testutil::gaussian_image(fx.shape, rng);
    CHECK(fx.model->regularizer(tau, x) >= floor - 1e-12 * (1.0 + std::abs(floor)));
  }
  // the floor itself is the tau-scaled normalizing constant
  const double p = static_cast<double>(fx.model->observation_shape().size());
  const double want = tau * 0.36 * 0.5 *
                      (fx.model->observation_logdet() + p * std::log(2.0 * M_PI));
  CHECK(floor == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("regularizer gradient matches central finite differences") {
  const Shape xs{1, 2, 4};
  DenseFixture fx(xs, blur_operator(gaussian_kernel(1, 1.0), xs), 0.5, 61);
  const double tau = 2.3;
  SplitMix64 rng(62);
  const double step = 1e-5;
  for (int t = 0; t < 50; ++t) {
    Image x = testutil::gaussian_image(xs, rng);
    const Image grad = fx.model->regularizer_grad(tau, x);
    Image fd(xs);
    for (long i = 0; i < x.size(); ++i) {
      const double keep = x[i];
      x[i] = keep + step;
      const double up = fx.model->regularizer(tau, x);
      x[i] = keep - step;
      const double dn = fx.model->regularizer(tau, x);
      x[i] = keep;
      fd[i] = (up - dn) / (2.0 * step);
    }
    CHECK(norm(grad - fd) / (1.0 + norm(grad)) < 1e-6);
  }
}

TEST_CASE("gradient of h equals the restoration-residual form on random points") {
  const Shape xs{1, 4, 4};
  DenseFixture fx(xs, blur_operator(gaussian_kernel(3, 1.1), xs), 0.25, 71);
  const double tau = 1.3;
  const LinearOperator& h = fx.model->degradation();
  SplitMix64 rng(72);
  for (int t = 0; t < 100; ++t) {
    const Image x = testutil::gaussian_image(xs, rng);
    const Image grad = fx.model->regularizer_grad(tau, x);
    // tau * H^T H (x - R(Hx))
    const Image restored = fx.model->restore(h.forward(x));
    Image alt = h.adjoint(h.forward(x - restored));
    alt *= tau;
    CHECK(norm(alt - grad) / (norm(grad) + 1e-12) < 1e-10);
  }
}

TEST_CASE("gradient vanishes along directions the degradation cannot see") {
  const Shape xs{1, 4, 4};
  DenseFixture fx(xs, decimation_operator(2, xs), 0.5, 81);
  const double tau = 1.0;
  // perturb only pixels the decimation drops
  Image x = fx.mean;
  x.at(0, 1, 1) += 2.0;
  x.at(0, 3, 3) -= 1.0;
  CHECK(norm(fx.model->regularizer_grad(tau, x)) < 1e-13);
  const Image restored = fx.model->restore(fx.model->degradation().forward(x));
  CHECK(testutil::rel_diff(restored, fx.mean) < 1e-12);
}

TEST_CASE("gradient smoothness constant is a tight Lipschitz bound") {
  const Shape xs{1, 2, 4};
  DenseFixture fx(xs, blur_operator(gaussian_kernel(1, 1.0), xs), 0.35, 91);
  const double tau = 1.9;
  const double big_l = fx.model->grad_lipschitz(tau);
  CHECK(big_l > 0.0);

  SplitMix64 rng(92);
  for (int t = 0; t < 1000; ++t) {
    const Image u = testutil::gaussian_image(xs, rng);
    const Image v = testutil::gaussian_image(xs, rng);
    const double lhs = norm(fx.model->regularizer_grad(tau, u) -
                            fx.model->regularizer_grad(tau, v));
    CHECK(lhs <= big_l * norm(u - v) * (1.0 + 1e-10) + 1e-14);
  }

  // independent eigensolve of tau sigma^2 H^T C_s^{-1} H
  const Eigen::MatrixXd hd = fx.dense_h();
  const Eigen::MatrixXd c = fx.obs_cov();
  Eigen::MatrixXd m = tau * fx.noise_std * fx.noise_std * hd.transpose() *
                      Eigen::LDLT<Eigen::MatrixXd>(c).solve(hd);
  m = 0.5 * (m + m.transpose().eval());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const double want = es.eigenvalues()(es.eigenvalues().size() - 1);
  CHECK(big_l == doctest::Approx(want).epsilon(1e-8));

  // the bound is attained along the top eigenvector
  const Eigen::VectorXd top = es.eigenvectors().col(es.eigenvalues().size() - 1);
  Image u = fx.mean;
  Image up = fx.mean;
  up.as_vector() += top;
  const double attained = norm(fx.model->regularizer_grad(tau, up) -
                               fx.model->regularizer_grad(tau, u));
  CHECK(attained == doctest::Approx(big_l).epsilon(1e-8));
}

TEST_CASE("isotropic covariance equals the equivalent dense matrix") {
  const Shape xs{1, 2, 2};
  const double v = 0.37;
  SplitMix64 rng(101);
  Image mu = testutil::uniform_image(xs, rng);
  LinearOperator h = blur_operator(identity_kernel(), xs);

  GaussianPriorModel iso(mu, IsotropicCovariance{v}, h, 0.4);
  GaussianPriorModel dense(mu, Eigen::MatrixXd(v * Eigen::MatrixXd::Identity(4, 4)), h, 0.4);

  const Image s = testutil::gaussian_image(xs, rng);
  CHECK(testutil::rel_diff(iso.restore(s), dense.restore(s)) < 1e-12);
  CHECK(iso.log_density(s) == doctest::Approx(dense.log_density(s)).epsilon(1e-12));
  const Image x = testutil::gaussian_image(xs, rng);
  CHECK(testutil::rel_diff(iso.regularizer_grad(1.2, x),
                           dense.regularizer_grad(1.2, x)) < 1e-12);
  CHECK(iso.grad_lipschitz(1.2) == doctest::Approx(dense.grad_lipschitz(1.2)).epsilon(1e-12));

  Eigen::VectorXd probe = Eigen::VectorXd::LinSpaced(4, -1.0, 2.0);
  CHECK((iso.cov_apply(probe) - v * probe).norm() == 0.0);
  CHECK((dense.cov_apply(probe) - v * probe).norm() < 1e-15);
}

TEST_CASE("observation covariance solve inverts the stored factorization") {
  DenseFixture fx(Shape{1, 2, 2}, identity_operator(Shape{1, 2, 2}), 0.5, 111);
  const Eigen::MatrixXd c = fx.obs_cov();
  Eigen::MatrixXd rhs(4, 2);
  rhs << 1, 0, 0, 2, -1, 1, 0.5, 0;
  const Eigen::MatrixXd sol = fx.model->observation_cov_solve(rhs);
  CHECK((c * sol - rhs).norm() < 1e-10);

  Eigen::LDLT<Eigen::MatrixXd> ldlt(c);
  CHECK(fx.model->observation_logdet() ==
        doctest::Approx(ldlt.vectorD().array().log().sum()).epsilon(1e-10));
}

TEST_CASE("free functions delegate to the model methods") {
  DenseFixture fx(Shape{1, 2, 2}, identity_operator(Shape{1, 2, 2}), 0.5, 121);
  SplitMix64 rng(122);
  const Image s = testutil::gaussian_image(fx.model->observation_shape(), rng);
  const Image x = testutil::gaussian_image(fx.shape, rng);
  CHECK(testutil::max_abs_diff(gaussian_mmse_restore(*fx.model, s), fx.model->restore(s)) == 0.0);
  CHECK(log_observation_density(*fx.model, s) == fx.model->log_density(s));
  CHECK(implicit_regularizer_h(*fx.model, 1.4, x) == fx.model->regularizer(1.4, x));
  CHECK(testutil::max_abs_diff(grad_implicit_regularizer(*fx.model, 1.4, x),
                               fx.model->regularizer_grad(1.4, x)) == 0.0);
  CHECK(lipschitz_constant_of_grad_h(*fx.model, 1.4) == fx.model->grad_lipschitz(1.4));
}

TEST_CASE("restorer adapters expose the right shapes") {
  const Shape xs{1, 4, 4};
  auto model = std::make_shared<const GaussianPriorModel>(
      Image(xs, 0.1), IsotropicCovariance{1.0}, decimation_operator(2, xs), 0.5);
  GaussianMmseRestorer g(model);
  CHECK(g.input_shape() == Shape{1, 2, 2});
  CHECK(g.output_shape() == xs);
  SplitMix64 rng(131);
  const Image s = testutil::gaussian_image(Shape{1, 2, 2}, rng);
  CHECK(testutil::max_abs_diff(g.restore(s), model->restore(s)) == 0.0);

  IdentityRestorer id(xs);
  CHECK(id.input_shape() == xs);
  const Image x = testutil::gaussian_image(xs, rng);
  CHECK(testutil::max_abs_diff(id.restore(x), x) == 0.0);

  CHECK_NOTHROW(RestorationTask(identity_operator(xs), 0.1));
  CHECK_THROWS_AS(RestorationTask(identity_operator(xs), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(RestorationTask(identity_operator(xs), -1.0), std::invalid_argument);
}

TEST_CASE("model construction rejects invalid inputs") {
  const Shape xs{1, 2, 2};
  Image mu(xs, 0.0);
  LinearOperator h = identity_operator(xs);

  CHECK_THROWS_AS(GaussianPriorModel(mu, IsotropicCovariance{1.0}, h, 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(GaussianPriorModel(mu, IsotropicCovariance{-2.0}, h, 0.5),
                  std::invalid_argument);
  CHECK_THROWS_AS(GaussianPriorModel(Image(Shape{1, 1, 3}, 0.0), IsotropicCovariance{1.0},
                                     h, 0.5),
                  std::invalid_argument);

  Eigen::MatrixXd wrong_size = Eigen::MatrixXd::Identity(3, 3);
  CHECK_THROWS_AS(GaussianPriorModel(mu, wrong_size, h, 0.5), std::invalid_argument);

  Eigen::MatrixXd asym = Eigen::MatrixXd::Identity(4, 4);
  asym(0, 1) = 0.5;
  CHECK_THROWS_AS(GaussianPriorModel(mu, asym, h, 0.5), std::invalid_argument);

  Eigen::MatrixXd indef = Eigen::MatrixXd::Identity(4, 4);
  indef(2, 2) = -1.0;
  CHECK_THROWS_AS(GaussianPriorModel(mu, indef, h, 0.5), std::invalid_argument);

  // cap applies to the observation-side materialization
  CHECK_THROWS_AS(GaussianPriorModel(mu, IsotropicCovariance{1.0}, h, 0.5, 2),
                  std::invalid_argument);
}
