#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "drp/linops.hpp"
#include "drp/sprox.hpp"
#include "drp/tensor.hpp"
#include "test_util.hpp"

using namespace drp;

namespace {

// Dense reference solve of (A^T A + gamma H^T H) x = A^T y + gamma H^T H z.
Image dense_sprox(const ScaledProxProblem& pb, const Image& z) {
  const DenseMatrix ad = materialize(pb.A);
  const DenseMatrix hd = materialize(pb.H);
  DenseMatrix sys = ad.transpose() * ad + pb.gamma * hd.transpose() * hd;
  sys = 0.5 * (sys + sys.transpose().eval());
  const Eigen::VectorXd rhs =
      ad.transpose() * pb.y.to_vector() + pb.gamma * hd.transpose() * (hd * z.to_vector());
  const Eigen::VectorXd x = Eigen::LLT<DenseMatrix>(sys).solve(rhs);
  return Image::from_vector(z.shape(), x);
}

CgConfig exact_cg(long n) {
  CgConfig cfg;
  cfg.max_iters = static_cast<int>(n) + 8;
  cfg.residual_tol = 1e-14;
  return cfg;
}

}  // namespace

TEST_CASE("prox problem construction validates shapes and the coupling weight") {
  const Shape s{1, 4, 4};
  LinearOperator id = identity_operator(s);
  Image y(s, 0.5);
  CHECK_THROWS_AS(ScaledProxProblem(id, id, y, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(ScaledProxProblem(id, id, y, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(ScaledProxProblem(id, identity_operator(Shape{1, 2, 8}), y, 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(ScaledProxProblem(id, id, Image(Shape{1, 2, 2}), 1.0),
                  std::invalid_argument);
  CHECK_NOTHROW(ScaledProxProblem(id, id, y, 1.0));
}

TEST_CASE("normal equations reduce to 2I and y+z when everything is the identity") {
  const Shape s{1, 2, 3};
  SplitMix64 rng(11);
  Image y = testutil::gaussian_image(s, rng);
  Image z = testutil::gaussian_image(s, rng);
  ScaledProxProblem pb(identity_operator(s), identity_operator(s), y, 1.0);
  NormalEquations ne = sprox_normal_equations(pb, z);

  Image v = testutil::gaussian_image(s, rng);
  CHECK(testutil::rel_diff(ne.apply(v), 2.0 * v) < 1e-15);
  CHECK(testutil::rel_diff(ne.rhs, y + z) < 1e-15);

  CHECK_THROWS_AS(sprox_normal_equations(pb, Image(Shape{1, 3, 2})), std::invalid_argument);
}

TEST_CASE("normal equations materialize to A^T A + gamma H^T H with matching rhs") {
  const Shape s{1, 8, 8};
  LinearOperator a = blur_operator(gaussian_kernel(5, 1.4), s);
  LinearOperator h = blur_operator(gaussian_kernel(3, 0.9), s);
  SplitMix64 rng(21);
  Image y = testutil::gaussian_image(s, rng);
  Image z = testutil::gaussian_image(s, rng);
  const double gamma = 0.7;
  ScaledProxProblem pb(a, h, y, gamma);
  NormalEquations ne = sprox_normal_equations(pb, z);

  const DenseMatrix ad = materialize(a);
  const DenseMatrix hd = materialize(h);
  const DenseMatrix want = ad.transpose() * ad + gamma * hd.transpose() * hd;

  LinearOperator wrapped(s, s, ne.apply, ne.apply);
  const DenseMatrix got = materialize(wrapped);
  CHECK((got - want).norm() < 1e-12 * (1.0 + want.norm()));

  const Eigen::VectorXd want_rhs =
      ad.transpose() * y.to_vector() + gamma * hd.transpose() * (hd * z.to_vector());
  CHECK((ne.rhs.to_vector() - want_rhs).norm() < 1e-12 * (1.0 + want_rhs.norm()));
}

TEST_CASE("cg on the identity returns the rhs exactly after one iteration") {
  const Shape s{1, 3, 3};
  SplitMix64 rng(31);
  Image rhs = testutil::gaussian_image(s, rng);
  auto apply = [](const Image& v) { return v; };
  CgConfig cfg;
  cfg.max_iters = 1;
  Image x = conjugate_gradient(apply, rhs, Image(s), cfg);
  CHECK(testutil::max_abs_diff(x, rhs) == 0.0);
}

TEST_CASE("cg with enough iterations matches a dense Cholesky solve") {
  const int n = 24;
  SplitMix64 rng(41);
  const DenseMatrix m = testutil::random_spd(n, rng);
  const Shape s{1, 1, n};
  auto apply = [&m, s](const Image& v) {
    return Image::from_vector(s, Eigen::VectorXd(m * v.to_vector()));
  };
  Image rhs = testutil::gaussian_image(s, rng);
  Image x = conjugate_gradient(apply, rhs, Image(s), exact_cg(n));
  const Eigen::VectorXd want = Eigen::LLT<DenseMatrix>(m).solve(rhs.to_vector());
  CHECK((x.to_vector() - want).norm() < 1e-8 * (1.0 + want.norm()));
}

TEST_CASE("cg handles degenerate starts: zero rhs, warm start at the solution") {
  const Shape s{1, 1, 6};
  SplitMix64 rng(51);
  const DenseMatrix m = testutil::random_spd(6, rng);
  auto apply = [&m, s](const Image& v) {
    return Image::from_vector(s, Eigen::VectorXd(m * v.to_vector()));
  };

  Image zero(s);
  Image x = conjugate_gradient(apply, zero, zero, exact_cg(6));
  CHECK(norm(x) == 0.0);

  Image rhs = testutil::gaussian_image(s, rng);
  Image sol = conjugate_gradient(apply, rhs, zero, exact_cg(6));
  Image again = conjugate_gradient(apply, rhs, sol, exact_cg(6));
  CHECK(testutil::max_abs_diff(again, sol) == 0.0);
}

TEST_CASE("cg error in the operator norm never increases with iteration count") {
  const int n = 12;
  SplitMix64 rng(61);
  const DenseMatrix m = testutil::random_spd(n, rng);
  const Shape s{1, 1, n};
  auto apply = [&m, s](const Image& v) {
    return Image::from_vector(s, Eigen::VectorXd(m * v.to_vector()));
  };
  Image rhs = testutil::gaussian_image(s, rng);
  const Eigen::VectorXd star = Eigen::LLT<DenseMatrix>(m).solve(rhs.to_vector());

  double prev = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= n; ++k) {
    CgConfig cfg;
    cfg.max_iters = k;
    Image xk = conjugate_gradient(apply, rhs, Image(s), cfg);
    const Eigen::VectorXd e = xk.to_vector() - star;
    const double err = std::sqrt(e.dot(m * e));
    CHECK(err <= prev * (1.0 + 1e-12) + 1e-15);
    prev = err;
  }
}

TEST_CASE("cg reports indefiniteness and non-finite arithmetic as divergence") {
  const Shape s{1, 1, 4};
  SplitMix64 rng(71);
  Image rhs = testutil::gaussian_image(s, rng);
  CgConfig cfg;
  cfg.max_iters = 10;

  auto negate = [](const Image& v) { return -1.0 * v; };
  CHECK_THROWS_AS(conjugate_gradient(negate, rhs, Image(s), cfg), DivergenceError);

  auto poison = [s](const Image&) {
    return Image(s, std::numeric_limits<double>::quiet_NaN());
  };
  CHECK_THROWS_AS(conjugate_gradient(poison, rhs, Image(s), cfg), DivergenceError);

  auto id = [](const Image& v) { return v; };
  CgConfig bad;
  bad.max_iters = 0;
  CHECK_THROWS_AS(conjugate_gradient(id, rhs, Image(s), bad), std::invalid_argument);
  CHECK_THROWS_AS(conjugate_gradient(id, rhs, Image(Shape{1, 2, 2}), cfg),
                  std::invalid_argument);
}

TEST_CASE("identity data and coupling terms give the convex-combination closed form") {
  const Shape s{1, 4, 4};
  SplitMix64 rng(81);
  Image y = testutil::gaussian_image(s, rng);
  Image z = testutil::gaussian_image(s, rng);
  const double gamma = 2.5;
  ScaledProxProblem pb(identity_operator(s), identity_operator(s), y, gamma);

  Image got = sprox(pb, z, z, exact_cg(s.size()));
  Image want = 1.0 / (1.0 + gamma) * (y + gamma * z);
  CHECK(testutil::rel_diff(got, want) < 1e-12);
}

TEST_CASE("vanishing coupling weight recovers the least-squares solution") {
  const Shape s{1, 8, 8};
  LinearOperator a = blur_operator(gaussian_kernel(3, 0.6), s);
  SplitMix64 rng(91);
  Image truth = testutil::uniform_image(s, rng, 0.0, 1.0);
  Image y = a.forward(truth);
  Image z = testutil::gaussian_image(s, rng);
  ScaledProxProblem pb(a, identity_operator(s), y, 1e-10);

  CgConfig cfg = exact_cg(s.size());
  cfg.max_iters = 400;
  Image got = sprox(pb, z, z, cfg);
  // A is invertible here, so the data term alone pins x to the preimage
  CHECK(testutil::rel_diff(got, truth) < 1e-5);
}

TEST_CASE("prox matches the dense solve on deblurring") {
  const Shape s{1, 16, 16};
  LinearOperator a = blur_operator(gaussian_kernel(7, 1.6), s);
  LinearOperator h = blur_operator(gaussian_kernel(3, 1.0), s);
  SplitMix64 rng(101);
  Image y = testutil::uniform_image(s, rng, 0.0, 1.0);
  Image z = testutil::uniform_image(s, rng, 0.0, 1.0);
  ScaledProxProblem pb(a, h, y, 0.5);

  CgConfig cfg;
  cfg.max_iters = 300;
  cfg.residual_tol = 1e-14;
  Image got = sprox(pb, z, z, cfg);
  CHECK(testutil::rel_diff(got, dense_sprox(pb, z)) < 1e-8);
}

TEST_CASE("prox matches the dense solve on downscaling with a full-rank coupling") {
  const Shape s{1, 16, 16};
  LinearOperator a = compose(decimation_operator(2, s), blur_operator(gaussian_kernel(5, 1.2), s));
  LinearOperator h = blur_operator(gaussian_kernel(3, 0.8), s);
  SplitMix64 rng(111);
  Image y = testutil::gaussian_image(a.range_shape(), rng);
  Image z = testutil::uniform_image(s, rng, 0.0, 1.0);
  ScaledProxProblem pb(a, h, y, 0.8);

  CgConfig cfg;
  cfg.max_iters = 400;
  cfg.residual_tol = 1e-14;
  Image got = sprox(pb, z, z, cfg);
  CHECK(testutil::rel_diff(got, dense_sprox(pb, z)) < 1e-8);
}

TEST_CASE("prox matches the dense solve on denoising with a rank-deficient coupling") {
  const Shape s{1, 16, 16};
  LinearOperator a = identity_operator(s);
  LinearOperator h = bicubic_downsample_operator(2, s);
  SplitMix64 rng(121);
  Image y = testutil::uniform_image(s, rng, 0.0, 1.0);
  Image z = testutil::uniform_image(s, rng, 0.0, 1.0);
  ScaledProxProblem pb(a, h, y, 1.3);

  CgConfig cfg;
  cfg.max_iters = 400;
  cfg.residual_tol = 1e-14;
  Image got = sprox(pb, z, z, cfg);
  CHECK(testutil::rel_diff(got, dense_sprox(pb, z)) < 1e-8);
}

TEST_CASE("a converged prox satisfies the stationarity identity") {
  const Shape s{1, 8, 8};
  LinearOperator a = blur_operator(gaussian_kernel(5, 1.1), s);
  LinearOperator h = blur_operator(gaussian_kernel(3, 0.7), s);
  SplitMix64 rng(131);
  Image y = testutil::gaussian_image(s, rng);
  Image z = testutil::gaussian_image(s, rng);
  // weight 2 on the coupling term corresponds to a step size of 1/2
  ScaledProxProblem pb(a, h, y, 2.0);

  CgConfig cfg;
  cfg.max_iters = 300;
  cfg.residual_tol = 1e-15;
  Image xhat = sprox(pb, z, z, cfg);

  const double rhs_norm = norm(sprox_normal_equations(pb, z).rhs);

  // raw normal-equations residual
  Image resid = a.adjoint(a.forward(xhat) - y);
  Image couple = h.adjoint(h.forward(xhat - z));
  Image ne_res = resid + pb.gamma * couple;
  CHECK(norm(ne_res) <= 1e-8 * (1.0 + rhs_norm));

  // same identity scaled by the step size 1/gamma
  const double step = 1.0 / pb.gamma;
  Image scaled = step * resid + couple;
  CHECK(norm(scaled) <= 1e-8 * (1.0 + rhs_norm));
}

TEST_CASE("warm start off ignores the hint and starts from zero") {
  const Shape s{1, 4, 4};
  SplitMix64 rng(141);
  Image y = testutil::gaussian_image(s, rng);
  Image z = testutil::gaussian_image(s, rng);
  Image hint = testutil::gaussian_image(s, rng);
  // spread spectrum so two CG iterations are far from converged
  ScaledProxProblem pb(blur_operator(gaussian_kernel(3, 0.8), s), identity_operator(s), y, 1.0);

  CgConfig cold;
  cold.max_iters = 2;
  cold.warm_start = false;
  Image a = sprox(pb, z, hint, cold);
  Image b = sprox(pb, z, Image(s), cold);
  CHECK(testutil::max_abs_diff(a, b) == 0.0);

  CgConfig warm = cold;
  warm.warm_start = true;
  Image c = sprox(pb, z, hint, warm);
  CHECK(testutil::max_abs_diff(a, c) > 0.0);
}
