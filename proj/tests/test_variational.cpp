#include "oracles.hpp"
#include "vbmc/variational_posterior.hpp"

#include <doctest.h>

using namespace vbmc;

namespace {

VariationalPosterior single(double mu, double sigma) {
  return VariationalPosterior(Vector::Ones(1), Matrix::Constant(1, 1, mu), Vector::Constant(1, sigma),
                              Vector::Ones(1));
}

}  // namespace

TEST_CASE("log density") {
  CHECK(single(0, 1).logpdf(Vector(Vector::Zero(1))) == doctest::Approx(-0.91893853320467).epsilon(1e-12));
  Matrix mu(1, 2);
  mu << -1, 2;
  const VariationalPosterior two((Vector(2) << 1, 0).finished(), mu, Vector::Ones(2), Vector::Ones(1));
  CHECK(two.logpdf(Vector(Vector::Constant(1, 0.4))) == doctest::Approx(single(-1, 1).logpdf(Vector(Vector::Constant(1, 0.4)))));
  CHECK(VariationalPosterior::param_count(3, 4) == 3 * 6 + 4);

  Rng rng(1);
  const auto vp = oracle::random_vp(3, 2, rng, 0.7);
  double total = 0;
  const double h = 0.02;
  for (double a = -9; a <= 9; a += h) {
    for (double b = -9; b <= 9; b += h) total += h * h * std::exp(vp.logpdf((Vector(2) << a, b).finished()));
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-4));
  for (int s = 0; s < 20; ++s) {
    const Vector x = rng.normal_vector(2);
    CHECK(std::exp(vp.logpdf(x)) == doctest::Approx(oracle::mixture_density(vp, x)).epsilon(1e-12));
  }
}

TEST_CASE("sampling and moments") {
  Rng rng(2);
  const auto vp = oracle::random_vp(3, 2, rng);
  const auto m = vp.moments();
  // moments by explicit formula
  Vector mean = Vector::Zero(2);
  for (int k = 0; k < 3; ++k) mean += vp.weights()[k] * vp.means().col(k);
  Matrix cov = Matrix::Zero(2, 2);
  for (int k = 0; k < 3; ++k) {
    const Vector d = vp.means().col(k) - mean;
    cov += vp.weights()[k] * (d * d.transpose());
    cov.diagonal() += vp.weights()[k] * (vp.sigma()[k] * vp.lambda()).cwiseAbs2();
  }
  CHECK((m.mean - mean).norm() < 1e-12);
  CHECK((m.cov - cov).norm() < 1e-12);
  CHECK((m.cov - m.cov.transpose()).norm() == 0.0);

  const int n = 1000000;
  Rng srng(3);
  const Matrix xs = vp.sample(n, srng);
  const Vector emp_mean = xs.colwise().mean().transpose();
  const Matrix centered = xs.rowwise() - emp_mean.transpose();
  const Matrix emp_cov = centered.transpose() * centered / (n - 1.0);
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(emp_mean[i] - m.mean[i]) < 4 * std::sqrt(m.cov(i, i) / n));
    CHECK(std::abs(emp_cov(i, i) - m.cov(i, i)) < 0.01 * m.cov(i, i));
  }
  Rng r1(9), r2(9);
  CHECK((vp.sample(50, r1).array() == vp.sample(50, r2).array()).all());

  Matrix mu(1, 2);
  mu << -1, 1;
  const VariationalPosterior pm(Vector::Ones(2), mu, Vector::Ones(2), Vector::Ones(1));
  CHECK(pm.moments().mean[0] == doctest::Approx(0.0));
  CHECK(pm.moments().cov(0, 0) == doctest::Approx(2.0));

  const VariationalPosterior tight(Vector::Ones(2), mu, Vector::Constant(2, 1e-14), Vector::Constant(1, 1e-14));
  const Matrix pts = tight.sample(100, rng);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) CHECK(std::abs(std::abs(pts(i, 0)) - 1.0) < 1e-12);
}

TEST_CASE("entropy estimate") {
  Rng rng(4);
  const int N = 10000;
  const auto e = entropy_mc(single(0.3, 1), N, rng, false);
  const double closed = 0.5 * std::log(2 * M_PI * M_E);
  // SD of -log q under q is sqrt(1/2) for a 1-D Gaussian
  CHECK(std::abs(e.value - closed) < 5 * std::sqrt(0.5 / N));
  CHECK(closed == doctest::Approx(1.41893853320467));

  // scaling law: with shared noise the shift is exact
  Rng ra(5), rb(5);
  const auto base = entropy_mc(single(0, 1.0), 500, ra, false);
  const auto scaled = entropy_mc(single(0, 2.5), 500, rb, false);
  CHECK(scaled.value - base.value == doctest::Approx(std::log(2.5)).epsilon(1e-12));
}

TEST_CASE("entropy gradient with common random numbers") {
  Rng rng(6);
  for (int K : {1, 2, 5}) {
    for (int D : {1, 2, 6}) {
      const auto vp = oracle::random_vp(K, D, rng, 0.8);
      const Matrix eps = draw_entropy_noise(40, K, D, rng);
      const auto est = entropy_mc(vp, eps, true);
      const Vector theta = vp.to_vector();
      const Vector fd = oracle::central_difference(
          [&](const Vector& t) { return entropy_mc(VariationalPosterior::from_vector(t, K, D), eps, false).value; },
          theta, 1e-5);
      const double err = oracle::relative_error(est.gradient, fd);
      CAPTURE(K);
      CAPTURE(D);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("Gaussianized symmetric KL") {
  const GaussianMoments a{Vector::Zero(1), Matrix::Ones(1, 1)};
  const GaussianMoments b{Vector::Ones(1), Matrix::Ones(1, 1)};
  CHECK(gaussian_skl(a, b) == doctest::Approx(0.5));
  CHECK(gaussian_skl(a, a) == doctest::Approx(0.0));
  Rng rng(7);
  for (int s = 0; s < 20; ++s) {
    const auto p = oracle::random_vp(2, 3, rng), q = oracle::random_vp(3, 3, rng);
    CHECK(gaussianized_skl(p, q) == gaussianized_skl(q, p));
    CHECK(gaussianized_skl(p, q) > 0);
    CHECK(gaussianized_skl(p, p) == doctest::Approx(0.0));
  }
  const GaussianMoments sing{Vector::Zero(2), Matrix::Zero(2, 2)};
  const GaussianMoments ok{Vector::Zero(2), Matrix::Identity(2, 2)};
  CHECK_THROWS_AS(gaussian_skl(sing, ok), NumericalError);
}

TEST_CASE("parameter vector") {
  Rng rng(8);
  const auto vp = oracle::random_vp(3, 2, rng);
  Vector theta = vp.to_vector();
  CHECK(theta.size() == vp.param_count());
  const auto back = VariationalPosterior::from_vector(theta, 3, 2);
  theta.tail(3).array() += 4.2;
  const auto shifted = VariationalPosterior::from_vector(theta, 3, 2);
  for (int s = 0; s < 100; ++s) {
    const Vector x = rng.normal_vector(2);
    CHECK(back.logpdf(x) == doctest::Approx(vp.logpdf(x)).epsilon(1e-12));
    CHECK(shifted.logpdf(x) == doctest::Approx(vp.logpdf(x)).epsilon(1e-12));
  }
  Vector eq = VariationalPosterior::from_vector(Vector::Zero(VariationalPosterior::param_count(2, 1)), 2, 1).weights();
  CHECK(eq[0] == doctest::Approx(0.5));
  CHECK(eq[1] == doctest::Approx(0.5));
  CHECK_THROWS(VariationalPosterior::from_vector(Vector::Zero(5), 2, 2));
  CHECK(std::abs(vp.weights().sum() - 1.0) < 1e-12);
}
