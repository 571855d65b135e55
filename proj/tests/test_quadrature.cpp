#include "oracles.hpp"
#include "vbmc/quadrature.hpp"

#include <doctest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

using namespace vbmc;

namespace {

GPPosterior empty_posterior(const GPHyperparams& h) {
  TrainingSet t;
  t.X.resize(0, h.dim());
  t.y.resize(0);
  return GPPosterior::fit(t, h);
}

VariationalPosterior one_component(const Vector& mu, double sigma, const Vector& lambda) {
  return VariationalPosterior(Vector::Ones(1), mu, Vector::Constant(1, sigma), lambda);
}

}  // namespace

TEST_CASE("z vector") {
  // the kernel carries no normalizer, so at zero distance z = l / sqrt(l^2 + s^2 lambda^2)
  GPHyperparams h(1);
  TrainingSet t;
  t.X = Matrix::Constant(1, 1, 0.3);
  t.y = Vector::Zero(1);
  const auto post = GPPosterior::fit(t, h);
  const auto vp = one_component(Vector::Constant(1, 0.3), 1.0, Vector::Ones(1));
  CHECK(z_vector(vp, 0, post)[0] == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-14));

  // narrow component: z tends to the kernel value at the mean
  const auto narrow = one_component(Vector::Constant(1, 1.3), 1e-7, Vector::Ones(1));
  CHECK(z_vector(narrow, 0, post)[0] == doctest::Approx(se_kernel(Vector::Constant(1, 1.3), t.X.row(0).transpose(), h)).epsilon(1e-10));

  Rng rng(1);
  boost::math::quadrature::gauss_kronrod<double, 61> gk;
  for (int rep = 0; rep < 20; ++rep) {
    const auto hyp = oracle::random_hyp(1, rng);
    TrainingSet d;
    d.X = Matrix::Constant(1, 1, rng.normal());
    d.y = Vector::Zero(1);
    const auto p = GPPosterior::fit(d, hyp);
    const double mu = rng.normal(), s = rng.uniform(0.3, 1.5);
    const auto q = one_component(Vector::Constant(1, mu), s, Vector::Ones(1));
    const double xp = d.X(0, 0), ell = hyp.ell()[0];
    auto integrand = [&](double x) {
      return std::exp(-0.5 * (x - mu) * (x - mu) / (s * s)) / (s * std::sqrt(2 * M_PI)) * hyp.sigma_f2() *
             std::exp(-0.5 * (x - xp) * (x - xp) / (ell * ell));
    };
    const double ref = gk.integrate(integrand, -kInf, kInf, 15, 1e-14);
    CHECK(oracle::relative_error(z_vector(q, 0, p)[0], ref) < 1e-8);
  }
}

TEST_CASE("prior-mean-only quadrature") {
  GPHyperparams h(1);
  const auto post = empty_posterior(h);
  const auto vp = one_component(Vector::Zero(1), 1.0, Vector::Ones(1));
  const auto r = expected_log_joint(vp, post, false, true);
  CHECK(r.mean == doctest::Approx(-0.5));
  // Var = sf2 * l / sqrt(l^2 + 2 s^2 lambda^2) with no data
  CHECK(r.variance == doctest::Approx(1 / std::sqrt(3.0)).epsilon(1e-14));
  CHECK(expected_log_joint_variance(vp, post) == doctest::Approx(1 / std::sqrt(3.0)));
}

TEST_CASE("mean and variance match brute-force integration") {
  Rng rng(2);
  for (int rep = 0; rep < 12; ++rep) {
    const int D = 1 + rep % 2;
    const int K = 1 + rep % 3;
    const auto vp = oracle::random_vp(K, D, rng, 0.6);
    const TrainingSet data = oracle::random_training_set(1 + rep % 5, D, rng, 1.0);
    const auto hyp = oracle::random_hyp(D, rng);
    const auto post = GPPosterior::fit(data, hyp);
    const oracle::DenseGP dense(data.X, data.y, hyp);
    const auto [mean, var] = oracle::brute_expected_log_joint(vp, dense, D == 1 ? 80 : 40);
    const auto r = expected_log_joint(vp, post, false, true);
    CHECK(oracle::relative_error(r.mean, mean) < 1e-6);
    CHECK(oracle::relative_error(r.variance, var) < 1e-6);
    CHECK(r.component_means.dot(vp.weights()) == doctest::Approx(r.mean).epsilon(1e-13));
  }
}

TEST_CASE("quadrature gradient matches finite differences") {
  Rng rng(3);
  for (int K : {1, 2, 5}) {
    for (int D : {1, 2, 6}) {
      const auto vp = oracle::random_vp(K, D, rng, 0.6);
      const TrainingSet data = oracle::random_training_set(8, D, rng, 1.0);
      const auto post = GPPosterior::fit(data, oracle::random_hyp(D, rng));
      const auto r = expected_log_joint(vp, post, true, false);
      const Vector fd = oracle::central_difference(
          [&](const Vector& t) {
            return expected_log_joint(VariationalPosterior::from_vector(t, K, D), post, false, false).mean;
          },
          vp.to_vector(), 1e-5);
      CAPTURE(K);
      CAPTURE(D);
      CHECK(oracle::relative_error(r.gradient, fd) < 1e-5);
    }
  }
}

TEST_CASE("variance shrinks on nested training sets") {
  Rng rng(4);
  const auto vp = oracle::random_vp(2, 2, rng, 0.5);
  const auto hyp = oracle::random_hyp(2, rng);
  TrainingSet data;
  data.X.resize(0, 2);
  data.y.resize(0);
  double prev = expected_log_joint_variance(vp, GPPosterior::fit(data, hyp));
  const Matrix pts = vp.sample(15, rng);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    data = data.appended(pts.row(i).transpose(), 0.0);
    const double v = expected_log_joint_variance(vp, GPPosterior::fit(data, hyp));
    CHECK(v <= prev + 1e-12);
    prev = v;
  }
}

TEST_CASE("variance is non-negative on random configurations") {
  Rng rng(5);
  int negative = 0;
  for (int rep = 0; rep < 10000; ++rep) {
    const int D = 1 + rep % 3;
    const auto vp = oracle::random_vp(1 + rep % 2, D, rng, 0.3);
    const TrainingSet data = oracle::random_training_set(1 + rep % 6, D, rng, 0.3);
    auto hyp = oracle::random_hyp(D, rng);
    hyp.values()[GPHyperparams::idx_log_sigma_obs(D)] = std::log(1e-5);
    if (expected_log_joint_variance(vp, GPPosterior::fit(data, hyp)) < 0) ++negative;
  }
  CHECK(negative == 0);
}

TEST_CASE("ELBO assembly") {
  Rng rng(6);
  const auto vp = oracle::random_vp(2, 2, rng);
  const TrainingSet data = oracle::random_training_set(6, 2, rng);
  const auto post = GPPosterior::fit(data, oracle::random_hyp(2, rng));
  const HyperparamSampleSet one({post});
  Rng r1(3), r2(3);
  const auto est = elbo(vp, one, 200, r1);
  const auto q = expected_log_joint(vp, post, false, true);
  const double h = entropy_mc(vp, 200, r2, false).value;
  CHECK(est.g_mean == doctest::Approx(q.mean));
  CHECK(est.elbo_mean == doctest::Approx(q.mean + h));
  CHECK(est.elbo_sd == doctest::Approx(std::sqrt(q.variance)));
  CHECK(elcbo(est, 0) == est.elbo_mean);
  CHECK(elcbo(est, kDefaultBetaLCB) <= est.elbo_mean);
  CHECK(elcbo(est, kDefaultBetaLCB) == doctest::Approx(est.elbo_mean - 3 * est.elbo_sd));
  CHECK(kFallbackBetaLCB == 5.0);
  CHECK_THROWS_AS(elcbo(est, -1), std::invalid_argument);

  // two identical samples: marginal equals single-sample result
  const HyperparamSampleSet two({post, post});
  const auto m = marginal_expected_log_joint(vp, two, false, true);
  CHECK(m.mean == doctest::Approx(q.mean));
  CHECK(m.variance == doctest::Approx(q.variance));
}
