#include "oracles.hpp"
#include "vbmc/benchmark.hpp"

#include <doctest.h>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <Eigen/Cholesky>

#include <cstdlib>

using namespace vbmc;

namespace {

struct GridTruth {
  double lml;
  Vector mean;
};

// Trapezoid-free midpoint grid in the eigenbasis of the stored posterior
// covariance, so thin problems are resolved along their short axis.
GridTruth grid_truth_2d(const SyntheticProblem& p, int n = 600, double half_width = 9.0) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(p.posterior.cov);
  const Matrix A = es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal();
  const double jac = std::abs(A.determinant());
  const double h = 2 * half_width / n;
  // shift by the log joint at the mode estimate to avoid underflow
  const double shift = p.log_joint(p.posterior.mean);
  double z = 0;
  Vector m = Vector::Zero(2);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const Vector u = (Vector(2) << -half_width + (i + 0.5) * h, -half_width + (j + 0.5) * h).finished();
      const Vector x = p.posterior.mean + A * u;
      const double w = std::exp(p.log_joint(x) - shift) * h * h * jac;
      z += w;
      m += w * x;
    }
  }
  return {std::log(z) + shift, m / z};
}

double log_normal_pdf(const Vector& x, const GaussianMoments& g) {
  const Eigen::LLT<Matrix> llt(g.cov);
  const Vector r = llt.matrixL().solve(x - g.mean);
  return -0.5 * r.squaredNorm() - Matrix(llt.matrixL()).diagonal().array().log().sum() -
         0.5 * static_cast<double>(x.size()) * kLog2Pi;
}

BenchmarkRecord sample_record() {
  BenchmarkRecord r;
  r.problem_id = "lumpy-D2-s1";
  r.family = Family::kLumpy;
  r.dim = 2;
  r.seed = 7;
  r.acquisition = "pro";
  r.budget = 200;
  r.completed = true;
  r.lml_true = -3.25;
  r.elbo_mean = -3.2;
  r.elbo_sd = 0.01;
  r.lml_error = 0.05;
  r.gskl = std::numeric_limits<double>::quiet_NaN();
  r.iterations = 12;
  r.evaluations = 65;
  r.checkpoints.push_back({1, 10, -4.0, 0.5, 0.75, 0.3});
  return r;
}

}  // namespace

TEST_CASE("lumpy problem") {
  const auto p = make_lumpy(2, 1);
  CHECK(p.mix_weights.size() == kLumpyComponents);
  CHECK(p.mix_weights.sum() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK((p.mix_weights.array() > 0).all());
  CHECK(p.id() == "lumpy-D2-s1");
  const auto g = grid_truth_2d(p);
  CHECK(std::abs(g.lml - p.lml) < 1e-4);
  CHECK((g.mean - p.posterior.mean).cwiseAbs().maxCoeff() < 1e-4 * std::sqrt(p.posterior.cov.trace()));
  // same seed, same instance
  CHECK((make_lumpy(2, 1).mix_means.array() == p.mix_means.array()).all());
  CHECK((make_lumpy(2, 2).mix_means.array() != p.mix_means.array()).any());
}

TEST_CASE("student problem") {
  const auto p = make_student(2);
  CHECK(p.dof[0] == doctest::Approx(2.5));
  CHECK(p.dof[1] == doctest::Approx(3.0));
  CHECK(p.id() == "student-D2");
  const auto p6 = make_student(6);
  CHECK(p6.dof[0] == doctest::Approx(2.5));
  CHECK(p6.dof[5] == doctest::Approx(5.0));

  // likelihood factorizes into Student-t densities
  Rng rng(3);
  for (int s = 0; s < 10; ++s) {
    const Vector x = 2 * rng.normal_vector(6);
    double ref = 0;
    for (int i = 0; i < 6; ++i) {
      ref += std::log(boost::math::pdf(boost::math::students_t_distribution<double>(p6.dof[i]), x[i]));
    }
    CHECK(p6.log_likelihood(x) == doctest::Approx(ref).epsilon(1e-12));
  }

  // per-dimension evidence and moments by Gauss-Kronrod
  boost::math::quadrature::gauss_kronrod<double, 61> gk;
  double lml = 0;
  for (int i = 0; i < 6; ++i) {
    const double nu = p6.dof[i], s = p6.prior_sd[i], m = p6.prior_mean[i];
    auto f = [&](double x, int k) {
      const double lik = boost::math::pdf(boost::math::students_t_distribution<double>(nu), x);
      return std::pow(x, k) * lik * std::exp(-0.5 * (x - m) * (x - m) / (s * s)) / (s * std::sqrt(2 * M_PI));
    };
    const double z = gk.integrate([&](double x) { return f(x, 0); }, -kInf, kInf, 15, 1e-13);
    const double m1 = gk.integrate([&](double x) { return f(x, 1); }, -kInf, kInf, 15, 1e-13) / z;
    const double m2 = gk.integrate([&](double x) { return f(x, 2); }, -kInf, kInf, 15, 1e-13) / z;
    lml += std::log(z);
    CHECK(p6.posterior.mean[i] == doctest::Approx(m1).epsilon(1e-8).scale(1));
    CHECK(p6.posterior.cov(i, i) == doctest::Approx(m2 - m1 * m1).epsilon(1e-7));
  }
  CHECK(p6.lml == doctest::Approx(lml).epsilon(1e-9));

  // brute Monte Carlo over the prior for the first dimension
  {
    const int n = 2000000;
    Rng mc(11);
    const boost::math::students_t_distribution<double> t(p6.dof[0]);
    double sum = 0, sum2 = 0;
    for (int s = 0; s < n; ++s) {
      const double v = boost::math::pdf(t, p6.prior_mean[0] + p6.prior_sd[0] * mc.normal());
      sum += v;
      sum2 += v * v;
    }
    const double mean = sum / n, se = std::sqrt((sum2 / n - mean * mean) / n);
    const double s0 = p6.prior_sd[0], m0 = p6.prior_mean[0];
    const double z0 = gk.integrate(
        [&](double x) {
          return boost::math::pdf(t, x) * std::exp(-0.5 * (x - m0) * (x - m0) / (s0 * s0)) / (s0 * std::sqrt(2 * M_PI));
        },
        -kInf, kInf, 15, 1e-13);
    CHECK(std::abs(mean - z0) < 5 * se);
  }
  CHECK((p6.posterior.cov - Matrix(p6.posterior.cov.diagonal().asDiagonal())).norm() == 0.0);
}

TEST_CASE("cigar problem") {
  const auto p = make_cigar(6, 1);
  CHECK(p.id() == "cigar-D6-s1");
  Eigen::SelfAdjointEigenSolver<Matrix> es(p.lik_cov);
  CHECK(es.eigenvalues().maxCoeff() / es.eigenvalues().minCoeff() == doctest::Approx(1e4).epsilon(1e-8));
  CHECK((p.rotation.transpose() * p.rotation - Matrix::Identity(6, 6)).norm() < 1e-12);
  CHECK_THROWS_AS(make_cigar(1, 1), std::invalid_argument);

  // Gaussian conjugacy by dense inverses
  const Matrix prior_cov = p.prior_sd.cwiseAbs2().asDiagonal();
  const Matrix prec = p.lik_cov.fullPivLu().inverse() + Matrix(prior_cov.fullPivLu().inverse());
  const Matrix cov = prec.fullPivLu().inverse();
  const Vector mean = cov * (prior_cov.fullPivLu().inverse() * p.prior_mean);
  CHECK((cov - p.posterior.cov).cwiseAbs().maxCoeff() < 1e-10 * cov.cwiseAbs().maxCoeff());
  CHECK((mean - p.posterior.mean).cwiseAbs().maxCoeff() < 1e-10 * std::sqrt(cov.diagonal().maxCoeff()));

  // the posterior is exactly Gaussian, so log joint - log posterior is the evidence everywhere
  Rng rng(4);
  for (int s = 0; s < 20; ++s) {
    const Eigen::LLT<Matrix> llt(p.posterior.cov);
    const Vector x = p.posterior.mean + llt.matrixL() * rng.normal_vector(6);
    CHECK(p.log_joint(x) - log_normal_pdf(x, p.posterior) == doctest::Approx(p.lml).epsilon(1e-10));
  }

  const auto p2 = make_cigar(2, 3);
  const auto g = grid_truth_2d(p2);
  CHECK(std::abs(g.lml - p2.lml) < 1e-4);
}

TEST_CASE("lumpy evidence in higher dimension by importance sampling") {
  const auto p = make_lumpy(6, 1);
  GaussianMoments proposal = p.posterior;
  proposal.cov *= 2.0;
  const Eigen::LLT<Matrix> llt(proposal.cov);
  Rng rng(5);
  const int n = 200000;
  std::vector<double> lw(n);
  for (int s = 0; s < n; ++s) {
    const Vector x = proposal.mean + llt.matrixL() * rng.normal_vector(6);
    lw[s] = p.log_joint(x) - log_normal_pdf(x, proposal);
  }
  const double mx = *std::max_element(lw.begin(), lw.end());
  double sum = 0, sum2 = 0;
  for (double v : lw) {
    sum += std::exp(v - mx);
    sum2 += std::exp(2 * (v - mx));
  }
  const double mean = sum / n;
  const double se = std::sqrt(sum2 / n - mean * mean) / std::sqrt(static_cast<double>(n)) / mean;
  const double ess = sum * sum / sum2;
  MESSAGE("importance sampling effective sample size: ", ess, " of ", n);
  CHECK(ess > 0.05 * n);
  CHECK(se < 0.01);
  CHECK(std::abs(std::log(mean) + mx - p.lml) < 5 * se + 1e-3);
}

TEST_CASE("metrics") {
  const auto p = make_cigar(3, 2);
  CHECK(metric_lml_error(p.lml + 0.3, p) == doctest::Approx(0.3));
  CHECK(metric_lml_error(p.lml - 0.3, p) == doctest::Approx(0.3));
  CHECK(metric_gskl(p.posterior, p) == doctest::Approx(0.0).scale(1));
  // a one-Mahalanobis-unit mean shift gives 0.5
  GaussianMoments shifted = p.posterior;
  const Eigen::LLT<Matrix> llt(p.posterior.cov);
  shifted.mean += llt.matrixL() * Vector::Unit(3, 0);
  CHECK(metric_gskl(shifted, p) == doctest::Approx(0.5).epsilon(1e-9));

  const auto box = start_box(p);
  CHECK((box.upper - box.lower - 2 * p.prior_sd).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("seed streams and bootstrap") {
  CHECK(run_stream_seed(0, "lumpy-D2-s1", 3) == run_stream_seed(0, "lumpy-D2-s1", 3));
  CHECK(run_stream_seed(0, "lumpy-D2-s1", 3) != run_stream_seed(0, "lumpy-D2-s1", 4));
  CHECK(run_stream_seed(0, "lumpy-D2-s1", 3) != run_stream_seed(0, "lumpy-D6-s1", 3));
  CHECK(run_stream_seed(0, "lumpy-D2-s1", 3) != run_stream_seed(1, "lumpy-D2-s1", 3));

  const std::vector<double> v{5, 1, 4, 2, 3};
  const auto a = bootstrap_median(v, 1000, 9), b = bootstrap_median(v, 1000, 9);
  CHECK(a.median == 3.0);
  CHECK(a.lower == b.lower);
  CHECK(a.upper == b.upper);
  CHECK(a.lower <= a.median);
  CHECK(a.upper >= a.median);
  CHECK(a.lower >= 1.0);
  CHECK(a.upper <= 5.0);
  CHECK(bootstrap_median({1, 2, 3, 4}, 10, 0).median == 2.5);
}

TEST_CASE("records and summaries") {
  const auto r = sample_record();
  const auto back = record_from_json(Json::parse(to_json(r).dump()));
  CHECK(back.problem_id == r.problem_id);
  CHECK(back.elbo_mean == r.elbo_mean);
  CHECK(std::isnan(back.gskl));
  CHECK(back.checkpoints.size() == 1);
  CHECK(back.checkpoints[0].lml_error == 0.75);
  CHECK(to_json(back).dump() == to_json(r).dump());

  std::vector<BenchmarkRecord> rs;
  for (int i = 0; i < 5; ++i) {
    auto x = sample_record();
    x.seed = i;
    x.lml_error = 0.1 * i;
    x.gskl = 0.2 * i;
    rs.push_back(x);
  }
  rs[4].gskl = std::numeric_limits<double>::quiet_NaN();
  auto failed = sample_record();
  failed.completed = false;
  failed.error = "boom";
  rs.push_back(failed);
  auto other = sample_record();
  other.dim = 6;
  rs.push_back(other);
  const auto rows = summarize(rs, 200, 1);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].dim == 2);
  CHECK(rows[0].runs == 6);
  CHECK(rows[0].completed == 5);
  CHECK(rows[0].lml_error.median == doctest::Approx(0.2));
  CHECK(rows[0].gskl.median == doctest::Approx(0.4));
}

TEST_CASE("benchmark runs are reproducible across worker counts") {
  BenchmarkConfig c;
  c.families = {Family::kLumpy, Family::kStudent};
  c.dims = {1};
  c.seeds = {0, 1};
  c.budget_multiplier = 8;
  c.record_wall_time = false;
  std::vector<std::string> serial, parallel;
  c.workers = 1;
  run_benchmark(c, [&](const BenchmarkRecord& r) { serial.push_back(to_json(r).dump()); });
  c.workers = 2;
  run_benchmark(c, [&](const BenchmarkRecord& r) { parallel.push_back(to_json(r).dump()); });
  CHECK(serial.size() == 4);
  CHECK(serial == parallel);
  const auto first = record_from_json(Json::parse(serial[0]));
  CHECK(first.completed);
  CHECK(first.budget == 24);
  CHECK(first.evaluations <= 24);
  CHECK(!first.checkpoints.empty());

  setenv("VBMC_WORKERS", "3", 1);
  CHECK(worker_count_from_env() == 3);
  unsetenv("VBMC_WORKERS");
  CHECK(worker_count_from_env() == 1);
  CHECK(BenchmarkConfig{}.options.budget(6) == 400);
}
