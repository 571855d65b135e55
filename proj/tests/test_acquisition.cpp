#include "oracles.hpp"
#include "vbmc/acquisition.hpp"

#include <doctest.h>

using namespace vbmc;

namespace {

struct GapFixture {
  HyperparamSampleSet samples;
  VariationalPosterior vp;
};

// Dense 1-D data on both sides of the origin with a hole in (-0.5, 0.5).
GapFixture gap_fixture() {
  auto data = std::make_shared<TrainingSet>();
  std::vector<double> xs;
  for (double x = -2.0; x <= -0.5 + 1e-9; x += 0.1) xs.push_back(x);
  for (double x = 0.5; x <= 2.0 + 1e-9; x += 0.1) xs.push_back(x);
  data->X.resize(static_cast<Eigen::Index>(xs.size()), 1);
  data->y.resize(static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    data->X(static_cast<Eigen::Index>(i), 0) = xs[i];
    data->y[static_cast<Eigen::Index>(i)] = -0.5 * xs[i] * xs[i];
  }
  GPHyperparams h(1);
  h.values() << std::log(0.3), 0.0, std::log(1e-3), 0.0, 0.0, std::log(1.0);
  std::shared_ptr<const TrainingSet> d = data;
  return {HyperparamSampleSet({GPPosterior::fit(d, h)}),
          VariationalPosterior(Vector::Ones(1), Matrix::Zero(1, 1), Vector::Ones(1), Vector::Ones(1))};
}

}  // namespace

TEST_CASE("regularization") {
  const double floor = kDefaultVarianceFloor;
  CHECK(floor == 1e-4);
  CHECK(regularize(2.0, floor) == doctest::Approx(2.0));
  CHECK(regularize(2.0, floor / 2) == doctest::Approx(2.0 / M_E));
  CHECK(regularize(2.0, 0.3) == 2.0);
  CHECK(regularize(2.0, 0.0) == 0.0);
  CHECK(regularize(2.0, floor * 0.1) < 2.0);
}

TEST_CASE("acquisition values") {
  auto f = gap_fixture();
  auto ctx_us = make_acquisition_context(f.samples, f.vp, AcquisitionKind::kUncertainty);
  auto ctx_pro = make_acquisition_context(f.samples, f.vp, AcquisitionKind::kProspective);
  CHECK(ctx_us.lower[0] == doctest::Approx(-5.0));
  CHECK(ctx_us.upper[0] == doctest::Approx(5.0));
  // far outside the posterior q underflows
  CHECK(a_us(ctx_us, Vector::Constant(1, 60.0)) == 0.0);
  for (double x = -2.5; x <= 2.5; x += 0.05) {
    const Vector v = Vector::Constant(1, x);
    const double var = f.samples.marginal_predict(v).variance;
    for (auto* ctx : {&ctx_us, &ctx_pro}) {
      const double lin = ctx->kind == AcquisitionKind::kUncertainty ? a_us(*ctx, v) : a_pro(*ctx, v);
      CHECK(lin >= 0);
      const double reg = regularize(lin, var);
      const double lg = log_acquisition(*ctx, v);
      if (reg > 0 && std::isfinite(lg)) CHECK(std::abs(lg - std::log(reg)) < 1e-10 * std::max(1.0, std::abs(lg)));
      CHECK(reg <= lin);
    }
  }
  // higher mean wins for equal variance and density
  GPHyperparams hi = f.samples[0].hyp();
  hi.values()[GPHyperparams::idx_m0(1)] += 1.0;
  const HyperparamSampleSet shifted({GPPosterior::fit(f.samples.data_ptr(), hi)});
  auto ctx_hi = make_acquisition_context(shifted, f.vp, AcquisitionKind::kProspective);
  const Vector probe = Vector::Constant(1, 0.05);
  CHECK(a_pro(ctx_hi, probe) > a_pro(ctx_pro, probe));
}

TEST_CASE("optimizer finds the variance gap") {
  auto f = gap_fixture();
  const auto ctx = make_acquisition_context(f.samples, f.vp, AcquisitionKind::kUncertainty);
  Rng rng(1);
  const auto res = optimize_acquisition(ctx, rng);
  // dense grid oracle
  double best_x = 0, best = -kInf;
  for (double x = ctx.lower[0]; x <= ctx.upper[0]; x += 1e-4) {
    const double v = log_acquisition(ctx, Vector(Vector::Constant(1, x)));
    if (v > best) {
      best = v;
      best_x = x;
    }
  }
  CHECK(std::abs(best_x) < 0.5);
  CHECK(std::abs(res.x[0]) < 0.5);
  CHECK(res.log_value >= best - 1e-6);

  Rng probe_rng(2);
  double probe_best = -kInf;
  for (int i = 0; i < 1000; ++i) {
    probe_best = std::max(probe_best, log_acquisition(ctx, Vector(Vector::Constant(1, probe_rng.uniform(ctx.lower[0], ctx.upper[0])))));
  }
  CHECK(res.log_value >= probe_best - 1e-9);
}

TEST_CASE("batch selection gives distinct points and shrinks variance") {
  Rng rng(3);
  const TrainingSet t = oracle::random_training_set(12, 2, rng, 1.0);
  GPHyperparams h = oracle::random_hyp(2, rng);
  HyperparamSampleSet samples({GPPosterior::fit(t, h), GPPosterior::fit(t, oracle::random_hyp(2, rng))});
  const auto vp = oracle::random_vp(2, 2, rng, 0.5);
  std::vector<Vector> picked;
  for (int b = 0; b < 5; ++b) {
    const auto ctx = make_acquisition_context(samples, vp, AcquisitionKind::kProspective);
    const auto res = optimize_acquisition(ctx, rng);
    CHECK(samples.data().min_squared_distance(res.x) > kDuplicateTolerance);
    const double before = samples.marginal_predict(res.x).variance;
    samples.add_point(res.x, -0.5 * res.x.squaredNorm());
    CHECK(samples.marginal_predict(res.x).variance < before);
    for (const auto& p : picked) CHECK((p - res.x).squaredNorm() > kDuplicateTolerance);
    picked.push_back(res.x);
  }
  CHECK(samples.data().size() == 17);
}

TEST_CASE("parse names") {
  CHECK(parse_acquisition("us") == AcquisitionKind::kUncertainty);
  CHECK(parse_acquisition("pro") == AcquisitionKind::kProspective);
  CHECK(to_string(AcquisitionKind::kProspective) == "pro");
  CHECK_THROWS_AS(parse_acquisition("ei"), std::invalid_argument);
}
