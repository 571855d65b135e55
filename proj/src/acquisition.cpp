#include "vbmc/acquisition.hpp"

#include <algorithm>
#include <numeric>

namespace vbmc {

AcquisitionKind parse_acquisition(const std::string& name) {
  if (name == "us") return AcquisitionKind::kUncertainty;
  if (name == "pro") return AcquisitionKind::kProspective;
  throw std::invalid_argument("unknown acquisition '" + name + "' (expected us or pro)");
}

std::string to_string(AcquisitionKind kind) {
  return kind == AcquisitionKind::kUncertainty ? "us" : "pro";
}

AcquisitionContext make_acquisition_context(const HyperparamSampleSet& samples,
                                            const VariationalPosterior& vp, AcquisitionKind kind,
                                            double margin) {
  AcquisitionContext ctx;
  ctx.samples = &samples;
  ctx.vp = &vp;
  ctx.kind = kind;
  const Matrix& X = samples.data().X;
  ctx.lower = X.colwise().minCoeff().transpose().array() - margin;
  ctx.upper = X.colwise().maxCoeff().transpose().array() + margin;
  return ctx;
}

double a_us(const AcquisitionContext& ctx, const Vector& x) {
  const double v = ctx.samples->marginal_predict(x).variance;
  const double q = std::exp(ctx.vp->logpdf(x));
  return v * q * q;
}

double a_pro(const AcquisitionContext& ctx, const Vector& x) {
  const Prediction p = ctx.samples->marginal_predict(x);
  return p.variance * std::exp(ctx.vp->logpdf(x)) * std::exp(p.mean);
}

double log_regularization(double variance, double floor) {
  if (variance >= floor) return 0.0;
  if (!(variance > 0)) return -kInf;
  return -(floor / variance - 1.0);
}

double regularize(double value, double variance, double floor) {
  if (variance < 0) throw std::invalid_argument("regularize: negative variance");
  return value * std::exp(log_regularization(variance, floor));
}

Vector log_acquisition(const AcquisitionContext& ctx, const Matrix& xs) {
  Vector mean, var;
  ctx.samples->marginal_predict(xs, mean, var);
  const Vector lq = ctx.vp->logpdf(xs);
  Vector out(xs.rows());
  for (Eigen::Index i = 0; i < xs.rows(); ++i) {
    if (!(var[i] > 0)) {
      out[i] = -kInf;
      continue;
    }
    double la = std::log(var[i]);
    la += ctx.kind == AcquisitionKind::kUncertainty ? 2.0 * lq[i] : lq[i] + mean[i];
    out[i] = la + log_regularization(var[i], ctx.variance_floor);
    if (std::isnan(out[i])) out[i] = -kInf;
  }
  return out;
}

double log_acquisition(const AcquisitionContext& ctx, const Vector& x) {
  return log_acquisition(ctx, Matrix(x.transpose()))[0];
}

AcquisitionResult optimize_acquisition(const AcquisitionContext& ctx, Rng& rng,
                                       const AcquisitionOptions& options) {
  const TrainingSet& data = ctx.samples->data();
  const int D = static_cast<int>(ctx.lower.size());
  const VariationalPosterior& vp = *ctx.vp;

  // seeds: uniform over the box, component means, posterior draws
  const Eigen::Index n_seeds = options.n_uniform_seeds + vp.components() + options.n_posterior_seeds;
  Matrix seeds(n_seeds, D);
  Eigen::Index row = 0;
  for (int s = 0; s < options.n_uniform_seeds; ++s, ++row) {
    for (int i = 0; i < D; ++i) seeds(row, i) = rng.uniform(ctx.lower[i], ctx.upper[i]);
  }
  for (int k = 0; k < vp.components(); ++k, ++row) seeds.row(row) = vp.means().col(k).transpose();
  if (options.n_posterior_seeds > 0) {
    seeds.bottomRows(options.n_posterior_seeds) = vp.sample(options.n_posterior_seeds, rng);
  }
  for (Eigen::Index r = 0; r < n_seeds; ++r) {
    seeds.row(r) = seeds.row(r).cwiseMax(ctx.lower.transpose()).cwiseMin(ctx.upper.transpose());
  }
  const Vector seed_values = log_acquisition(ctx, seeds);

  auto usable = [&](const Vector& x) {
    return data.min_squared_distance(x) > kDuplicateTolerance;
  };

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n_seeds));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return seed_values[a] > seed_values[b]; });

  AcquisitionResult best;
  for (auto r : order) {
    if (!std::isfinite(seed_values[r])) break;
    const Vector x = seeds.row(r).transpose();
    if (usable(x)) {
      best.x = x;
      best.log_value = seed_values[r];
      break;
    }
  }
  if (!std::isfinite(best.log_value)) {
    throw NumericalError("acquisition: every candidate is fully regularized");
  }

  // step size from the spread of the posterior, bounded by the box
  const GaussianMoments m = vp.moments();
  const double spread = std::sqrt(m.cov.diagonal().mean());
  const double box = (ctx.upper - ctx.lower).minCoeff();
  const double sigma0 = std::clamp(spread, 1e-3, 0.25 * box);

  BatchObjective objective = [&](const Matrix& xs) {
    Vector v = log_acquisition(ctx, xs);
    for (Eigen::Index i = 0; i < xs.rows(); ++i) {
      if (std::isfinite(v[i]) && !usable(xs.row(i).transpose())) v[i] = -kInf;
    }
    return v;
  };
  const CmaesResult res =
      cmaes_maximize(objective, best.x, sigma0, ctx.lower, ctx.upper, options.cmaes, rng);
  if (res.value > best.log_value && usable(res.x)) {
    best.x = res.x;
    best.log_value = res.value;
  }
  return best;
}

}  // namespace vbmc
