#include "vbmc/variational_posterior.hpp"

#include <boost/math/policies/policy.hpp>
#include <boost/math/special_functions/erf.hpp>

#include <algorithm>
#include <numeric>
#include <vector>

namespace vbmc {

namespace {

constexpr double kMinLogWeight = -700.0;

using NoPromotion = boost::math::policies::policy<boost::math::policies::promote_double<false>>;

// log N(x; mu, s^2 diag(lambda^2)) for every component; out has K entries.
void component_logpdfs(const VariationalPosterior& vp, const Vector& x, Vector& out) {
  const int K = vp.components();
  const int D = vp.dim();
  const double log_lambda_sum = vp.lambda().array().log().sum();
  out.resize(K);
  for (int k = 0; k < K; ++k) {
    const double s = vp.sigma()[k];
    const double r2 =
        ((x - vp.means().col(k)).array() / vp.lambda().array()).square().sum() / (s * s);
    out[k] = -0.5 * r2 - D * std::log(s) - log_lambda_sum - 0.5 * D * kLog2Pi;
  }
}

}  // namespace

VariationalPosterior::VariationalPosterior(Vector w, Matrix mu, Vector sigma, Vector lambda)
    : w_(std::move(w)), mu_(std::move(mu)), sigma_(std::move(sigma)), lambda_(std::move(lambda)) {
  validate();
  w_ /= w_.sum();
}

void VariationalPosterior::validate() const {
  const auto K = mu_.cols();
  if (K < 1 || mu_.rows() < 1) throw std::invalid_argument("vp: need K >= 1 and D >= 1");
  if (w_.size() != K || sigma_.size() != K || lambda_.size() != mu_.rows()) {
    throw std::invalid_argument("vp: inconsistent parameter lengths");
  }
  if ((w_.array() < 0).any() || !(w_.sum() > 0) || !w_.allFinite()) {
    throw std::invalid_argument("vp: weights must be non-negative with positive sum");
  }
  if (!(sigma_.array() > 0).all() || !(lambda_.array() > 0).all() || !sigma_.allFinite() ||
      !lambda_.allFinite() || !mu_.allFinite()) {
    throw std::invalid_argument("vp: scales must be positive and finite");
  }
}

double VariationalPosterior::logpdf(const Vector& x) const {
  Vector lc;
  component_logpdfs(*this, x, lc);
  lc.array() += w_.array().log();
  return log_sum_exp(lc);
}

Vector VariationalPosterior::logpdf(const Matrix& xs) const {
  Vector out(xs.rows());
  for (Eigen::Index i = 0; i < xs.rows(); ++i) out[i] = logpdf(Vector(xs.row(i).transpose()));
  return out;
}

Matrix VariationalPosterior::sample(Eigen::Index n, Rng& rng) const {
  const int D = dim();
  Matrix out(n, D);
  std::vector<double> cdf(static_cast<std::size_t>(components()));
  double acc = 0;
  for (int k = 0; k < components(); ++k) cdf[static_cast<std::size_t>(k)] = (acc += w_[k]);
  for (Eigen::Index s = 0; s < n; ++s) {
    const double u = rng.uniform() * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const int k = std::min<int>(static_cast<int>(it - cdf.begin()), components() - 1);
    for (int i = 0; i < D; ++i) out(s, i) = mu_(i, k) + sigma_[k] * lambda_[i] * rng.normal();
  }
  return out;
}

GaussianMoments VariationalPosterior::moments() const {
  GaussianMoments m;
  m.mean = mu_ * w_;
  const int D = dim();
  m.cov = Matrix::Zero(D, D);
  const Vector lam2 = lambda_.cwiseAbs2();
  for (int k = 0; k < components(); ++k) {
    const Vector d = mu_.col(k) - m.mean;
    m.cov += w_[k] * (d * d.transpose());
    m.cov.diagonal() += w_[k] * sigma_[k] * sigma_[k] * lam2;
  }
  return m;
}

Vector VariationalPosterior::to_vector() const {
  const int K = components();
  const int D = dim();
  Vector t(param_count(K, D));
  for (int k = 0; k < K; ++k) t.segment(off_mu(k, D), D) = mu_.col(k);
  for (int k = 0; k < K; ++k) {
    t[off_log_sigma(K, D, k)] = std::log(sigma_[k]);
    t[off_eta(K, D, k)] = w_[k] > 0 ? std::max(std::log(w_[k]), kMinLogWeight) : kMinLogWeight;
  }
  for (int i = 0; i < D; ++i) t[off_log_lambda(K, D, i)] = std::log(lambda_[i]);
  return t;
}

VariationalPosterior VariationalPosterior::from_vector(const Vector& theta, int K, int D) {
  if (K < 1 || D < 1 || theta.size() != param_count(K, D)) {
    throw std::invalid_argument("vp: parameter vector has wrong length");
  }
  Matrix mu(D, K);
  Vector sigma(K), eta(K), lambda(D);
  for (int k = 0; k < K; ++k) {
    mu.col(k) = theta.segment(off_mu(k, D), D);
    sigma[k] = std::exp(theta[off_log_sigma(K, D, k)]);
    eta[k] = theta[off_eta(K, D, k)];
  }
  for (int i = 0; i < D; ++i) lambda[i] = std::exp(theta[off_log_lambda(K, D, i)]);
  Vector w = (eta.array() - eta.maxCoeff()).exp();
  return VariationalPosterior(w / w.sum(), std::move(mu), std::move(sigma), std::move(lambda));
}

VariationalPosterior VariationalPosterior::without_component(int k) const {
  const int K = components();
  if (K <= 1) throw std::invalid_argument("vp: cannot remove the only component");
  Matrix mu(dim(), K - 1);
  Vector w(K - 1), s(K - 1);
  for (int j = 0, c = 0; j < K; ++j) {
    if (j == k) continue;
    mu.col(c) = mu_.col(j);
    w[c] = w_[j];
    s[c] = sigma_[j];
    ++c;
  }
  if (!(w.sum() > 0)) w.setConstant(1.0);
  return VariationalPosterior(w, mu, s, lambda_);
}

VariationalPosterior VariationalPosterior::with_component(double weight, const Vector& mu,
                                                          double sigma) const {
  const int K = components();
  Matrix m(dim(), K + 1);
  m.leftCols(K) = mu_;
  m.col(K) = mu;
  Vector w(K + 1), s(K + 1);
  w.head(K) = w_;
  w[K] = weight;
  s.head(K) = sigma_;
  s[K] = sigma;
  return VariationalPosterior(w, m, s, lambda_);
}

Matrix draw_entropy_noise(int n_samples, int K, int D, Rng& rng) {
  // Latin hypercube per component and dimension: each of the n_samples
  // equal-probability strata of N(0,1) gets exactly one draw.
  const Eigen::Index N = n_samples;
  Matrix eps(N * K, D);
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(N));
  for (int k = 0; k < K; ++k) {
    for (int i = 0; i < D; ++i) {
      std::iota(perm.begin(), perm.end(), Eigen::Index{0});
      for (std::size_t j = perm.size(); j > 1; --j) std::swap(perm[j - 1], perm[rng.index(j)]);
      for (Eigen::Index s = 0; s < N; ++s) {
        double u = (static_cast<double>(perm[static_cast<std::size_t>(s)]) + rng.uniform()) / static_cast<double>(N);
        u = std::clamp(u, 1e-300, 1.0 - 1e-16);
        eps(s * K + k, i) = -M_SQRT2 * boost::math::erfc_inv(2.0 * u, NoPromotion());
      }
    }
  }
  return eps;
}

EntropyEstimate entropy_mc(const VariationalPosterior& vp, const Matrix& eps, bool with_gradient) {
  const int K = vp.components();
  const int D = vp.dim();
  if (eps.cols() != D || eps.rows() % K != 0 || eps.rows() == 0) {
    throw std::invalid_argument("entropy_mc: noise matrix has wrong shape");
  }
  const auto N = eps.rows() / K;
  const Vector& w = vp.weights();
  const Vector& sigma = vp.sigma();
  const Vector& lambda = vp.lambda();
  const Vector log_w = w.array().log();

  EntropyEstimate out;
  // gradient of S = sum_k w_k/N sum_s log q(xi_sk); H = -S
  Vector gS;
  if (with_gradient) gS = Vector::Zero(vp.param_count());
  Vector mean_logq = Vector::Zero(K);

  const Vector inv_lam2 = lambda.cwiseAbs2().cwiseInverse();
  const Vector inv_s2 = sigma.cwiseAbs2().cwiseInverse();
  const Vector log_norm = -static_cast<double>(D) * sigma.array().log() - lambda.array().log().sum() -
                          0.5 * D * kLog2Pi + log_w.array();
  using Strided = Eigen::Map<const Matrix, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;
  std::vector<Matrix> dx(static_cast<std::size_t>(K));  // xi - mu_l, N x D
  Matrix xi(N, D), lc(N, K), r(N, K), grad_xi(N, D);
  Vector lq(N);
  for (int k = 0; k < K; ++k) {
    // rows k, k + K, k + 2K, ... belong to component k
    const Strided e(eps.data() + k, N, D, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(eps.rows(), K));
    xi = (e * (sigma[k] * lambda).asDiagonal()).rowwise() + vp.means().col(k).transpose();
    for (int l = 0; l < K; ++l) {
      auto& d = dx[static_cast<std::size_t>(l)];
      d = xi.rowwise() - vp.means().col(l).transpose();
      lc.col(l) = (log_norm[l] - 0.5 * inv_s2[l] * (d.array().square().matrix() * inv_lam2).array()).matrix();
    }
    const Vector row_max = lc.rowwise().maxCoeff();
    lq = row_max.array() + (lc.colwise() - row_max).array().exp().rowwise().sum().log();
    mean_logq[k] += lq.sum();
    if (!with_gradient || w[k] == 0) continue;

    r = (lc.colwise() - lq).array().exp().matrix();
    const double c = w[k] / static_cast<double>(N);
    grad_xi.setZero();
    for (int l = 0; l < K; ++l) {
      const auto& d = dx[static_cast<std::size_t>(l)];
      const Vector scale = inv_lam2 * inv_s2[l];
      // r-weighted sums over samples of (xi - mu_l) and its square
      const Vector wd = d.transpose() * r.col(l);
      const Vector wd2 = d.array().square().matrix().transpose() * r.col(l);
      gS.segment(VariationalPosterior::off_mu(l, D), D) += c * wd.cwiseProduct(scale);
      const Vector q2r = wd2.cwiseProduct(scale);
      const double r_sum = r.col(l).sum();
      gS[VariationalPosterior::off_log_sigma(K, D, l)] += c * (q2r.sum() - D * r_sum);
      gS[VariationalPosterior::off_eta(K, D, l)] += c * (r_sum - N * w[l]);
      for (int i = 0; i < D; ++i) {
        gS[VariationalPosterior::off_log_lambda(K, D, i)] += c * (q2r[i] - r_sum);
      }
      grad_xi.noalias() -= (d.array().colwise() * r.col(l).array()).matrix() * scale.asDiagonal();
    }
    // dependence through xi
    const auto& dk = dx[static_cast<std::size_t>(k)];
    gS.segment(VariationalPosterior::off_mu(k, D), D) += c * grad_xi.colwise().sum().transpose();
    const Vector gd = (grad_xi.array() * dk.array()).colwise().sum().transpose();
    gS[VariationalPosterior::off_log_sigma(K, D, k)] += c * gd.sum();
    for (int i = 0; i < D; ++i) {
      gS[VariationalPosterior::off_log_lambda(K, D, i)] += c * gd[i];
    }
  }
  mean_logq /= static_cast<double>(N);
  const double S = w.dot(mean_logq);
  out.value = -S;
  if (with_gradient) {
    for (int j = 0; j < K; ++j) {
      gS[VariationalPosterior::off_eta(K, D, j)] += w[j] * (mean_logq[j] - S);
    }
    out.gradient = -gS;
  }
  return out;
}

EntropyEstimate entropy_mc(const VariationalPosterior& vp, int n_samples, Rng& rng,
                           bool with_gradient) {
  if (n_samples < 1) throw std::invalid_argument("entropy_mc: need at least one sample");
  return entropy_mc(vp, draw_entropy_noise(n_samples, vp.components(), vp.dim(), rng),
                    with_gradient);
}

double gaussian_skl(const GaussianMoments& a, const GaussianMoments& b) {
  const auto D = a.mean.size();
  if (b.mean.size() != D || a.cov.rows() != D || b.cov.rows() != D) {
    throw std::invalid_argument("gsKL: dimension mismatch");
  }
  Eigen::LLT<Matrix> la(a.cov), lb(b.cov);
  if (la.info() != Eigen::Success || lb.info() != Eigen::Success) {
    throw NumericalError("gsKL: moment covariance is not positive definite");
  }
  const Vector d = a.mean - b.mean;
  // KL(A||B) + KL(B||A): log-determinants cancel
  const double tr = lb.solve(a.cov).trace() + la.solve(b.cov).trace();
  const double quad = d.dot(lb.solve(d)) + d.dot(la.solve(d));
  return 0.25 * (tr + quad - 2.0 * static_cast<double>(D));
}

double gaussianized_skl(const VariationalPosterior& a, const VariationalPosterior& b) {
  return gaussian_skl(a.moments(), b.moments());
}

}  // namespace vbmc
