#include "vbmc/gp.hpp"

#include "vbmc/bfgs.hpp"

#include <algorithm>
#include <numbers>
#include <numeric>

namespace vbmc {

namespace {

// Cholesky of K with jitter escalation: none, then 1e-10 * trace/n, times 10
// up to five times.
bool factor_with_jitter(const Matrix& K, Eigen::LLT<Matrix>& llt, double& jitter) {
  jitter = 0.0;
  llt.compute(K);
  if (llt.info() == Eigen::Success) return true;
  const auto n = K.rows();
  double add = 1e-10 * K.trace() / static_cast<double>(n);
  if (!(add > 0)) add = 1e-10;
  for (int attempt = 0; attempt < 5; ++attempt, add *= 10) {
    Matrix Kj = K;
    Kj.diagonal().array() += add;
    llt.compute(Kj);
    if (llt.info() == Eigen::Success) {
      jitter = add;
      return true;
    }
  }
  return false;
}

// Squared Mahalanobis distances (diagonal, length scales ell) from every row
// of X to x.
Vector scaled_sqdist(const Matrix& X, const Vector& x, const Vector& ell) {
  return ((X.rowwise() - x.transpose()).array().rowwise() / ell.transpose().array())
      .square()
      .rowwise()
      .sum();
}

Matrix gram(const Matrix& X, const GPHyperparams& hyp) {
  const auto n = X.rows();
  const Vector ell = hyp.ell();
  const double sf2 = hyp.sigma_f2();
  Matrix K(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Vector x = X.row(j).transpose();
    K.col(j) = sf2 * (-0.5 * scaled_sqdist(X, x, ell)).array().exp();
  }
  const double sn = hyp.sigma_obs();
  K.diagonal().array() += sn * sn;
  return K;
}

Vector mean_at_rows(const Matrix& X, const GPHyperparams& hyp) {
  Vector m(X.rows());
  for (Eigen::Index p = 0; p < X.rows(); ++p) m[p] = nq_mean(X.row(p).transpose(), hyp);
  return m;
}

std::vector<Matrix> per_dimension_sqdist(const Matrix& X) {
  std::vector<Matrix> out;
  const auto n = X.rows();
  for (Eigen::Index d = 0; d < X.cols(); ++d) {
    Matrix S(n, n);
    for (Eigen::Index j = 0; j < n; ++j) S.col(j) = (X.col(d).array() - X(j, d)).square();
    out.push_back(std::move(S));
  }
  return out;
}

// Gradient of the log marginal likelihood given K^{-1} and alpha.
Vector lml_gradient(const TrainingSet& data, const std::vector<Matrix>& sqdist,
                    const Matrix& unit_kernel, const Matrix& Kinv, const Vector& alpha,
                    const GPHyperparams& hyp) {
  const int D = data.dim();
  Vector grad = Vector::Zero(GPHyperparams::count(D));
  const Matrix W = alpha * alpha.transpose() - Kinv;
  const double sf2 = hyp.sigma_f2();
  const Matrix WK = (W.array() * unit_kernel.array()).matrix() * sf2;
  const Vector ell = hyp.ell();
  for (int d = 0; d < D; ++d) {
    grad[GPHyperparams::idx_log_ell(d)] =
        0.5 * (WK.array() * sqdist[static_cast<std::size_t>(d)].array()).sum() / (ell[d] * ell[d]);
  }
  grad[GPHyperparams::idx_log_sigma_f(D)] = WK.sum();
  if (!hyp.sigma_obs_floored()) {
    const double sn = hyp.sigma_obs();
    grad[GPHyperparams::idx_log_sigma_obs(D)] = sn * sn * W.trace();
  }
  const Vector xm = hyp.x_m();
  const Vector om = hyp.omega();
  grad[GPHyperparams::idx_m0(D)] = alpha.sum();
  for (int d = 0; d < D; ++d) {
    const Vector dx = data.X.col(d).array() - xm[d];
    const double w2 = om[d] * om[d];
    grad[GPHyperparams::idx_x_m(D, d)] = alpha.dot(dx) / w2;
    grad[GPHyperparams::idx_log_omega(D, d)] = alpha.dot(dx.cwiseAbs2()) / w2;
  }
  return grad;
}

}  // namespace

GPHyperparams::GPHyperparams(int dim, Vector values) : dim_(dim), values_(std::move(values)) {
  if (values_.size() != count(dim)) {
    throw std::invalid_argument("GPHyperparams: expected 3D+3 values");
  }
}

TrainingSet TrainingSet::appended(const Vector& x, double value) const {
  TrainingSet out;
  out.X.resize(X.rows() + 1, x.size());
  if (X.rows() > 0) out.X.topRows(X.rows()) = X;
  out.X.row(X.rows()) = x.transpose();
  out.y.resize(y.size() + 1);
  out.y.head(y.size()) = y;
  out.y[y.size()] = value;
  return out;
}

double TrainingSet::min_squared_distance(const Vector& x) const {
  if (X.rows() == 0) return kInf;
  return (X.rowwise() - x.transpose()).rowwise().squaredNorm().minCoeff();
}

double se_kernel(const Vector& x, const Vector& xp, const GPHyperparams& hyp) {
  const Vector ell = hyp.ell();
  const double r2 = ((x - xp).array() / ell.array()).square().sum();
  return hyp.sigma_f2() * std::exp(-0.5 * r2);
}

double nq_mean(const Vector& x, const GPHyperparams& hyp) {
  const Vector xm = hyp.x_m();
  const Vector om = hyp.omega();
  return hyp.m0() - 0.5 * ((x - xm).array() / om.array()).square().sum();
}

std::atomic<long>& negative_variance_clamps() {
  static std::atomic<long> counter{0};
  return counter;
}

GPPosterior GPPosterior::fit(std::shared_ptr<const TrainingSet> data, const GPHyperparams& hyp) {
  if (data->size() > 0 && data->dim() != hyp.dim()) {
    throw std::invalid_argument("gp_fit: dimension mismatch");
  }
  GPPosterior post;
  post.data_ = std::move(data);
  post.hyp_ = hyp;
  const auto n = post.data_->size();
  if (n == 0) {
    post.L_.resize(0, 0);
    post.alpha_.resize(0);
    post.residual_.resize(0);
    return post;
  }
  Eigen::LLT<Matrix> llt;
  if (!factor_with_jitter(gram(post.data_->X, hyp), llt, post.jitter_)) {
    throw NumericalError("gp_fit: Gram matrix not positive definite after jitter escalation");
  }
  post.L_ = llt.matrixL();
  post.residual_ = post.data_->y - mean_at_rows(post.data_->X, hyp);
  post.compute_alpha();
  return post;
}

void GPPosterior::compute_alpha() {
  alpha_ = L_.triangularView<Eigen::Lower>().solve(residual_);
  L_.triangularView<Eigen::Lower>().adjoint().solveInPlace(alpha_);
}

Vector GPPosterior::solve_lower(const Vector& b) const {
  return L_.triangularView<Eigen::Lower>().solve(b);
}

Matrix GPPosterior::solve_lower(const Matrix& b) const {
  return L_.triangularView<Eigen::Lower>().solve(b);
}

Vector GPPosterior::cross_kernel(const Vector& x) const {
  if (data_->size() == 0) return Vector(0);
  return hyp_.sigma_f2() * (-0.5 * scaled_sqdist(data_->X, x, hyp_.ell())).array().exp();
}

Prediction GPPosterior::predict(const Vector& x) const {
  // single-row batch so both entry points round identically
  Vector mean, variance;
  predict(Matrix(x.transpose()), mean, variance);
  return {mean[0], variance[0]};
}

void GPPosterior::predict(const Matrix& xs, Vector& mean, Vector& variance) const {
  const auto m = xs.rows();
  mean.resize(m);
  variance.setConstant(m, hyp_.sigma_f2());
  for (Eigen::Index j = 0; j < m; ++j) mean[j] = nq_mean(xs.row(j).transpose(), hyp_);
  if (data_->size() == 0) return;
  Matrix Ks(data_->size(), m);
  for (Eigen::Index j = 0; j < m; ++j) Ks.col(j) = cross_kernel(xs.row(j).transpose());
  mean += Ks.transpose() * alpha_;
  const Matrix V = solve_lower(Ks);
  variance -= V.colwise().squaredNorm().transpose();
  for (Eigen::Index j = 0; j < m; ++j) {
    if (variance[j] < 0) {
      ++negative_variance_clamps();
      variance[j] = 0;
    }
  }
}

double GPPosterior::covariance(const Vector& x, const Vector& xp) const {
  double c = se_kernel(x, xp, hyp_);
  if (data_->size() == 0) return c;
  return c - solve_lower(cross_kernel(x)).dot(solve_lower(cross_kernel(xp)));
}

GPPosterior GPPosterior::updated(std::shared_ptr<const TrainingSet> extended) const {
  const auto n = data_->size();
  if (extended->size() != n + 1) {
    throw std::invalid_argument("rank1_update: extended set must add exactly one point");
  }
  const Vector x = extended->X.row(n).transpose();
  const double yv = extended->y[n];
  if (n == 0) return fit(std::move(extended), hyp_);

  const Vector k = cross_kernel(x);
  const Vector l = solve_lower(k);
  const double sn = hyp_.sigma_obs();
  const double pivot = hyp_.sigma_f2() + sn * sn + jitter_ - l.squaredNorm();
  if (!(pivot > 1e-14 * hyp_.sigma_f2())) {
    GPPosterior refit = fit(std::move(extended), hyp_);
    return refit;
  }
  GPPosterior post;
  post.data_ = std::move(extended);
  post.hyp_ = hyp_;
  post.jitter_ = jitter_;
  post.L_ = Matrix::Zero(n + 1, n + 1);
  post.L_.topLeftCorner(n, n) = L_;
  post.L_.block(n, 0, 1, n) = l.transpose();
  post.L_(n, n) = std::sqrt(pivot);
  post.residual_.resize(n + 1);
  post.residual_.head(n) = residual_;
  post.residual_[n] = yv - nq_mean(x, hyp_);
  post.compute_alpha();
  return post;
}

GPPosterior GPPosterior::updated(const Vector& x_new, double y_new) const {
  return updated(std::make_shared<const TrainingSet>(data_->appended(x_new, y_new)));
}

double GPPosterior::log_marginal_likelihood() const {
  const auto n = data_->size();
  if (n == 0) return 0.0;
  return -0.5 * residual_.dot(alpha_) - L_.diagonal().array().log().sum() -
         0.5 * static_cast<double>(n) * kLog2Pi;
}

// ---------------------------------------------------------------------------
// Hyperprior

double StudentTPrior::logpdf(double x) const {
  const double z = (x - mean) / scale;
  return std::lgamma(0.5 * (nu + 1)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * std::numbers::pi) -
         std::log(scale) - 0.5 * (nu + 1) * std::log1p(z * z / nu);
}

double StudentTPrior::dlogpdf(double x) const {
  const double r = x - mean;
  return -(nu + 1) * r / (nu * scale * scale + r * r);
}

Hyperprior Hyperprior::empirical(const TrainingSet& data, double f_hpd) {
  const auto n = data.size();
  const int D = data.dim();
  if (n < 1) throw std::invalid_argument("hyperprior: empty training set");
  Hyperprior hp;
  hp.dim_ = D;
  const int P = GPHyperparams::count(D);
  hp.priors_.assign(static_cast<std::size_t>(P), std::nullopt);
  hp.lower_.resize(P);
  hp.upper_.resize(P);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return data.y[a] > data.y[b]; });
  const auto n_hpd = std::max<Eigen::Index>(
      1, static_cast<Eigen::Index>(std::ceil(f_hpd * static_cast<double>(n))));
  Matrix Xh(n_hpd, D);
  Vector yh(n_hpd);
  for (Eigen::Index i = 0; i < n_hpd; ++i) {
    Xh.row(i) = data.X.row(order[static_cast<std::size_t>(i)]);
    yh[i] = data.y[order[static_cast<std::size_t>(i)]];
  }
  auto sample_sd = [](const Vector& v) {
    if (v.size() < 2) return 0.0;
    return std::sqrt((v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1));
  };

  const double y_diam = std::max(data.y.maxCoeff() - data.y.minCoeff(), kFloor);
  for (int d = 0; d < D; ++d) {
    const Vector col = Xh.col(d);
    const double sd = std::max(sample_sd(col), kFloor);
    const double diam = col.maxCoeff() - col.minCoeff();
    const double scale = diam > 0 ? std::max(2.0, std::log(diam / sd)) : 2.0;
    hp.priors_[static_cast<std::size_t>(GPHyperparams::idx_log_ell(d))] =
        StudentTPrior{std::log(sd), scale};

    const double lo = data.X.col(d).minCoeff();
    const double hi = data.X.col(d).maxCoeff();
    const double w = std::max(hi - lo, kFloor);
    hp.lower_[GPHyperparams::idx_log_ell(d)] = std::log(1e-3 * w);
    hp.upper_[GPHyperparams::idx_log_ell(d)] = std::log(10.0 * w);
    hp.lower_[GPHyperparams::idx_x_m(D, d)] = lo - w;
    hp.upper_[GPHyperparams::idx_x_m(D, d)] = hi + w;
    hp.lower_[GPHyperparams::idx_log_omega(D, d)] = std::log(1e-2 * w);
    hp.upper_[GPHyperparams::idx_log_omega(D, d)] = std::log(10.0 * w);
  }
  hp.priors_[static_cast<std::size_t>(GPHyperparams::idx_log_sigma_obs(D))] =
      StudentTPrior{std::log(1e-3), 0.5};
  const double yh_diam = std::max(yh.maxCoeff() - yh.minCoeff(), kFloor);
  hp.priors_[static_cast<std::size_t>(GPHyperparams::idx_m0(D))] =
      StudentTPrior{yh.maxCoeff(), yh_diam};

  hp.lower_[GPHyperparams::idx_log_sigma_f(D)] = std::log(1e-3 * y_diam);
  hp.upper_[GPHyperparams::idx_log_sigma_f(D)] = std::log(10.0 * y_diam);
  hp.lower_[GPHyperparams::idx_log_sigma_obs(D)] = std::log(GPHyperparams::kMinSigmaObs);
  hp.upper_[GPHyperparams::idx_log_sigma_obs(D)] = std::log(std::max(1.0, y_diam));
  hp.lower_[GPHyperparams::idx_m0(D)] = data.y.minCoeff() - y_diam;
  hp.upper_[GPHyperparams::idx_m0(D)] = data.y.maxCoeff() + 10.0 * y_diam;
  return hp;
}

bool Hyperprior::inside(const Vector& theta) const {
  return (theta.array() >= lower_.array()).all() && (theta.array() <= upper_.array()).all();
}

Vector Hyperprior::clamp(const Vector& theta) const {
  return theta.cwiseMax(lower_).cwiseMin(upper_);
}

double Hyperprior::logpdf(const GPHyperparams& hyp) const {
  const Vector& t = hyp.values();
  if (!inside(t)) return -kInf;
  double lp = 0.0;
  for (std::size_t i = 0; i < priors_.size(); ++i) {
    if (priors_[i]) lp += priors_[i]->logpdf(t[static_cast<Eigen::Index>(i)]);
  }
  return lp;
}

Vector Hyperprior::gradient(const GPHyperparams& hyp) const {
  Vector g = Vector::Zero(hyp.values().size());
  for (std::size_t i = 0; i < priors_.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    if (priors_[i]) g[k] = priors_[i]->dlogpdf(hyp.values()[k]);
  }
  return g;
}

double Hyperprior::width(int index) const {
  const auto& p = priors_[static_cast<std::size_t>(index)];
  const double w = p ? p->scale : 1.0;
  return std::min(w, upper_[index] - lower_[index]);
}

GPHyperparams Hyperprior::sample(Rng& rng) const {
  const int P = GPHyperparams::count(dim_);
  Vector t(P);
  for (int i = 0; i < P; ++i) {
    const auto& p = priors_[static_cast<std::size_t>(i)];
    if (!p) {
      t[i] = rng.uniform(lower_[i], upper_[i]);
      continue;
    }
    double v = p->mean;
    for (int tries = 0; tries < 100; ++tries) {
      const double chi2 = 2.0 * rng.gamma(0.5 * p->nu);
      v = p->mean + p->scale * rng.normal() / std::sqrt(chi2 / p->nu);
      if (v >= lower_[i] && v <= upper_[i]) break;
    }
    t[i] = std::clamp(v, lower_[i], upper_[i]);
  }
  return GPHyperparams(dim_, t);
}

GPHyperparams Hyperprior::initial(const TrainingSet& data) const {
  const int D = dim_;
  GPHyperparams h(D);
  Vector& t = h.values();
  Eigen::Index best = 0;
  data.y.maxCoeff(&best);
  const double n = static_cast<double>(data.size());
  const double sy = data.size() > 1
                        ? std::sqrt((data.y.array() - data.y.mean()).square().sum() / (n - 1))
                        : 1.0;
  for (int d = 0; d < D; ++d) {
    t[GPHyperparams::idx_log_ell(d)] = priors_[static_cast<std::size_t>(d)]->mean;
    t[GPHyperparams::idx_x_m(D, d)] = data.X(best, d);
    const double w = std::max(data.X.col(d).maxCoeff() - data.X.col(d).minCoeff(), kFloor);
    t[GPHyperparams::idx_log_omega(D, d)] = std::log(w);
  }
  t[GPHyperparams::idx_log_sigma_f(D)] = std::log(std::max(sy, kFloor));
  t[GPHyperparams::idx_log_sigma_obs(D)] = std::log(1e-3);
  t[GPHyperparams::idx_m0(D)] = data.y.maxCoeff();
  t = clamp(t);
  return h;
}

double hyperprior_logpdf(const GPHyperparams& hyp, const TrainingSet& data) {
  return Hyperprior::empirical(data).logpdf(hyp);
}

LogLikelihoodGradient gp_log_marginal_likelihood_gradient(const TrainingSet& data,
                                                          const GPHyperparams& hyp) {
  LogLikelihoodGradient out;
  const auto n = data.size();
  const auto sqdist = per_dimension_sqdist(data.X);
  Matrix E = Matrix::Zero(n, n);
  const Vector ell = hyp.ell();
  for (int d = 0; d < data.dim(); ++d) E += sqdist[static_cast<std::size_t>(d)] / (ell[d] * ell[d]);
  const Matrix U = (-0.5 * E.array()).exp().matrix();
  Matrix K = hyp.sigma_f2() * U;
  const double sn = hyp.sigma_obs();
  K.diagonal().array() += sn * sn;
  Eigen::LLT<Matrix> llt;
  double jitter = 0;
  if (!factor_with_jitter(K, llt, jitter)) return out;
  const Vector r = data.y - mean_at_rows(data.X, hyp);
  const Vector alpha = llt.solve(r);
  const Matrix L = llt.matrixL();
  out.value = -0.5 * r.dot(alpha) - L.diagonal().array().log().sum() -
              0.5 * static_cast<double>(n) * kLog2Pi;
  const Matrix Kinv = llt.solve(Matrix::Identity(n, n));
  out.gradient = lml_gradient(data, sqdist, U, Kinv, alpha, hyp);
  return out;
}

// ---------------------------------------------------------------------------
// Cached log posterior

GPLogPosterior::GPLogPosterior(std::shared_ptr<const TrainingSet> data, Hyperprior prior)
    : data_(std::move(data)), prior_(std::move(prior)) {
  sqdist_ = per_dimension_sqdist(data_->X);
}

bool GPLogPosterior::factor(const Vector& theta) {
  const int D = data_->dim();
  const int nc = GPHyperparams::covariance_count(D);
  if (cached_cov_.size() == nc && cached_cov_ == theta.head(nc)) return factor_ok_;
  const Vector log_ell = theta.head(D);
  if (cached_ell_.size() != D || cached_ell_ != log_ell) {
    const auto n = data_->size();
    Matrix E = Matrix::Zero(n, n);
    for (int d = 0; d < D; ++d) {
      E += sqdist_[static_cast<std::size_t>(d)] * std::exp(-2.0 * log_ell[d]);
    }
    unit_kernel_ = (-0.5 * E.array()).exp().matrix();
    cached_ell_ = log_ell;
  }
  GPHyperparams h(D, theta);
  Matrix K = h.sigma_f2() * unit_kernel_;
  const double sn = h.sigma_obs();
  K.diagonal().array() += sn * sn;
  double jitter = 0;
  factor_ok_ = factor_with_jitter(K, llt_, jitter);
  if (factor_ok_) log_det_ = 2.0 * Matrix(llt_.matrixL()).diagonal().array().log().sum();
  cached_cov_ = theta.head(nc);
  return factor_ok_;
}

double GPLogPosterior::operator()(const Vector& theta) {
  ++evaluations_;
  const int D = data_->dim();
  GPHyperparams h(D, theta);
  const double lp = prior_.logpdf(h);
  if (!std::isfinite(lp)) return -kInf;
  if (!factor(theta)) return -kInf;
  const Vector r = data_->y - mean_at_rows(data_->X, h);
  const Vector a = llt_.matrixL().solve(r);
  const double lml = -0.5 * a.squaredNorm() - 0.5 * log_det_ -
                     0.5 * static_cast<double>(data_->size()) * kLog2Pi;
  return std::isfinite(lml) ? lml + lp : -kInf;
}

double GPLogPosterior::negative_with_gradient(const Vector& theta, Vector& grad) {
  ++evaluations_;
  const int D = data_->dim();
  GPHyperparams h(D, theta);
  grad = Vector::Zero(theta.size());
  const double lp = prior_.logpdf(h);
  if (!std::isfinite(lp) || !factor(theta)) return kInf;
  const auto n = data_->size();
  const Vector r = data_->y - mean_at_rows(data_->X, h);
  const Vector alpha = llt_.solve(r);
  const double lml =
      -0.5 * r.dot(alpha) - 0.5 * log_det_ - 0.5 * static_cast<double>(n) * kLog2Pi;
  const Matrix Kinv = llt_.solve(Matrix::Identity(n, n));
  grad = -(lml_gradient(*data_, sqdist_, unit_kernel_, Kinv, alpha, h) + prior_.gradient(h));
  return -(lml + lp);
}

// ---------------------------------------------------------------------------
// Sample sets

int hyperparameter_sample_count(Eigen::Index n, bool warmup) {
  const double raw = 80.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(n, 1)));
  int count = static_cast<int>(std::lround(raw));
  count = std::max(count, 1);
  if (warmup) count = std::min(count, 8);
  return count;
}

HyperparamSampleSet::HyperparamSampleSet(std::vector<GPPosterior> posteriors)
    : posteriors_(std::move(posteriors)) {
  if (posteriors_.empty()) throw std::invalid_argument("sample set needs at least one posterior");
}

Prediction combine_samples(const Vector& means, const Vector& variances) {
  Prediction p;
  const auto k = means.size();
  p.mean = means.mean();
  p.variance = variances.mean();
  if (k >= 2) {
    p.variance += (means.array() - p.mean).square().sum() / static_cast<double>(k - 1);
  }
  return p;
}

Prediction HyperparamSampleSet::marginal_predict(const Vector& x) const {
  Vector mean, variance;
  marginal_predict(Matrix(x.transpose()), mean, variance);
  return {mean[0], variance[0]};
}

void HyperparamSampleSet::marginal_predict(const Matrix& xs, Vector& mean, Vector& variance) const {
  const auto k = posteriors_.size();
  const auto m = xs.rows();
  Matrix means(m, static_cast<Eigen::Index>(k)), vars(m, static_cast<Eigen::Index>(k));
  Vector mj, vj;
  for (std::size_t j = 0; j < k; ++j) {
    posteriors_[j].predict(xs, mj, vj);
    means.col(static_cast<Eigen::Index>(j)) = mj;
    vars.col(static_cast<Eigen::Index>(j)) = vj;
  }
  mean = means.rowwise().mean();
  variance = vars.rowwise().mean();
  if (k >= 2) {
    variance += ((means.colwise() - mean).array().square().rowwise().sum() /
                 static_cast<double>(k - 1))
                    .matrix();
  }
}

void HyperparamSampleSet::add_point(const Vector& x, double y) {
  auto extended = std::make_shared<const TrainingSet>(data().appended(x, y));
  for (auto& p : posteriors_) p = p.updated(extended);
}

void HyperparamSampleSet::refit(std::shared_ptr<const TrainingSet> data) {
  for (auto& p : posteriors_) p = GPPosterior::fit(data, p.hyp());
}

// ---------------------------------------------------------------------------
// Slice sampling and MAP

HyperparamSampleSet sample_hyperparameters(std::shared_ptr<const TrainingSet> data, int n_gp,
                                           const GPHyperparams& init, Rng& rng,
                                           const SliceSamplerOptions& options) {
  if (data->size() < 2) throw std::invalid_argument("sample_hyperparameters: need n >= 2");
  if (n_gp < 1) throw std::invalid_argument("sample_hyperparameters: n_gp >= 1");
  const int D = data->dim();
  const int P = GPHyperparams::count(D);
  GPLogPosterior target(data, Hyperprior::empirical(*data));
  const Hyperprior& prior = target.prior();

  Vector theta = prior.clamp(init.values());
  double logp = target(theta);
  if (!std::isfinite(logp)) {
    theta = prior.initial(*data).values();
    logp = target(theta);
  }
  if (!std::isfinite(logp)) {
    throw SliceSamplingError("slice sampler: no finite starting point", GPHyperparams(D, theta));
  }

  auto update = [&](int i) {
    const double w = prior.width(i);
    const double lo = prior.lower()[i];
    const double hi = prior.upper()[i];
    const double x0 = theta[i];
    const double log_y = logp + std::log(1.0 - rng.uniform());
    auto eval = [&](double v) {
      Vector t = theta;
      t[i] = v;
      return target(t);
    };
    double left = x0 - w * rng.uniform();
    double right = left + w;
    int j = static_cast<int>(std::floor(options.max_step_out * rng.uniform()));
    int k = options.max_step_out - 1 - j;
    left = std::max(left, lo);
    right = std::min(right, hi);
    while (j-- > 0 && left > lo && eval(left) > log_y) left = std::max(left - w, lo);
    while (k-- > 0 && right < hi && eval(right) > log_y) right = std::min(right + w, hi);
    for (int s = 0; s < options.max_shrink; ++s) {
      const double v = rng.uniform(left, right);
      Vector t = theta;
      t[i] = v;
      const double lv = target(t);
      if (lv > log_y) {
        theta = t;
        logp = lv;
        return;
      }
      if (v < x0) left = v; else right = v;
    }
    // leave the factor cache on the current state before reporting
    target(theta);
    throw SliceSamplingError("slice sampler: shrinkage did not find an acceptable point",
                             GPHyperparams(D, theta));
  };

  const int burn = options.burn_in_steps < 0 ? 10 * P : options.burn_in_steps;
  int coord = 0;
  for (int s = 0; s < burn; ++s) {
    update(coord);
    coord = (coord + 1) % P;
  }
  std::vector<GPPosterior> posts;
  posts.reserve(static_cast<std::size_t>(n_gp));
  for (int m = 0; m < n_gp; ++m) {
    for (int s = 0; s < options.thin_sweeps * P; ++s) {
      update(coord);
      coord = (coord + 1) % P;
    }
    posts.push_back(GPPosterior::fit(data, GPHyperparams(D, theta)));
  }
  return HyperparamSampleSet(std::move(posts));
}

GPHyperparams optimize_hyperparameters(std::shared_ptr<const TrainingSet> data,
                                       const GPHyperparams& init, Rng& rng, int restarts) {
  if (data->size() < 2) throw std::invalid_argument("optimize_hyperparameters: need n >= 2");
  const int D = data->dim();
  GPLogPosterior target(data, Hyperprior::empirical(*data));
  auto objective = [&](const Vector& t, Vector& g) { return target.negative_with_gradient(t, g); };

  std::vector<Vector> starts;
  starts.push_back(init.values());
  for (int r = 0; r < restarts; ++r) starts.push_back(target.prior().sample(rng).values());

  Vector best = target.prior().clamp(init.values());
  Vector g;
  double best_value = objective(best, g);
  for (std::size_t s = 0; s < starts.size(); ++s) {
    Vector x0 = target.prior().clamp(starts[s]);
    if (!std::isfinite(objective(x0, g))) continue;
    const BfgsResult res = bfgs_minimize(objective, x0);
    if (res.value < best_value) {
      best_value = res.value;
      best = res.x;
    }
  }
  return GPHyperparams(D, best);
}

}  // namespace vbmc
