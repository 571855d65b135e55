#pragma once

#include "vbmc/common.hpp"

#include <atomic>
#include <memory>
#include <optional>
#include <vector>

namespace vbmc {

/// GP hyperparameters, stored as one flat vector of 3D+3 values in the order
/// log ell (D), log sigma_f, log sigma_obs, m0, x_m (D), log omega (D).
class GPHyperparams {
 public:
  GPHyperparams() = default;
  explicit GPHyperparams(int dim) : dim_(dim), values_(Vector::Zero(count(dim))) {}
  GPHyperparams(int dim, Vector values);

  static int count(int dim) { return 3 * dim + 3; }
  static int idx_log_ell(int i) { return i; }
  static int idx_log_sigma_f(int dim) { return dim; }
  static int idx_log_sigma_obs(int dim) { return dim + 1; }
  static int idx_m0(int dim) { return dim + 2; }
  static int idx_x_m(int dim, int i) { return dim + 3 + i; }
  static int idx_log_omega(int dim, int i) { return 2 * dim + 3 + i; }
  /// Indices below this one change the Gram matrix; the rest only the mean.
  static int covariance_count(int dim) { return dim + 2; }

  int dim() const { return dim_; }
  const Vector& values() const { return values_; }
  Vector& values() { return values_; }

  Vector ell() const { return values_.head(dim_).array().exp(); }
  double sigma_f2() const { return std::exp(2.0 * values_[dim_]); }
  /// Observation noise SD, floored at kMinSigmaObs.
  double sigma_obs() const { return std::max(std::exp(values_[dim_ + 1]), kMinSigmaObs); }
  bool sigma_obs_floored() const { return std::exp(values_[dim_ + 1]) < kMinSigmaObs; }
  double m0() const { return values_[dim_ + 2]; }
  Vector x_m() const { return values_.segment(dim_ + 3, dim_); }
  Vector omega() const { return values_.tail(dim_).array().exp(); }

  static constexpr double kMinSigmaObs = 1e-3;

 private:
  int dim_ = 0;
  Vector values_;
};

/// GP training data: inputs in internal space (one row per point) and the
/// Jacobian-corrected log joint values.
struct TrainingSet {
  Matrix X;
  Vector y;

  Eigen::Index size() const { return X.rows(); }
  int dim() const { return static_cast<int>(X.cols()); }
  /// Returns a copy with one extra row.
  TrainingSet appended(const Vector& x, double value) const;
  /// Squared distance from x to the closest row (infinity if empty).
  double min_squared_distance(const Vector& x) const;
};

inline constexpr double kDuplicateTolerance = 1e-12;

/// Squared-exponential kernel sigma_f^2 * Lambda * N(x; x', Sigma_ell); equals
/// sigma_f^2 at x = x'.
double se_kernel(const Vector& x, const Vector& xp, const GPHyperparams& hyp);

/// Negative quadratic mean m0 - 1/2 sum_i (x_i - x_m,i)^2 / omega_i^2.
double nq_mean(const Vector& x, const GPHyperparams& hyp);

struct Prediction {
  double mean = 0.0;
  double variance = 0.0;
};

/// Counts predictive variances that came out negative and were clamped at 0.
std::atomic<long>& negative_variance_clamps();

/// Factored GP posterior for one hyperparameter value. Immutable once built.
class GPPosterior {
 public:
  /// Throws NumericalError if the Gram matrix stays indefinite after jitter
  /// escalation.
  static GPPosterior fit(std::shared_ptr<const TrainingSet> data, const GPHyperparams& hyp);
  static GPPosterior fit(const TrainingSet& data, const GPHyperparams& hyp) {
    return fit(std::make_shared<const TrainingSet>(data), hyp);
  }

  /// Latent posterior mean and variance at x.
  Prediction predict(const Vector& x) const;
  /// Batched prediction; points are rows of xs.
  void predict(const Matrix& xs, Vector& mean, Vector& variance) const;
  /// Latent posterior covariance between two points.
  double covariance(const Vector& x, const Vector& xp) const;

  /// Rank-1 update: `extended` must equal data() plus one trailing row. Falls
  /// back to a full refit if the new pivot is not positive.
  GPPosterior updated(std::shared_ptr<const TrainingSet> extended) const;
  GPPosterior updated(const Vector& x_new, double y_new) const;

  double log_marginal_likelihood() const;

  const TrainingSet& data() const { return *data_; }
  const std::shared_ptr<const TrainingSet>& data_ptr() const { return data_; }
  const GPHyperparams& hyp() const { return hyp_; }
  /// Lower Cholesky factor of K(X,X) + (sigma_obs^2 + jitter) I.
  const Matrix& chol() const { return L_; }
  /// (K + sigma_obs^2 I)^{-1} (y - m(X)).
  const Vector& alpha() const { return alpha_; }
  double jitter() const { return jitter_; }
  /// Solves L v = b.
  Vector solve_lower(const Vector& b) const;
  Matrix solve_lower(const Matrix& b) const;
  /// Kernel vector k(X, x).
  Vector cross_kernel(const Vector& x) const;

 private:
  GPPosterior() = default;
  void compute_alpha();

  std::shared_ptr<const TrainingSet> data_;
  GPHyperparams hyp_;
  Matrix L_;
  Vector alpha_;
  Vector residual_;  // y - m(X)
  double jitter_ = 0.0;
};

/// Student-t prior on one hyperparameter.
struct StudentTPrior {
  double mean = 0.0;
  double scale = 1.0;
  double nu = 3.0;
  double logpdf(double x) const;
  double dlogpdf(double x) const;
};

/// Empirical-Bayes hyperprior built from a training set. Student-t priors on
/// log ell, log sigma_obs and m0; flat priors elsewhere. Every coordinate is
/// also confined to a finite box so the flat priors are proper.
class Hyperprior {
 public:
  static Hyperprior empirical(const TrainingSet& data, double f_hpd = 0.8);

  int dim() const { return dim_; }
  double logpdf(const GPHyperparams& hyp) const;
  Vector gradient(const GPHyperparams& hyp) const;
  const std::optional<StudentTPrior>& prior(int index) const {
    return priors_[static_cast<std::size_t>(index)];
  }
  const Vector& lower() const { return lower_; }
  const Vector& upper() const { return upper_; }
  bool inside(const Vector& theta) const;
  Vector clamp(const Vector& theta) const;
  /// Slice-sampler width: prior scale, or 1 for flat coordinates, capped by
  /// the box width.
  double width(int index) const;
  /// Draws from the (box-truncated) prior.
  GPHyperparams sample(Rng& rng) const;
  /// Starting point derived from the data, inside the box.
  GPHyperparams initial(const TrainingSet& data) const;

  static constexpr double kFloor = 1e-3;

 private:
  int dim_ = 0;
  std::vector<std::optional<StudentTPrior>> priors_;
  Vector lower_, upper_;
};

/// Convenience wrapper: log hyperprior of hyp under the empirical prior of data.
double hyperprior_logpdf(const GPHyperparams& hyp, const TrainingSet& data);

/// GP log marginal likelihood and its gradient with respect to all 3D+3
/// hyperparameters.
struct LogLikelihoodGradient {
  double value = -kInf;
  Vector gradient;
};
LogLikelihoodGradient gp_log_marginal_likelihood_gradient(const TrainingSet& data,
                                                          const GPHyperparams& hyp);

/// Log marginal likelihood plus log hyperprior, with caching across calls that
/// only move the mean-function coordinates. Returns -inf outside the prior box
/// or when the Gram matrix cannot be factored.
class GPLogPosterior {
 public:
  GPLogPosterior(std::shared_ptr<const TrainingSet> data, Hyperprior prior);

  double operator()(const Vector& theta);
  /// Value and gradient of the negative log posterior (for minimization).
  double negative_with_gradient(const Vector& theta, Vector& grad);

  const Hyperprior& prior() const { return prior_; }
  long evaluations() const { return evaluations_; }

 private:
  bool factor(const Vector& theta);

  std::shared_ptr<const TrainingSet> data_;
  Hyperprior prior_;
  std::vector<Matrix> sqdist_;
  Matrix unit_kernel_;  // exp(-1/2 sum_d sqdist_d / ell_d^2)
  Vector cached_ell_;
  Vector cached_cov_;
  Eigen::LLT<Matrix> llt_;
  bool factor_ok_ = false;
  double log_det_ = 0.0;
  long evaluations_ = 0;
};

/// Number of hyperparameter samples: round(80 / sqrt(n)), at least 1, capped
/// at 8 during warm-up.
int hyperparameter_sample_count(Eigen::Index n, bool warmup);

/// One fitted posterior per hyperparameter sample, all on the same data.
class HyperparamSampleSet {
 public:
  HyperparamSampleSet() = default;
  explicit HyperparamSampleSet(std::vector<GPPosterior> posteriors);

  std::size_t size() const { return posteriors_.size(); }
  const GPPosterior& operator[](std::size_t i) const { return posteriors_[i]; }
  const std::vector<GPPosterior>& posteriors() const { return posteriors_; }
  const TrainingSet& data() const { return posteriors_.front().data(); }
  const std::shared_ptr<const TrainingSet>& data_ptr() const {
    return posteriors_.front().data_ptr();
  }

  /// Hyperparameter-marginalized prediction (uniform weights over samples).
  Prediction marginal_predict(const Vector& x) const;
  void marginal_predict(const Matrix& xs, Vector& mean, Vector& variance) const;

  /// Adds one observation to every posterior via rank-1 updates.
  void add_point(const Vector& x, double y);

  /// Refits every posterior on new data with unchanged hyperparameters.
  void refit(std::shared_ptr<const TrainingSet> data);

 private:
  std::vector<GPPosterior> posteriors_;
};

/// Uniform-weight mean and variance across hyperparameter samples: average of
/// the per-sample variances plus the unbiased sample variance of the means
/// (zero for a single sample).
Prediction combine_samples(const Vector& means, const Vector& variances);

struct SliceSamplerOptions {
  /// Burn-in length in single-coordinate updates; <0 means 10 * (3D+3).
  int burn_in_steps = -1;
  /// Full sweeps between retained samples.
  int thin_sweeps = 3;
  int max_step_out = 10;
  int max_shrink = 200;
};

/// Raised when the slice sampler cannot bracket the target. Carries the last
/// valid state of the chain.
class SliceSamplingError : public NumericalError {
 public:
  SliceSamplingError(const std::string& what, GPHyperparams last)
      : NumericalError(what), last_valid(std::move(last)) {}
  GPHyperparams last_valid;
};

/// Slice-samples n_gp hyperparameter vectors from one coordinate-wise chain
/// started at init (clamped into the prior box) and fits a posterior for each.
HyperparamSampleSet sample_hyperparameters(std::shared_ptr<const TrainingSet> data, int n_gp,
                                           const GPHyperparams& init, Rng& rng,
                                           const SliceSamplerOptions& options = {});

/// MAP estimate of the hyperparameters by BFGS from init and from `restarts`
/// hyperprior draws. init is first clamped into the hyperprior box; the
/// returned objective is never below the objective there.
GPHyperparams optimize_hyperparameters(std::shared_ptr<const TrainingSet> data,
                                       const GPHyperparams& init, Rng& rng, int restarts = 3);

}  // namespace vbmc
