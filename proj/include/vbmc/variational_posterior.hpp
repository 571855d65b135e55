#pragma once

#include "vbmc/common.hpp"

namespace vbmc {

struct GaussianMoments {
  Vector mean;
  Matrix cov;
};

/// Mixture of K Gaussians sharing a diagonal shape:
///   q(x) = sum_k w_k N(x; mu_k, sigma_k^2 diag(lambda^2)).
///
/// Flat unbounded parameter vector (length K(D+2)+D):
///   [mu_1 .. mu_K (D each), log sigma (K), log lambda (D), eta (K)],
/// with w = softmax(eta).
class VariationalPosterior {
 public:
  VariationalPosterior() = default;
  /// mu is D x K (one column per component). Weights are renormalized.
  VariationalPosterior(Vector w, Matrix mu, Vector sigma, Vector lambda);

  int dim() const { return static_cast<int>(mu_.rows()); }
  int components() const { return static_cast<int>(mu_.cols()); }
  static int param_count(int K, int D) { return K * (D + 2) + D; }
  int param_count() const { return param_count(components(), dim()); }

  // Offsets into the flat parameter vector.
  static int off_mu(int k, int D) { return k * D; }
  static int off_log_sigma(int K, int D, int k) { return K * D + k; }
  static int off_log_lambda(int K, int D, int i) { return K * D + K + i; }
  static int off_eta(int K, int D, int k) { return K * D + K + D + k; }

  const Vector& weights() const { return w_; }
  const Matrix& means() const { return mu_; }
  const Vector& sigma() const { return sigma_; }
  const Vector& lambda() const { return lambda_; }

  double logpdf(const Vector& x) const;
  /// Row-wise log density.
  Vector logpdf(const Matrix& xs) const;
  /// n draws, one per row.
  Matrix sample(Eigen::Index n, Rng& rng) const;
  GaussianMoments moments() const;

  /// eta = log w (finite weights only; zero weights map to a large negative logit).
  Vector to_vector() const;
  static VariationalPosterior from_vector(const Vector& theta, int K, int D);

  /// Copy with component k removed and the remaining weights renormalized.
  VariationalPosterior without_component(int k) const;
  /// Copy with an extra component appended.
  VariationalPosterior with_component(double weight, const Vector& mu, double sigma) const;

 private:
  void validate() const;

  Vector w_;
  Matrix mu_;
  Vector sigma_;
  Vector lambda_;
};

struct EntropyEstimate {
  double value = 0.0;
  /// Gradient with respect to the flat parameter vector (empty if not requested).
  Vector gradient;
};

/// Standard-normal base draws for entropy_mc: row s*K + k holds the draw for
/// sample s of component k.
Matrix draw_entropy_noise(int n_samples, int K, int D, Rng& rng);

/// Monte Carlo entropy -(1/N) sum_s sum_k w_k log q(xi_sk) with
/// xi_sk = mu_k + sigma_k lambda .* eps_sk. The gradient is the exact
/// derivative of this estimator for fixed eps.
EntropyEstimate entropy_mc(const VariationalPosterior& vp, const Matrix& eps,
                           bool with_gradient = true);
EntropyEstimate entropy_mc(const VariationalPosterior& vp, int n_samples, Rng& rng,
                           bool with_gradient = true);

/// Symmetrized KL between two Gaussians, 1/2 (KL(A||B) + KL(B||A)). Throws
/// NumericalError if either covariance is not positive definite.
double gaussian_skl(const GaussianMoments& a, const GaussianMoments& b);

/// gaussian_skl between the moment-matched Gaussians of two posteriors.
double gaussianized_skl(const VariationalPosterior& a, const VariationalPosterior& b);

}  // namespace vbmc
