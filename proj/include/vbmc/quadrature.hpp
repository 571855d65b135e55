#pragma once

#include "vbmc/gp.hpp"
#include "vbmc/variational_posterior.hpp"

namespace vbmc {

/// Kernel integrated against component k of the posterior:
///   z_p = int N(x; mu_k, sigma_k^2 diag(lambda^2)) k(x, x_p) dx.
Vector z_vector(const VariationalPosterior& vp, int k, const GPPosterior& post);

/// Expected log joint under one GP posterior.
struct QuadratureResult {
  double mean = 0.0;
  double variance = 0.0;
  /// d mean / d theta over the flat variational parameter vector; empty
  /// unless requested.
  Vector gradient;
  /// Per-component integrals I_k, with mean = sum_k w_k I_k.
  Vector component_means;
};

QuadratureResult expected_log_joint(const VariationalPosterior& vp, const GPPosterior& post,
                                    bool with_gradient = true, bool with_variance = false);

/// Posterior variance of the expected log joint, clamped at zero.
double expected_log_joint_variance(const VariationalPosterior& vp, const GPPosterior& post);

/// Counts variances of the expected log joint that were clamped at zero.
std::atomic<long>& negative_quadrature_variance_clamps();

/// Hyperparameter-marginalized quadrature (uniform weights over samples).
struct MarginalQuadrature {
  double mean = 0.0;
  double variance = 0.0;
  Vector gradient;
  Vector sample_means;
  Vector sample_variances;
};

MarginalQuadrature marginal_expected_log_joint(const VariationalPosterior& vp,
                                               const HyperparamSampleSet& samples,
                                               bool with_gradient, bool with_variance);

struct ELBOEstimate {
  double elbo_mean = 0.0;
  /// Square root of the quadrature variance; entropy is treated as exact.
  double elbo_sd = 0.0;
  double entropy = 0.0;
  double g_mean = 0.0;
  double g_variance = 0.0;
};

/// ELBO = E_q[log joint] + entropy, with the expected log joint marginalized
/// over hyperparameter samples and the entropy estimated with n_entropy draws
/// per component.
ELBOEstimate elbo(const VariationalPosterior& vp, const HyperparamSampleSet& samples,
                  int n_entropy, Rng& rng);

/// Evidence lower confidence bound: elbo_mean - beta * elbo_sd.
double elcbo(const ELBOEstimate& est, double beta);

inline constexpr double kDefaultBetaLCB = 3.0;
inline constexpr double kFallbackBetaLCB = 5.0;

}  // namespace vbmc
