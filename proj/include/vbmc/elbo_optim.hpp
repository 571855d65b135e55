#pragma once

#include "vbmc/quadrature.hpp"

#include <functional>

namespace vbmc {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1.4901161193847656e-8;  // sqrt of double machine epsilon
  double alpha_min = 0.001;
  double alpha_max = 0.1;
  double tau = 200.0;
  int n_batch = 20;
};

/// alpha_min + (alpha_max - alpha_min) exp(-t / tau).
double learning_rate(int t, const AdamOptions& options);

struct AdamState {
  Vector m;
  Vector v;
  int t = 0;
};

/// One bias-corrected Adam step (descent) with the decaying learning rate.
/// Throws NumericalError on a non-finite gradient.
void adam_step(AdamState& state, Vector& theta, const Vector& grad, const AdamOptions& options);

/// Stochastic objective: returns a value to minimize and fills its gradient.
using StochasticObjective = std::function<double(const Vector& theta, Vector& grad, Rng& rng)>;

struct AdamRunOptions {
  AdamOptions adam;
  int max_iterations = 5000;
  /// Stop when the window-averaged objective changes by less than this...
  double value_tolerance = 0.01;
  /// ...and the RMS per-step parameter drift over the window is below this.
  double param_tolerance = 1e-3;
  /// Retries of a step with fresh randomness when the objective or gradient
  /// is not finite.
  int max_retries = 5;
};

struct AdamRunResult {
  Vector theta;
  int iterations = 0;
  bool converged = false;
  double last_window_value = kInf;
};

/// Minimizes a stochastic objective. Entries where mask is zero stay fixed
/// (pass an empty mask to optimize everything).
AdamRunResult adam_minimize(const StochasticObjective& objective, const Vector& theta0,
                            const AdamRunOptions& options, const Vector& mask, Rng& rng);

struct ElboOptimOptions {
  AdamRunOptions run;
  /// Entropy draws per component during optimization.
  int n_entropy = 100;
  /// Entropy draws per component for the returned estimate.
  int n_entropy_final = 1 << 15;
  /// Keep mixture weights fixed (warm-up).
  bool freeze_weights = false;
};

struct ElboOptimResult {
  VariationalPosterior vp;
  ELBOEstimate estimate;
  int iterations = 0;
  bool converged = false;
};

/// Negative mean ELBO and its gradient with freshly drawn entropy noise.
double negative_elbo(const Vector& theta, int K, int D, const HyperparamSampleSet& samples,
                     int n_entropy, Rng& rng, Vector& grad);

/// Runs Adam on the negative mean ELBO from init, then re-estimates the ELBO
/// with n_entropy_final draws.
ElboOptimResult optimize_elbo(const VariationalPosterior& init, const HyperparamSampleSet& samples,
                              const ElboOptimOptions& options, Rng& rng);

struct StartingPointOptions {
  int n_fast = 5;
  int n_entropy = 100;
  double mean_jitter = 0.1;      // SD of mean jitter, in units of sigma_k lambda
  double scale_jitter = 0.2;     // log-normal SD for sigma_k
  double weight_jitter = 0.2;    // log-normal SD for w_k
  double split_jitter = 0.5;     // SD of a new component's offset, in sigma_k lambda
  bool freeze_weights = false;
};

/// Grows `current` to k_target components by splitting weight-proportionally
/// chosen components (mean jittered, weight halved with the parent).
VariationalPosterior split_components(const VariationalPosterior& current, int k_target,
                                      double split_jitter, Rng& rng);

/// Evaluates n_fast * k_target candidates around the current posterior (the
/// split but otherwise unmodified posterior is always one of them) and returns
/// the one with the highest cheap ELBO estimate.
VariationalPosterior select_starting_points(const VariationalPosterior& current, int k_target,
                                            const HyperparamSampleSet& samples,
                                            const StartingPointOptions& options, Rng& rng);

}  // namespace vbmc
