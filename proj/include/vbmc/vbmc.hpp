#pragma once

#include "vbmc/acquisition.hpp"
#include "vbmc/elbo_optim.hpp"
#include "vbmc/transforms.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace vbmc {

/// Log joint over original coordinates. May return a non-finite value.
using LogJoint = std::function<double(const Vector&)>;

/// A user problem. Infinite lb/ub mark unbounded dimensions; empty lb/ub
/// means every dimension is unbounded.
struct ProblemSpec {
  LogJoint log_joint;
  Vector x0;
  Vector lb, ub;
  Vector plb, pub;

  ParameterTransform transform() const;
};

struct VBMCOptions {
  /// 0 means 50 (D + 2).
  int max_fun_evals = 0;
  int max_iterations = 1000;
  int n_init = 10;
  int n_active = 5;
  double beta_lcb = kDefaultBetaLCB;
  double beta_fallback = kFallbackBetaLCB;
  double w_min = 0.01;
  double eps_prune = 0.01;
  int n_recent = 4;
  int n_stable = 8;
  double delta_sd = 0.1;
  /// Delta_KL = delta_kl_scale * sqrt(D).
  double delta_kl_scale = 0.01;
  double delta_impro = 0.01;
  double warmup_improvement = 1.0;
  int warmup_patience = 3;
  /// Points more than trim_factor * D below the best are dropped after warm-up.
  double trim_factor = 10.0;
  int warmup_max_gp_samples = 8;
  /// Hyperparameter sampling switches to MAP for good once the between-sample
  /// SD of the expected log joint stays below this for stop_sampling_patience
  /// consecutive iterations.
  double stop_sampling_sd = 0.01;
  int stop_sampling_patience = 3;
  int map_restarts = 3;
  AcquisitionKind acquisition = AcquisitionKind::kProspective;
  int n_fast = 5;
  int n_fast_first = 50;
  int n_entropy = 100;
  int n_entropy_final = 1 << 15;
  double init_mean_jitter = 0.1;
  double init_sigma = 0.1;
  double adam_alpha_warmup = 0.1;
  double adam_alpha = 0.01;
  AdamRunOptions adam;
  AcquisitionOptions acquisition_options;
  SliceSamplerOptions slice;

  int budget(int D) const { return max_fun_evals > 0 ? max_fun_evals : 50 * (D + 2); }
  double delta_kl(int D) const { return delta_kl_scale * std::sqrt(static_cast<double>(D)); }
};

struct ReliabilityFeatures {
  double elbo_change = 0.0;  // |Delta ELBO| / Delta_SD
  double elbo_sd = 0.0;      // elbo_sd / Delta_SD
  double kl_change = 0.0;    // gsKL(q_t, q_{t-1}) / Delta_KL
  double rho() const { return (elbo_change + elbo_sd + kl_change) / 3.0; }
  bool all_below_one() const { return elbo_change < 1 && elbo_sd < 1 && kl_change < 1; }
};

struct IterationRecord {
  int iteration = 0;
  int n_train = 0;
  int evaluations = 0;
  int components = 0;
  int n_gp = 0;
  double elbo_mean = 0.0;
  double elbo_sd = 0.0;
  double elcbo = 0.0;
  /// Unset on the first iteration.
  std::optional<ReliabilityFeatures> features;
  bool warmup = true;
  bool stop_sampling = false;
  bool pruned = false;
  /// Between-sample SD of the expected log joint (0 with one sample).
  double gp_sample_sd = 0.0;
  int adam_iterations = 0;
  VariationalPosterior vp;  // internal space
};

struct Evaluation {
  Vector x;               // original space
  double log_joint = 0;   // as returned by the user
  double y_internal = 0;  // Jacobian-corrected
  bool finite = true;
};

struct InferenceResult {
  VariationalPosterior vp;  // internal space
  ParameterTransform transform;
  double elbo_mean = 0.0;
  double elbo_sd = 0.0;
  bool stable = false;
  int iterations = 0;
  int evaluations = 0;
  /// Index into history of the iterate that was returned.
  int chosen_iteration = 0;
  std::vector<IterationRecord> history;
  std::vector<Evaluation> evaluation_log;
  std::string message;
};

/// Internal-space design: x0 first, then n_init - 1 uniform draws inside the
/// internal plausible box [-0.5, 0.5]^D.
Matrix initial_design_points(const Vector& x0_internal, int n_init, Rng& rng);

/// True once each of the last `patience` ELCBO improvements in the history is
/// below `threshold`.
bool warmup_should_end(const std::vector<double>& elcbo_history, double threshold, int patience);

/// Keeps rows with y >= max(y) - offset.
TrainingSet trim_training_set(const TrainingSet& data, double offset);

/// ceil(n^(2/3)).
int max_components(Eigen::Index n);

/// Component count for the next optimization after warm-up. `elcbo_history`
/// holds completed iterations, most recent last.
int update_component_count(int K, Eigen::Index n, const std::vector<double>& elcbo_history,
                           std::optional<double> last_rho, bool pruned_last, int n_recent);

ReliabilityFeatures reliability_index(double elbo_prev, double elbo_cur, double sd_cur,
                                      const VariationalPosterior& vp_prev,
                                      const VariationalPosterior& vp_cur,
                                      const VBMCOptions& options);

/// Least-squares slope of ys against 0, 1, 2, ...
double least_squares_slope(const std::vector<double>& ys);

struct TerminationCheck {
  bool done = false;
  bool stable = false;
};

/// Stability test on the history (most recent last) plus the budget test.
TerminationCheck check_termination(const std::vector<IterationRecord>& history, int evaluations,
                                   int budget, const VBMCOptions& options);

/// Iterate returned when the run never stabilized: best ELBO - beta_fallback * SD
/// among the last n_stable iterations, skipping warm-up ones when possible.
std::size_t select_fallback_iteration(const std::vector<IterationRecord>& history,
                                      const VBMCOptions& options);

/// Per-iteration callback for diagnostics.
using IterationCallback = std::function<void(const IterationRecord&)>;

/// Runs the full inference loop.
InferenceResult run_vbmc(const ProblemSpec& problem, const VBMCOptions& options, Rng& rng,
                         const IterationCallback& on_iteration = {});

/// Posterior moments in original coordinates. Exact for affine transforms;
/// otherwise estimated from n_samples draws.
GaussianMoments original_moments(const VariationalPosterior& vp, const ParameterTransform& t,
                                 Rng& rng, int n_samples = 100000);

}  // namespace vbmc
