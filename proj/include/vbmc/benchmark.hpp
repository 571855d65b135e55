#pragma once

#include "vbmc/serialization.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vbmc {

enum class Family { kLumpy, kStudent, kCigar };

Family parse_family(const std::string& name);
std::string to_string(Family family);

/// Synthetic target with analytic or quadrature ground truth. The likelihood
/// is a normalized density; the prior is an axis-aligned Gaussian.
struct SyntheticProblem {
  Family family = Family::kLumpy;
  int dim = 0;
  std::uint64_t seed = 0;
  double prior_sd_multiplier = 3.5;
  Vector prior_mean;
  Vector prior_sd;

  // lumpy: mixture of diagonal Gaussians, one column per component
  Vector mix_weights;
  Matrix mix_means;
  Matrix mix_sds;
  // student: independent unit-scale Student-t per dimension
  Vector dof;
  // cigar: zero-mean Gaussian with covariance R diag(axis_sd^2) R^T
  Matrix rotation;
  Vector axis_sd;
  Matrix lik_cov;

  double lml = 0.0;
  GaussianMoments posterior;

  std::string id() const;
  double log_likelihood(const Vector& x) const;
  double log_prior(const Vector& x) const;
  double log_joint(const Vector& x) const { return log_likelihood(x) + log_prior(x); }
};

inline constexpr int kLumpyComponents = 12;

SyntheticProblem make_lumpy(int D, std::uint64_t seed);
SyntheticProblem make_student(int D);
/// Requires D >= 2.
SyntheticProblem make_cigar(int D, std::uint64_t seed);
SyntheticProblem make_problem(Family family, int D, std::uint64_t seed);

Json to_json(const SyntheticProblem& p);

/// Box within one prior SD of the prior mean, used for x0 and plausible bounds.
struct StartBox {
  Vector lower, upper;
};
StartBox start_box(const SyntheticProblem& p);

double metric_lml_error(double elbo_mean, const SyntheticProblem& p);
/// gsKL between the given original-space moments and the true posterior.
double metric_gskl(const GaussianMoments& moments, const SyntheticProblem& p);

struct Checkpoint {
  int iteration = 0;
  int evaluations = 0;
  double elbo_mean = 0.0;
  double elbo_sd = 0.0;
  double lml_error = 0.0;
  double gskl = 0.0;
};

struct BenchmarkRecord {
  std::string problem_id;
  Family family = Family::kLumpy;
  int dim = 0;
  std::uint64_t seed = 0;
  std::string acquisition;
  double budget_multiplier = 50.0;
  int budget = 0;
  bool completed = false;
  std::string error;
  double lml_true = 0.0;
  double elbo_mean = 0.0;
  double elbo_sd = 0.0;
  double lml_error = 0.0;
  double gskl = 0.0;
  bool stable = false;
  int iterations = 0;
  int evaluations = 0;
  std::vector<Checkpoint> checkpoints;
  /// Negative when wall-time recording is off.
  double wall_time_s = -1.0;
};

Json to_json(const BenchmarkRecord& r);
BenchmarkRecord record_from_json(const Json& j);

struct BenchmarkConfig {
  std::vector<Family> families{Family::kLumpy};
  std::vector<int> dims{2};
  std::vector<std::uint64_t> seeds{0};
  /// Seed of the problem instance (lumpy means, cigar rotation).
  std::uint64_t problem_seed = 1;
  std::uint64_t meta_seed = 0;
  AcquisitionKind acquisition = AcquisitionKind::kProspective;
  double budget_multiplier = 50.0;
  /// 0 reads VBMC_WORKERS from the environment (default 1).
  int workers = 0;
  bool record_wall_time = true;
  VBMCOptions options;
};

/// Runs one (problem, seed) pair; failures are captured in the record.
BenchmarkRecord run_single(const SyntheticProblem& problem, std::uint64_t seed,
                           const BenchmarkConfig& config);

/// Runs every (family, D, seed) combination on a worker pool. Records are
/// handed to `sink` one at a time, in job order, from whichever thread
/// finishes them.
void run_benchmark(const BenchmarkConfig& config,
                   const std::function<void(const BenchmarkRecord&)>& sink);

int worker_count_from_env();

/// Stable seed for one run, derived from the meta-seed, problem id and run seed.
std::uint64_t run_stream_seed(std::uint64_t meta_seed, const std::string& problem_id,
                              std::uint64_t seed);

struct MedianCI {
  double median = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

/// Median with a percentile-bootstrap 95% interval.
MedianCI bootstrap_median(const std::vector<double>& values, int resamples, std::uint64_t seed);

struct SummaryRow {
  Family family = Family::kLumpy;
  int dim = 0;
  int runs = 0;
  int completed = 0;
  MedianCI lml_error;
  MedianCI gskl;
};

/// Groups completed records by (family, D).
std::vector<SummaryRow> summarize(const std::vector<BenchmarkRecord>& records,
                                  int resamples = 1000, std::uint64_t seed = 0);

}  // namespace vbmc
