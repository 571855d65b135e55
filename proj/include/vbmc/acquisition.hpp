#pragma once

#include "vbmc/cmaes.hpp"
#include "vbmc/gp.hpp"
#include "vbmc/variational_posterior.hpp"

#include <string>

namespace vbmc {

enum class AcquisitionKind {
  kUncertainty,  // V q^2
  kProspective,  // V q exp(mean)
};

AcquisitionKind parse_acquisition(const std::string& name);  // "us" or "pro"
std::string to_string(AcquisitionKind kind);

inline constexpr double kDefaultVarianceFloor = 1e-4;

/// Everything the acquisition needs; the referenced objects must outlive it.
struct AcquisitionContext {
  const HyperparamSampleSet* samples = nullptr;
  const VariationalPosterior* vp = nullptr;
  AcquisitionKind kind = AcquisitionKind::kProspective;
  Vector lower;
  Vector upper;
  double variance_floor = kDefaultVarianceFloor;
};

/// Context whose search box is the bounding box of the training inputs
/// widened by `margin` on every side.
AcquisitionContext make_acquisition_context(const HyperparamSampleSet& samples,
                                            const VariationalPosterior& vp, AcquisitionKind kind,
                                            double margin = 3.0);

/// Unregularized acquisition values in linear space.
double a_us(const AcquisitionContext& ctx, const Vector& x);
double a_pro(const AcquisitionContext& ctx, const Vector& x);

/// Log of the multiplier exp(-(floor/V - 1)) applied when V < floor; zero
/// otherwise and -inf at V = 0.
double log_regularization(double variance, double floor);
/// a * exp(-(floor/V - 1)) for V < floor, else a.
double regularize(double value, double variance, double floor = kDefaultVarianceFloor);

/// Regularized log acquisition at each row of xs.
Vector log_acquisition(const AcquisitionContext& ctx, const Matrix& xs);
double log_acquisition(const AcquisitionContext& ctx, const Vector& x);

struct AcquisitionOptions {
  int n_uniform_seeds = 1000;
  int n_posterior_seeds = 100;
  CmaesOptions cmaes;
};

struct AcquisitionResult {
  Vector x;
  double log_value = -kInf;
};

/// Maximizes the regularized log acquisition over the context's box. Never
/// returns a point within duplicate tolerance of a training input. Throws
/// NumericalError when every evaluated point scores -inf.
AcquisitionResult optimize_acquisition(const AcquisitionContext& ctx, Rng& rng,
                                       const AcquisitionOptions& options = {});

}  // namespace vbmc
