#pragma once

#include "vbmc/common.hpp"

#include <functional>

namespace vbmc {

/// Evaluates every row of a population matrix at once.
using BatchObjective = std::function<Vector(const Matrix& points)>;

struct CmaesOptions {
  /// 0 means 4 + floor(3 ln D).
  int population = 0;
  int max_generations = 200;
  /// Additional runs from the best point with doubled population.
  int restarts = 1;
  /// Stop a run when the spread of recent best values falls below this.
  double tol_fun = 1e-9;
  /// Stop a run when the step size times the largest axis falls below this.
  double tol_x = 1e-9;
};

struct CmaesResult {
  Vector x;
  double value = -kInf;
  long evaluations = 0;
};

/// Maximizes f inside the box [lower, upper] with a covariance-adapting
/// evolution strategy. Candidates are clamped into the box before evaluation.
/// Values may be -inf.
CmaesResult cmaes_maximize(const BatchObjective& f, const Vector& x0, double sigma0,
                           const Vector& lower, const Vector& upper, const CmaesOptions& options,
                           Rng& rng);

}  // namespace vbmc
