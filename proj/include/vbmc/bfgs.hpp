#pragma once

#include "vbmc/common.hpp"

#include <functional>

namespace vbmc {

/// f(x, grad) returns the objective and fills grad. Returning +inf marks an
/// infeasible point; the line search backs off from it.
using GradientObjective = std::function<double(const Vector&, Vector&)>;

struct BfgsOptions {
  int max_iterations = 200;
  double gradient_tolerance = 1e-6;
  /// Largest coordinate move on the first step of each restart of the
  /// inverse-Hessian approximation.
  double max_initial_step = 1.0;
};

struct BfgsResult {
  Vector x;
  double value = kInf;
  int iterations = 0;
  bool converged = false;
};

/// Dense BFGS with backtracking Armijo line search. Returns the best iterate
/// seen even if the line search fails.
BfgsResult bfgs_minimize(const GradientObjective& f, const Vector& x0,
                         const BfgsOptions& options = {});

}  // namespace vbmc
