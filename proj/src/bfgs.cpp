#include "vbmc/bfgs.hpp"

namespace vbmc {

BfgsResult bfgs_minimize(const GradientObjective& f, const Vector& x0, const BfgsOptions& options) {
  const auto n = x0.size();
  BfgsResult res;
  res.x = x0;
  Vector g(n);
  res.value = f(res.x, g);
  if (!std::isfinite(res.value)) return res;

  Matrix H = Matrix::Identity(n, n);
  bool fresh = true;
  Vector g_new(n);
  for (int it = 0; it < options.max_iterations; ++it) {
    res.iterations = it;
    if (g.lpNorm<Eigen::Infinity>() < options.gradient_tolerance) {
      res.converged = true;
      return res;
    }
    Vector p = -H * g;
    if (g.dot(p) >= 0) {
      H.setIdentity();
      p = -g;
      fresh = true;
    }
    if (fresh) {
      const double pmax = p.lpNorm<Eigen::Infinity>();
      if (pmax > options.max_initial_step) p *= options.max_initial_step / pmax;
    }

    double step = 1.0;
    const double slope = g.dot(p);
    bool accepted = false;
    Vector x_new;
    double f_new = kInf;
    for (int ls = 0; ls < 50; ++ls) {
      x_new = res.x + step * p;
      f_new = f(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= res.value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (fresh) return res;  // steepest descent failed too
      H.setIdentity();
      fresh = true;
      continue;
    }

    const Vector s = x_new - res.x;
    const Vector yv = g_new - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      if (fresh) H *= sy / yv.squaredNorm();
      const double rho = 1.0 / sy;
      const Matrix I = Matrix::Identity(n, n);
      H = (I - rho * s * yv.transpose()) * H * (I - rho * yv * s.transpose()) +
          rho * s * s.transpose();
      fresh = false;
    }
    const bool tiny = std::abs(res.value - f_new) <= 1e-14 * (1.0 + std::abs(res.value));
    res.x = x_new;
    res.value = f_new;
    g = g_new;
    if (tiny && s.lpNorm<Eigen::Infinity>() < 1e-12) break;
  }
  res.converged = g.lpNorm<Eigen::Infinity>() < options.gradient_tolerance;
  return res;
}

}  // namespace vbmc
