#pragma once

#include "vbmc/common.hpp"

#include <vector>

namespace vbmc {

/// Per-dimension map between the user's coordinates and the unbounded
/// working space. Unbounded dimensions are standardized against the
/// plausible box; bounded dimensions go through a logit first and are then
/// standardized against the logit images of the plausible bounds. Both kinds
/// send the plausible box to [-0.5, 0.5].
///
/// Inputs closer to a hard bound than 1e-12 (relative to the bound width) are
/// clipped inside the logit, so log densities reported at such points are not
/// reliable.
class ParameterTransform {
 public:
  enum class Kind { kUnbounded, kBounded };

  ParameterTransform() = default;

  /// Infinite lb/ub mark an unbounded dimension. Throws std::invalid_argument
  /// on inconsistent bounds or half-bounded dimensions.
  ParameterTransform(Vector lb, Vector ub, Vector plb, Vector pub);

  /// All-unbounded transform.
  static ParameterTransform unbounded(const Vector& plb, const Vector& pub);

  int dim() const { return static_cast<int>(kinds_.size()); }
  Kind kind(int i) const { return kinds_[static_cast<std::size_t>(i)]; }
  bool all_unbounded() const;

  const Vector& lb() const { return lb_; }
  const Vector& ub() const { return ub_; }
  const Vector& plb() const { return plb_; }
  const Vector& pub() const { return pub_; }
  Vector internal_plb() const { return Vector::Constant(dim(), -0.5); }
  Vector internal_pub() const { return Vector::Constant(dim(), 0.5); }

  /// Throws std::domain_error naming the dimension if a bounded coordinate is
  /// not strictly inside (lb, ub).
  Vector to_internal(const Vector& x_orig) const;
  Vector to_original(const Vector& x_internal) const;

  /// Sum over dimensions of log g_i'(x_orig); internal log density equals the
  /// original log density minus this value.
  double log_jacobian(const Vector& x_orig) const;

  /// Per-dimension log g_i'(x_orig).
  Vector log_jacobian_terms(const Vector& x_orig) const;

  /// For all-unbounded transforms x_orig = offset + scale .* x_internal.
  Vector affine_offset() const;
  Vector affine_scale() const;

  static constexpr double kLogitClip = 1e-12;

 private:
  void check_inside(const Vector& x_orig) const;

  std::vector<Kind> kinds_;
  Vector lb_, ub_, plb_, pub_;
  Vector center_;  // midpoint of (possibly logit-mapped) plausible box
  Vector width_;   // width of (possibly logit-mapped) plausible box
};

}  // namespace vbmc
