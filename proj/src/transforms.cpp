#include "vbmc/transforms.hpp"

#include <algorithm>

namespace vbmc {

namespace {

double logit(double z) { return std::log(z) - std::log1p(-z); }

double sigmoid(double u) {
  if (u >= 0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

double clip_unit(double z) {
  return std::clamp(z, ParameterTransform::kLogitClip, 1.0 - ParameterTransform::kLogitClip);
}

}  // namespace

ParameterTransform::ParameterTransform(Vector lb, Vector ub, Vector plb, Vector pub)
    : lb_(std::move(lb)), ub_(std::move(ub)), plb_(std::move(plb)), pub_(std::move(pub)) {
  const auto d = plb_.size();
  if (d == 0 || lb_.size() != d || ub_.size() != d || pub_.size() != d) {
    throw std::invalid_argument("transform: lb, ub, plb, pub must be non-empty and of equal length");
  }
  kinds_.resize(static_cast<std::size_t>(d));
  center_.resize(d);
  width_.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const std::string dim = "dimension " + std::to_string(i);
    if (!std::isfinite(plb_[i]) || !std::isfinite(pub_[i]) || !(plb_[i] < pub_[i])) {
      throw std::invalid_argument("transform: need finite plb < pub in " + dim);
    }
    const bool lo_inf = std::isinf(lb_[i]) && lb_[i] < 0;
    const bool hi_inf = std::isinf(ub_[i]) && ub_[i] > 0;
    if (std::isnan(lb_[i]) || std::isnan(ub_[i])) {
      throw std::invalid_argument("transform: NaN bound in " + dim);
    }
    if (lo_inf && hi_inf) {
      kinds_[static_cast<std::size_t>(i)] = Kind::kUnbounded;
      center_[i] = 0.5 * (plb_[i] + pub_[i]);
      width_[i] = pub_[i] - plb_[i];
    } else if (!lo_inf && !hi_inf) {
      if (!(lb_[i] < plb_[i] && pub_[i] < ub_[i])) {
        throw std::invalid_argument("transform: need lb < plb < pub < ub in " + dim);
      }
      kinds_[static_cast<std::size_t>(i)] = Kind::kBounded;
      const double range = ub_[i] - lb_[i];
      const double a = logit(clip_unit((plb_[i] - lb_[i]) / range));
      const double b = logit(clip_unit((pub_[i] - lb_[i]) / range));
      center_[i] = 0.5 * (a + b);
      width_[i] = b - a;
    } else {
      throw std::invalid_argument("transform: half-bounded " + dim + " is not supported");
    }
  }
}

ParameterTransform ParameterTransform::unbounded(const Vector& plb, const Vector& pub) {
  return ParameterTransform(Vector::Constant(plb.size(), -kInf), Vector::Constant(plb.size(), kInf),
                            plb, pub);
}

bool ParameterTransform::all_unbounded() const {
  return std::all_of(kinds_.begin(), kinds_.end(), [](Kind k) { return k == Kind::kUnbounded; });
}

void ParameterTransform::check_inside(const Vector& x_orig) const {
  if (x_orig.size() != plb_.size()) {
    throw std::invalid_argument("transform: input has wrong dimension");
  }
  for (int i = 0; i < dim(); ++i) {
    if (kind(i) == Kind::kBounded && !(x_orig[i] > lb_[i] && x_orig[i] < ub_[i])) {
      throw std::domain_error("transform: coordinate outside bounds in dimension " +
                              std::to_string(i));
    }
  }
}

Vector ParameterTransform::to_internal(const Vector& x_orig) const {
  check_inside(x_orig);
  Vector out(dim());
  for (int i = 0; i < dim(); ++i) {
    double u = x_orig[i];
    if (kind(i) == Kind::kBounded) u = logit(clip_unit((u - lb_[i]) / (ub_[i] - lb_[i])));
    out[i] = (u - center_[i]) / width_[i];
  }
  return out;
}

Vector ParameterTransform::to_original(const Vector& x_internal) const {
  Vector out(dim());
  for (int i = 0; i < dim(); ++i) {
    const double u = center_[i] + width_[i] * x_internal[i];
    if (kind(i) == Kind::kUnbounded) {
      out[i] = u;
    } else {
      double x = lb_[i] + (ub_[i] - lb_[i]) * sigmoid(u);
      // keep strictly inside the open interval after rounding
      if (x <= lb_[i]) x = std::nextafter(lb_[i], ub_[i]);
      if (x >= ub_[i]) x = std::nextafter(ub_[i], lb_[i]);
      out[i] = x;
    }
  }
  return out;
}

Vector ParameterTransform::log_jacobian_terms(const Vector& x_orig) const {
  check_inside(x_orig);
  Vector out(dim());
  for (int i = 0; i < dim(); ++i) {
    double lj = -std::log(width_[i]);
    if (kind(i) == Kind::kBounded) {
      const double range = ub_[i] - lb_[i];
      const double z = clip_unit((x_orig[i] - lb_[i]) / range);
      lj += -std::log(z) - std::log1p(-z) - std::log(range);
    }
    out[i] = lj;
  }
  return out;
}

double ParameterTransform::log_jacobian(const Vector& x_orig) const {
  return log_jacobian_terms(x_orig).sum();
}

Vector ParameterTransform::affine_offset() const {
  if (!all_unbounded()) throw std::logic_error("transform: not affine");
  return center_;
}

Vector ParameterTransform::affine_scale() const {
  if (!all_unbounded()) throw std::logic_error("transform: not affine");
  return width_;
}

}  // namespace vbmc
