#include "vbmc/quadrature.hpp"

namespace vbmc {

namespace {

struct ComponentTerms {
  Vector tau2;  // sigma_k^2 lambda^2 + ell^2
  Vector z;
};

ComponentTerms component_terms(const VariationalPosterior& vp, int k, const GPPosterior& post) {
  const GPHyperparams& h = post.hyp();
  const Vector ell2 = h.ell().cwiseAbs2();
  const double s2 = vp.sigma()[k] * vp.sigma()[k];
  ComponentTerms t;
  t.tau2 = s2 * vp.lambda().cwiseAbs2() + ell2;
  const double log_scale =
      std::log(h.sigma_f2()) + 0.5 * (ell2.array().log() - t.tau2.array().log()).sum();
  const Matrix& X = post.data().X;
  const Vector mu = vp.means().col(k);
  t.z = (log_scale -
         0.5 * ((X.rowwise() - mu.transpose()).array().square().rowwise() /
                t.tau2.transpose().array())
                   .rowwise()
                   .sum())
            .exp();
  return t;
}

}  // namespace

std::atomic<long>& negative_quadrature_variance_clamps() {
  static std::atomic<long> counter{0};
  return counter;
}

Vector z_vector(const VariationalPosterior& vp, int k, const GPPosterior& post) {
  return component_terms(vp, k, post).z;
}

QuadratureResult expected_log_joint(const VariationalPosterior& vp, const GPPosterior& post,
                                    bool with_gradient, bool with_variance) {
  const int K = vp.components();
  const int D = vp.dim();
  const GPHyperparams& h = post.hyp();
  if (h.dim() != D) throw std::invalid_argument("quadrature: dimension mismatch");
  const auto n = post.data().size();
  const Matrix& X = post.data().X;
  const Vector& alpha = post.alpha();
  const Vector lam2 = vp.lambda().cwiseAbs2();
  const Vector om2 = h.omega().cwiseAbs2();
  const Vector xm = h.x_m();

  QuadratureResult out;
  out.component_means.resize(K);
  if (with_gradient) out.gradient = Vector::Zero(vp.param_count());
  Matrix Z(n, K);

  for (int k = 0; k < K; ++k) {
    const ComponentTerms t = component_terms(vp, k, post);
    if (with_variance) Z.col(k) = t.z;
    const Vector mu = vp.means().col(k);
    const double s2 = vp.sigma()[k] * vp.sigma()[k];
    const Vector dm = mu - xm;
    const double nu = -0.5 * ((dm.cwiseAbs2() + s2 * lam2).array() / om2.array()).sum();
    const double Ik = (n > 0 ? t.z.dot(alpha) : 0.0) + h.m0() + nu;
    out.component_means[k] = Ik;
    if (!with_gradient) continue;

    const double wk = vp.weights()[k];
    Vector g_mu = -dm.cwiseQuotient(om2);
    Vector g_lam = -s2 * lam2.cwiseQuotient(om2);  // d nu / d log lambda_i
    if (n > 0) {
      const Vector a = t.z.cwiseProduct(alpha);
      const double asum = a.sum();
      const Matrix diff = X.rowwise() - mu.transpose();  // x_p - mu
      const Vector first = diff.transpose() * a;
      const Vector second = diff.cwiseAbs2().transpose() * a;
      g_mu += first.cwiseQuotient(t.tau2);
      // d(z^T alpha)/d log lambda_i = s2 lam2_i / tau2_i (second_i / tau2_i - asum)
      const Vector shape =
          (second.array() / t.tau2.array() - asum) * s2 * lam2.array() / t.tau2.array();
      g_lam += shape;
    }
    out.gradient.segment(VariationalPosterior::off_mu(k, D), D) += wk * g_mu;
    out.gradient[VariationalPosterior::off_log_sigma(K, D, k)] += wk * g_lam.sum();
    for (int i = 0; i < D; ++i) {
      out.gradient[VariationalPosterior::off_log_lambda(K, D, i)] += wk * g_lam[i];
    }
  }
  out.mean = vp.weights().dot(out.component_means);
  if (with_gradient) {
    for (int j = 0; j < K; ++j) {
      out.gradient[VariationalPosterior::off_eta(K, D, j)] =
          vp.weights()[j] * (out.component_means[j] - out.mean);
    }
  }

  if (with_variance) {
    const Vector ell2 = h.ell().cwiseAbs2();
    const double log_sf2 = std::log(h.sigma_f2());
    Matrix J(K, K);
    for (int j = 0; j < K; ++j) {
      for (int k = j; k < K; ++k) {
        const double ss = vp.sigma()[j] * vp.sigma()[j] + vp.sigma()[k] * vp.sigma()[k];
        const Vector tt = ell2 + ss * lam2;
        const Vector d = vp.means().col(j) - vp.means().col(k);
        const double lv = log_sf2 + 0.5 * (ell2.array().log() - tt.array().log()).sum() -
                          0.5 * (d.array().square() / tt.array()).sum();
        J(j, k) = J(k, j) = std::exp(lv);
      }
    }
    if (n > 0) {
      const Matrix V = post.solve_lower(Z);
      J.noalias() -= V.transpose() * V;
    }
    double var = vp.weights().dot(J * vp.weights());
    if (var < 0) {
      ++negative_quadrature_variance_clamps();
      var = 0;
    }
    out.variance = var;
  }
  return out;
}

double expected_log_joint_variance(const VariationalPosterior& vp, const GPPosterior& post) {
  return expected_log_joint(vp, post, false, true).variance;
}

MarginalQuadrature marginal_expected_log_joint(const VariationalPosterior& vp,
                                               const HyperparamSampleSet& samples,
                                               bool with_gradient, bool with_variance) {
  const auto S = static_cast<Eigen::Index>(samples.size());
  MarginalQuadrature out;
  out.sample_means.resize(S);
  out.sample_variances = Vector::Zero(S);
  if (with_gradient) out.gradient = Vector::Zero(vp.param_count());
  for (Eigen::Index s = 0; s < S; ++s) {
    const QuadratureResult r =
        expected_log_joint(vp, samples[static_cast<std::size_t>(s)], with_gradient, with_variance);
    out.sample_means[s] = r.mean;
    out.sample_variances[s] = r.variance;
    if (with_gradient) out.gradient += r.gradient;
  }
  if (with_gradient) out.gradient /= static_cast<double>(S);
  const Prediction p = combine_samples(out.sample_means, out.sample_variances);
  out.mean = p.mean;
  out.variance = with_variance ? p.variance : 0.0;
  return out;
}

ELBOEstimate elbo(const VariationalPosterior& vp, const HyperparamSampleSet& samples,
                  int n_entropy, Rng& rng) {
  const MarginalQuadrature q = marginal_expected_log_joint(vp, samples, false, true);
  ELBOEstimate est;
  est.g_mean = q.mean;
  est.g_variance = q.variance;
  est.entropy = entropy_mc(vp, n_entropy, rng, false).value;
  est.elbo_mean = est.g_mean + est.entropy;
  est.elbo_sd = std::sqrt(std::max(q.variance, 0.0));
  return est;
}

double elcbo(const ELBOEstimate& est, double beta) {
  if (beta < 0) throw std::invalid_argument("elcbo: beta must be non-negative");
  return est.elbo_mean - beta * est.elbo_sd;
}

}  // namespace vbmc
