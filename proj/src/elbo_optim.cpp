#include "vbmc/elbo_optim.hpp"

#include <algorithm>

namespace vbmc {

double learning_rate(int t, const AdamOptions& o) {
  return o.alpha_min + (o.alpha_max - o.alpha_min) * std::exp(-static_cast<double>(t) / o.tau);
}

void adam_step(AdamState& s, Vector& theta, const Vector& grad, const AdamOptions& o) {
  if (!grad.allFinite()) throw NumericalError("adam: non-finite gradient");
  if (s.m.size() != theta.size()) {
    s.m = Vector::Zero(theta.size());
    s.v = Vector::Zero(theta.size());
    s.t = 0;
  }
  const double lr = learning_rate(s.t, o);
  ++s.t;
  s.m = o.beta1 * s.m + (1 - o.beta1) * grad;
  s.v = o.beta2 * s.v + (1 - o.beta2) * grad.cwiseAbs2();
  const double c1 = 1 - std::pow(o.beta1, s.t);
  const double c2 = 1 - std::pow(o.beta2, s.t);
  theta.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + o.epsilon);
}

AdamRunResult adam_minimize(const StochasticObjective& objective, const Vector& theta0,
                            const AdamRunOptions& options, const Vector& mask, Rng& rng) {
  AdamRunResult res;
  res.theta = theta0;
  AdamState state;
  const int nb = std::max(options.adam.n_batch, 1);
  Vector grad;
  Vector window_start = theta0;
  double window_sum = 0;
  double prev_window = kInf;
  const double count = static_cast<double>(theta0.size());

  for (int it = 0; it < options.max_iterations; ++it) {
    double value = kInf;
    for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
      value = objective(res.theta, grad, rng);
      if (std::isfinite(value) && grad.allFinite()) break;
      if (attempt == options.max_retries) {
        throw NumericalError("adam: objective stayed non-finite after retries");
      }
    }
    if (mask.size() == grad.size()) grad = grad.cwiseProduct(mask);
    adam_step(state, res.theta, grad, options.adam);
    res.iterations = it + 1;
    window_sum += value;
    if ((it + 1) % nb == 0) {
      const double window = window_sum / nb;
      const double drift =
          std::sqrt((res.theta - window_start).squaredNorm() / std::max(count, 1.0)) / nb;
      res.last_window_value = window;
      if (std::abs(window - prev_window) < options.value_tolerance &&
          drift < options.param_tolerance) {
        res.converged = true;
        break;
      }
      prev_window = window;
      window_sum = 0;
      window_start = res.theta;
    }
  }
  return res;
}

double negative_elbo(const Vector& theta, int K, int D, const HyperparamSampleSet& samples,
                     int n_entropy, Rng& rng, Vector& grad) {
  const VariationalPosterior vp = VariationalPosterior::from_vector(theta, K, D);
  const MarginalQuadrature q = marginal_expected_log_joint(vp, samples, true, false);
  const EntropyEstimate h = entropy_mc(vp, n_entropy, rng, true);
  grad = -(q.gradient + h.gradient);
  return -(q.mean + h.value);
}

namespace {

Vector weight_mask(int K, int D, bool freeze) {
  Vector mask = Vector::Ones(VariationalPosterior::param_count(K, D));
  if (freeze) {
    for (int k = 0; k < K; ++k) mask[VariationalPosterior::off_eta(K, D, k)] = 0.0;
  }
  return mask;
}

}  // namespace

ElboOptimResult optimize_elbo(const VariationalPosterior& init, const HyperparamSampleSet& samples,
                              const ElboOptimOptions& options, Rng& rng) {
  const int K = init.components();
  const int D = init.dim();
  auto objective = [&](const Vector& theta, Vector& grad, Rng& r) {
    try {
      return negative_elbo(theta, K, D, samples, options.n_entropy, r, grad);
    } catch (const std::invalid_argument&) {
      // parameters overflowed to a non-representable posterior
      grad = Vector::Constant(theta.size(), kInf);
      return kInf;
    }
  };
  Vector theta0 = init.to_vector();
  if (options.freeze_weights) {
    // keep the frozen weights exactly as given
    for (int k = 0; k < K; ++k) {
      theta0[VariationalPosterior::off_eta(K, D, k)] = std::log(init.weights()[k]);
    }
  }
  const AdamRunResult run =
      adam_minimize(objective, theta0, options.run, weight_mask(K, D, options.freeze_weights), rng);

  ElboOptimResult out;
  out.vp = VariationalPosterior::from_vector(run.theta, K, D);
  if (options.freeze_weights) {
    out.vp = VariationalPosterior(init.weights(), out.vp.means(), out.vp.sigma(), out.vp.lambda());
  }
  out.iterations = run.iterations;
  out.converged = run.converged;
  out.estimate = elbo(out.vp, samples, options.n_entropy_final, rng);
  return out;
}

VariationalPosterior split_components(const VariationalPosterior& current, int k_target,
                                      double split_jitter, Rng& rng) {
  VariationalPosterior vp = current;
  while (vp.components() < k_target) {
    const Vector& w = vp.weights();
    double u = rng.uniform() * w.sum();
    int parent = 0;
    for (; parent < vp.components() - 1; ++parent) {
      u -= w[parent];
      if (u < 0) break;
    }
    const double s = vp.sigma()[parent];
    Vector mu = vp.means().col(parent);
    for (int i = 0; i < vp.dim(); ++i) mu[i] += split_jitter * s * vp.lambda()[i] * rng.normal();
    Vector nw = w;
    nw[parent] *= 0.5;
    vp = VariationalPosterior(nw, vp.means(), vp.sigma(), vp.lambda())
             .with_component(0.5 * w[parent], mu, s);
  }
  return vp;
}

VariationalPosterior select_starting_points(const VariationalPosterior& current, int k_target,
                                            const HyperparamSampleSet& samples,
                                            const StartingPointOptions& options, Rng& rng) {
  const int K = std::max(k_target, current.components());
  const VariationalPosterior base = split_components(current, K, options.split_jitter, rng);
  auto score = [&](const VariationalPosterior& vp, Rng& r) {
    const double g = marginal_expected_log_joint(vp, samples, false, false).mean;
    return g + entropy_mc(vp, options.n_entropy, r, false).value;
  };

  Rng base_rng = rng.split();
  VariationalPosterior best = base;
  double best_score = score(base, base_rng);
  const int n_candidates = std::max(options.n_fast * K, 1);
  for (int c = 1; c < n_candidates; ++c) {
    Rng r = rng.split();
    Matrix mu = base.means();
    Vector sigma = base.sigma();
    Vector w = base.weights();
    for (int k = 0; k < K; ++k) {
      for (int i = 0; i < base.dim(); ++i) {
        mu(i, k) += options.mean_jitter * sigma[k] * base.lambda()[i] * r.normal();
      }
      sigma[k] *= std::exp(options.scale_jitter * r.normal());
      if (!options.freeze_weights) w[k] *= std::exp(options.weight_jitter * r.normal());
    }
    VariationalPosterior cand(w, mu, sigma, base.lambda());
    const double s = score(cand, r);
    if (s > best_score) {
      best_score = s;
      best = std::move(cand);
    }
  }
  return best;
}

}  // namespace vbmc
