#include "vbmc/vbmc.hpp"

#include <algorithm>
#include <numeric>

namespace vbmc {

ParameterTransform ProblemSpec::transform() const {
  if (lb.size() == 0 && ub.size() == 0) return ParameterTransform::unbounded(plb, pub);
  return ParameterTransform(lb, ub, plb, pub);
}

Matrix initial_design_points(const Vector& x0_internal, int n_init, Rng& rng) {
  if (n_init < 1) throw std::invalid_argument("initial design: n_init must be >= 1");
  const auto D = x0_internal.size();
  Matrix pts(n_init, D);
  pts.row(0) = x0_internal.transpose();
  for (int r = 1; r < n_init; ++r) {
    for (Eigen::Index i = 0; i < D; ++i) pts(r, i) = rng.uniform(-0.5, 0.5);
  }
  return pts;
}

bool warmup_should_end(const std::vector<double>& elcbo_history, double threshold, int patience) {
  const auto n = static_cast<int>(elcbo_history.size());
  if (n < patience + 1) return false;
  for (int i = n - patience; i < n; ++i) {
    const std::size_t u = static_cast<std::size_t>(i);
    if (!(elcbo_history[u] - elcbo_history[u - 1] < threshold)) return false;
  }
  return true;
}

TrainingSet trim_training_set(const TrainingSet& data, double offset) {
  const double cut = data.y.maxCoeff() - offset;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    if (data.y[i] >= cut) keep.push_back(i);
  }
  TrainingSet out;
  out.X.resize(static_cast<Eigen::Index>(keep.size()), data.dim());
  out.y.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    out.X.row(static_cast<Eigen::Index>(j)) = data.X.row(keep[j]);
    out.y[static_cast<Eigen::Index>(j)] = data.y[keep[j]];
  }
  return out;
}

int max_components(Eigen::Index n) {
  return std::max(1, static_cast<int>(std::ceil(std::pow(static_cast<double>(n), 2.0 / 3.0) - 1e-9)));
}

int update_component_count(int K, Eigen::Index n, const std::vector<double>& elcbo_history,
                           std::optional<double> last_rho, bool pruned_last, int n_recent) {
  const int kmax = max_components(n);
  if (K >= kmax) return K;
  int inc = 0;
  if (elcbo_history.size() >= 2 && !pruned_last) {
    const auto last = elcbo_history.end() - 1;
    const auto first = elcbo_history.size() - 1 > static_cast<std::size_t>(n_recent)
                           ? last - n_recent
                           : elcbo_history.begin();
    const double previous_best = *std::max_element(first, last);
    if (*last > previous_best) {
      inc = 1;
      if (last_rho && *last_rho < 1.0) inc += 2;
    }
  }
  return std::min(K + inc, kmax);
}

ReliabilityFeatures reliability_index(double elbo_prev, double elbo_cur, double sd_cur,
                                      const VariationalPosterior& vp_prev,
                                      const VariationalPosterior& vp_cur,
                                      const VBMCOptions& options) {
  ReliabilityFeatures f;
  f.elbo_change = std::abs(elbo_cur - elbo_prev) / options.delta_sd;
  f.elbo_sd = sd_cur / options.delta_sd;
  double kl = kInf;
  try {
    kl = gaussianized_skl(vp_cur, vp_prev);
  } catch (const NumericalError&) {
  }
  f.kl_change = kl / options.delta_kl(vp_cur.dim());
  return f;
}

double least_squares_slope(const std::vector<double>& ys) {
  const auto n = ys.size();
  if (n < 2) return 0.0;
  const double xbar = 0.5 * static_cast<double>(n - 1);
  const double ybar = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(n);
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(i) - xbar;
    sxy += dx * (ys[i] - ybar);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

TerminationCheck check_termination(const std::vector<IterationRecord>& history, int evaluations,
                                   int budget, const VBMCOptions& options) {
  TerminationCheck c;
  if (evaluations >= budget) c.done = true;
  if (history.empty()) return c;
  const IterationRecord& cur = history.back();
  const auto window = static_cast<std::size_t>(options.n_stable);
  if (cur.warmup || !cur.features || !cur.features->all_below_one()) return c;
  if (history.size() < window + 1) return c;
  const std::size_t start = history.size() - 1 - window;
  int exceptions = 0;
  std::vector<double> elcbos;
  for (std::size_t i = start; i < history.size(); ++i) {
    const IterationRecord& r = history[i];
    if (r.warmup || !r.features) return c;
    if (i + 1 < history.size() && !(r.features->rho() < 1.0)) ++exceptions;
    elcbos.push_back(r.elcbo);
  }
  if (exceptions > 1) return c;
  if (!(least_squares_slope(elcbos) < options.delta_impro)) return c;
  c.done = true;
  c.stable = true;
  return c;
}

std::size_t select_fallback_iteration(const std::vector<IterationRecord>& history,
                                      const VBMCOptions& options) {
  if (history.empty()) throw std::invalid_argument("fallback: empty history");
  const std::size_t window = static_cast<std::size_t>(std::max(options.n_stable, 1));
  const std::size_t first = history.size() > window ? history.size() - window : 0;
  const bool any_post = std::any_of(history.begin() + static_cast<std::ptrdiff_t>(first), history.end(),
                                    [](const auto& r) { return !r.warmup; });
  std::size_t chosen = history.size() - 1;
  double best = -kInf;
  for (std::size_t i = first; i < history.size(); ++i) {
    if (any_post && history[i].warmup) continue;
    const double v = history[i].elbo_mean - options.beta_fallback * history[i].elbo_sd;
    if (v > best) {
      best = v;
      chosen = i;
    }
  }
  return chosen;
}

GaussianMoments original_moments(const VariationalPosterior& vp, const ParameterTransform& t,
                                 Rng& rng, int n_samples) {
  const GaussianMoments m = vp.moments();
  if (t.all_unbounded()) {
    const Vector offset = t.affine_offset();
    const Vector scale = t.affine_scale();
    GaussianMoments out;
    out.mean = offset + scale.cwiseProduct(m.mean);
    out.cov = scale.asDiagonal() * m.cov * scale.asDiagonal();
    return out;
  }
  const Matrix xs = vp.sample(n_samples, rng);
  Matrix orig(xs.rows(), xs.cols());
  for (Eigen::Index i = 0; i < xs.rows(); ++i) {
    orig.row(i) = t.to_original(xs.row(i).transpose()).transpose();
  }
  GaussianMoments out;
  out.mean = orig.colwise().mean().transpose();
  const Matrix c = orig.rowwise() - out.mean.transpose();
  out.cov = c.transpose() * c / static_cast<double>(orig.rows() - 1);
  return out;
}

namespace {

class Loop {
 public:
  Loop(const ProblemSpec& problem, const VBMCOptions& options, Rng& rng,
       const IterationCallback& callback)
      : problem_(problem), opt_(options), rng_(rng), callback_(callback) {
    result_.transform = problem.transform();
    D_ = result_.transform.dim();
    budget_ = opt_.budget(D_);
  }

  InferenceResult run() {
    design();
    for (int t = 1; t <= opt_.max_iterations; ++t) {
      if (t > 1) {
        if (skip_active_) {
          skip_active_ = false;
        } else if (!active_sampling()) {
          result_.message = "aborted: repeated non-finite log-joint values";
          break;
        }
      }
      update_hyperparameters();
      optimize(t);
      const TerminationCheck check =
          check_termination(result_.history, evaluations_, budget_, opt_);
      if (check.stable) {
        result_.stable = true;
        result_.message = "converged: stable posterior";
        break;
      }
      if (check.done) {
        result_.message = "stopped: evaluation budget reached";
        break;
      }
      if (t == opt_.max_iterations) result_.message = "stopped: iteration limit reached";
    }
    finish();
    return std::move(result_);
  }

 private:
  // Evaluates the user function at an internal point and logs it.
  Evaluation evaluate(const Vector& x_int) {
    const ParameterTransform& tr = result_.transform;
    Evaluation e;
    e.x = tr.to_original(x_int);
    double lj = -kInf;
    try {
      lj = problem_.log_joint(e.x);
    } catch (const std::exception&) {
      lj = std::numeric_limits<double>::quiet_NaN();
    }
    e.log_joint = lj;
    e.y_internal = lj - tr.log_jacobian(e.x);
    e.finite = std::isfinite(e.y_internal);
    ++evaluations_;
    result_.evaluation_log.push_back(e);
    return e;
  }

  void design() {
    const ParameterTransform& tr = result_.transform;
    Vector x0 = problem_.x0.size() == D_ ? tr.to_internal(problem_.x0) : Vector::Zero(D_);
    const int n_init = std::min(opt_.n_init, budget_);
    const Matrix pts = initial_design_points(x0, n_init, rng_);
    TrainingSet data;
    data.X.resize(0, D_);
    for (Eigen::Index r = 0; r < pts.rows(); ++r) {
      const Vector x = pts.row(r).transpose();
      const Evaluation e = evaluate(x);
      if (e.finite && data.min_squared_distance(x) > kDuplicateTolerance) data = data.appended(x, e.y_internal);
    }
    if (data.size() == 0) throw std::runtime_error("vbmc: log joint is non-finite at every design point");
    data_ = std::make_shared<const TrainingSet>(std::move(data));

    Matrix mu(D_, 2);
    for (int k = 0; k < 2; ++k) mu.col(k) = x0 + opt_.init_mean_jitter * rng_.normal_vector(D_);
    vp_ = VariationalPosterior(Vector::Constant(2, 0.5), mu, Vector::Constant(2, opt_.init_sigma),
                               Vector::Ones(D_));
  }

  // Returns false when the run should abort.
  bool active_sampling() {
    const int batch = std::min(opt_.n_active, budget_ - evaluations_);
    for (int b = 0; b < batch; ++b) {
      Vector x;
      try {
        const AcquisitionContext ctx = make_acquisition_context(samples_, vp_, opt_.acquisition);
        x = optimize_acquisition(ctx, rng_, opt_.acquisition_options).x;
      } catch (const NumericalError&) {
        x.resize(D_);
        for (int i = 0; i < D_; ++i) x[i] = rng_.uniform(-0.5, 0.5);
      }
      const Evaluation e = evaluate(x);
      if (e.finite && samples_.data().min_squared_distance(x) > kDuplicateTolerance) {
        samples_.add_point(x, e.y_internal);
        data_ = samples_.data_ptr();
        consecutive_failures_ = 0;
      } else if (!e.finite && ++consecutive_failures_ >= 2 * opt_.n_active) {
        return false;
      }
    }
    return true;
  }

  void update_hyperparameters() {
    const auto n = data_->size();
    if (n < 2) {
      const Hyperprior prior = Hyperprior::empirical(*data_);
      GPHyperparams h = prior.initial(*data_);
      samples_ = HyperparamSampleSet({GPPosterior::fit(data_, h)});
      return;
    }
    if (!last_hyp_) {
      const Hyperprior prior = Hyperprior::empirical(*data_);
      last_hyp_ = optimize_hyperparameters(data_, prior.initial(*data_), rng_, opt_.map_restarts);
    }
    if (!stop_sampling_) {
      int n_gp = hyperparameter_sample_count(n, warmup_);
      if (warmup_) n_gp = std::min(n_gp, opt_.warmup_max_gp_samples);
      try {
        samples_ = sample_hyperparameters(data_, n_gp, *last_hyp_, rng_, opt_.slice);
      } catch (const SliceSamplingError& e) {
        samples_ = HyperparamSampleSet({GPPosterior::fit(data_, e.last_valid)});
      }
      last_hyp_ = samples_.posteriors().back().hyp();
    } else {
      const GPHyperparams h = optimize_hyperparameters(data_, *last_hyp_, rng_, opt_.map_restarts);
      samples_ = HyperparamSampleSet({GPPosterior::fit(data_, h)});
      last_hyp_ = h;
    }
  }

  ELBOEstimate estimate(const VariationalPosterior& vp) {
    return elbo(vp, samples_, opt_.n_entropy_final, rng_);
  }

  void optimize(int t) {
    IterationRecord rec;
    rec.iteration = t;
    rec.warmup = warmup_;

    int K = vp_.components();
    if (!warmup_) {
      std::vector<double> elcbos;
      for (const auto& r : result_.history) elcbos.push_back(r.elcbo);
      std::optional<double> last_rho;
      if (!result_.history.empty() && result_.history.back().features) {
        last_rho = result_.history.back().features->rho();
      }
      K = update_component_count(K, data_->size(), elcbos, last_rho, pruned_last_, opt_.n_recent);
    }
    StartingPointOptions sp;
    sp.n_fast = (t == 1 || first_post_warmup_) ? opt_.n_fast_first : opt_.n_fast;
    sp.n_entropy = opt_.n_entropy;
    sp.freeze_weights = warmup_;
    const VariationalPosterior start = select_starting_points(vp_, K, samples_, sp, rng_);
    first_post_warmup_ = false;

    ElboOptimOptions eo;
    eo.run = opt_.adam;
    eo.run.adam.alpha_max = warmup_ ? opt_.adam_alpha_warmup : opt_.adam_alpha;
    eo.n_entropy = opt_.n_entropy;
    eo.n_entropy_final = opt_.n_entropy_final;
    eo.freeze_weights = warmup_;
    ElboOptimResult res = optimize_elbo(start, samples_, eo, rng_);
    VariationalPosterior vp = res.vp;
    ELBOEstimate est = res.estimate;
    rec.adam_iterations = res.iterations;

    bool pruned = false;
    if (!warmup_) {
      bool again = true;
      while (again && vp.components() > 1) {
        again = false;
        std::vector<int> order(static_cast<std::size_t>(vp.components()));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return vp.weights()[a] < vp.weights()[b]; });
        for (int k : order) {
          if (!(vp.weights()[k] < opt_.w_min)) break;
          const VariationalPosterior reduced = vp.without_component(k);
          const ELBOEstimate est2 = estimate(reduced);
          if (elcbo(est2, opt_.beta_lcb) > elcbo(est, opt_.beta_lcb) - opt_.eps_prune) {
            vp = reduced;
            est = est2;
            pruned = again = true;
            break;
          }
        }
      }
    }
    pruned_last_ = pruned;
    vp_ = vp;

    rec.n_train = static_cast<int>(data_->size());
    rec.evaluations = evaluations_;
    rec.components = vp.components();
    rec.n_gp = static_cast<int>(samples_.size());
    rec.elbo_mean = est.elbo_mean;
    rec.elbo_sd = est.elbo_sd;
    rec.elcbo = elcbo(est, opt_.beta_lcb);
    rec.pruned = pruned;
    rec.stop_sampling = stop_sampling_;
    rec.vp = vp;
    if (!result_.history.empty()) {
      const IterationRecord& prev = result_.history.back();
      rec.features = reliability_index(prev.elbo_mean, est.elbo_mean, est.elbo_sd, prev.vp, vp, opt_);
    }

    if (samples_.size() >= 2) {
      const Vector g = marginal_expected_log_joint(vp, samples_, false, false).sample_means;
      rec.gp_sample_sd = std::sqrt((g.array() - g.mean()).square().sum() /
                                   static_cast<double>(g.size() - 1));
      stop_count_ = rec.gp_sample_sd < opt_.stop_sampling_sd ? stop_count_ + 1 : 0;
      if (stop_count_ >= opt_.stop_sampling_patience) stop_sampling_ = true;
    }

    result_.history.push_back(rec);
    if (warmup_) {
      warmup_elcbos_.push_back(rec.elcbo);
      if (warmup_should_end(warmup_elcbos_, opt_.warmup_improvement, opt_.warmup_patience)) {
        end_warmup();
      }
    }
    if (callback_) callback_(result_.history.back());
  }

  void end_warmup() {
    warmup_ = false;
    skip_active_ = true;
    first_post_warmup_ = true;
    TrainingSet trimmed = trim_training_set(*data_, opt_.trim_factor * D_);
    if (trimmed.size() != data_->size()) {
      data_ = std::make_shared<const TrainingSet>(std::move(trimmed));
      samples_.refit(data_);
    }
  }

  void finish() {
    auto& h = result_.history;
    result_.evaluations = evaluations_;
    result_.iterations = static_cast<int>(h.size());
    if (h.empty()) return;
    const std::size_t chosen = result_.stable ? h.size() - 1 : select_fallback_iteration(h, opt_);
    result_.chosen_iteration = static_cast<int>(chosen);
    result_.vp = h[chosen].vp;
    result_.elbo_mean = h[chosen].elbo_mean;
    result_.elbo_sd = h[chosen].elbo_sd;
  }

  const ProblemSpec& problem_;
  VBMCOptions opt_;
  Rng& rng_;
  const IterationCallback& callback_;
  InferenceResult result_;
  int D_ = 0;
  int budget_ = 0;
  int evaluations_ = 0;
  int consecutive_failures_ = 0;
  std::shared_ptr<const TrainingSet> data_;
  HyperparamSampleSet samples_;
  std::optional<GPHyperparams> last_hyp_;
  VariationalPosterior vp_;
  bool warmup_ = true;
  bool skip_active_ = false;
  bool first_post_warmup_ = false;
  bool stop_sampling_ = false;
  int stop_count_ = 0;
  bool pruned_last_ = false;
  std::vector<double> warmup_elcbos_;
};

}  // namespace

InferenceResult run_vbmc(const ProblemSpec& problem, const VBMCOptions& options, Rng& rng,
                         const IterationCallback& on_iteration) {
  if (!problem.log_joint) throw std::invalid_argument("vbmc: missing log joint");
  Loop loop(problem, options, rng, on_iteration);
  return loop.run();
}

}  // namespace vbmc
