#include "vbmc/benchmark.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <map>
#include <mutex>
#include <thread>

namespace vbmc {

Family parse_family(const std::string& name) {
  if (name == "lumpy") return Family::kLumpy;
  if (name == "student") return Family::kStudent;
  if (name == "cigar") return Family::kCigar;
  throw std::invalid_argument("unknown family '" + name + "' (expected lumpy, student or cigar)");
}

std::string to_string(Family f) {
  switch (f) {
    case Family::kLumpy: return "lumpy";
    case Family::kStudent: return "student";
    case Family::kCigar: return "cigar";
  }
  return "?";
}

std::string SyntheticProblem::id() const {
  std::string s = to_string(family) + "-D" + std::to_string(dim);
  if (family != Family::kStudent) s += "-s" + std::to_string(seed);
  return s;
}

namespace {

double log_normal_diag(const Vector& x, const Vector& mean, const Vector& sd) {
  return -0.5 * ((x - mean).array() / sd.array()).square().sum() - sd.array().log().sum() -
         0.5 * static_cast<double>(x.size()) * kLog2Pi;
}

double log_student(double x, double nu) {
  return std::lgamma(0.5 * (nu + 1)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * std::numbers::pi) -
         0.5 * (nu + 1) * std::log1p(x * x / nu);
}

double log_normal_full(const Vector& x, const Vector& mean, const Matrix& cov) {
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) throw NumericalError("covariance not positive definite");
  const Vector z = llt.matrixL().solve(x - mean);
  const double logdet = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
  return -0.5 * z.squaredNorm() - 0.5 * logdet - 0.5 * static_cast<double>(x.size()) * kLog2Pi;
}

}  // namespace

double SyntheticProblem::log_likelihood(const Vector& x) const {
  switch (family) {
    case Family::kLumpy: {
      Vector terms(mix_weights.size());
      for (Eigen::Index j = 0; j < terms.size(); ++j) {
        terms[j] = std::log(mix_weights[j]) + log_normal_diag(x, mix_means.col(j), mix_sds.col(j));
      }
      return log_sum_exp(terms);
    }
    case Family::kStudent: {
      double s = 0;
      for (int i = 0; i < dim; ++i) s += log_student(x[i], dof[i]);
      return s;
    }
    case Family::kCigar:
      return log_normal_full(x, Vector::Zero(dim), lik_cov);
  }
  return -kInf;
}

double SyntheticProblem::log_prior(const Vector& x) const {
  return log_normal_diag(x, prior_mean, prior_sd);
}

SyntheticProblem make_lumpy(int D, std::uint64_t seed) {
  if (D < 1) throw std::invalid_argument("make_lumpy: D >= 1");
  SyntheticProblem p;
  p.family = Family::kLumpy;
  p.dim = D;
  p.seed = seed;
  Rng rng(Rng::mix(seed ^ 0x6c756d7079ULL));
  const int M = kLumpyComponents;
  p.mix_means.resize(D, M);
  p.mix_sds.resize(D, M);
  p.mix_weights.resize(M);
  for (int j = 0; j < M; ++j) {
    for (int i = 0; i < D; ++i) {
      p.mix_means(i, j) = rng.uniform();
      p.mix_sds(i, j) = rng.uniform(0.2, 0.6);
    }
    p.mix_weights[j] = rng.gamma(1.0);
  }
  p.mix_weights /= p.mix_weights.sum();

  const Vector lik_mean = p.mix_means * p.mix_weights;
  Vector lik_var = Vector::Zero(D);
  for (int j = 0; j < M; ++j) {
    lik_var += p.mix_weights[j] *
               (p.mix_sds.col(j).cwiseAbs2() + (p.mix_means.col(j) - lik_mean).cwiseAbs2());
  }
  p.prior_mean = Vector::Constant(D, 0.5);
  p.prior_sd = p.prior_sd_multiplier * lik_var.cwiseSqrt();

  // each component times the prior is an unnormalized Gaussian
  const Vector prior_var = p.prior_sd.cwiseAbs2();
  Vector log_z(M);
  Matrix post_means(D, M), post_vars(D, M);
  for (int j = 0; j < M; ++j) {
    const Vector s2 = p.mix_sds.col(j).cwiseAbs2();
    log_z[j] = std::log(p.mix_weights[j]) +
               log_normal_diag(p.prior_mean, p.mix_means.col(j), (s2 + prior_var).cwiseSqrt());
    post_vars.col(j) = (s2.cwiseInverse() + prior_var.cwiseInverse()).cwiseInverse();
    post_means.col(j) = post_vars.col(j).cwiseProduct(
        p.mix_means.col(j).cwiseQuotient(s2) + p.prior_mean.cwiseQuotient(prior_var));
  }
  p.lml = log_sum_exp(log_z);
  const Vector pi = (log_z.array() - p.lml).exp();
  p.posterior.mean = post_means * pi;
  p.posterior.cov = Matrix::Zero(D, D);
  for (int j = 0; j < M; ++j) {
    const Vector d = post_means.col(j) - p.posterior.mean;
    p.posterior.cov += pi[j] * (d * d.transpose());
    p.posterior.cov.diagonal() += pi[j] * post_vars.col(j);
  }
  return p;
}

SyntheticProblem make_student(int D) {
  if (D < 1) throw std::invalid_argument("make_student: D >= 1");
  SyntheticProblem p;
  p.family = Family::kStudent;
  p.dim = D;
  p.dof.resize(D);
  const double hi = 2.0 + 0.5 * D;
  for (int i = 0; i < D; ++i) p.dof[i] = D == 1 ? 2.5 : 2.5 + (hi - 2.5) * i / (D - 1.0);
  p.prior_mean = Vector::Zero(D);
  p.prior_sd.resize(D);
  for (int i = 0; i < D; ++i) {
    p.prior_sd[i] = p.prior_sd_multiplier * std::sqrt(p.dof[i] / (p.dof[i] - 2.0));
  }

  // product structure: one 1-D integral per dimension
  boost::math::quadrature::exp_sinh<double> integrator;
  p.lml = 0;
  p.posterior.mean = Vector::Zero(D);
  p.posterior.cov = Matrix::Zero(D, D);
  for (int i = 0; i < D; ++i) {
    const double nu = p.dof[i];
    const double s = p.prior_sd[i];
    auto density = [&](double x) {
      return std::exp(log_student(x, nu) - 0.5 * x * x / (s * s) - std::log(s) - 0.5 * kLog2Pi);
    };
    double err = 0;
    const double z = 2.0 * integrator.integrate(density, 0.0, kInf, 1e-13, &err);
    const double m2 =
        2.0 * integrator.integrate([&](double x) { return x * x * density(x); }, 0.0, kInf, 1e-13, &err);
    if (!(z > 0) || !std::isfinite(m2)) throw NumericalError("make_student: quadrature failed");
    p.lml += std::log(z);
    p.posterior.cov(i, i) = m2 / z;
  }
  return p;
}

SyntheticProblem make_cigar(int D, std::uint64_t seed) {
  if (D < 2) throw std::invalid_argument("make_cigar: D >= 2");
  SyntheticProblem p;
  p.family = Family::kCigar;
  p.dim = D;
  p.seed = seed;
  Rng rng(Rng::mix(seed ^ 0x6369676172ULL));
  // Haar-distributed rotation: QR of a Gaussian matrix with sign fix
  Matrix G(D, D);
  for (int i = 0; i < D; ++i) {
    for (int j = 0; j < D; ++j) G(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Matrix> qr(G);
  Matrix Q = qr.householderQ();
  const Matrix R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < D; ++j) {
    if (R(j, j) < 0) Q.col(j) *= -1.0;
  }
  p.rotation = Q;
  p.axis_sd = Vector::Ones(D);
  p.axis_sd[0] = 100.0;
  p.lik_cov = Q * p.axis_sd.cwiseAbs2().asDiagonal() * Q.transpose();
  p.lik_cov = 0.5 * (p.lik_cov + p.lik_cov.transpose());

  p.prior_mean = Vector::Zero(D);
  p.prior_sd = p.prior_sd_multiplier * p.lik_cov.diagonal().cwiseSqrt();
  const Matrix prior_cov = p.prior_sd.cwiseAbs2().asDiagonal();
  p.lml = log_normal_full(Vector::Zero(D), p.prior_mean, p.lik_cov + prior_cov);
  const Matrix prec = p.lik_cov.inverse() + Matrix(p.prior_sd.cwiseAbs2().cwiseInverse().asDiagonal());
  p.posterior.cov = prec.inverse();
  p.posterior.cov = 0.5 * (p.posterior.cov + p.posterior.cov.transpose());
  p.posterior.mean = Vector::Zero(D);
  return p;
}

SyntheticProblem make_problem(Family family, int D, std::uint64_t seed) {
  switch (family) {
    case Family::kLumpy: return make_lumpy(D, seed);
    case Family::kStudent: return make_student(D);
    case Family::kCigar: return make_cigar(D, seed);
  }
  throw std::invalid_argument("unknown family");
}

Json to_json(const SyntheticProblem& p) {
  Json j{{"id", p.id()},
         {"family", to_string(p.family)},
         {"D", p.dim},
         {"prior_mean", vector_to_json(p.prior_mean)},
         {"prior_sd", vector_to_json(p.prior_sd)},
         {"prior_sd_multiplier", p.prior_sd_multiplier},
         {"ground_truth", {{"lml", p.lml}, {"posterior", to_json(p.posterior)}}}};
  if (p.family != Family::kStudent) j["seed"] = p.seed;
  if (p.family == Family::kLumpy) {
    Json means = Json::array(), sds = Json::array();
    for (Eigen::Index k = 0; k < p.mix_means.cols(); ++k) {
      means.push_back(vector_to_json(p.mix_means.col(k)));
      sds.push_back(vector_to_json(p.mix_sds.col(k)));
    }
    j["components"] = {{"weights", vector_to_json(p.mix_weights)}, {"means", means}, {"sds", sds}};
  } else if (p.family == Family::kStudent) {
    j["dof"] = vector_to_json(p.dof);
  } else {
    Json rot = Json::array();
    for (Eigen::Index i = 0; i < p.rotation.rows(); ++i) rot.push_back(vector_to_json(p.rotation.row(i).transpose()));
    j["rotation"] = rot;
    j["axis_sd"] = vector_to_json(p.axis_sd);
  }
  return j;
}

StartBox start_box(const SyntheticProblem& p) {
  return {p.prior_mean - p.prior_sd, p.prior_mean + p.prior_sd};
}

double metric_lml_error(double elbo_mean, const SyntheticProblem& p) {
  return std::abs(elbo_mean - p.lml);
}

double metric_gskl(const GaussianMoments& moments, const SyntheticProblem& p) {
  return gaussian_skl(moments, p.posterior);
}

// ---------------------------------------------------------------------------
// Records

Json to_json(const BenchmarkRecord& r) {
  Json cps = Json::array();
  for (const auto& c : r.checkpoints) {
    cps.push_back({{"iteration", c.iteration},
                   {"evaluations", c.evaluations},
                   {"elbo_mean", c.elbo_mean},
                   {"elbo_sd", c.elbo_sd},
                   {"lml_error", c.lml_error},
                   {"gskl", c.gskl}});
  }
  Json j{{"problem_id", r.problem_id},
         {"family", to_string(r.family)},
         {"D", r.dim},
         {"seed", r.seed},
         {"acquisition", r.acquisition},
         {"budget_multiplier", r.budget_multiplier},
         {"budget", r.budget},
         {"completed", r.completed},
         {"lml_true", r.lml_true},
         {"elbo_mean", r.elbo_mean},
         {"elbo_sd", r.elbo_sd},
         {"lml_error", r.lml_error},
         {"gskl", r.gskl},
         {"stable", r.stable},
         {"iterations", r.iterations},
         {"evaluations", r.evaluations},
         {"checkpoints", cps}};
  if (!r.error.empty()) j["error"] = r.error;
  if (r.wall_time_s >= 0) j["wall_time_s"] = r.wall_time_s;
  // non-finite metrics would not survive JSON; mark them as null
  for (const char* key : {"elbo_mean", "elbo_sd", "lml_error", "gskl"}) {
    if (!std::isfinite(j[key].get<double>())) j[key] = nullptr;
  }
  return j;
}

BenchmarkRecord record_from_json(const Json& j) {
  auto num = [](const Json& v) {
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  BenchmarkRecord r;
  r.problem_id = j.at("problem_id").get<std::string>();
  r.family = parse_family(j.at("family").get<std::string>());
  r.dim = j.at("D").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.acquisition = j.value("acquisition", "pro");
  r.budget_multiplier = j.value("budget_multiplier", 50.0);
  r.budget = j.value("budget", 0);
  r.completed = j.at("completed").get<bool>();
  r.error = j.value("error", "");
  r.lml_true = num(j.at("lml_true"));
  r.elbo_mean = num(j.at("elbo_mean"));
  r.elbo_sd = num(j.at("elbo_sd"));
  r.lml_error = num(j.at("lml_error"));
  r.gskl = num(j.at("gskl"));
  r.stable = j.value("stable", false);
  r.iterations = j.value("iterations", 0);
  r.evaluations = j.value("evaluations", 0);
  r.wall_time_s = j.value("wall_time_s", -1.0);
  for (const auto& c : j.value("checkpoints", Json::array())) {
    Checkpoint cp;
    cp.iteration = c.at("iteration").get<int>();
    cp.evaluations = c.at("evaluations").get<int>();
    cp.elbo_mean = num(c.at("elbo_mean"));
    cp.elbo_sd = num(c.at("elbo_sd"));
    cp.lml_error = num(c.at("lml_error"));
    cp.gskl = num(c.at("gskl"));
    r.checkpoints.push_back(cp);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Runs

std::uint64_t run_stream_seed(std::uint64_t meta_seed, const std::string& problem_id,
                              std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : problem_id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return Rng::mix(Rng::mix(meta_seed) ^ Rng::mix(h) ^ Rng::mix(seed + 0x9e37ULL));
}

int worker_count_from_env() {
  const char* v = std::getenv("VBMC_WORKERS");
  if (!v) return 1;
  try {
    return std::max(1, std::stoi(v));
  } catch (const std::exception&) {
    return 1;
  }
}

BenchmarkRecord run_single(const SyntheticProblem& problem, std::uint64_t seed,
                           const BenchmarkConfig& config) {
  BenchmarkRecord rec;
  rec.problem_id = problem.id();
  rec.family = problem.family;
  rec.dim = problem.dim;
  rec.seed = seed;
  rec.acquisition = to_string(config.acquisition);
  rec.budget_multiplier = config.budget_multiplier;
  rec.budget = static_cast<int>(std::lround(config.budget_multiplier * (problem.dim + 2)));
  rec.lml_true = problem.lml;

  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(run_stream_seed(config.meta_seed, problem.id(), seed));
  const StartBox box = start_box(problem);
  ProblemSpec spec;
  spec.log_joint = [&problem](const Vector& x) { return problem.log_joint(x); };
  spec.plb = box.lower;
  spec.pub = box.upper;
  spec.x0.resize(problem.dim);
  for (int i = 0; i < problem.dim; ++i) spec.x0[i] = rng.uniform(box.lower[i], box.upper[i]);

  VBMCOptions options = config.options;
  options.max_fun_evals = rec.budget;
  options.acquisition = config.acquisition;
  const ParameterTransform transform = spec.transform();
  try {
    Rng metric_rng(Rng::mix(seed));
    auto on_iteration = [&](const IterationRecord& r) {
      Checkpoint c;
      c.iteration = r.iteration;
      c.evaluations = r.evaluations;
      c.elbo_mean = r.elbo_mean;
      c.elbo_sd = r.elbo_sd;
      c.lml_error = metric_lml_error(r.elbo_mean, problem);
      try {
        c.gskl = metric_gskl(original_moments(r.vp, transform, metric_rng), problem);
      } catch (const NumericalError&) {
        c.gskl = std::numeric_limits<double>::quiet_NaN();
      }
      rec.checkpoints.push_back(c);
    };
    const InferenceResult res = run_vbmc(spec, options, rng, on_iteration);
    rec.elbo_mean = res.elbo_mean;
    rec.elbo_sd = res.elbo_sd;
    rec.stable = res.stable;
    rec.iterations = res.iterations;
    rec.evaluations = res.evaluations;
    rec.lml_error = metric_lml_error(res.elbo_mean, problem);
    rec.gskl = metric_gskl(original_moments(res.vp, transform, metric_rng), problem);
    rec.completed = true;
  } catch (const std::exception& e) {
    rec.error = e.what();
    rec.completed = false;
  }
  if (config.record_wall_time) {
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return rec;
}

void run_benchmark(const BenchmarkConfig& config,
                   const std::function<void(const BenchmarkRecord&)>& sink) {
  struct Job {
    std::shared_ptr<const SyntheticProblem> problem;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (Family f : config.families) {
    for (int D : config.dims) {
      auto problem = std::make_shared<const SyntheticProblem>(make_problem(f, D, config.problem_seed));
      for (auto s : config.seeds) jobs.push_back({problem, s});
    }
  }
  const int workers = std::max(1, std::min<int>(config.workers > 0 ? config.workers : worker_count_from_env(),
                                                static_cast<int>(jobs.size())));
  std::vector<std::optional<BenchmarkRecord>> done(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex mutex;
  std::size_t next_emit = 0;

  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      BenchmarkRecord rec = run_single(*jobs[i].problem, jobs[i].seed, config);
      std::lock_guard<std::mutex> lock(mutex);
      done[i] = std::move(rec);
      while (next_emit < done.size() && done[next_emit]) {
        sink(*done[next_emit]);
        done[next_emit].reset();
        ++next_emit;
      }
    }
  };
  if (workers == 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// Summary

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

MedianCI bootstrap_median(const std::vector<double>& values, int resamples, std::uint64_t seed) {
  MedianCI out;
  if (values.empty()) {
    out.median = out.lower = out.upper = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  out.median = median_of(values);
  Rng rng(seed);
  std::vector<double> meds(static_cast<std::size_t>(resamples));
  std::vector<double> draw(values.size());
  for (auto& m : meds) {
    for (auto& d : draw) d = values[rng.index(values.size())];
    m = median_of(draw);
  }
  out.lower = percentile(meds, 0.025);
  out.upper = percentile(meds, 0.975);
  return out;
}

std::vector<SummaryRow> summarize(const std::vector<BenchmarkRecord>& records, int resamples,
                                  std::uint64_t seed) {
  std::map<std::pair<int, int>, std::vector<const BenchmarkRecord*>> groups;
  for (const auto& r : records) groups[{static_cast<int>(r.family), r.dim}].push_back(&r);
  std::vector<SummaryRow> rows;
  for (const auto& [key, recs] : groups) {
    SummaryRow row;
    row.family = static_cast<Family>(key.first);
    row.dim = key.second;
    row.runs = static_cast<int>(recs.size());
    std::vector<double> lml, kl;
    for (const auto* r : recs) {
      if (!r->completed) continue;
      ++row.completed;
      if (std::isfinite(r->lml_error)) lml.push_back(r->lml_error);
      kl.push_back(std::isnan(r->gskl) ? kInf : r->gskl);
    }
    row.lml_error = bootstrap_median(lml, resamples, seed);
    row.gskl = bootstrap_median(kl, resamples, seed + 1);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace vbmc
