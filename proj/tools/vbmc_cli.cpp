// Command-line front end: generate, run, summarize, infer.

#include "vbmc/benchmark.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace vbmc;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, sep)) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

// "0-19", "1,3,5" or a mix such as "0-4,10".
std::vector<std::uint64_t> parse_seed_list(const std::string& spec) {
  std::vector<std::uint64_t> out;
  for (const auto& tok : split(spec, ',')) {
    const auto dash = tok.find('-');
    if (dash == std::string::npos) {
      out.push_back(std::stoull(tok));
      continue;
    }
    const auto lo = std::stoull(tok.substr(0, dash));
    const auto hi = std::stoull(tok.substr(dash + 1));
    if (hi < lo) throw std::invalid_argument("bad seed range '" + tok + "'");
    for (auto s = lo; s <= hi; ++s) out.push_back(s);
  }
  if (out.empty()) throw std::invalid_argument("empty seed list");
  return out;
}

std::vector<int> parse_int_list(const std::string& spec) {
  std::vector<int> out;
  for (const auto& s : parse_seed_list(spec)) out.push_back(static_cast<int>(s));
  return out;
}

std::vector<Family> parse_families(const std::string& spec) {
  std::vector<Family> out;
  for (const auto& tok : split(spec, ',')) out.push_back(parse_family(tok));
  if (out.empty()) throw std::invalid_argument("empty family list");
  return out;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::ofstream open_out(const fs::path& path, bool append = false) {
  std::ofstream f(path, append ? std::ios::app : std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  return f;
}

void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
  os << "family,D,runs,completed,lml_err_median,lml_err_ci_low,lml_err_ci_high,"
        "gskl_median,gskl_ci_low,gskl_ci_high\n";
  for (const auto& r : rows) {
    os << to_string(r.family) << ',' << r.dim << ',' << r.runs << ',' << r.completed << ','
       << fmt(r.lml_error.median) << ',' << fmt(r.lml_error.lower) << ',' << fmt(r.lml_error.upper)
       << ',' << fmt(r.gskl.median) << ',' << fmt(r.gskl.lower) << ',' << fmt(r.gskl.upper) << '\n';
  }
}

std::vector<BenchmarkRecord> read_records(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::vector<BenchmarkRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(Json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

int cmd_generate(const std::string& families, const std::string& dims, std::uint64_t problem_seed,
                 const std::string& out) {
  std::ofstream file;
  std::ostream* os = &std::cout;
  if (!out.empty() && out != "-") {
    file = open_out(out);
    os = &file;
  }
  for (Family f : parse_families(families)) {
    for (int D : parse_int_list(dims)) {
      if (f == Family::kCigar && D < 2) {
        std::cerr << "skipping cigar D=" << D << " (requires D >= 2)\n";
        continue;
      }
      *os << to_json(make_problem(f, D, problem_seed)).dump() << '\n';
    }
  }
  return 0;
}

struct RunArgs {
  std::string families = "lumpy";
  std::string dims = "2";
  std::string seeds = "0-19";
  std::string acq = "pro";
  double budget_multiplier = 50.0;
  std::string out = "results";
  std::uint64_t problem_seed = 1;
  std::uint64_t meta_seed = 0;
  bool append = false;
  bool no_wall_time = false;
  std::string options_file;
};

int cmd_run(const RunArgs& a) {
  BenchmarkConfig cfg;
  cfg.families = parse_families(a.families);
  cfg.dims = parse_int_list(a.dims);
  cfg.seeds = parse_seed_list(a.seeds);
  cfg.acquisition = parse_acquisition(a.acq);
  cfg.budget_multiplier = a.budget_multiplier;
  cfg.problem_seed = a.problem_seed;
  cfg.meta_seed = a.meta_seed;
  cfg.record_wall_time = !a.no_wall_time;
  if (!a.options_file.empty()) {
    std::ifstream in(a.options_file);
    if (!in) throw std::runtime_error("cannot read '" + a.options_file + "'");
    apply_options(Json::parse(in), cfg.options);
  }

  fs::create_directories(a.out);
  const fs::path dir(a.out);
  const bool fresh_csv = !a.append || !fs::exists(dir / "runs.csv");
  auto records = open_out(dir / "records.jsonl", a.append);
  auto runs = open_out(dir / "runs.csv", !fresh_csv ? true : false);
  auto checkpoints = open_out(dir / "checkpoints.csv", !fresh_csv ? true : false);
  if (fresh_csv) {
    runs << "family,D,seed,evals,lml_err,gskl\n";
    checkpoints << "family,D,seed,acq,iteration,evals,elbo_mean,elbo_sd,lml_err,gskl\n";
  }

  std::size_t n_done = 0, n_failed = 0;
  run_benchmark(cfg, [&](const BenchmarkRecord& r) {
    records << to_json(r).dump() << '\n' << std::flush;
    runs << to_string(r.family) << ',' << r.dim << ',' << r.seed << ',' << r.evaluations << ','
         << (r.completed ? fmt(r.lml_error) : "nan") << ',' << (r.completed ? fmt(r.gskl) : "nan")
         << '\n' << std::flush;
    for (const auto& c : r.checkpoints) {
      checkpoints << to_string(r.family) << ',' << r.dim << ',' << r.seed << ',' << r.acquisition << ','
                  << c.iteration << ',' << c.evaluations << ',' << fmt(c.elbo_mean) << ','
                  << fmt(c.elbo_sd) << ',' << fmt(c.lml_error) << ',' << fmt(c.gskl) << '\n';
    }
    checkpoints.flush();
    ++n_done;
    if (!r.completed) ++n_failed;
    std::cerr << r.problem_id << " seed " << r.seed << ": "
              << (r.completed ? "lml_err " + fmt(r.lml_error) + " gskl " + fmt(r.gskl) +
                                    " evals " + std::to_string(r.evaluations)
                              : "FAILED " + r.error)
              << '\n';
  });
  std::cerr << n_done << " runs, " << n_failed << " failed; records in " << dir.string() << '\n';
  return 0;
}

int cmd_summarize(const std::string& in, const std::string& out, int resamples, std::uint64_t seed) {
  fs::path path(in);
  if (fs::is_directory(path)) path /= "records.jsonl";
  const auto rows = summarize(read_records(path), resamples, seed);
  if (out.empty() || out == "-") {
    write_summary_csv(std::cout, rows);
  } else {
    auto f = open_out(out);
    write_summary_csv(f, rows);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// infer

Matrix matrix_from_json(const Json& j) {
  if (!j.is_array() || j.empty()) throw std::invalid_argument("expected a non-empty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  Matrix m;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Vector r = vector_from_json(j[static_cast<std::size_t>(i)]);
    if (i == 0) m.resize(rows, r.size());
    if (r.size() != m.cols()) throw std::invalid_argument("ragged matrix");
    m.row(i) = r.transpose();
  }
  return m;
}

struct GaussianTarget {
  Vector lik_mean;
  Eigen::LLT<Matrix> lik;
  Vector prior_mean, prior_sd;
  double lml = 0.0;
};

int cmd_infer(const std::string& config_path, const std::string& out_override) {
  std::ifstream in(config_path);
  if (!in) throw std::runtime_error("cannot read config '" + config_path + "'");
  const Json cfg = Json::parse(in, nullptr, true, true);

  const Json& pj = cfg.at("problem");
  const std::string type = pj.value("type", "synthetic");
  ProblemSpec spec;
  std::optional<SyntheticProblem> synthetic;
  std::shared_ptr<GaussianTarget> gauss;
  double lml_true = std::numeric_limits<double>::quiet_NaN();
  std::optional<GaussianMoments> truth;
  if (type == "synthetic") {
    synthetic = make_problem(parse_family(pj.at("family").get<std::string>()), pj.at("dim").get<int>(),
                             pj.value("seed", std::uint64_t{1}));
    const SyntheticProblem* p = &*synthetic;
    spec.log_joint = [p](const Vector& x) { return p->log_joint(x); };
    const StartBox box = start_box(*p);
    spec.plb = box.lower;
    spec.pub = box.upper;
    spec.x0 = p->prior_mean;
    lml_true = p->lml;
    truth = p->posterior;
  } else if (type == "gaussian") {
    gauss = std::make_shared<GaussianTarget>();
    gauss->lik_mean = vector_from_json(pj.at("mean"));
    const Matrix cov = matrix_from_json(pj.at("cov"));
    gauss->lik.compute(cov);
    if (gauss->lik.info() != Eigen::Success) throw std::invalid_argument("problem.cov is not positive definite");
    gauss->prior_mean = vector_from_json(pj.at("prior_mean"));
    gauss->prior_sd = vector_from_json(pj.at("prior_sd"));
    const auto D = gauss->lik_mean.size();
    if (cov.rows() != D || gauss->prior_mean.size() != D || gauss->prior_sd.size() != D) {
      throw std::invalid_argument("problem: inconsistent dimensions");
    }
    const double lik_logdet = 2.0 * Matrix(gauss->lik.matrixL()).diagonal().array().log().sum();
    spec.log_joint = [g = gauss, lik_logdet](const Vector& x) {
      const double n = static_cast<double>(x.size());
      const Vector r = g->lik.matrixL().solve(x - g->lik_mean);
      const double ll = -0.5 * r.squaredNorm() - 0.5 * lik_logdet - 0.5 * n * kLog2Pi;
      const double lp = -0.5 * ((x - g->prior_mean).array() / g->prior_sd.array()).square().sum() -
                        g->prior_sd.array().log().sum() - 0.5 * n * kLog2Pi;
      return ll + lp;
    };
    // conjugate ground truth, valid only without hard bounds
    const Matrix prior_cov = gauss->prior_sd.cwiseAbs2().asDiagonal();
    const Matrix total = cov + prior_cov;
    Eigen::LLT<Matrix> tl(total);
    const Vector r = tl.matrixL().solve(gauss->lik_mean - gauss->prior_mean);
    gauss->lml = -0.5 * r.squaredNorm() - Matrix(tl.matrixL()).diagonal().array().log().sum() -
                 0.5 * static_cast<double>(D) * kLog2Pi;
    const Matrix post_cov = (cov.inverse() + Matrix(prior_cov.inverse())).inverse();
    truth = GaussianMoments{post_cov * (cov.ldlt().solve(gauss->lik_mean) +
                                        prior_cov.ldlt().solve(gauss->prior_mean)),
                            0.5 * (post_cov + post_cov.transpose())};
    lml_true = gauss->lml;
    spec.plb = gauss->prior_mean - gauss->prior_sd;
    spec.pub = gauss->prior_mean + gauss->prior_sd;
    spec.x0 = gauss->prior_mean;
  } else {
    throw std::invalid_argument("problem.type must be 'synthetic' or 'gaussian'");
  }

  if (cfg.contains("x0")) spec.x0 = vector_from_json(cfg["x0"]);
  if (cfg.contains("plb")) spec.plb = vector_from_json(cfg["plb"]);
  if (cfg.contains("pub")) spec.pub = vector_from_json(cfg["pub"]);
  if (cfg.contains("lb")) spec.lb = vector_from_json(cfg["lb"]);
  if (cfg.contains("ub")) spec.ub = vector_from_json(cfg["ub"]);
  if (spec.lb.size() > 0 || spec.ub.size() > 0) {
    const bool bounded = (spec.lb.array().isFinite() || spec.ub.array().isFinite()).any();
    if (bounded) {
      // the closed-form ground truth ignores truncation
      lml_true = std::numeric_limits<double>::quiet_NaN();
      truth.reset();
    }
  }

  VBMCOptions options;
  if (cfg.contains("options")) apply_options(cfg["options"], options);
  Rng rng(cfg.value("seed", std::uint64_t{0}));

  std::ofstream diag;
  if (cfg.contains("diagnostics")) diag = open_out(cfg["diagnostics"].get<std::string>());
  const ParameterTransform transform = spec.transform();
  auto on_iteration = [&](const IterationRecord& r) {
    if (diag.is_open()) diag << to_json(r).dump() << '\n' << std::flush;
  };
  const InferenceResult res = run_vbmc(spec, options, rng, on_iteration);
  Rng moment_rng(Rng::mix(cfg.value("seed", std::uint64_t{0}) + 1));
  const GaussianMoments moments = original_moments(res.vp, transform, moment_rng);

  Json out = to_json(res, moments);
  if (std::isfinite(lml_true)) {
    out["lml_true"] = lml_true;
    out["lml_error"] = std::abs(res.elbo_mean - lml_true);
  }
  if (truth) out["gskl"] = gaussian_skl(moments, *truth);

  const std::string out_path = !out_override.empty() ? out_override : cfg.value("output", std::string{});
  if (out_path.empty() || out_path == "-") {
    std::cout << out.dump(2) << '\n';
  } else {
    auto f = open_out(out_path);
    f << out.dump(2) << '\n';
    std::cerr << "elbo " << fmt(res.elbo_mean) << " +- " << fmt(res.elbo_sd) << " ("
              << (res.stable ? "stable" : "not stable") << ", " << res.evaluations
              << " evaluations); result in " << out_path << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational Bayesian Monte Carlo: inference and synthetic benchmark"};
  app.require_subcommand(1);

  std::string gen_families = "lumpy,student,cigar", gen_dims = "2", gen_out;
  std::uint64_t gen_seed = 1;
  auto* gen = app.add_subcommand("generate", "Emit problem definitions with ground truth (JSON lines)");
  gen->add_option("--family", gen_families, "Comma-separated families: lumpy, student, cigar");
  gen->add_option("--dims", gen_dims, "Dimensions, e.g. 2,6 or 1-6");
  gen->add_option("--problem-seed", gen_seed, "Seed of the problem instance");
  gen->add_option("--out", gen_out, "Output file (default stdout)");

  RunArgs ra;
  auto* run = app.add_subcommand("run", "Run a benchmark sweep; workers from VBMC_WORKERS");
  run->add_option("--family", ra.families, "Comma-separated families");
  run->add_option("--dims", ra.dims, "Dimensions, e.g. 2,6");
  run->add_option("--seeds", ra.seeds, "Run seeds, e.g. 0-19 or 1,2,3");
  run->add_option("--acq", ra.acq, "Acquisition function")->check(CLI::IsMember({"us", "pro"}));
  run->add_option("--budget-multiplier", ra.budget_multiplier, "Budget = multiplier * (D + 2)")
      ->check(CLI::PositiveNumber);
  run->add_option("--out", ra.out, "Output directory");
  run->add_option("--problem-seed", ra.problem_seed, "Seed of the problem instances");
  run->add_option("--meta-seed", ra.meta_seed, "Seed mixed into every run stream");
  run->add_option("--options", ra.options_file, "JSON file with option overrides");
  run->add_flag("--append", ra.append, "Append to existing records instead of truncating");
  run->add_flag("--no-wall-time", ra.no_wall_time, "Omit wall time so records are reproducible");

  std::string sum_in = "results", sum_out;
  int sum_resamples = 1000;
  std::uint64_t sum_seed = 0;
  auto* sum = app.add_subcommand("summarize", "Median and bootstrap 95% CI per problem, as CSV");
  sum->add_option("input", sum_in, "records.jsonl or a run output directory");
  sum->add_option("--out", sum_out, "CSV path (default stdout)");
  sum->add_option("--resamples", sum_resamples, "Bootstrap resamples")->check(CLI::PositiveNumber);
  sum->add_option("--seed", sum_seed, "Bootstrap seed");

  std::string infer_config, infer_out;
  auto* inf = app.add_subcommand("infer", "Run inference on one problem described by a JSON config");
  inf->add_option("config", infer_config, "Config file")->required()->check(CLI::ExistingFile);
  inf->add_option("--out", infer_out, "Result path (overrides the config's output field)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_generate(gen_families, gen_dims, gen_seed, gen_out);
    if (*run) return cmd_run(ra);
    if (*sum) return cmd_summarize(sum_in, sum_out, sum_resamples, sum_seed);
    if (*inf) return cmd_infer(infer_config, infer_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
