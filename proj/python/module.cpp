#include "vbmc/benchmark.hpp"
#include "vbmc/serialization.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace vbmc;

namespace {

py::object to_python(const Json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

Json from_python(const py::object& o) {
  if (o.is_none()) return Json::object();
  return Json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

Vector optional_vector(const std::optional<Vector>& v, Eigen::Index D, double fill) {
  return v ? *v : Vector::Constant(D, fill);
}

VBMCOptions options_from(const py::object& o) {
  VBMCOptions opts;
  apply_options(from_python(o), opts);
  return opts;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Variational Bayesian Monte Carlo";

  py::class_<VariationalPosterior>(m, "VariationalPosterior")
      .def_property_readonly("components", &VariationalPosterior::components)
      .def_property_readonly("dim", &VariationalPosterior::dim)
      .def_property_readonly("weights", [](const VariationalPosterior& v) { return Vector(v.weights()); })
      .def_property_readonly("means", [](const VariationalPosterior& v) { return Matrix(v.means()); },
                             "D x K matrix of component means")
      .def_property_readonly("sigma", [](const VariationalPosterior& v) { return Vector(v.sigma()); })
      .def_property_readonly("lambda_", [](const VariationalPosterior& v) { return Vector(v.lambda()); })
      .def("logpdf", [](const VariationalPosterior& v, const Vector& x) { return v.logpdf(x); })
      .def("sample",
           [](const VariationalPosterior& v, int n, std::uint64_t seed) {
             Rng rng(seed);
             return v.sample(n, rng);
           },
           py::arg("n"), py::arg("seed") = 0)
      .def("to_dict", [](const VariationalPosterior& v) { return to_python(to_json(v)); });

  py::class_<InferenceResult>(m, "InferenceResult")
      .def_readonly("elbo_mean", &InferenceResult::elbo_mean)
      .def_readonly("elbo_sd", &InferenceResult::elbo_sd)
      .def_readonly("stable", &InferenceResult::stable)
      .def_readonly("iterations", &InferenceResult::iterations)
      .def_readonly("evaluations", &InferenceResult::evaluations)
      .def_readonly("message", &InferenceResult::message)
      .def_readonly("vp", &InferenceResult::vp, "Posterior in internal coordinates")
      .def("sample",
           [](const InferenceResult& r, int n, std::uint64_t seed) {
             Rng rng(seed);
             const Matrix internal = r.vp.sample(n, rng);
             Matrix out(internal.rows(), internal.cols());
             for (Eigen::Index i = 0; i < internal.rows(); ++i) {
               out.row(i) = r.transform.to_original(internal.row(i).transpose()).transpose();
             }
             return out;
           },
           py::arg("n"), py::arg("seed") = 0, "Draws from the posterior in original coordinates")
      .def("moments",
           [](const InferenceResult& r, int n, std::uint64_t seed) {
             Rng rng(seed);
             const auto g = original_moments(r.vp, r.transform, rng, n);
             return py::make_tuple(g.mean, g.cov);
           },
           py::arg("n") = 100000, py::arg("seed") = 0, "Posterior mean and covariance in original coordinates")
      .def_property_readonly("history",
                             [](const InferenceResult& r) {
                               py::list out;
                               for (const auto& h : r.history) out.append(to_python(to_json(h)));
                               return out;
                             })
      .def("to_dict", [](const InferenceResult& r, std::uint64_t seed) {
        Rng rng(seed);
        return to_python(to_json(r, original_moments(r.vp, r.transform, rng)));
      }, py::arg("seed") = 0);

  m.def(
      "run",
      [](const std::function<double(const Vector&)>& log_joint, const Vector& x0, std::optional<Vector> lb,
         std::optional<Vector> ub, std::optional<Vector> plb, std::optional<Vector> pub, const py::object& options,
         std::uint64_t seed) {
        const auto D = x0.size();
        ProblemSpec p;
        p.log_joint = log_joint;
        p.x0 = x0;
        p.lb = optional_vector(lb, D, -kInf);
        p.ub = optional_vector(ub, D, kInf);
        if (!plb || !pub) throw std::invalid_argument("run: plausible bounds plb and pub are required");
        p.plb = *plb;
        p.pub = *pub;
        Rng rng(seed);
        return run_vbmc(p, options_from(options), rng);
      },
      py::arg("log_joint"), py::arg("x0"), py::arg("lb") = py::none(), py::arg("ub") = py::none(),
      py::arg("plb") = py::none(), py::arg("pub") = py::none(), py::arg("options") = py::none(),
      py::arg("seed") = 0, "Approximate the posterior and log evidence of an unnormalized log density");

  py::class_<SyntheticProblem>(m, "SyntheticProblem")
      .def_property_readonly("id", &SyntheticProblem::id)
      .def_readonly("dim", &SyntheticProblem::dim)
      .def_readonly("lml", &SyntheticProblem::lml)
      .def_readonly("prior_mean", &SyntheticProblem::prior_mean)
      .def_readonly("prior_sd", &SyntheticProblem::prior_sd)
      .def_property_readonly("posterior_mean", [](const SyntheticProblem& p) { return p.posterior.mean; })
      .def_property_readonly("posterior_cov", [](const SyntheticProblem& p) { return p.posterior.cov; })
      .def("log_joint", &SyntheticProblem::log_joint)
      .def("to_dict", [](const SyntheticProblem& p) { return to_python(to_json(p)); });

  m.def(
      "make_problem",
      [](const std::string& family, int dim, std::uint64_t seed) { return make_problem(parse_family(family), dim, seed); },
      py::arg("family"), py::arg("dim"), py::arg("seed") = 1);

  m.def(
      "run_benchmark",
      [](const std::vector<std::string>& families, const std::vector<int>& dims, const std::vector<std::uint64_t>& seeds,
         const std::string& acquisition, double budget_multiplier, std::uint64_t problem_seed, std::uint64_t meta_seed,
         int workers, const py::object& options) {
        BenchmarkConfig c;
        c.families.clear();
        for (const auto& f : families) c.families.push_back(parse_family(f));
        c.dims = dims;
        c.seeds = seeds;
        c.acquisition = parse_acquisition(acquisition);
        c.budget_multiplier = budget_multiplier;
        c.problem_seed = problem_seed;
        c.meta_seed = meta_seed;
        c.workers = workers;
        c.record_wall_time = false;
        c.options = options_from(options);
        std::vector<std::string> lines;
        {
          py::gil_scoped_release release;
          run_benchmark(c, [&](const BenchmarkRecord& r) { lines.push_back(to_json(r).dump()); });
        }
        py::list out;
        for (const auto& l : lines) out.append(to_python(Json::parse(l)));
        return out;
      },
      py::arg("families"), py::arg("dims"), py::arg("seeds"), py::arg("acquisition") = "pro",
      py::arg("budget_multiplier") = 50.0, py::arg("problem_seed") = 1, py::arg("meta_seed") = 0,
      py::arg("workers") = 0, py::arg("options") = py::none());

  m.def(
      "summarize",
      [](const py::list& records, int resamples, std::uint64_t seed) {
        std::vector<BenchmarkRecord> rs;
        for (const auto& r : records) rs.push_back(record_from_json(from_python(py::reinterpret_borrow<py::object>(r))));
        py::list out;
        for (const auto& row : summarize(rs, resamples, seed)) {
          py::dict d;
          d["family"] = to_string(row.family);
          d["D"] = row.dim;
          d["runs"] = row.runs;
          d["completed"] = row.completed;
          d["lml_err"] = py::make_tuple(row.lml_error.median, row.lml_error.lower, row.lml_error.upper);
          d["gskl"] = py::make_tuple(row.gskl.median, row.gskl.lower, row.gskl.upper);
          out.append(d);
        }
        return out;
      },
      py::arg("records"), py::arg("resamples") = 1000, py::arg("seed") = 0);

  m.def("gaussianized_skl", &gaussianized_skl, "Symmetrized KL between moment-matched Gaussians");
}
