#include "vbmc/serialization.hpp"

namespace vbmc {

namespace {

// JSON has no infinities; encode them as strings.
Json number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return nullptr;
  return v;
}

double number_from(const Json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf" || s == "Infinity" || s == "+inf") return kInf;
    if (s == "-inf" || s == "-Infinity") return -kInf;
  }
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  throw std::invalid_argument("expected a number, got " + j.dump());
}

}  // namespace

Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(number(v[i]));
  return out;
}

Vector vector_from_json(const Json& j) {
  if (!j.is_array()) throw std::invalid_argument("expected an array, got " + j.dump());
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = number_from(j[i]);
  return v;
}

Json to_json(const VariationalPosterior& vp) {
  Json mu = Json::array();
  for (int k = 0; k < vp.components(); ++k) mu.push_back(vector_to_json(vp.means().col(k)));
  return Json{{"K", vp.components()},
              {"D", vp.dim()},
              {"w", vector_to_json(vp.weights())},
              {"mu", mu},
              {"sigma", vector_to_json(vp.sigma())},
              {"lambda", vector_to_json(vp.lambda())}};
}

VariationalPosterior vp_from_json(const Json& j) {
  const int K = j.at("K").get<int>();
  const int D = j.at("D").get<int>();
  const Json& mu_j = j.at("mu");
  if (static_cast<int>(mu_j.size()) != K) throw std::invalid_argument("vp json: mu must have K rows");
  Matrix mu(D, K);
  for (int k = 0; k < K; ++k) {
    const Vector row = vector_from_json(mu_j[static_cast<std::size_t>(k)]);
    if (row.size() != D) throw std::invalid_argument("vp json: mu rows must have D entries");
    mu.col(k) = row;
  }
  return VariationalPosterior(vector_from_json(j.at("w")), mu, vector_from_json(j.at("sigma")),
                              vector_from_json(j.at("lambda")));
}

Json to_json(const GaussianMoments& m) {
  Json cov = Json::array();
  for (Eigen::Index i = 0; i < m.cov.rows(); ++i) cov.push_back(vector_to_json(m.cov.row(i).transpose()));
  return Json{{"mean", vector_to_json(m.mean)}, {"cov", cov}};
}

Json to_json(const IterationRecord& r) {
  Json j{{"t", r.iteration},
         {"n", r.n_train},
         {"evaluations", r.evaluations},
         {"K", r.components},
         {"n_gp", r.n_gp},
         {"elbo_mean", number(r.elbo_mean)},
         {"elbo_sd", number(r.elbo_sd)},
         {"elcbo", number(r.elcbo)},
         {"warmup", r.warmup},
         {"stop_sampling", r.stop_sampling},
         {"pruned", r.pruned},
         {"gp_sample_sd", number(r.gp_sample_sd)}};
  if (r.features) {
    j["rho"] = number(r.features->rho());
    j["features"] = Json::array({number(r.features->elbo_change), number(r.features->elbo_sd),
                                 number(r.features->kl_change)});
  } else {
    j["rho"] = nullptr;
    j["features"] = nullptr;
  }
  return j;
}

Json to_json(const InferenceResult& r, const GaussianMoments& moments) {
  Json rho = Json::array();
  for (const auto& h : r.history) rho.push_back(h.features ? number(h.features->rho()) : Json(nullptr));
  return Json{{"elbo_mean", number(r.elbo_mean)},
              {"elbo_sd", number(r.elbo_sd)},
              {"stable", r.stable},
              {"iterations", r.iterations},
              {"evaluations", r.evaluations},
              {"chosen_iteration", r.chosen_iteration + 1},
              {"message", r.message},
              {"vp_internal", to_json(r.vp)},
              {"moments", to_json(moments)},
              {"reliability", rho}};
}

void apply_options(const Json& j, VBMCOptions& o) {
  if (!j.is_object()) throw std::invalid_argument("options must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const Json& v = it.value();
    if (k == "max_fun_evals") o.max_fun_evals = v.get<int>();
    else if (k == "max_iterations") o.max_iterations = v.get<int>();
    else if (k == "n_init") o.n_init = v.get<int>();
    else if (k == "n_active") o.n_active = v.get<int>();
    else if (k == "beta_lcb") o.beta_lcb = v.get<double>();
    else if (k == "beta_fallback") o.beta_fallback = v.get<double>();
    else if (k == "w_min") o.w_min = v.get<double>();
    else if (k == "eps_prune") o.eps_prune = v.get<double>();
    else if (k == "n_recent") o.n_recent = v.get<int>();
    else if (k == "n_stable") o.n_stable = v.get<int>();
    else if (k == "delta_sd") o.delta_sd = v.get<double>();
    else if (k == "delta_kl_scale") o.delta_kl_scale = v.get<double>();
    else if (k == "delta_impro") o.delta_impro = v.get<double>();
    else if (k == "n_fast") o.n_fast = v.get<int>();
    else if (k == "n_entropy") o.n_entropy = v.get<int>();
    else if (k == "n_entropy_final") o.n_entropy_final = v.get<int>();
    else if (k == "map_restarts") o.map_restarts = v.get<int>();
    else if (k == "acquisition") o.acquisition = parse_acquisition(v.get<std::string>());
    else if (k == "max_adam_iterations") o.adam.max_iterations = v.get<int>();
    else throw std::invalid_argument("unknown option '" + k + "'");
  }
}

}  // namespace vbmc
