#pragma once

#include "vbmc/vbmc.hpp"

#include <json.hpp>

namespace vbmc {

using Json = nlohmann::json;

Json vector_to_json(const Vector& v);
/// Accepts numbers and the strings "inf", "-inf", "Infinity", "-Infinity".
Vector vector_from_json(const Json& j);

/// {K, D, w, mu (K rows of D), sigma, lambda}
Json to_json(const VariationalPosterior& vp);
VariationalPosterior vp_from_json(const Json& j);

Json to_json(const GaussianMoments& m);

/// One diagnostics line: t, n, K, elbo_mean, elbo_sd, elcbo, rho, features,
/// warm-up and stop-sampling flags.
Json to_json(const IterationRecord& r);

/// Final result; `moments` are in original coordinates.
Json to_json(const InferenceResult& r, const GaussianMoments& moments);

/// Overrides fields of `options` from a JSON object; unknown keys throw.
void apply_options(const Json& j, VBMCOptions& options);

}  // namespace vbmc
