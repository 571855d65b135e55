#include "vbmc/cmaes.hpp"

#include <algorithm>
#include <deque>
#include <numeric>

namespace vbmc {

namespace {

void run_once(const BatchObjective& f, const Vector& x0, double sigma0, const Vector& lower,
              const Vector& upper, int lambda, const CmaesOptions& o, Rng& rng,
              CmaesResult& best) {
  const auto n = x0.size();
  const double nd = static_cast<double>(n);
  const int mu = lambda / 2;
  Vector weights(mu);
  for (int i = 0; i < mu; ++i) weights[i] = std::log(mu + 0.5) - std::log(i + 1.0);
  weights /= weights.sum();
  const double mueff = 1.0 / weights.squaredNorm();

  const double cc = (4 + mueff / nd) / (nd + 4 + 2 * mueff / nd);
  const double cs = (mueff + 2) / (nd + mueff + 5);
  const double c1 = 2 / ((nd + 1.3) * (nd + 1.3) + mueff);
  const double cmu =
      std::min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((nd + 2) * (nd + 2) + mueff));
  const double damps = 1 + 2 * std::max(0.0, std::sqrt((mueff - 1) / (nd + 1)) - 1) + cs;
  const double chi_n = std::sqrt(nd) * (1 - 1 / (4 * nd) + 1 / (21 * nd * nd));

  Vector mean = x0.cwiseMax(lower).cwiseMin(upper);
  double sigma = sigma0;
  Matrix C = Matrix::Identity(n, n);
  Matrix B = Matrix::Identity(n, n);
  Vector Dg = Vector::Ones(n);
  Vector pc = Vector::Zero(n), ps = Vector::Zero(n);
  std::deque<double> history;

  Matrix Z(n, lambda), Y(n, lambda), X(lambda, n);
  for (int gen = 0; gen < o.max_generations; ++gen) {
    for (int k = 0; k < lambda; ++k) {
      for (Eigen::Index i = 0; i < n; ++i) Z(i, k) = rng.normal();
    }
    Y = B * Dg.asDiagonal() * Z;
    for (int k = 0; k < lambda; ++k) {
      X.row(k) = (mean + sigma * Y.col(k)).cwiseMax(lower).cwiseMin(upper).transpose();
    }
    const Vector values = f(X);
    best.evaluations += lambda;

    std::vector<int> order(static_cast<std::size_t>(lambda));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      const double va = std::isnan(values[a]) ? -kInf : values[a];
      const double vb = std::isnan(values[b]) ? -kInf : values[b];
      return va > vb;
    });
    const int top = order.front();
    if (values[top] > best.value) {
      best.value = values[top];
      best.x = X.row(top).transpose();
    }

    // steps measured on the clamped points so the mean stays in the box
    Vector y_w = Vector::Zero(n);
    for (int i = 0; i < mu; ++i) {
      const int k = order[static_cast<std::size_t>(i)];
      Y.col(k) = (X.row(k).transpose() - mean) / sigma;
      y_w += weights[i] * Y.col(k);
    }
    mean += sigma * y_w;

    const Vector invsqrt_y = B * Dg.cwiseInverse().asDiagonal() * B.transpose() * y_w;
    ps = (1 - cs) * ps + std::sqrt(cs * (2 - cs) * mueff) * invsqrt_y;
    const double ps_norm = ps.norm();
    const bool hsig = ps_norm / std::sqrt(1 - std::pow(1 - cs, 2.0 * (gen + 1))) / chi_n <
                      1.4 + 2 / (nd + 1);
    pc = (1 - cc) * pc + (hsig ? std::sqrt(cc * (2 - cc) * mueff) : 0.0) * y_w;
    Matrix rank_mu = Matrix::Zero(n, n);
    for (int i = 0; i < mu; ++i) {
      const Vector& yk = Y.col(order[static_cast<std::size_t>(i)]);
      rank_mu += weights[i] * yk * yk.transpose();
    }
    C = (1 - c1 - cmu) * C + c1 * (pc * pc.transpose() + (hsig ? 0.0 : cc * (2 - cc)) * C) +
        cmu * rank_mu;
    sigma *= std::exp((cs / damps) * (ps_norm / chi_n - 1));
    sigma = std::min(sigma, 1e6 * sigma0);

    C = 0.5 * (C + C.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(C);
    if (eig.info() != Eigen::Success) break;
    B = eig.eigenvectors();
    Dg = eig.eigenvalues().cwiseMax(1e-20).cwiseSqrt();

    history.push_back(values[top]);
    if (history.size() > 10) history.pop_front();
    if (history.size() == 10) {
      const auto [lo, hi] = std::minmax_element(history.begin(), history.end());
      if (std::isfinite(*lo) && *hi - *lo < o.tol_fun) break;
    }
    if (sigma * Dg.maxCoeff() < o.tol_x) break;
  }
}

}  // namespace

CmaesResult cmaes_maximize(const BatchObjective& f, const Vector& x0, double sigma0,
                           const Vector& lower, const Vector& upper, const CmaesOptions& options,
                           Rng& rng) {
  const auto n = x0.size();
  if (n < 1 || lower.size() != n || upper.size() != n) {
    throw std::invalid_argument("cmaes: dimension mismatch");
  }
  CmaesResult best;
  best.x = x0;
  int lambda = options.population > 0
                   ? options.population
                   : 4 + static_cast<int>(std::floor(3 * std::log(static_cast<double>(n))));
  lambda = std::max(lambda, 2);
  run_once(f, x0, sigma0, lower, upper, lambda, options, rng, best);
  for (int r = 0; r < options.restarts; ++r) {
    lambda *= 2;
    run_once(f, best.x, sigma0, lower, upper, lambda, options, rng, best);
  }
  return best;
}

}  // namespace vbmc
