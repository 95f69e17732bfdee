#include "hmmorder/cmaes.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <random>

#include "hmmorder/errors.hpp"

namespace hmmorder {

CmaesResult cmaes_minimize(const std::function<double(const Vector&)>& objective, const Vector& x0,
                           const CmaesOptions& options) {
  const auto d = static_cast<int>(x0.size());
  if (d < 1) throw Error(ErrorKind::InvalidParams, "CMA-ES needs at least one parameter");
  if (!(options.sigma0 > 0.0)) throw Error(ErrorKind::InvalidParams, "sigma0 must be positive");
  const bool scaled = options.coordinate_scale.size() > 0;
  if (scaled && (options.coordinate_scale.size() != d || !(options.coordinate_scale.minCoeff() > 0.0))) {
    throw Error(ErrorKind::InvalidParams, "coordinate scale must be positive with one entry per parameter");
  }

  constexpr double kInf = std::numeric_limits<double>::infinity();
  const auto safe_eval = [&](const Vector& x) {
    const double v = objective(x);
    return std::isfinite(v) ? v : kInf;
  };

  CmaesResult result;
  result.x = x0;
  result.value = safe_eval(x0);
  result.evaluations = 1;

  const int lambda = options.population > 0 ? options.population
                                            : 4 + static_cast<int>(std::floor(3.0 * std::log(d)));
  const int mu = lambda / 2;
  Vector weights(mu);
  for (int i = 0; i < mu; ++i) weights(i) = std::log(mu + 0.5) - std::log(i + 1.0);
  weights /= weights.sum();
  const double mueff = 1.0 / weights.squaredNorm();

  const double dd = d;
  const double cc = (4.0 + mueff / dd) / (dd + 4.0 + 2.0 * mueff / dd);
  const double cs = (mueff + 2.0) / (dd + mueff + 5.0);
  const double c1 = 2.0 / ((dd + 1.3) * (dd + 1.3) + mueff);
  const double cmu = std::min(1.0 - c1, 2.0 * (mueff - 2.0 + 1.0 / mueff) / ((dd + 2.0) * (dd + 2.0) + mueff));
  const double damps = 1.0 + 2.0 * std::max(0.0, std::sqrt((mueff - 1.0) / (dd + 1.0)) - 1.0) + cs;
  const double chi_n = std::sqrt(dd) * (1.0 - 1.0 / (4.0 * dd) + 1.0 / (21.0 * dd * dd));
  // The covariance drifts by O(c1 + cmu) per generation, so refreshing its
  // eigendecomposition every few generations costs little accuracy.
  const int eigen_interval = std::max({1, static_cast<int>(1.0 / ((c1 + cmu) * dd * 10.0)), d / 10});

  Vector mean = x0;
  double sigma = options.sigma0;
  Vector pc = Vector::Zero(d);
  Vector ps = Vector::Zero(d);
  Vector scale = scaled ? options.coordinate_scale : Vector::Ones(d);
  Matrix cov = scale.cwiseAbs2().asDiagonal();
  Matrix basis = Matrix::Identity(d, d);

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Matrix z(d, lambda);
  Matrix y(d, lambda);
  std::vector<double> values(lambda);
  std::vector<int> order(lambda);
  std::deque<double> history;
  const std::size_t history_length = 10 + static_cast<std::size_t>(std::ceil(30.0 * dd / lambda));
  bool any_finite = std::isfinite(result.value);

  while (result.evaluations + lambda <= options.max_evaluations) {
    ++result.generations;
    for (int i = 0; i < lambda; ++i) {
      for (int j = 0; j < d; ++j) z(j, i) = normal(rng);
      y.col(i) = basis * scale.cwiseProduct(z.col(i));
      const Vector x = mean + sigma * y.col(i);
      values[i] = safe_eval(x);
      if (values[i] < result.value) {
        result.value = values[i];
        result.x = x;
      }
      any_finite = any_finite || std::isfinite(values[i]);
    }
    result.evaluations += lambda;

    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return values[a] < values[b]; });
    if (!std::isfinite(values[order[0]])) {
      // Whole population infeasible: shrink towards the mean and retry.
      sigma *= 0.5;
      if (sigma < options.step_tolerance) break;
      continue;
    }

    Vector y_w = Vector::Zero(d);
    Vector z_w = Vector::Zero(d);
    for (int i = 0; i < mu; ++i) {
      y_w += weights(i) * y.col(order[i]);
      z_w += weights(i) * z.col(order[i]);
    }
    mean += sigma * y_w;

    ps = (1.0 - cs) * ps + std::sqrt(cs * (2.0 - cs) * mueff) * (basis * z_w);
    const double ps_norm = ps.norm();
    const double gen = result.generations;
    const bool hsig = ps_norm / std::sqrt(1.0 - std::pow(1.0 - cs, 2.0 * gen)) / chi_n < 1.4 + 2.0 / (dd + 1.0);
    pc = (1.0 - cc) * pc + (hsig ? std::sqrt(cc * (2.0 - cc) * mueff) : 0.0) * y_w;

    Matrix selected(d, mu);
    for (int i = 0; i < mu; ++i) selected.col(i) = std::sqrt(weights(i)) * y.col(order[i]);
    const double hsig_correction = hsig ? 0.0 : c1 * cc * (2.0 - cc);
    cov *= 1.0 - c1 - cmu + hsig_correction;
    cov.selfadjointView<Eigen::Lower>().rankUpdate(pc, c1);
    cov.selfadjointView<Eigen::Lower>().rankUpdate(selected, cmu);

    sigma *= std::exp((cs / damps) * (ps_norm / chi_n - 1.0));
    if (!std::isfinite(sigma) || sigma > 1e8) break;

    if (result.generations % eigen_interval == 0) {
      cov.triangularView<Eigen::StrictlyUpper>() = cov.transpose();
      Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
      if (eig.info() != Eigen::Success) break;
      basis = eig.eigenvectors();
      scale = eig.eigenvalues().cwiseMax(1e-300).cwiseSqrt();
      if (scale.maxCoeff() > 1e7 * scale.minCoeff()) break;
    }

    history.push_back(values[order[0]]);
    if (history.size() > history_length) history.pop_front();
    if (history.size() == history_length) {
      const auto [lo, hi] = std::minmax_element(history.begin(), history.end());
      const double spread = std::max(*hi, values[order[lambda - 1]]) - *lo;
      if (spread < options.function_tolerance) break;
    }
    if (sigma * scale.maxCoeff() < options.step_tolerance) break;
  }

  result.budget_exhausted = result.evaluations + lambda > options.max_evaluations;
  result.diverged = !any_finite;
  return result;
}

}  // namespace hmmorder
