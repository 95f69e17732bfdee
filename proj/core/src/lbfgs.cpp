#include "hmmorder/lbfgs.hpp"

#include <cmath>
#include <deque>

#include "hmmorder/errors.hpp"

namespace hmmorder {

LbfgsResult lbfgs_minimize(const ValueAndGradient& objective, const Vector& x0, const LbfgsOptions& options) {
  if (options.memory < 1) throw Error(ErrorKind::InvalidParams, "L-BFGS memory must be >= 1");

  LbfgsResult result;
  result.x = x0;
  Vector grad(x0.size());
  result.value = objective(result.x, grad);
  result.evaluations = 1;
  if (!std::isfinite(result.value) || !grad.allFinite()) return result;

  std::deque<Vector> s_hist;
  std::deque<Vector> y_hist;
  std::deque<double> rho_hist;
  Vector trial_grad(x0.size());

  for (; result.iterations < options.max_iterations; ++result.iterations) {
    if (grad.norm() < options.gradient_tolerance) {
      result.converged = true;
      break;
    }
    // Two-loop recursion.
    Vector q = grad;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t i = s_hist.size(); i-- > 0;) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (!s_hist.empty()) q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Vector dir = -q;
    double slope = grad.dot(dir);
    if (!(slope < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = -grad;
      slope = -grad.squaredNorm();
    }

    double step = s_hist.empty() ? std::min(1.0, 1.0 / grad.norm()) : 1.0;
    bool accepted = false;
    Vector trial;
    double trial_value = 0.0;
    for (int backtrack = 0; backtrack < 40; ++backtrack) {
      trial = result.x + step * dir;
      trial_value = objective(trial, trial_grad);
      ++result.evaluations;
      if (std::isfinite(trial_value) && trial_grad.allFinite() && trial_value <= result.value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    const Vector s = trial - result.x;
    const Vector y = trial_grad - grad;
    const double sy = s.dot(y);
    const double previous = result.value;
    result.x = std::move(trial);
    result.value = trial_value;
    grad = trial_grad;
    if (sy > 1e-16 * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > options.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    if (std::abs(previous - result.value) <= options.relative_tolerance * std::max(1.0, std::abs(result.value))) {
      result.converged = true;
      ++result.iterations;
      break;
    }
  }
  return result;
}

}  // namespace hmmorder
