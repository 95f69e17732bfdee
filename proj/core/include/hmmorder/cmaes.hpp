#pragma once

#include <cstdint>
#include <functional>

#include "hmmorder/hmm.hpp"

namespace hmmorder {

struct CmaesOptions {
  // 0 selects the default 4 + floor(3 ln d).
  int population = 0;
  double sigma0 = 0.3;
  // Per-coordinate multipliers of sigma0 (initial covariance diag(scale^2)).
  // Empty means isotropic.
  Vector coordinate_scale;
  long max_evaluations = 20000;
  // Stop when the best values of the last generations span less than this.
  double function_tolerance = 1e-13;
  double step_tolerance = 1e-12;
  std::uint64_t seed = 0;
};

struct CmaesResult {
  Vector x;
  double value = 0.0;
  long evaluations = 0;
  int generations = 0;
  bool budget_exhausted = false;
  // The objective never returned a finite value.
  bool diverged = false;
};

/// (mu/mu_w, lambda) covariance matrix adaptation evolution strategy with
/// rank-one and rank-mu updates and cumulative step-size adaptation.
/// Non-finite objective values rank last. The starting point is evaluated
/// first, so the result is never worse than x0.
CmaesResult cmaes_minimize(const std::function<double(const Vector&)>& objective, const Vector& x0,
                           const CmaesOptions& options);

}  // namespace hmmorder
