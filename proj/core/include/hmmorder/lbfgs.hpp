#pragma once

#include <functional>

#include "hmmorder/hmm.hpp"

namespace hmmorder {

struct LbfgsOptions {
  int memory = 10;
  int max_iterations = 1000;
  // Stop when the gradient norm falls below this.
  double gradient_tolerance = 1e-10;
  // Stop when |f_k - f_{k-1}| <= relative_tolerance * max(1, |f_k|).
  double relative_tolerance = 1e-15;
};

struct LbfgsResult {
  Vector x;
  double value = 0.0;
  int iterations = 0;
  long evaluations = 0;
  bool converged = false;
};

/// Value and gradient at x; returns the value and writes the gradient.
using ValueAndGradient = std::function<double(const Vector& x, Vector& gradient)>;

/// Limited-memory BFGS with a backtracking Armijo line search. Never returns
/// a point worse than x0; non-finite trial values shorten the step.
LbfgsResult lbfgs_minimize(const ValueAndGradient& objective, const Vector& x0, const LbfgsOptions& options = {});

}  // namespace hmmorder
