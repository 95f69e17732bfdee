#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "hmmorder/hmm.hpp"

namespace hmmorder {

/// Cosine basis of L2([0,1]): phi_0 = 1, phi_a(t) = sqrt(2) cos(pi a t).
/// The first `dimension` functions span the approximation space P_M, so the
/// spaces are nested in M.
class TrigBasis {
 public:
  explicit TrigBasis(int dimension);

  int dimension() const { return dimension_; }

  double operator()(int a, double y) const;

  /// Writes phi_0(y)..phi_{M-1}(y) into `out` (size >= M). No domain check.
  void evaluate(double y, std::span<double> out) const;

 private:
  int dimension_;
};

/// Throws OutOfDomain when y is outside [0,1].
Vector eval_basis(const TrigBasis& basis, double y);

/// Row i holds the basis evaluated at ys[i].
Matrix basis_matrix(const TrigBasis& basis, std::span<const double> ys);

/// Sum_a coeffs(a) phi_a(y).
double evaluate_expansion(const Vector& coeffs, double y);

/// Quadrature on [0,1] with respect to Lebesgue measure.
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  std::size_t size() const { return nodes.size(); }

  template <class F>
  double integrate(F&& f) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) acc += weights[i] * f(nodes[i]);
    return acc;
  }

  /// Gauss-Legendre rule mapped to [0,1]; exact up to degree 2*points-1.
  static QuadratureRule gauss_legendre(int points);

  /// Composite Gauss-Legendre on `panels` uniform panels, with the two end
  /// panels further split geometrically `grading_levels` times to resolve
  /// endpoint singularities.
  static QuadratureRule composite(int panels, int points_per_panel, int grading_levels);
};

struct ProjectionOptions {
  std::size_t node_budget = 2048;
  double tolerance = 1e-8;
  int points_per_panel = 16;
  int grading_levels = 6;
};

Vector project_function(const std::function<double(double)>& f, int dimension,
                        const QuadratureRule& rule);

BasisCoefficients project_density(const BetaDensity& f, int dimension, const QuadratureRule& rule);

/// Refines the composite rule by doubling panels until two successive
/// projections agree within options.tolerance (max norm). Throws
/// QuadratureNotConverged when the node budget is exceeded first.
BasisCoefficients project_density(const BetaDensity& f, int dimension,
                                  const ProjectionOptions& options = {});

/// Basis coefficients of any emission: Beta densities are projected,
/// coefficient vectors are truncated or zero-padded.
Vector project_emission(const EmissionSpec& emission, int dimension);

/// max_{a,b} |<phi_a, phi_b> - delta_ab| under the rule.
double gram_identity_check(const TrigBasis& basis, const QuadratureRule& rule);

}  // namespace hmmorder
