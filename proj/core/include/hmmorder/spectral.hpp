#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "hmmorder/hmm.hpp"

namespace hmmorder {

/// Empirical (or population) cross moments of three consecutive
/// observations in the first M basis functions:
///   first(a)      = E phi_a(Y1)
///   pair(a,b)     = E phi_a(Y1) phi_b(Y2)          (N)
///   skip(a,c)     = E phi_a(Y1) phi_c(Y3)          (P)
///   third(a,b,c)  = E phi_a(Y1) phi_b(Y2) phi_c(Y3)
struct MomentMatrices {
  int dimension = 0;
  Vector first;
  Matrix pair;
  Matrix skip;
  // Empty when only second order moments were requested; otherwise M^3
  // entries with c fastest.
  std::vector<double> third;
  std::size_t sample_count = 0;

  bool has_third() const { return !third.empty(); }
  double third_at(int a, int b, int c) const;
  /// third(., b, .) as an M x M matrix indexed (a, c).
  Matrix third_slice(int b) const;
};

/// Averages over the n windows of `obs`, using their first three entries.
/// Throws InsufficientData when L < 3 or no window exists.
MomentMatrices compute_moments(const ObservationRecord& obs, int dimension, bool with_third = true);

/// M x K matrix whose column k holds the coefficients of emission k.
Matrix emission_matrix(const HmmParams& params, int dimension);

/// Population moments of a stationary HMM: N = O diag(pi) Q O^T and its
/// analogues, with O computed by quadrature.
MomentMatrices population_moments(const HmmParams& params, int dimension);

Matrix theoretical_N(const HmmParams& params, int dimension);

enum class OrderMethod { Threshold, Regression };

struct SpectralOrderReport {
  // Singular values of N, nonincreasing.
  Vector singular_values;
  OrderMethod method = OrderMethod::Regression;
  int order = 0;
  // Threshold method.
  double constant = 0.0;
  double threshold = 0.0;
  // Regression method: sigma_i ~ intercept + slope * i, i 1-based.
  int regression_size = 0;
  double tau = 0.0;
  double intercept = 0.0;
  double slope = 0.0;

  double predicted(int index) const { return intercept + slope * index; }
};

/// Counts singular values of N above C sqrt(log(n) / n).
SpectralOrderReport order_by_threshold(const MomentMatrices& moments, double constant);

/// Fits a line to the `regression_size` smallest singular values against
/// their index; the order is the length of the leading run of values above
/// tau times the line. Throws DegenerateRegression when the fitted values
/// carry no spread.
SpectralOrderReport order_by_regression(const Vector& singular_values, int regression_size, double tau);

SpectralOrderReport order_by_regression(const MomentMatrices& moments, int regression_size, double tau);

/// Singular values of a matrix, nonincreasing.
Vector singular_values(const Matrix& a);

struct SpectralParams {
  int order = 0;
  Matrix emissions;
  ProbabilityVector pi_tilde;
  TransitionMatrix transition;
  ProbabilityVector stationary;
  std::uint64_t theta_seed = 0;
  int attempts = 0;

  ParameterSet parameters() const { return {stationary.vector(), transition.matrix(), emissions}; }
};

inline constexpr int kSpectralAttempts = 5;
inline constexpr double kConditionLimit = 1e10;

/// Method-of-moments estimation of (pi, Q, O) for a fixed order K <= M.
/// Retries with a fresh random rotation when a matrix to invert is
/// ill-conditioned or the diagonalized matrix has complex eigenvalues.
SpectralParams spectral_params(const MomentMatrices& moments, int order, std::uint64_t theta_seed);

SpectralParams spectral_params(const ObservationRecord& obs, int dimension, int order, std::uint64_t theta_seed);

/// Euclidean projection onto the probability simplex.
ProbabilityVector project_simplex(const Vector& v);

/// Row-wise simplex projection, i.e. the Frobenius projection onto
/// row-stochastic matrices.
TransitionMatrix project_transition(const Matrix& a);

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix, R diagonal
/// made positive).
Matrix random_orthogonal(int size, std::uint64_t seed);

}  // namespace hmmorder
