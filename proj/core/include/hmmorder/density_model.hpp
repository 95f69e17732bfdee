#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hmmorder/hmm.hpp"

namespace hmmorder {

/// A point of S_{K,M}: a K-state chain with its stationary law and emissions
/// given by an M x K matrix of basis coefficients (column k is f_k).
struct CandidateModel {
  TransitionMatrix transition;
  ProbabilityVector stationary;
  Matrix emissions;
  int window_length = 3;

  /// Throws SolverFailure when no unique stationary law exists.
  static CandidateModel from_transition(TransitionMatrix transition, Matrix emissions,
                                        int window_length = 3);

  /// One state with the uniform emission phi_0 in dimension M.
  static CandidateModel uniform(int dimension, int window_length = 3);

  int order() const { return transition.size(); }
  int dimension() const { return static_cast<int>(emissions.rows()); }

  ParameterSet parameters() const { return {stationary.vector(), transition.matrix(), emissions}; }
};

struct ContrastEvaluation {
  double norm_sq = 0.0;
  double empirical_mean = 0.0;
  double gamma = 0.0;
};

/// gamma together with its partial derivatives in (pi, Q, O), pi being
/// treated as a free argument.
struct ContrastGradient {
  double gamma = 0.0;
  Vector pi;
  Matrix transition;
  Matrix emissions;
};

/// ||g||^2 for the L-window density with weights pi, Q and emission Gram
/// matrix G = O^T O. Contracts one stage at a time, O(L K^3).
double window_norm_sq(const Vector& pi, const Matrix& transition, const Matrix& gram, int window_length);

double norm_sq(const CandidateModel& model);

/// window_norm_sq with its partials in pi, Q and G.
double window_norm_sq_gradient(const Vector& pi, const Matrix& transition, const Matrix& gram, int window_length,
                               Vector& d_pi, Matrix& d_transition, Matrix& d_gram);

/// g(z) for one window z (size L). Throws OutOfDomain outside [0,1]^L.
double eval_window(const CandidateModel& model, std::span<const double> z);

/// gamma_n evaluated by a direct pass over the n overlapping windows.
ContrastEvaluation gamma_n(const CandidateModel& model, const ObservationRecord& obs);

/// Empirical third-order cross moment (1/n) sum_s phi_a(Y_s) phi_b(Y_{s+1}) phi_c(Y_{s+2}),
/// stored with c fastest.
std::vector<double> third_moment_tensor(const ObservationRecord& obs, int dimension);

/// Precomputed observation statistics shared by every model evaluated on one
/// record. For L = 3 the empirical mean of t(Z_s) reduces to contracting the
/// third moment tensor with the model, so its cost does not depend on n.
class EmpiricalContrast {
 public:
  EmpiricalContrast(const ObservationRecord& obs, int max_dimension);

  int max_dimension() const { return max_dimension_; }
  int window_length() const { return window_length_; }
  std::size_t window_count() const { return window_count_; }

  /// (1/n) sum_s g(Z_s) for emissions of dimension M <= max_dimension().
  double empirical_mean(const Vector& pi, const Matrix& transition, const Matrix& emissions) const;

  ContrastEvaluation evaluate(const Vector& pi, const Matrix& transition, const Matrix& emissions) const;

  ContrastEvaluation evaluate(const CandidateModel& model) const;

  /// Analytic partials of gamma; needs L = 3 (InvalidParams otherwise).
  ContrastGradient gradient(const Vector& pi, const Matrix& transition, const Matrix& emissions) const;

 private:
  double windowed_mean(const Vector& pi, const Matrix& transition, const Matrix& emissions) const;

  int max_dimension_;
  int window_length_;
  std::size_t window_count_;
  // Row-major basis evaluations, (n + L - 1) x max_dimension.
  std::vector<double> phi_;
  // slices_[m - 1]: tensor restricted to the first m functions, as an
  // (m^2 x m) matrix with element (b m + c, a).
  std::vector<Matrix> slices_;
};

}  // namespace hmmorder
