#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace hmmorder {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Row-stochastic K x K matrix. Rows sum to one within kRowTolerance.
class TransitionMatrix {
 public:
  static constexpr double kRowTolerance = 1e-12;

  explicit TransitionMatrix(Matrix rows);

  static TransitionMatrix uniform(int states);

  int size() const { return static_cast<int>(rows_.rows()); }
  const Matrix& matrix() const { return rows_; }
  double operator()(int from, int to) const { return rows_(from, to); }

  /// True when the directed graph of positive entries is strongly connected.
  bool irreducible() const;

 private:
  Matrix rows_;
};

/// Point of the simplex: nonnegative entries summing to one.
class ProbabilityVector {
 public:
  static constexpr double kSumTolerance = 1e-12;

  explicit ProbabilityVector(Vector p);

  static ProbabilityVector uniform(int states);

  int size() const { return static_cast<int>(p_.size()); }
  const Vector& vector() const { return p_; }
  double operator[](int k) const { return p_(k); }

 private:
  Vector p_;
};

struct BetaDensity {
  double alpha = 1.0;
  double beta = 1.0;

  double operator()(double y) const;
};

/// Coefficients of an emission in the trigonometric basis, lowest frequency first.
struct BasisCoefficients {
  Vector coeffs;

  int dimension() const { return static_cast<int>(coeffs.size()); }
};

using EmissionSpec = std::variant<BetaDensity, BasisCoefficients>;

/// Default L2 bound on emission densities.
inline constexpr double kDefaultL2Bound = 10.0;

void validate_emission(const EmissionSpec& emission, double l2_bound = kDefaultL2Bound);

struct HmmParams {
  TransitionMatrix transition;
  ProbabilityVector stationary;
  std::vector<EmissionSpec> emissions;

  /// Builds parameters with the stationary law of `transition`; throws on
  /// reducible chains or invalid emissions.
  static HmmParams from_transition(TransitionMatrix transition,
                                   std::vector<EmissionSpec> emissions);

  int order() const { return transition.size(); }

  /// Checks stationarity, emission count and emission validity.
  void validate() const;
};

/// Solves (Q^T - I) pi = 0, sum(pi) = 1 by least squares. No irreducibility
/// check; tiny negative entries are clipped and the result renormalized.
Vector solve_stationary(const Matrix& q);

/// Throws NonIrreducible when q is reducible, SolverFailure when the system
/// is numerically singular.
ProbabilityVector stationary_distribution(const TransitionMatrix& q);

/// Observation sequence Y_1..Y_{n+L-1} together with its window length L.
struct ObservationRecord {
  std::vector<double> values;
  int window_length = 3;
  std::uint64_t seed = 0;

  /// Number n of overlapping windows (Y_s..Y_{s+L-1}).
  std::size_t window_count() const;

  void validate() const;
};

struct SimulationOptions {
  int window_length = 3;
  // Overrides the stationary start. Estimators assume stationarity.
  std::optional<ProbabilityVector> initial_law;
};

struct Simulation {
  ObservationRecord record;
  std::vector<int> states;
};

Simulation simulate_with_states(const HmmParams& params, std::size_t length, std::uint64_t seed,
                                const SimulationOptions& options = {});

ObservationRecord simulate(const HmmParams& params, std::size_t length, std::uint64_t seed,
                           const SimulationOptions& options = {});

/// (pi, Q, O) triple compared by d_perm. Column k of `emissions` holds the
/// basis coefficients of emission k.
struct ParameterSet {
  Vector pi;
  Matrix transition;
  Matrix emissions;

  int order() const { return static_cast<int>(pi.size()); }
};

/// Relabels states: state k of the result is state perm[k] of `p`.
ParameterSet permute(const ParameterSet& p, std::span<const int> perm);

inline constexpr int kMaxPermutationOrder = 8;

/// Minimum over state permutations of the Euclidean distance between the
/// stacked (pi, Q, f) of `a` and `b`. Emission distances use Parseval on the
/// coefficients; shorter coefficient vectors are zero-padded.
double d_perm(const ParameterSet& a, const ParameterSet& b);

namespace presets {

/// Transition matrix of the three-state benchmark chain.
TransitionMatrix benchmark_transition();

/// Beta(1.5,5), Beta(7,2), Beta(6,6) emissions.
HmmParams easier_beta();

/// Beta(2,5), Beta(4,2), Beta(4,4) emissions.
HmmParams harder_beta();

}  // namespace presets

}  // namespace hmmorder
