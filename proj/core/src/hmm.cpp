#include "hmmorder/hmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "hmmorder/basis.hpp"
#include "hmmorder/errors.hpp"

namespace hmmorder {

TransitionMatrix::TransitionMatrix(Matrix rows) : rows_(std::move(rows)) {
  if (rows_.rows() == 0 || rows_.rows() != rows_.cols()) {
    throw Error(ErrorKind::InvalidParams, "transition matrix must be square and non-empty");
  }
  for (Eigen::Index i = 0; i < rows_.rows(); ++i) {
    for (Eigen::Index j = 0; j < rows_.cols(); ++j) {
      const double q = rows_(i, j);
      if (!(q >= 0.0 && q <= 1.0)) {
        throw Error(ErrorKind::InvalidParams, "transition entries must lie in [0,1]");
      }
    }
    if (std::abs(rows_.row(i).sum() - 1.0) > kRowTolerance) {
      throw Error(ErrorKind::InvalidParams, "transition row " + std::to_string(i) + " does not sum to 1");
    }
  }
}

TransitionMatrix TransitionMatrix::uniform(int states) {
  return TransitionMatrix(Matrix::Constant(states, states, 1.0 / states));
}

bool TransitionMatrix::irreducible() const {
  const int k = size();
  // Strongly connected iff every state is reachable from 0 in the graph and
  // in its transpose.
  const auto reaches_all = [&](bool transpose) {
    std::vector<char> seen(k, 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    while (!stack.empty()) {
      const int s = stack.back();
      stack.pop_back();
      for (int t = 0; t < k; ++t) {
        const double q = transpose ? rows_(t, s) : rows_(s, t);
        if (q > 0.0 && !seen[t]) {
          seen[t] = 1;
          stack.push_back(t);
        }
      }
    }
    return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
  };
  return reaches_all(false) && reaches_all(true);
}

ProbabilityVector::ProbabilityVector(Vector p) : p_(std::move(p)) {
  if (p_.size() == 0) throw Error(ErrorKind::InvalidParams, "probability vector is empty");
  for (Eigen::Index k = 0; k < p_.size(); ++k) {
    if (!(p_(k) >= 0.0)) throw Error(ErrorKind::InvalidParams, "probability entries must be >= 0");
  }
  if (std::abs(p_.sum() - 1.0) > kSumTolerance) {
    throw Error(ErrorKind::InvalidParams, "probability vector does not sum to 1");
  }
}

ProbabilityVector ProbabilityVector::uniform(int states) {
  return ProbabilityVector(Vector::Constant(states, 1.0 / states));
}

double BetaDensity::operator()(double y) const {
  if (y < 0.0 || y > 1.0) return 0.0;
  const double log_norm = std::lgamma(alpha + beta) - std::lgamma(alpha) - std::lgamma(beta);
  if ((y == 0.0 && alpha < 1.0) || (y == 1.0 && beta < 1.0)) {
    return std::numeric_limits<double>::infinity();
  }
  if ((y == 0.0 && alpha > 1.0) || (y == 1.0 && beta > 1.0)) return 0.0;
  const double log_y = y == 0.0 ? 0.0 : (alpha - 1.0) * std::log(y);
  const double log_1my = y == 1.0 ? 0.0 : (beta - 1.0) * std::log1p(-y);
  return std::exp(log_norm + log_y + log_1my);
}

void validate_emission(const EmissionSpec& emission, double l2_bound) {
  if (const auto* beta = std::get_if<BetaDensity>(&emission)) {
    if (!(beta->alpha > 0.0) || !(beta->beta > 0.0)) {
      throw Error(ErrorKind::InvalidParams, "Beta emission needs alpha > 0 and beta > 0");
    }
    return;
  }
  const auto& c = std::get<BasisCoefficients>(emission).coeffs;
  if (c.size() == 0 || !c.allFinite()) {
    throw Error(ErrorKind::InvalidParams, "coefficient emission must be finite and non-empty");
  }
  if (c.norm() > l2_bound) {
    throw Error(ErrorKind::InvalidParams, "coefficient emission exceeds the L2 bound");
  }
}

HmmParams HmmParams::from_transition(TransitionMatrix transition, std::vector<EmissionSpec> emissions) {
  auto pi = stationary_distribution(transition);
  HmmParams params{std::move(transition), std::move(pi), std::move(emissions)};
  params.validate();
  return params;
}

void HmmParams::validate() const {
  if (static_cast<int>(emissions.size()) != order()) {
    throw Error(ErrorKind::InvalidParams, "need exactly one emission per hidden state");
  }
  if (stationary.size() != order()) {
    throw Error(ErrorKind::InvalidParams, "stationary law has the wrong dimension");
  }
  if (!transition.irreducible()) {
    throw Error(ErrorKind::InvalidParams, "hidden chain is not irreducible");
  }
  const Vector drift = transition.matrix().transpose() * stationary.vector() - stationary.vector();
  if (drift.lpNorm<Eigen::Infinity>() > 1e-10) {
    throw Error(ErrorKind::InvalidParams, "stationary law is not invariant under the transition matrix");
  }
  for (const auto& e : emissions) validate_emission(e);
}

Vector solve_stationary(const Matrix& q) {
  const auto k = q.rows();
  Matrix system(k + 1, k);
  system.topRows(k) = q.transpose() - Matrix::Identity(k, k);
  system.row(k).setOnes();
  Vector rhs = Vector::Zero(k + 1);
  rhs(k) = 1.0;
  const auto qr = system.colPivHouseholderQr();
  if (qr.rank() < k) {
    throw Error(ErrorKind::SolverFailure, "stationary system is numerically singular");
  }
  Vector pi = qr.solve(rhs);
  if (!pi.allFinite()) throw Error(ErrorKind::SolverFailure, "stationary solve produced non-finite values");
  pi = pi.cwiseMax(0.0);
  const double total = pi.sum();
  if (!(total > 0.0)) throw Error(ErrorKind::SolverFailure, "stationary solve collapsed to zero");
  return pi / total;
}

ProbabilityVector stationary_distribution(const TransitionMatrix& q) {
  if (!q.irreducible()) {
    throw Error(ErrorKind::NonIrreducible, "transition graph is not strongly connected");
  }
  return ProbabilityVector(solve_stationary(q.matrix()));
}

std::size_t ObservationRecord::window_count() const {
  const auto l = static_cast<std::size_t>(std::max(window_length, 1));
  return values.size() >= l ? values.size() - l + 1 : 0;
}

void ObservationRecord::validate() const {
  if (window_length < 1) throw Error(ErrorKind::InvalidParams, "window length must be >= 1");
  if (window_count() < 1) {
    throw Error(ErrorKind::InsufficientData, "observation record shorter than one window");
  }
  for (double y : values) {
    if (!(y >= 0.0 && y <= 1.0)) throw Error(ErrorKind::OutOfDomain, "observation outside [0,1]");
  }
}

namespace {

int draw_state(const Vector& probabilities, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double cumulative = 0.0;
  const auto k = static_cast<int>(probabilities.size());
  for (int s = 0; s < k; ++s) {
    cumulative += probabilities(s);
    if (u < cumulative) return s;
  }
  // Rounding left u above the cumulative sum: take the last state with mass.
  for (int s = k - 1; s >= 0; --s) {
    if (probabilities(s) > 0.0) return s;
  }
  return k - 1;
}

class EmissionSampler {
 public:
  explicit EmissionSampler(const EmissionSpec& spec) : spec_(spec) {
    if (const auto* c = std::get_if<BasisCoefficients>(&spec_)) {
      // Envelope for rejection sampling against the uniform proposal.
      bound_ = std::abs(c->coeffs(0));
      for (Eigen::Index a = 1; a < c->coeffs.size(); ++a) bound_ += std::sqrt(2.0) * std::abs(c->coeffs(a));
      if (!(std::abs(c->coeffs(0) - 1.0) < 1e-6)) {
        throw Error(ErrorKind::InvalidParams, "coefficient emission must integrate to one to be sampled");
      }
    } else {
      const auto& b = std::get<BetaDensity>(spec_);
      gamma_a_ = std::gamma_distribution<double>(b.alpha, 1.0);
      gamma_b_ = std::gamma_distribution<double>(b.beta, 1.0);
    }
  }

  double operator()(std::mt19937_64& rng) {
    if (const auto* c = std::get_if<BasisCoefficients>(&spec_)) {
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      for (int attempt = 0; attempt < 1'000'000; ++attempt) {
        const double y = unif(rng);
        const double density = std::max(evaluate_expansion(c->coeffs, y), 0.0);
        if (unif(rng) * bound_ <= density) return y;
      }
      throw Error(ErrorKind::InvalidParams, "rejection sampler failed; emission is nearly zero");
    }
    const double x = gamma_a_(rng);
    const double y = gamma_b_(rng);
    return x / (x + y);
  }

 private:
  EmissionSpec spec_;
  std::gamma_distribution<double> gamma_a_;
  std::gamma_distribution<double> gamma_b_;
  double bound_ = 1.0;
};

}  // namespace

Simulation simulate_with_states(const HmmParams& params, std::size_t length, std::uint64_t seed,
                                const SimulationOptions& options) {
  try {
    params.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::InvalidParams, e.what());
  }
  if (options.window_length < 1 || length < static_cast<std::size_t>(options.window_length)) {
    throw Error(ErrorKind::InvalidParams, "sequence length must be at least the window length");
  }
  const int k = params.order();
  if (options.initial_law && options.initial_law->size() != k) {
    throw Error(ErrorKind::InvalidParams, "initial law has the wrong dimension");
  }

  std::mt19937_64 rng(seed);
  std::vector<EmissionSampler> samplers;
  samplers.reserve(k);
  for (const auto& e : params.emissions) samplers.emplace_back(e);

  std::vector<Vector> rows(k);
  for (int s = 0; s < k; ++s) rows[s] = params.transition.matrix().row(s).transpose();

  Simulation sim;
  sim.record.window_length = options.window_length;
  sim.record.seed = seed;
  sim.record.values.resize(length);
  sim.states.resize(length);

  const Vector& start = options.initial_law ? options.initial_law->vector() : params.stationary.vector();
  int state = draw_state(start, rng);
  for (std::size_t t = 0; t < length; ++t) {
    if (t > 0) state = draw_state(rows[state], rng);
    sim.states[t] = state;
    sim.record.values[t] = samplers[state](rng);
  }
  return sim;
}

ObservationRecord simulate(const HmmParams& params, std::size_t length, std::uint64_t seed,
                           const SimulationOptions& options) {
  return simulate_with_states(params, length, seed, options).record;
}

ParameterSet permute(const ParameterSet& p, std::span<const int> perm) {
  const int k = p.order();
  if (static_cast<int>(perm.size()) != k) throw Error(ErrorKind::DimensionMismatch, "permutation size");
  ParameterSet out{Vector(k), Matrix(k, k), Matrix(p.emissions.rows(), k)};
  for (int i = 0; i < k; ++i) {
    out.pi(i) = p.pi(perm[i]);
    out.emissions.col(i) = p.emissions.col(perm[i]);
    for (int j = 0; j < k; ++j) out.transition(i, j) = p.transition(perm[i], perm[j]);
  }
  return out;
}

double d_perm(const ParameterSet& a, const ParameterSet& b) {
  const int k = a.order();
  if (k != b.order() || a.transition.rows() != k || a.transition.cols() != k ||
      b.transition.rows() != k || b.transition.cols() != k || a.emissions.cols() != k ||
      b.emissions.cols() != k) {
    throw Error(ErrorKind::DimensionMismatch, "parameter sets have different orders");
  }
  if (k > kMaxPermutationOrder) {
    throw Error(ErrorKind::InvalidParams, "d_perm enumerates permutations only up to order 8");
  }
  const auto m = std::max(a.emissions.rows(), b.emissions.rows());
  Matrix fa = Matrix::Zero(m, k);
  Matrix fb = Matrix::Zero(m, k);
  fa.topRows(a.emissions.rows()) = a.emissions;
  fb.topRows(b.emissions.rows()) = b.emissions;

  // Linear part of the cost for mapping state i of `a` onto state j of `b`.
  Matrix unary(k, k);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      const double dp = a.pi(i) - b.pi(j);
      unary(i, j) = dp * dp + (fa.col(i) - fb.col(j)).squaredNorm();
    }
  }

  std::vector<int> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    // State j of b is matched with state perm[j] of a.
    double cost = 0.0;
    for (int j = 0; j < k; ++j) {
      cost += unary(perm[j], j);
      for (int l = 0; l < k; ++l) {
        const double dq = a.transition(perm[j], perm[l]) - b.transition(j, l);
        cost += dq * dq;
      }
    }
    best = std::min(best, cost);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best);
}

namespace presets {

TransitionMatrix benchmark_transition() {
  Matrix q(3, 3);
  q << 0.8, 0.1, 0.1,
       0.2, 0.7, 0.1,
       0.07, 0.13, 0.8;
  return TransitionMatrix(q);
}

HmmParams easier_beta() {
  return HmmParams::from_transition(
      benchmark_transition(),
      {BetaDensity{1.5, 5.0}, BetaDensity{7.0, 2.0}, BetaDensity{6.0, 6.0}});
}

HmmParams harder_beta() {
  return HmmParams::from_transition(
      benchmark_transition(),
      {BetaDensity{2.0, 5.0}, BetaDensity{4.0, 2.0}, BetaDensity{4.0, 4.0}});
}

}  // namespace presets

}  // namespace hmmorder
