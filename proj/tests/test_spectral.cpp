#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "hmmorder/basis.hpp"
#include "hmmorder/spectral.hpp"
#include "test_support.hpp"

using namespace hmmorder;
using hmmorder::testing::grid_projection;
using hmmorder::testing::throws_kind;

namespace {

ParameterSet projected_truth(const HmmParams& p, int m) {
  return {p.stationary.vector(), p.transition.matrix(), emission_matrix(p, m)};
}

}  // namespace

TEST(Moments, ConstantSequence) {
  const ObservationRecord obs{std::vector<double>(10, 0.5), 3, 0};
  const auto mom = compute_moments(obs, 2);
  EXPECT_NEAR(mom.pair(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(mom.pair(0, 1), 0.0, 1e-15);
  EXPECT_NEAR(mom.pair(1, 0), 0.0, 1e-15);
  EXPECT_NEAR(mom.pair(1, 1), 0.0, 1e-15);
  EXPECT_EQ(mom.sample_count, 8u);
}

TEST(Moments, SingleWindow) {
  const ObservationRecord obs{{0.1, 0.6, 0.35}, 3, 0};
  const int m = 4;
  const auto mom = compute_moments(obs, m);
  const TrigBasis b(m);
  for (int i = 0; i < m; ++i) {
    EXPECT_NEAR(mom.first(i), b(i, 0.1), 1e-15);
    for (int j = 0; j < m; ++j) {
      EXPECT_NEAR(mom.pair(i, j), b(i, 0.1) * b(j, 0.6), 1e-15);
      EXPECT_NEAR(mom.skip(i, j), b(i, 0.1) * b(j, 0.35), 1e-15);
      for (int k = 0; k < m; ++k) EXPECT_NEAR(mom.third_at(i, j, k), b(i, 0.1) * b(j, 0.6) * b(k, 0.35), 1e-14);
    }
  }
  EXPECT_EQ(mom.third_slice(2)(1, 3), mom.third_at(1, 2, 3));
}

TEST(Moments, Errors) {
  ObservationRecord obs{{0.1, 0.2, 0.3}, 2, 0};
  EXPECT_TRUE(throws_kind([&] { compute_moments(obs, 3); }, ErrorKind::InsufficientData));
  const auto second = compute_moments(ObservationRecord{{0.1, 0.2, 0.3}, 3, 0}, 3, false);
  EXPECT_FALSE(second.has_third());
  EXPECT_TRUE(throws_kind([&] { spectral_params(second, 2, 1); }, ErrorKind::InsufficientData));
}

TEST(Moments, EmpiricalNearPopulation) {
  const auto params = presets::easier_beta();
  const int m = 20;
  const auto obs = simulate(params, 100002, 77);
  const auto mom = compute_moments(obs, m, false);
  const Matrix n_true = theoretical_N(params, m);
  // Per-window second moment of the summands sets the O(1/sqrt(n)) scale.
  const Matrix phi = basis_matrix(TrigBasis(m), obs.values);
  double eta_sq = 0.0;
  for (std::size_t s = 0; s < obs.window_count(); ++s) {
    eta_sq += phi.row(s).squaredNorm() * phi.row(s + 1).squaredNorm();
  }
  const double n = static_cast<double>(obs.window_count());
  const double band = 5.0 * std::sqrt(eta_sq / n) / std::sqrt(n);
  EXPECT_LT((mom.pair - n_true).norm(), band);
}

TEST(TheoreticalN, SingleUniformState) {
  const auto params = HmmParams::from_transition(TransitionMatrix::uniform(1), {BetaDensity{1.0, 1.0}});
  const Matrix n = theoretical_N(params, 4);
  Matrix expected = Matrix::Zero(4, 4);
  expected(0, 0) = 1.0;
  EXPECT_LT((n - expected).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(TheoreticalN, RankEqualsOrder) {
  for (const auto& params : {presets::easier_beta(), presets::harder_beta()}) {
    for (int m : {3, 10, 20}) {
      const Vector s = singular_values(theoretical_N(params, m));
      EXPECT_GT(s(2) / s(0), 1e-4) << m;
      if (m > 3) EXPECT_LT(s(3) / s(0), 1e-10) << m;
    }
  }
}

TEST(TheoreticalN, RepeatedEmissionDropsRank) {
  const auto params = HmmParams::from_transition(presets::benchmark_transition(),
                                                 {BetaDensity{2, 5}, BetaDensity{2, 5}, BetaDensity{6, 6}});
  const Vector s = singular_values(theoretical_N(params, 15));
  EXPECT_GT(s(1) / s(0), 1e-4);
  EXPECT_LT(s(2) / s(0), 1e-10);
}

TEST(TheoreticalN, InvariantToRelabeling) {
  const auto p = presets::harder_beta();
  const std::vector<int> perm{2, 0, 1};
  const auto q = permute({p.stationary.vector(), p.transition.matrix(), Matrix::Zero(1, 3)}, perm);
  std::vector<EmissionSpec> e;
  for (int k : perm) e.push_back(p.emissions[k]);
  const auto relabeled = HmmParams::from_transition(TransitionMatrix(q.transition), e);
  EXPECT_LT((theoretical_N(p, 12) - theoretical_N(relabeled, 12)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(OrderByThreshold, Limits) {
  MomentMatrices zero;
  zero.dimension = 4;
  zero.pair = Matrix::Zero(4, 4);
  zero.sample_count = 100;
  EXPECT_EQ(order_by_threshold(zero, 1.0).order, 0);
  const auto obs = simulate(presets::easier_beta(), 2000, 3);
  const auto mom = compute_moments(obs, 6, false);
  EXPECT_EQ(order_by_threshold(mom, 1e-300).order, 6);
  EXPECT_TRUE(throws_kind([&] { order_by_threshold(mom, 0.0); }, ErrorKind::InvalidParams));
}

TEST(OrderByThreshold, OracleGapMidpoint) {
  const auto params = presets::easier_beta();
  const int m = 20;
  const auto obs = simulate(params, 10001, 99);
  const auto mom = compute_moments(obs, m, false);
  const Vector s = singular_values(theoretical_N(params, m));
  const double n = static_cast<double>(obs.window_count());
  const double c = 0.5 * (s(2) + s(3)) / std::sqrt(std::log(n) / n);
  const auto report = order_by_threshold(mom, c);
  EXPECT_EQ(report.order, 3);
  EXPECT_NEAR(report.threshold, 0.5 * (s(2) + s(3)), 1e-15);
}

TEST(OrderByRegression, HandBuiltSpectrum) {
  // A tail exactly on the line 1.12 - 0.04 i, so the fit recovers it.
  Vector s(20);
  s(0) = 10.0;
  s(1) = 5.0;
  for (int i = 3; i <= 20; ++i) s(i - 1) = 1.12 - 0.04 * i;
  const auto report = order_by_regression(s, 15, 1.5);
  EXPECT_NEAR(report.slope, -0.04, 1e-12);
  EXPECT_NEAR(report.intercept, 1.12, 1e-12);
  int expected = 0;
  while (expected < 20 && s(expected) > 1.5 * (1.12 - 0.04 * (expected + 1))) ++expected;
  EXPECT_EQ(expected, 2);
  EXPECT_EQ(report.order, expected);
}

TEST(OrderByRegression, LineAndDegenerate) {
  Vector line(10);
  for (int i = 0; i < 10; ++i) line(i) = 2.0 - 0.1 * i;
  EXPECT_EQ(order_by_regression(line, 8, 1.5).order, 0);
  EXPECT_TRUE(throws_kind([] { order_by_regression(Vector::Constant(10, 0.3), 8, 1.5); },
                          ErrorKind::DegenerateRegression));
  EXPECT_TRUE(throws_kind([&] { order_by_regression(line, 11, 1.5); }, ErrorKind::InvalidParams));
  EXPECT_TRUE(throws_kind([&] { order_by_regression(line, 8, 1.0); }, ErrorKind::InvalidParams));
}

TEST(OrderByRegression, EasierBetaAtTenThousand) {
  const auto obs = simulate(presets::easier_beta(), 10001, 5);
  const auto report = order_by_regression(compute_moments(obs, 40, false), 35, 1.5);
  EXPECT_EQ(report.order, 3);
  for (int i = 1; i < report.singular_values.size(); ++i) {
    EXPECT_LE(report.singular_values(i), report.singular_values(i - 1));
  }
}

TEST(SpectralParams, ExactOnPopulationMoments) {
  const auto params = presets::easier_beta();
  const int m = 20;
  const auto mom = population_moments(params, m);
  const auto est = spectral_params(mom, 3, 123);
  EXPECT_LT(d_perm(est.parameters(), projected_truth(params, m)), 1e-6);
  const Matrix rebuilt = est.emissions * est.stationary.vector().asDiagonal() * est.transition.matrix() *
                         est.emissions.transpose();
  EXPECT_LT((rebuilt - mom.pair).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(SpectralParams, SingleState) {
  const auto obs = simulate(presets::easier_beta(), 3000, 4);
  const auto est = spectral_params(obs, 6, 1, 9);
  EXPECT_NEAR(est.transition(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(est.stationary[0], 1.0, 1e-15);
  const auto mom = compute_moments(obs, 6);
  EXPECT_LT((est.emissions.col(0) - mom.first).norm(), 0.05 * mom.first.norm());
}

TEST(SpectralParams, OutputInvariants) {
  const auto obs = simulate(presets::easier_beta(), 20000, 12);
  const auto est = spectral_params(obs, 15, 3, 4);
  const Matrix& q = est.transition.matrix();
  EXPECT_TRUE((q.array() >= 0.0).all());
  EXPECT_LT((q.rowwise().sum() - Vector::Ones(3)).cwiseAbs().maxCoeff(), 1e-12);
  const Vector& pi = est.stationary.vector();
  EXPECT_LT((q.transpose() * pi - pi).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_TRUE(throws_kind([&] { spectral_params(obs, 3, 4, 1); }, ErrorKind::InvalidParams));
}

TEST(SpectralParams, PoorlySeparatedEmissionsDegrade) {
  const auto make_err = [](const HmmParams& p, std::uint64_t seed) {
    const auto obs = simulate(p, 20000, seed);
    return d_perm(spectral_params(obs, 13, 3, seed).parameters(), projected_truth(p, 13));
  };
  double easier = 0.0, harder = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    easier += make_err(presets::easier_beta(), seed);
    try {
      harder += make_err(presets::harder_beta(), seed);
    } catch (const Error&) {
      // A failed recovery counts as degraded.
      harder = std::numeric_limits<double>::infinity();
    }
  }
  EXPECT_TRUE(std::isfinite(easier));
  EXPECT_GT(harder, easier);
}

TEST(Projections, Simplex) {
  Vector in(3);
  in << 0.2, 0.3, 0.5;
  EXPECT_LT((project_simplex(in).vector() - in).cwiseAbs().maxCoeff(), 1e-15);
  Vector edge(2);
  edge << 2.0, 0.0;
  EXPECT_NEAR(project_simplex(edge)[0], 1.0, 1e-15);
  EXPECT_NEAR(project_simplex(edge)[1], 0.0, 1e-15);
  std::mt19937_64 rng(51);
  std::normal_distribution<double> g(0.25, 0.5);
  for (int trial = 0; trial < 3; ++trial) {
    Vector v(4);
    for (auto& x : v) x = g(rng);
    const Vector p = project_simplex(v).vector();
    const Vector oracle = grid_projection(v, 1000);
    EXPECT_LT((p - oracle).norm(), 2e-3);
    EXPECT_LE((p - v).norm(), (oracle - v).norm() + 1e-12);
  }
  EXPECT_TRUE(throws_kind([] { project_simplex(Vector::Constant(2, NAN)); }, ErrorKind::InvalidParams));
}

TEST(Projections, TransitionRows) {
  Matrix stochastic(2, 2);
  stochastic << 0.3, 0.7, 0.6, 0.4;
  EXPECT_LT((project_transition(stochastic).matrix() - stochastic).cwiseAbs().maxCoeff(), 1e-15);
  Matrix a(2, 2);
  a << 2.0, 0.0, 0.6, 0.4;
  EXPECT_NEAR(project_transition(a)(0, 0), 1.0, 1e-15);
  std::mt19937_64 rng(52);
  std::normal_distribution<double> g(0.25, 0.5);
  Matrix r(4, 4);
  for (auto& x : r.reshaped()) x = g(rng);
  const Matrix p = project_transition(r).matrix();
  for (int i = 0; i < 4; ++i) {
    EXPECT_LT((p.row(i).transpose() - grid_projection(r.row(i).transpose(), 400)).norm(), 5e-3);
  }
}

TEST(RandomOrthogonal, OrthogonalAndDeterministic) {
  const Matrix q = random_orthogonal(5, 8);
  EXPECT_LT((q.transpose() * q - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_EQ(q, random_orthogonal(5, 8));
  EXPECT_NE(q, random_orthogonal(5, 9));
}

TEST(Weyl, SingularValuePerturbation) {
  for (const auto& params : {presets::easier_beta(), presets::harder_beta()}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto obs = simulate(params, 2000, seed);
      const int m = 15;
      const Matrix n_hat = compute_moments(obs, m, false).pair;
      const Matrix n_true = theoretical_N(params, m);
      const Vector a = singular_values(n_hat);
      const Vector b = singular_values(n_true);
      const double bound = singular_values(n_hat - n_true)(0);
      for (int i = 0; i < m; ++i) EXPECT_LE(std::abs(a(i) - b(i)), bound + 1e-12);
    }
  }
}
