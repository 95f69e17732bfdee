#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "hmmorder/cmaes.hpp"
#include "hmmorder/lbfgs.hpp"
#include "test_support.hpp"

using namespace hmmorder;
using hmmorder::testing::throws_kind;

namespace {

double rosenbrock(const Vector& x) {
  double acc = 0.0;
  for (int i = 0; i + 1 < x.size(); ++i) {
    acc += 100.0 * std::pow(x(i + 1) - x(i) * x(i), 2) + std::pow(1.0 - x(i), 2);
  }
  return acc;
}

}  // namespace

TEST(Cmaes, SphereConverges) {
  CmaesOptions opts;
  opts.seed = 1;
  opts.max_evaluations = 20000;
  const auto res = cmaes_minimize([](const Vector& x) { return x.squaredNorm(); }, Vector::Constant(10, 2.0), opts);
  EXPECT_LT(res.value, 1e-10);
  EXPECT_LE(res.evaluations, opts.max_evaluations);
  EXPECT_FALSE(res.diverged);
}

TEST(Cmaes, RosenbrockWithScaledStart) {
  CmaesOptions opts;
  opts.seed = 2;
  opts.sigma0 = 0.5;
  opts.max_evaluations = 40000;
  const auto res = cmaes_minimize(rosenbrock, Vector::Zero(6), opts);
  EXPECT_LT(res.value, 1e-8);
  EXPECT_LT((res.x - Vector::Ones(6)).norm(), 1e-3);
}

TEST(Cmaes, CoordinateScaleHandlesIllScaling) {
  const auto f = [](const Vector& x) { return x(0) * x(0) + 1e6 * x(1) * x(1); };
  CmaesOptions opts;
  opts.seed = 3;
  opts.coordinate_scale = Vector(2);
  opts.coordinate_scale << 1.0, 1e-3;
  opts.max_evaluations = 3000;
  EXPECT_LT(cmaes_minimize(f, Vector::Constant(2, 1.0), opts).value, 1e-10);
}

TEST(Cmaes, NeverWorseThanStartAndDeterministic) {
  const auto f = [](const Vector& x) { return std::cos(5 * x(0)) + x.squaredNorm(); };
  CmaesOptions opts;
  opts.seed = 4;
  opts.max_evaluations = 500;
  const Vector x0 = Vector::Constant(3, 0.7);
  const auto a = cmaes_minimize(f, x0, opts);
  const auto b = cmaes_minimize(f, x0, opts);
  EXPECT_LE(a.value, f(x0));
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.x, b.x);
  EXPECT_TRUE(a.budget_exhausted || a.evaluations <= opts.max_evaluations);
}

TEST(Cmaes, InfeasibleRegionsRankLast) {
  const auto f = [](const Vector& x) {
    return x(0) < 0.0 ? std::numeric_limits<double>::quiet_NaN() : (x(0) - 1.0) * (x(0) - 1.0) + x(1) * x(1);
  };
  CmaesOptions opts;
  opts.seed = 5;
  const auto res = cmaes_minimize(f, Vector::Constant(2, 0.5), opts);
  EXPECT_LT(res.value, 1e-8);
}

TEST(Cmaes, ReportsDivergence) {
  CmaesOptions opts;
  opts.max_evaluations = 200;
  const auto res = cmaes_minimize([](const Vector&) { return std::numeric_limits<double>::infinity(); },
                                  Vector::Zero(2), opts);
  EXPECT_TRUE(res.diverged);
}

TEST(Cmaes, RejectsBadOptions) {
  CmaesOptions opts;
  opts.sigma0 = 0.0;
  const auto f = [](const Vector& x) { return x.squaredNorm(); };
  EXPECT_TRUE(throws_kind([&] { cmaes_minimize(f, Vector::Zero(2), opts); }, ErrorKind::InvalidParams));
  opts.sigma0 = 0.1;
  opts.coordinate_scale = Vector::Ones(3);
  EXPECT_TRUE(throws_kind([&] { cmaes_minimize(f, Vector::Zero(2), opts); }, ErrorKind::InvalidParams));
}

TEST(Lbfgs, QuadraticAndRosenbrock) {
  Matrix a(3, 3);
  a << 4, 1, 0, 1, 3, 0.5, 0, 0.5, 2;
  Vector b(3);
  b << 1, -2, 0.5;
  const auto quad = [&](const Vector& x, Vector& g) {
    g = a * x - b;
    return 0.5 * x.dot(a * x) - b.dot(x);
  };
  const auto q = lbfgs_minimize(quad, Vector::Zero(3));
  EXPECT_LT((q.x - a.ldlt().solve(b)).norm(), 1e-8);

  const auto rosen = [](const Vector& x, Vector& g) {
    g.resize(2);
    g(0) = -400.0 * x(0) * (x(1) - x(0) * x(0)) - 2.0 * (1.0 - x(0));
    g(1) = 200.0 * (x(1) - x(0) * x(0));
    return rosenbrock(x);
  };
  LbfgsOptions opts;
  opts.max_iterations = 500;
  const auto r = lbfgs_minimize(rosen, Vector::Constant(2, -1.2), opts);
  EXPECT_LT((r.x - Vector::Ones(2)).norm(), 1e-6);
}

TEST(Lbfgs, NeverWorseThanStart) {
  const auto f = [](const Vector& x, Vector& g) {
    g = Vector::Constant(1, x(0) > 1.0 ? std::numeric_limits<double>::quiet_NaN() : 2.0 * (x(0) - 3.0));
    return x(0) > 1.0 ? std::numeric_limits<double>::infinity() : (x(0) - 3.0) * (x(0) - 3.0);
  };
  const auto r = lbfgs_minimize(f, Vector::Zero(1));
  EXPECT_LE(r.value, 9.0);
  EXPECT_LE(r.x(0), 1.0);
}
