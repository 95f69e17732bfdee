#include "hmmorder/basis.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "hmmorder/errors.hpp"

namespace hmmorder {

namespace {

constexpr double kSqrt2 = std::numbers::sqrt2;

void check_dimension(int dimension) {
  if (dimension < 1) {
    throw Error(ErrorKind::InvalidParams, "basis dimension must be >= 1, got " + std::to_string(dimension));
  }
}

// Gauss-Legendre nodes and weights on [-1,1] by Newton iteration.
void legendre_rule(int points, std::vector<double>& x, std::vector<double>& w) {
  x.assign(points, 0.0);
  w.assign(points, 2.0);
  if (points == 1) return;
  const auto legendre = [points](double z, double& derivative) {
    double p0 = 1.0;
    double p1 = z;
    for (int k = 2; k <= points; ++k) {
      const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    derivative = points * (z * p1 - p0) / (z * z - 1.0);
    return p1;
  };
  for (int i = 0; i < (points + 1) / 2; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (points + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      const double dz = legendre(z, dp) / dp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    legendre(z, dp);
    const double weight = 2.0 / ((1.0 - z * z) * dp * dp);
    x[i] = -z;
    x[points - 1 - i] = z;
    w[i] = weight;
    w[points - 1 - i] = weight;
  }
}

void append_panel(double lo, double hi, const std::vector<double>& x, const std::vector<double>& w,
                  QuadratureRule& rule) {
  const double half = 0.5 * (hi - lo);
  const double mid = 0.5 * (hi + lo);
  for (std::size_t i = 0; i < x.size(); ++i) {
    rule.nodes.push_back(mid + half * x[i]);
    rule.weights.push_back(half * w[i]);
  }
}

}  // namespace

TrigBasis::TrigBasis(int dimension) : dimension_(dimension) { check_dimension(dimension); }

double TrigBasis::operator()(int a, double y) const {
  if (a == 0) return 1.0;
  return kSqrt2 * std::cos(std::numbers::pi * a * y);
}

void TrigBasis::evaluate(double y, std::span<double> out) const {
  out[0] = 1.0;
  if (dimension_ == 1) return;
  // Chebyshev recurrence cos((a+1)t) = 2 cos(t) cos(at) - cos((a-1)t).
  const double c1 = std::cos(std::numbers::pi * y);
  double prev = 1.0;
  double cur = c1;
  out[1] = kSqrt2 * cur;
  for (int a = 2; a < dimension_; ++a) {
    const double next = 2.0 * c1 * cur - prev;
    prev = cur;
    cur = next;
    out[a] = kSqrt2 * cur;
  }
}

Vector eval_basis(const TrigBasis& basis, double y) {
  if (!(y >= 0.0 && y <= 1.0)) {
    throw Error(ErrorKind::OutOfDomain, "basis evaluated outside [0,1]");
  }
  Vector out(basis.dimension());
  for (int a = 0; a < basis.dimension(); ++a) out(a) = basis(a, y);
  return out;
}

Matrix basis_matrix(const TrigBasis& basis, std::span<const double> ys) {
  const int m = basis.dimension();
  // Row-major scratch so each evaluation writes contiguously.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> phi(ys.size(), m);
  for (std::size_t i = 0; i < ys.size(); ++i) {
    basis.evaluate(ys[i], std::span<double>(phi.row(static_cast<Eigen::Index>(i)).data(), m));
  }
  return phi;
}

double evaluate_expansion(const Vector& coeffs, double y) {
  const int m = static_cast<int>(coeffs.size());
  if (m == 0) return 0.0;
  std::vector<double> phi(m);
  TrigBasis(m).evaluate(y, phi);
  double acc = 0.0;
  for (int a = 0; a < m; ++a) acc += coeffs(a) * phi[a];
  return acc;
}

QuadratureRule QuadratureRule::gauss_legendre(int points) {
  if (points < 1) throw Error(ErrorKind::InvalidParams, "quadrature needs at least one node");
  std::vector<double> x;
  std::vector<double> w;
  legendre_rule(points, x, w);
  QuadratureRule rule;
  append_panel(0.0, 1.0, x, w, rule);
  return rule;
}

QuadratureRule QuadratureRule::composite(int panels, int points_per_panel, int grading_levels) {
  if (panels < 1 || points_per_panel < 1 || grading_levels < 0) {
    throw Error(ErrorKind::InvalidParams, "invalid composite quadrature layout");
  }
  std::vector<double> x;
  std::vector<double> w;
  legendre_rule(points_per_panel, x, w);

  constexpr double kGrading = 0.25;
  const double h = 1.0 / panels;
  std::vector<double> breaks;
  breaks.push_back(0.0);
  // Geometric breakpoints inside [0, h].
  for (int g = grading_levels; g >= 1; --g) breaks.push_back(h * std::pow(kGrading, g));
  for (int p = 1; p < panels; ++p) breaks.push_back(p * h);
  // Near 1 the spacing of doubles limits how fine the grading can go.
  for (int g = 1; g <= grading_levels && h * std::pow(kGrading, g) >= 1e-13; ++g) {
    breaks.push_back(1.0 - h * std::pow(kGrading, g));
  }
  breaks.push_back(1.0);
  std::sort(breaks.begin(), breaks.end());

  QuadratureRule rule;
  rule.nodes.reserve((breaks.size() - 1) * x.size());
  rule.weights.reserve((breaks.size() - 1) * x.size());
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
    if (breaks[i + 1] > breaks[i]) append_panel(breaks[i], breaks[i + 1], x, w, rule);
  }
  return rule;
}

Vector project_function(const std::function<double(double)>& f, int dimension,
                        const QuadratureRule& rule) {
  const TrigBasis basis(dimension);
  Vector coeffs = Vector::Zero(dimension);
  std::vector<double> phi(dimension);
  for (std::size_t i = 0; i < rule.size(); ++i) {
    const double value = rule.weights[i] * f(rule.nodes[i]);
    basis.evaluate(rule.nodes[i], phi);
    for (int a = 0; a < dimension; ++a) coeffs(a) += value * phi[a];
  }
  return coeffs;
}

BasisCoefficients project_density(const BetaDensity& f, int dimension, const QuadratureRule& rule) {
  validate_emission(f);
  return {project_function(f, dimension, rule)};
}

BasisCoefficients project_density(const BetaDensity& f, int dimension,
                                  const ProjectionOptions& options) {
  validate_emission(f);
  check_dimension(dimension);
  int panels = 4;
  int grading = options.grading_levels;
  Vector previous;
  for (;;) {
    const auto rule = QuadratureRule::composite(panels, options.points_per_panel, grading);
    if (rule.size() > options.node_budget && previous.size() > 0) {
      throw Error(ErrorKind::QuadratureNotConverged,
                  "projection did not stabilise within " + std::to_string(options.node_budget) + " nodes");
    }
    Vector current = project_function(f, dimension, rule);
    if (previous.size() > 0 && (current - previous).lpNorm<Eigen::Infinity>() < options.tolerance) {
      return {std::move(current)};
    }
    previous = std::move(current);
    panels *= 2;
    grading += 4;
  }
}

Vector project_emission(const EmissionSpec& emission, int dimension) {
  check_dimension(dimension);
  if (const auto* beta = std::get_if<BetaDensity>(&emission)) {
    return project_density(*beta, dimension).coeffs;
  }
  const auto& c = std::get<BasisCoefficients>(emission).coeffs;
  Vector out = Vector::Zero(dimension);
  const auto common = std::min<Eigen::Index>(dimension, c.size());
  out.head(common) = c.head(common);
  return out;
}

double gram_identity_check(const TrigBasis& basis, const QuadratureRule& rule) {
  const int m = basis.dimension();
  Matrix gram = Matrix::Zero(m, m);
  std::vector<double> phi(m);
  for (std::size_t i = 0; i < rule.size(); ++i) {
    for (int a = 0; a < m; ++a) phi[a] = basis(a, rule.nodes[i]);
    for (int a = 0; a < m; ++a) {
      for (int b = 0; b < m; ++b) gram(a, b) += rule.weights[i] * phi[a] * phi[b];
    }
  }
  return (gram - Matrix::Identity(m, m)).cwiseAbs().maxCoeff();
}

}  // namespace hmmorder
