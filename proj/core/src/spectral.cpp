#include "hmmorder/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "hmmorder/basis.hpp"
#include "hmmorder/density_model.hpp"
#include "hmmorder/errors.hpp"

namespace hmmorder {

namespace {

double condition_number(const Matrix& a) {
  const Vector s = singular_values(a);
  if (s.size() == 0) return 0.0;
  const double smallest = s(s.size() - 1);
  return smallest > 0.0 ? s(0) / smallest : std::numeric_limits<double>::infinity();
}

void require_conditioned(const Matrix& a, const char* what) {
  const double c = condition_number(a);
  if (!(c <= kConditionLimit)) {
    throw Error(ErrorKind::IllConditioned, std::string(what) + " has condition number " + std::to_string(c));
  }
}

std::uint64_t attempt_seed(std::uint64_t seed, int attempt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(attempt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

SpectralParams spectral_attempt(const MomentMatrices& mom, int order, const Matrix& theta) {
  const int m = mom.dimension;
  const int k = order;

  // Top-K right singular vectors of P.
  Eigen::JacobiSVD<Matrix> svd(mom.skip, Eigen::ComputeFullV);
  const Matrix u = svd.matrixV().leftCols(k);

  // B(b) = (U^T P U)^{-1} U^T M(., b, .) U.
  const Matrix upu = u.transpose() * mom.skip * u;
  require_conditioned(upu, "U^T P U");
  const auto upu_lu = upu.partialPivLu();
  std::vector<Matrix> b_mats(m);
  for (int b = 0; b < m; ++b) b_mats[b] = upu_lu.solve(u.transpose() * mom.third_slice(b) * u);

  // C(k) = sum_b (U Theta)(b, k) B(b).
  const Matrix u_theta = u * theta;
  std::vector<Matrix> c_mats(k, Matrix::Zero(k, k));
  for (int j = 0; j < k; ++j) {
    for (int b = 0; b < m; ++b) c_mats[j] += u_theta(b, j) * b_mats[b];
  }

  // Eigenvectors of C(1), unit columns, descending real part.
  Eigen::EigenSolver<Matrix> eig(c_mats[0]);
  if (eig.info() != Eigen::Success) throw Error(ErrorKind::ComplexEigenvalues, "eigensolver failed on C(1)");
  const Eigen::VectorXcd values = eig.eigenvalues();
  const double scale = std::max(values.cwiseAbs().maxCoeff(), 1e-300);
  if (values.imag().cwiseAbs().maxCoeff() > 1e-8 * scale) {
    throw Error(ErrorKind::ComplexEigenvalues, "C(1) has complex eigenvalues");
  }
  std::vector<int> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(), [&](int a, int b) { return values(a).real() > values(b).real(); });
  Matrix r(k, k);
  const Eigen::MatrixXcd vectors = eig.eigenvectors();
  for (int j = 0; j < k; ++j) {
    r.col(j) = vectors.col(perm[j]).real();
    r.col(j).normalize();
  }
  require_conditioned(r, "eigenvector matrix R");
  const auto r_lu = r.partialPivLu();

  // Lambda(k, k') = (R^{-1} C(k) R)(k', k'), O = U Theta Lambda.
  Matrix lambda(k, k);
  for (int j = 0; j < k; ++j) {
    const Matrix d = r_lu.solve(c_mats[j] * r);
    for (int jj = 0; jj < k; ++jj) lambda(j, jj) = d(jj, jj);
  }
  Matrix o_hat = u_theta * lambda;

  // pi from the first moment, projected on the simplex.
  const Matrix uo = u.transpose() * o_hat;
  require_conditioned(uo, "U^T O");
  const auto uo_lu = uo.partialPivLu();
  ProbabilityVector pi_tilde = project_simplex(uo_lu.solve(u.transpose() * mom.first));

  // Q from the pair moment, projected row-wise.
  const Matrix left = uo * pi_tilde.vector().asDiagonal();
  require_conditioned(left, "U^T O diag(pi)");
  const Matrix middle = u.transpose() * mom.pair * u;
  const Matrix right_inv = (o_hat.transpose() * u).partialPivLu().inverse();
  const Matrix q_raw = left.partialPivLu().solve(middle) * right_inv;
  if (!q_raw.allFinite()) throw Error(ErrorKind::IllConditioned, "transition estimate is not finite");
  TransitionMatrix q_hat = project_transition(q_raw);

  Vector pi_hat;
  try {
    pi_hat = solve_stationary(q_hat.matrix());
  } catch (const Error&) {
    // No unique stationary law of the projected matrix.
    pi_hat = pi_tilde.vector();
  }
  return SpectralParams{k, std::move(o_hat), std::move(pi_tilde), std::move(q_hat),
                        ProbabilityVector(std::move(pi_hat)), 0, 0};
}

}  // namespace

double MomentMatrices::third_at(int a, int b, int c) const {
  const auto m = static_cast<std::size_t>(dimension);
  return third[(static_cast<std::size_t>(a) * m + static_cast<std::size_t>(b)) * m + static_cast<std::size_t>(c)];
}

Matrix MomentMatrices::third_slice(int b) const {
  if (!has_third()) throw Error(ErrorKind::InsufficientData, "third order moments were not computed");
  Matrix slice(dimension, dimension);
  for (int a = 0; a < dimension; ++a) {
    for (int c = 0; c < dimension; ++c) slice(a, c) = third_at(a, b, c);
  }
  return slice;
}

MomentMatrices compute_moments(const ObservationRecord& obs, int dimension, bool with_third) {
  if (obs.window_length < 3) throw Error(ErrorKind::InsufficientData, "moments need windows of length >= 3");
  if (obs.window_count() < 1) throw Error(ErrorKind::InsufficientData, "no complete window in the record");
  obs.validate();
  const TrigBasis basis(dimension);
  const Matrix phi = basis_matrix(basis, obs.values);
  const auto n = static_cast<Eigen::Index>(obs.window_count());

  MomentMatrices mom;
  mom.dimension = dimension;
  mom.sample_count = static_cast<std::size_t>(n);
  const auto y1 = phi.topRows(n);
  const auto y2 = phi.middleRows(1, n);
  const auto y3 = phi.middleRows(2, n);
  const double inv_n = 1.0 / static_cast<double>(n);
  mom.first = y1.colwise().sum().transpose() * inv_n;
  mom.pair = (y1.transpose() * y2) * inv_n;
  mom.skip = (y1.transpose() * y3) * inv_n;
  if (with_third) mom.third = third_moment_tensor(obs, dimension);
  return mom;
}

Matrix emission_matrix(const HmmParams& params, int dimension) {
  Matrix o(dimension, params.order());
  for (int k = 0; k < params.order(); ++k) o.col(k) = project_emission(params.emissions[k], dimension);
  return o;
}

MomentMatrices population_moments(const HmmParams& params, int dimension) {
  params.validate();
  const Matrix o = emission_matrix(params, dimension);
  const Matrix& q = params.transition.matrix();
  const Vector& pi = params.stationary.vector();

  MomentMatrices mom;
  mom.dimension = dimension;
  mom.sample_count = 0;
  mom.first = o * pi;
  const Matrix a = o * pi.asDiagonal() * q;
  mom.pair = a * o.transpose();
  mom.skip = a * q * o.transpose();
  const Matrix c = o * q.transpose();
  const auto m = static_cast<std::size_t>(dimension);
  mom.third.assign(m * m * m, 0.0);
  for (int ia = 0; ia < dimension; ++ia) {
    for (int ib = 0; ib < dimension; ++ib) {
      for (int ic = 0; ic < dimension; ++ic) {
        double v = 0.0;
        for (int j = 0; j < params.order(); ++j) v += a(ia, j) * o(ib, j) * c(ic, j);
        const auto idx = (static_cast<std::size_t>(ia) * m + static_cast<std::size_t>(ib)) * m + ic;
        mom.third[idx] = v;
      }
    }
  }
  return mom;
}

Matrix theoretical_N(const HmmParams& params, int dimension) {
  params.validate();
  const Matrix o = emission_matrix(params, dimension);
  return o * params.stationary.vector().asDiagonal() * params.transition.matrix() * o.transpose();
}

Vector singular_values(const Matrix& a) {
  if (a.size() == 0) return Vector();
  Eigen::JacobiSVD<Matrix> svd(a);
  return svd.singularValues();
}

SpectralOrderReport order_by_threshold(const MomentMatrices& moments, double constant) {
  if (!(constant > 0.0)) throw Error(ErrorKind::InvalidParams, "threshold constant must be positive");
  SpectralOrderReport rep;
  rep.method = OrderMethod::Threshold;
  rep.singular_values = singular_values(moments.pair);
  rep.constant = constant;
  const double n = static_cast<double>(std::max<std::size_t>(moments.sample_count, 2));
  rep.threshold = constant * std::sqrt(std::log(n) / n);
  rep.order = static_cast<int>((rep.singular_values.array() > rep.threshold).count());
  return rep;
}

SpectralOrderReport order_by_regression(const Vector& sv, int regression_size, double tau) {
  const int m = static_cast<int>(sv.size());
  if (regression_size < 2 || regression_size > m) {
    throw Error(ErrorKind::InvalidParams, "regression size must lie in [2, M]");
  }
  if (!(tau > 1.0)) throw Error(ErrorKind::InvalidParams, "tau must exceed 1");

  SpectralOrderReport rep;
  rep.method = OrderMethod::Regression;
  rep.singular_values = sv;
  rep.regression_size = regression_size;
  rep.tau = tau;

  // Indices are 1-based; the regression uses i = M - M_reg + 1 .. M.
  const int first = m - regression_size + 1;
  double sx = 0.0, sy = 0.0;
  for (int i = first; i <= m; ++i) {
    sx += i;
    sy += sv(i - 1);
  }
  const double mx = sx / regression_size;
  const double my = sy / regression_size;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (int i = first; i <= m; ++i) {
    sxx += (i - mx) * (i - mx);
    sxy += (i - mx) * (sv(i - 1) - my);
    syy += (sv(i - 1) - my) * (sv(i - 1) - my);
  }
  if (!(syy > 0.0)) {
    throw Error(ErrorKind::DegenerateRegression, "smallest singular values are all equal");
  }
  rep.slope = sxy / sxx;
  rep.intercept = my - rep.slope * mx;
  int count = 0;
  while (count < m && sv(count) > tau * rep.predicted(count + 1)) ++count;
  rep.order = count;
  return rep;
}

SpectralOrderReport order_by_regression(const MomentMatrices& moments, int regression_size, double tau) {
  return order_by_regression(singular_values(moments.pair), regression_size, tau);
}

Matrix random_orthogonal(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix g(size, size);
  for (int j = 0; j < size; ++j) {
    for (int i = 0; i < size; ++i) g(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(size, size);
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < size; ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  return q;
}

SpectralParams spectral_params(const MomentMatrices& moments, int order, std::uint64_t theta_seed) {
  if (order < 1 || order > moments.dimension) {
    throw Error(ErrorKind::InvalidParams, "spectral estimation needs 1 <= K <= M");
  }
  if (!moments.has_third()) throw Error(ErrorKind::InsufficientData, "third order moments are required");
  std::optional<Error> last;
  for (int attempt = 0; attempt < kSpectralAttempts; ++attempt) {
    const std::uint64_t seed = attempt_seed(theta_seed, attempt);
    try {
      auto out = spectral_attempt(moments, order, random_orthogonal(order, seed));
      out.theta_seed = seed;
      out.attempts = attempt + 1;
      return out;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::IllConditioned && e.kind() != ErrorKind::ComplexEigenvalues) throw;
      last = e;
    }
  }
  throw Error(last->kind(), std::string("after ") + std::to_string(kSpectralAttempts) + " attempts: " + last->what());
}

SpectralParams spectral_params(const ObservationRecord& obs, int dimension, int order, std::uint64_t theta_seed) {
  return spectral_params(compute_moments(obs, dimension), order, theta_seed);
}

ProbabilityVector project_simplex(const Vector& v) {
  if (v.size() == 0 || !v.allFinite()) throw Error(ErrorKind::InvalidParams, "simplex projection needs finite input");
  std::vector<double> sorted(v.data(), v.data() + v.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (std::size_t j = 0; j < sorted.size(); ++j) {
    cumulative += sorted[j];
    const double t = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (sorted[j] - t > 0.0) theta = t;
  }
  Vector p = (v.array() - theta).cwiseMax(0.0);
  // Absorb rounding so the sum is exactly representable as one.
  p /= p.sum();
  return ProbabilityVector(std::move(p));
}

TransitionMatrix project_transition(const Matrix& a) {
  if (a.rows() != a.cols() || a.rows() == 0) throw Error(ErrorKind::InvalidParams, "transition must be square");
  Matrix q(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    q.row(i) = project_simplex(a.row(i).transpose()).vector().transpose();
  }
  return TransitionMatrix(std::move(q));
}

}  // namespace hmmorder
