#include "hmmorder/density_model.hpp"

#include <algorithm>
#include <string>

#include "hmmorder/basis.hpp"
#include "hmmorder/errors.hpp"

namespace hmmorder {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void check_model_shapes(const Vector& pi, const Matrix& transition, const Matrix& emissions) {
  const auto k = pi.size();
  if (k == 0 || transition.rows() != k || transition.cols() != k || emissions.cols() != k) {
    throw Error(ErrorKind::DimensionMismatch, "model shapes disagree on the number of states");
  }
}

}  // namespace

CandidateModel CandidateModel::from_transition(TransitionMatrix transition, Matrix emissions,
                                               int window_length) {
  if (emissions.cols() != transition.size() || emissions.rows() < 1) {
    throw Error(ErrorKind::DimensionMismatch, "emission matrix must be M x K");
  }
  ProbabilityVector pi(solve_stationary(transition.matrix()));
  return {std::move(transition), std::move(pi), std::move(emissions), window_length};
}

CandidateModel CandidateModel::uniform(int dimension, int window_length) {
  Matrix o = Matrix::Zero(dimension, 1);
  o(0, 0) = 1.0;
  return from_transition(TransitionMatrix(Matrix::Ones(1, 1)), std::move(o), window_length);
}

double window_norm_sq(const Vector& pi, const Matrix& transition, const Matrix& gram, int window_length) {
  Matrix stage = (pi * pi.transpose()).cwiseProduct(gram);
  for (int i = 1; i < window_length; ++i) {
    stage = (transition.transpose() * stage * transition).cwiseProduct(gram);
  }
  return stage.sum();
}

double window_norm_sq_gradient(const Vector& pi, const Matrix& transition, const Matrix& gram, int window_length,
                               Vector& d_pi, Matrix& d_transition, Matrix& d_gram) {
  // Reverse pass over S_1 = (pi pi^T) o G, S_{i+1} = (Q^T S_i Q) o G.
  std::vector<Matrix> stages{(pi * pi.transpose()).cwiseProduct(gram)};
  std::vector<Matrix> inner;
  for (int i = 1; i < window_length; ++i) {
    inner.push_back(transition.transpose() * stages.back() * transition);
    stages.push_back(inner.back().cwiseProduct(gram));
  }
  const auto k = gram.rows();
  d_gram = Matrix::Zero(k, k);
  d_transition = Matrix::Zero(k, k);
  Matrix bar = Matrix::Ones(k, k);
  for (int i = window_length - 1; i >= 1; --i) {
    const auto idx = static_cast<std::size_t>(i - 1);
    d_gram += bar.cwiseProduct(inner[idx]);
    const Matrix bar_inner = bar.cwiseProduct(gram);
    const Matrix& s = stages[idx];
    d_transition += s * transition * bar_inner.transpose() + s.transpose() * transition * bar_inner;
    bar = transition * bar_inner * transition.transpose();
  }
  d_gram += bar.cwiseProduct(pi * pi.transpose());
  const Matrix bar_outer = bar.cwiseProduct(gram);
  d_pi = (bar_outer + bar_outer.transpose()) * pi;
  return stages.back().sum();
}

double norm_sq(const CandidateModel& model) {
  const Matrix gram = model.emissions.transpose() * model.emissions;
  return window_norm_sq(model.stationary.vector(), model.transition.matrix(), gram, model.window_length);
}

double eval_window(const CandidateModel& model, std::span<const double> z) {
  if (static_cast<int>(z.size()) != model.window_length) {
    throw Error(ErrorKind::DimensionMismatch, "window size differs from the model window length");
  }
  const TrigBasis basis(model.dimension());
  const Matrix& q = model.transition.matrix();
  Vector alpha;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const Vector f = model.emissions.transpose() * eval_basis(basis, z[i]);
    alpha = i == 0 ? Vector(model.stationary.vector().cwiseProduct(f))
                   : Vector((q.transpose() * alpha).cwiseProduct(f));
  }
  return alpha.sum();
}

ContrastEvaluation gamma_n(const CandidateModel& model, const ObservationRecord& obs) {
  if (obs.window_length != model.window_length) {
    throw Error(ErrorKind::DimensionMismatch, "observation and model window lengths differ");
  }
  obs.validate();
  const TrigBasis basis(model.dimension());
  const Matrix phi = basis_matrix(basis, obs.values);
  const Matrix f = phi * model.emissions;
  const Matrix& q = model.transition.matrix();
  const Vector& pi = model.stationary.vector();
  const std::size_t n = obs.window_count();
  const int l = obs.window_length;

  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    Vector alpha = pi.cwiseProduct(f.row(static_cast<Eigen::Index>(s)).transpose());
    for (int i = 1; i < l; ++i) {
      alpha = (q.transpose() * alpha).cwiseProduct(f.row(static_cast<Eigen::Index>(s + i)).transpose());
    }
    total += alpha.sum();
  }
  ContrastEvaluation out;
  out.norm_sq = norm_sq(model);
  out.empirical_mean = total / static_cast<double>(n);
  out.gamma = out.norm_sq - 2.0 * out.empirical_mean;
  return out;
}

std::vector<double> third_moment_tensor(const ObservationRecord& obs, int dimension) {
  obs.validate();
  if (obs.window_length < 3) {
    throw Error(ErrorKind::InsufficientData, "third moments need windows of length >= 3");
  }
  const TrigBasis basis(dimension);
  const auto n = static_cast<Eigen::Index>(obs.window_count());
  const Eigen::Index m = dimension;
  const Matrix phi = basis_matrix(basis, obs.values);

  // T viewed as an (M^2 x M) column-major matrix: element (b*M + c, a).
  Matrix acc = Matrix::Zero(m * m, m);
  constexpr Eigen::Index kChunk = 1024;
  RowMatrix pairs;
  for (Eigen::Index start = 0; start < n; start += kChunk) {
    const Eigen::Index rows = std::min(kChunk, n - start);
    pairs.resize(rows, m * m);
    for (Eigen::Index s = 0; s < rows; ++s) {
      for (Eigen::Index b = 0; b < m; ++b) {
        pairs.row(s).segment(b * m, m) = phi(start + s + 1, b) * phi.row(start + s + 2);
      }
    }
    acc.noalias() += pairs.transpose() * phi.middleRows(start, rows);
  }
  acc /= static_cast<double>(n);
  return {acc.data(), acc.data() + acc.size()};
}

EmpiricalContrast::EmpiricalContrast(const ObservationRecord& obs, int max_dimension)
    : max_dimension_(max_dimension), window_length_(obs.window_length), window_count_(obs.window_count()) {
  obs.validate();
  const TrigBasis basis(max_dimension);
  if (window_length_ == 3) {
    const auto tensor = third_moment_tensor(obs, max_dimension);
    const Eigen::Index big = max_dimension;
    slices_.reserve(static_cast<std::size_t>(max_dimension));
    for (Eigen::Index m = 1; m <= big; ++m) {
      Matrix slice(m * m, m);
      for (Eigen::Index a = 0; a < m; ++a) {
        for (Eigen::Index b = 0; b < m; ++b) {
          for (Eigen::Index c = 0; c < m; ++c) slice(b * m + c, a) = tensor[(a * big + b) * big + c];
        }
      }
      slices_.push_back(std::move(slice));
    }
  } else {
    const RowMatrix phi = basis_matrix(basis, obs.values);
    phi_.assign(phi.data(), phi.data() + phi.size());
  }
}

double EmpiricalContrast::empirical_mean(const Vector& pi, const Matrix& transition,
                                         const Matrix& emissions) const {
  check_model_shapes(pi, transition, emissions);
  if (emissions.rows() > max_dimension_) {
    throw Error(ErrorKind::DimensionMismatch,
                "model dimension " + std::to_string(emissions.rows()) + " exceeds precomputed " +
                    std::to_string(max_dimension_));
  }
  if (window_length_ != 3) return windowed_mean(pi, transition, emissions);

  const Eigen::Index m = emissions.rows();
  const Eigen::Index k = pi.size();
  // g(z) = sum_j A(z1,j) f_j(z2) C(z3,j) with A = O diag(pi) Q and
  // C = O Q^T, so the mean is a sum of K rank-one trilinear forms against
  // the moment tensor.
  const Matrix a = emissions * pi.asDiagonal() * transition;
  const Matrix c = emissions * transition.transpose();
  const Matrix w = slices_[static_cast<std::size_t>(m - 1)] * a;
  double total = 0.0;
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::Map<const Matrix> wj(w.col(j).data(), m, m);
    total += c.col(j).dot(wj * emissions.col(j));
  }
  return total;
}

double EmpiricalContrast::windowed_mean(const Vector& pi, const Matrix& transition,
                                        const Matrix& emissions) const {
  const Eigen::Index m = emissions.rows();
  const auto rows = static_cast<Eigen::Index>(phi_.size() / max_dimension_);
  const Eigen::Map<const RowMatrix> phi(phi_.data(), rows, max_dimension_);
  const Matrix f = phi.leftCols(m) * emissions;
  double total = 0.0;
  for (std::size_t s = 0; s < window_count_; ++s) {
    const auto row = static_cast<Eigen::Index>(s);
    Vector alpha = pi.cwiseProduct(f.row(row).transpose());
    for (int i = 1; i < window_length_; ++i) {
      alpha = (transition.transpose() * alpha).cwiseProduct(f.row(row + i).transpose());
    }
    total += alpha.sum();
  }
  return total / static_cast<double>(window_count_);
}

ContrastEvaluation EmpiricalContrast::evaluate(const Vector& pi, const Matrix& transition,
                                               const Matrix& emissions) const {
  ContrastEvaluation out;
  const Matrix gram = emissions.transpose() * emissions;
  out.norm_sq = window_norm_sq(pi, transition, gram, window_length_);
  out.empirical_mean = empirical_mean(pi, transition, emissions);
  out.gamma = out.norm_sq - 2.0 * out.empirical_mean;
  return out;
}

ContrastGradient EmpiricalContrast::gradient(const Vector& pi, const Matrix& transition,
                                             const Matrix& emissions) const {
  check_model_shapes(pi, transition, emissions);
  if (window_length_ != 3) throw Error(ErrorKind::InvalidParams, "analytic gradient needs L = 3");
  if (emissions.rows() > max_dimension_) {
    throw Error(ErrorKind::DimensionMismatch, "model dimension exceeds the precomputed basis");
  }
  const Eigen::Index m = emissions.rows();
  const Eigen::Index k = pi.size();
  const Matrix& slice = slices_[static_cast<std::size_t>(m - 1)];

  ContrastGradient out;
  Matrix d_gram;
  const double norm = window_norm_sq_gradient(pi, transition, emissions.transpose() * emissions, 3, out.pi,
                                              out.transition, d_gram);
  out.emissions = emissions * (d_gram + d_gram.transpose());

  // E = sum_j sum_abc T(a,b,c) A(a,j) O(b,j) C(c,j).
  const Matrix dq = pi.asDiagonal() * transition;
  const Matrix a = emissions * dq;
  const Matrix c = emissions * transition.transpose();
  const Matrix w = slice * a;
  Matrix v(m * m, k);
  Matrix e_o(m, k);
  Matrix e_c(m, k);
  double mean = 0.0;
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::Map<const Matrix> wj(w.col(j).data(), m, m);
    e_o.col(j).noalias() = wj.transpose() * c.col(j);
    e_c.col(j).noalias() = wj * emissions.col(j);
    mean += c.col(j).dot(e_c.col(j));
    Eigen::Map<Matrix>(v.col(j).data(), m, m).noalias() = c.col(j) * emissions.col(j).transpose();
  }
  const Matrix e_a = slice.transpose() * v;
  const Matrix ot_ea = emissions.transpose() * e_a;
  const Matrix e_o_total = e_o + e_a * dq.transpose() + e_c * transition;
  const Vector e_pi = ot_ea.cwiseProduct(transition).rowwise().sum();
  const Matrix e_q = pi.asDiagonal() * ot_ea + e_c.transpose() * emissions;

  out.gamma = norm - 2.0 * mean;
  out.pi -= 2.0 * e_pi;
  out.transition -= 2.0 * e_q;
  out.emissions -= 2.0 * e_o_total;
  return out;
}

ContrastEvaluation EmpiricalContrast::evaluate(const CandidateModel& model) const {
  if (model.window_length != window_length_) {
    throw Error(ErrorKind::DimensionMismatch, "observation and model window lengths differ");
  }
  return evaluate(model.stationary.vector(), model.transition.matrix(), model.emissions);
}

}  // namespace hmmorder
