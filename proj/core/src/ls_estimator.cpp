#include "hmmorder/ls_estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <thread>

#include "hmmorder/cmaes.hpp"
#include "hmmorder/errors.hpp"
#include "hmmorder/lbfgs.hpp"

namespace hmmorder {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLogitClamp = 40.0;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Unconstrained coordinates of one cell: K (K - 1) transition logits
// followed by the M K emission coefficients, column by column.
class CellParametrization {
 public:
  CellParametrization(int order, int dimension, const CandidateModel& anchor, double l2_bound)
      : order_(order), dimension_(dimension), l2_bound_(l2_bound), reference_(order) {
    const Matrix& q = anchor.transition.matrix();
    for (int i = 0; i < order_; ++i) q.row(i).maxCoeff(&reference_[i]);
  }

  int size() const { return order_ * (order_ - 1) + dimension_ * order_; }

  Vector encode(const CandidateModel& model) const {
    Vector x(size());
    const Matrix& q = model.transition.matrix();
    int pos = 0;
    for (int i = 0; i < order_; ++i) {
      const double ref = std::log(q(i, reference_[i]));
      for (int j = 0; j < order_; ++j) {
        if (j == reference_[i]) continue;
        const double logit = q(i, j) > 0.0 ? std::log(q(i, j)) - ref : -kLogitClamp;
        x(pos++) = std::clamp(logit, -kLogitClamp, kLogitClamp);
      }
    }
    for (int k = 0; k < order_; ++k) {
      for (int a = 0; a < dimension_; ++a) x(pos++) = model.emissions(a, k);
    }
    return x;
  }

  void decode(const Vector& x, Matrix& q, Matrix& o) const {
    q.resize(order_, order_);
    o.resize(dimension_, order_);
    int pos = 0;
    for (int i = 0; i < order_; ++i) {
      double top = 0.0;
      for (int j = 0; j < order_; ++j) {
        q(i, j) = j == reference_[i] ? 0.0 : std::clamp(x(pos++), -kLogitClamp, kLogitClamp);
        top = std::max(top, q(i, j));
      }
      double total = 0.0;
      for (int j = 0; j < order_; ++j) {
        q(i, j) = std::exp(q(i, j) - top);
        total += q(i, j);
      }
      q.row(i) /= total;
    }
    for (int k = 0; k < order_; ++k) {
      for (int a = 0; a < dimension_; ++a) o(a, k) = x(pos++);
      const double norm = o.col(k).norm();
      if (norm > l2_bound_) o.col(k) *= l2_bound_ / norm;
    }
  }

  // Pulls partials in (q, o), evaluated at decode(x), back to x.
  Vector backward(const Vector& x, const Matrix& q, const Matrix& d_q, const Matrix& d_o) const {
    Vector g(size());
    int pos = 0;
    for (int i = 0; i < order_; ++i) {
      const double inner = q.row(i).dot(d_q.row(i));
      for (int j = 0; j < order_; ++j) {
        if (j == reference_[i]) continue;
        g(pos) = std::abs(x(pos)) < kLogitClamp ? q(i, j) * (d_q(i, j) - inner) : 0.0;
        ++pos;
      }
    }
    for (int k = 0; k < order_; ++k) {
      const auto raw = x.segment(pos, dimension_);
      const double norm = raw.norm();
      if (norm > l2_bound_) {
        const double along = raw.dot(d_o.col(k)) / (norm * norm);
        g.segment(pos, dimension_) = (l2_bound_ / norm) * (d_o.col(k) - along * raw);
      } else {
        g.segment(pos, dimension_) = d_o.col(k);
      }
      pos += dimension_;
    }
    return g;
  }

 private:
  int order_;
  int dimension_;
  double l2_bound_;
  std::vector<Eigen::Index> reference_;
};

double safe_gamma(const EmpiricalContrast& contrast, const Matrix& q, const Matrix& o) {
  try {
    const Vector pi = solve_stationary(q);
    const double g = contrast.evaluate(pi, q, o).gamma;
    return std::isfinite(g) ? g : kInf;
  } catch (const Error&) {
    return kInf;
  }
}

// gamma at decode(x) and its gradient in x; +inf when Q is not ergodic.
double gamma_with_gradient(const EmpiricalContrast& contrast, const CellParametrization& param, const Vector& x,
                           Vector& grad) {
  Matrix q;
  Matrix o;
  param.decode(x, q, o);
  try {
    const Vector pi = solve_stationary(q);
    const auto g = contrast.gradient(pi, q, o);
    if (!std::isfinite(g.gamma)) return kInf;
    // pi solves pi (I - Q) = 0 with unit mass, so d pi = pi dQ Z.
    const int k = static_cast<int>(q.rows());
    const Matrix fundamental = Matrix::Identity(k, k) - q + Vector::Ones(k) * pi.transpose();
    const Vector z_pi = fundamental.partialPivLu().solve(g.pi);
    const Matrix d_q = g.transition + pi * z_pi.transpose();
    grad = param.backward(x, q, d_q, g.emissions);
    return grad.allFinite() ? g.gamma : kInf;
  } catch (const Error&) {
    return kInf;
  }
}

std::optional<CandidateModel> make_model(const Matrix& q, const Matrix& o) {
  try {
    return CandidateModel::from_transition(TransitionMatrix(q), o);
  } catch (const Error&) {
    return std::nullopt;
  }
}

struct RunOutcome {
  std::optional<CandidateModel> model;
  double gamma = kInf;
  long evaluations = 0;
  bool budget_exhausted = false;
};

RunOutcome optimize_from(int order, int dimension, const EmpiricalContrast& contrast,
                         const CandidateModel& start, const FitOptions& options, std::uint64_t seed) {
  const CellParametrization param(order, dimension, start, options.l2_bound);
  Matrix q;
  Matrix o;
  const auto objective = [&](const Vector& x) {
    param.decode(x, q, o);
    return safe_gamma(contrast, q, o);
  };
  CmaesOptions cma;
  cma.population = options.population;
  cma.sigma0 = options.sigma0;
  cma.coordinate_scale = Vector::Ones(param.size());
  const double emission_sigma = options.emission_sigma0 > 0.0
                                    ? options.emission_sigma0
                                    : 1.0 / std::sqrt(static_cast<double>(contrast.window_count()));
  cma.coordinate_scale.tail(order * dimension).setConstant(emission_sigma / options.sigma0);
  cma.max_evaluations = options.budget;
  cma.seed = seed;
  const auto res = cmaes_minimize(objective, param.encode(start), cma);

  RunOutcome out;
  out.evaluations = res.evaluations;
  out.budget_exhausted = res.budget_exhausted;
  Vector best = res.x;
  double best_value = res.value;
  if (std::isfinite(res.value) && options.polish_iterations > 0 && contrast.window_length() == 3) {
    LbfgsOptions lb;
    lb.max_iterations = options.polish_iterations;
    const auto polished = lbfgs_minimize(
        [&](const Vector& x, Vector& g) { return gamma_with_gradient(contrast, param, x, g); }, res.x, lb);
    out.evaluations += polished.evaluations;
    if (polished.value < best_value) {
      best = polished.x;
      best_value = polished.value;
    }
  }
  if (std::isfinite(best_value)) {
    param.decode(best, q, o);
    out.model = make_model(q, o);
    if (out.model) out.gamma = contrast.evaluate(*out.model).gamma;
  }
  return out;
}

}  // namespace

std::vector<int> ModelGrid::resolved_dimensions() const {
  validate();
  if (!dimensions.empty()) return dimensions;
  std::vector<int> all(max_dimension);
  for (int m = 1; m <= max_dimension; ++m) all[m - 1] = m;
  return all;
}

ModelGrid ModelGrid::strided(int max_order, int max_dimension, int stride) {
  if (stride < 1) throw Error(ErrorKind::InvalidParams, "dimension stride must be >= 1");
  ModelGrid grid{max_order, max_dimension, {}};
  for (int m = 1; m <= max_dimension; m += stride) grid.dimensions.push_back(m);
  if (grid.dimensions.back() != max_dimension) grid.dimensions.push_back(max_dimension);
  grid.validate();
  return grid;
}

void ModelGrid::validate() const {
  if (max_order < 1 || max_order > kOrderCap) {
    throw Error(ErrorKind::InvalidParams, "max_order must lie in [1, 8]");
  }
  if (max_dimension < 1) throw Error(ErrorKind::InvalidParams, "max_dimension must be >= 1");
  for (std::size_t i = 0; i < dimensions.size(); ++i) {
    if (dimensions[i] < 1 || dimensions[i] > max_dimension || (i > 0 && dimensions[i] <= dimensions[i - 1])) {
      throw Error(ErrorKind::InvalidParams, "grid dimensions must increase within [1, max_dimension]");
    }
  }
}

int model_complexity(int order, int dimension) { return dimension * order + order * order - 1; }

double pen_shape(std::size_t n, int dimension, int order) {
  const double nn = static_cast<double>(n);
  return model_complexity(order, dimension) * std::log(nn) / nn;
}

bool ModelFit::ok() const { return error.empty() && std::isfinite(gamma); }

std::string_view to_string(InitSource source) {
  switch (source) {
    case InitSource::SingleUniform: return "single_uniform";
    case InitSource::DuplicatedState: return "duplicated_state";
    case InitSource::PaddedFromSmallerM: return "padded";
  }
  return "unknown";
}

CandidateModel duplicate_state(const CandidateModel& model, int state) {
  const int k = model.order();
  if (state < 0 || state >= k) {
    throw Error(ErrorKind::IndexOutOfRange, "state " + std::to_string(state) + " out of range");
  }
  // New index of each old state other than `state`.
  const auto remap = [state](int s) { return s <= state ? s : s + 1; };
  const int i1 = state;
  const int i2 = state + 1;
  const Matrix& q = model.transition.matrix();
  Matrix dup = Matrix::Zero(k + 1, k + 1);
  for (int s = 0; s < k; ++s) {
    if (s == state) continue;
    for (int t = 0; t < k; ++t) {
      if (t == state) {
        dup(remap(s), i1) = 0.5 * q(s, state);
        dup(remap(s), i2) = 0.5 * q(s, state);
      } else {
        dup(remap(s), remap(t)) = q(s, t);
      }
    }
  }
  for (const int copy : {i1, i2}) {
    for (int t = 0; t < k; ++t) {
      if (t != state) dup(copy, remap(t)) = q(state, t);
    }
    dup(copy, i1) = 0.5 * q(state, state);
    dup(copy, i2) = 0.5 * q(state, state);
  }

  Matrix o(model.dimension(), k + 1);
  for (int s = 0; s < k; ++s) o.col(remap(s)) = model.emissions.col(s);
  o.col(i2) = model.emissions.col(state);
  return CandidateModel::from_transition(TransitionMatrix(dup), std::move(o), model.window_length);
}

CandidateModel pad_dimension(const CandidateModel& model, int dimension) {
  if (dimension < model.dimension()) {
    throw Error(ErrorKind::DimensionMismatch, "padding cannot shrink the basis");
  }
  Matrix o = Matrix::Zero(dimension, model.order());
  o.topRows(model.dimension()) = model.emissions;
  return {model.transition, model.stationary, std::move(o), model.window_length};
}

ModelFit fit_cell(int order, int dimension, const EmpiricalContrast& contrast,
                  std::span<const InitPoint> inits, const FitOptions& options, std::uint64_t seed) {
  if (order < 1 || dimension < 1) throw Error(ErrorKind::InvalidParams, "cell needs K >= 1 and M >= 1");
  if (inits.empty()) throw Error(ErrorKind::InvalidParams, "fit_cell needs at least one initial point");
  for (const auto& init : inits) {
    if (init.model.order() != order || init.model.dimension() != dimension) {
      throw Error(ErrorKind::DimensionMismatch, "initial point does not belong to the cell");
    }
  }

  ModelFit fit;
  fit.order = order;
  fit.dimension = dimension;
  fit.gamma = kInf;

  const auto consider = [&](std::optional<CandidateModel> model, double gamma, const InitPoint& origin) {
    if (model && gamma < fit.gamma) {
      fit.gamma = gamma;
      fit.model = std::move(model);
      fit.init_source = origin.source;
      fit.init_state = origin.state;
    }
  };

  // Half of the budget explores every start, the rest refines the incumbent.
  const long runs_budget = std::max<long>(options.budget - static_cast<long>(inits.size()), 1);
  const long explore_total = options.restarts > 0 ? runs_budget / 2 : runs_budget;
  const long explore = std::max<long>(explore_total / static_cast<long>(inits.size()), 1);
  const long refine = options.restarts > 0 ? std::max<long>((runs_budget - explore_total) / options.restarts, 1) : 0;

  FitOptions run_options = options;
  for (std::size_t i = 0; i < inits.size(); ++i) {
    consider(inits[i].model, contrast.evaluate(inits[i].model).gamma, inits[i]);
    ++fit.evaluations;
  }
  run_options.budget = explore;
  for (std::size_t i = 0; i < inits.size(); ++i) {
    auto run = optimize_from(order, dimension, contrast, inits[i].model, run_options, mix_seed(seed, i));
    fit.evaluations += run.evaluations;
    fit.budget_exhausted = fit.budget_exhausted || run.budget_exhausted;
    consider(std::move(run.model), run.gamma, inits[i]);
  }
  run_options.budget = refine;
  for (int r = 0; r < options.restarts && fit.model; ++r) {
    const InitPoint incumbent{*fit.model, fit.init_source, fit.init_state};
    auto run = optimize_from(order, dimension, contrast, incumbent.model, run_options,
                             mix_seed(seed, inits.size() + static_cast<std::size_t>(r)));
    fit.evaluations += run.evaluations;
    fit.budget_exhausted = fit.budget_exhausted || run.budget_exhausted;
    consider(std::move(run.model), run.gamma, incumbent);
  }

  if (!fit.model || !std::isfinite(fit.gamma)) {
    throw Error(ErrorKind::OptimizerDiverged, "no finite contrast value found for cell (" +
                                                  std::to_string(order) + ", " + std::to_string(dimension) + ")");
  }
  return fit;
}

std::vector<ModelFit> run_grid(const EmpiricalContrast& contrast, const ModelGrid& grid,
                               const FitOptions& options, std::uint64_t seed, int threads) {
  const auto dims = grid.resolved_dimensions();
  if (dims.back() > contrast.max_dimension()) {
    throw Error(ErrorKind::DimensionMismatch, "grid exceeds the precomputed basis dimension");
  }
  const int kmax = grid.max_order;
  const int nm = static_cast<int>(dims.size());
  std::vector<ModelFit> fits(static_cast<std::size_t>(kmax * nm));
  const auto at = [&](int ki, int mi) -> ModelFit& { return fits[static_cast<std::size_t>(ki * nm + mi)]; };

  const auto fit_one = [&](int ki, int mi) {
    const int order = ki + 1;
    const int dimension = dims[mi];
    std::vector<InitPoint> inits;
    std::vector<InitPoint> embeddings;
    if (order == 1) inits.push_back({CandidateModel::uniform(dimension, contrast.window_length()),
                                     InitSource::SingleUniform, -1});
    if (order > 1 && at(ki - 1, mi).model) {
      const auto& smaller = *at(ki - 1, mi).model;
      for (int s = 0; s < smaller.order(); ++s) {
        inits.push_back({duplicate_state(smaller, s), InitSource::DuplicatedState, s});
      }
      embeddings.push_back(inits.back());
    }
    if (mi > 0 && at(ki, mi - 1).model) {
      inits.push_back({pad_dimension(*at(ki, mi - 1).model, dimension), InitSource::PaddedFromSmallerM, -1});
      embeddings.push_back(inits.back());
    }

    ModelFit fit;
    fit.order = order;
    fit.dimension = dimension;
    fit.gamma = kInf;
    if (inits.empty()) {
      fit.error = "no initial point: neighbouring cells failed";
    } else {
      try {
        fit = fit_cell(order, dimension, contrast, inits, options,
                       mix_seed(seed, static_cast<std::uint64_t>(order) << 32 | static_cast<std::uint64_t>(dimension)));
      } catch (const Error& e) {
        fit.error = e.what();
      }
    }
    // Monotonicity repair against the embedded smaller fits.
    for (const auto& emb : embeddings) {
      const double g = contrast.evaluate(emb.model).gamma;
      if (!fit.ok() || !fit.model || g < fit.gamma) {
        const long evals = fit.evaluations;
        fit = ModelFit{};
        fit.order = order;
        fit.dimension = dimension;
        fit.gamma = g;
        fit.model = emb.model;
        fit.evaluations = evals;
        fit.init_source = emb.source;
        fit.init_state = emb.state;
        fit.repaired = true;
      }
    }
    at(ki, mi) = std::move(fit);
  };

  const int workers = std::max(1, threads);
  for (int diag = 0; diag <= kmax - 1 + nm - 1; ++diag) {
    std::vector<std::pair<int, int>> cells;
    for (int ki = 0; ki < kmax; ++ki) {
      const int mi = diag - ki;
      if (mi >= 0 && mi < nm) cells.emplace_back(ki, mi);
    }
    for (std::size_t start = 0; start < cells.size(); start += static_cast<std::size_t>(workers)) {
      const std::size_t stop = std::min(cells.size(), start + static_cast<std::size_t>(workers));
      if (stop - start == 1) {
        fit_one(cells[start].first, cells[start].second);
        continue;
      }
      std::vector<std::jthread> pool;
      for (std::size_t c = start; c < stop; ++c) {
        pool.emplace_back([&, c] { fit_one(cells[c].first, cells[c].second); });
      }
    }
  }
  return fits;
}

Selection select_model(std::span<const ModelFit> fits, double rho, std::size_t n) {
  std::optional<Selection> best;
  double best_value = kInf;
  for (std::size_t i = 0; i < fits.size(); ++i) {
    const auto& f = fits[i];
    if (!f.ok() || !std::isfinite(f.gamma)) continue;
    const double value = f.gamma + rho * pen_shape(n, f.dimension, f.order);
    if (!best) {
      best = Selection{f.order, f.dimension, i};
      best_value = value;
      continue;
    }
    const double tol = 1e-12 * std::max(1.0, std::abs(best_value));
    const bool better = value < best_value - tol;
    const bool tie = std::abs(value - best_value) <= tol;
    const int c_new = model_complexity(f.order, f.dimension);
    const int c_old = model_complexity(best->order, best->dimension);
    if (better || (tie && (c_new < c_old || (c_new == c_old && f.order < best->order)))) {
      best = Selection{f.order, f.dimension, i};
      best_value = std::min(best_value, value);
    }
  }
  if (!best) throw Error(ErrorKind::EmptyGrid, "no successful fit to select from");
  return *best;
}

std::vector<double> default_rho_grid(std::size_t n, std::size_t points) {
  const double scale = 1.0 / std::log(std::max<double>(static_cast<double>(n), 3.0));
  std::vector<double> grid(points);
  for (std::size_t i = 0; i < points; ++i) {
    const double t = points == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(points - 1);
    grid[i] = scale * std::pow(10.0, -3.0 + 6.0 * t);
  }
  return grid;
}

PenaltyCalibration calibrate_dimension_jump(std::span<const ModelFit> fits, std::span<const double> rho_grid,
                                            std::size_t n) {
  if (rho_grid.size() < 20) throw Error(ErrorKind::InvalidParams, "dimension jump needs >= 20 grid points");
  for (std::size_t i = 0; i < rho_grid.size(); ++i) {
    if (!(rho_grid[i] > 0.0) || (i > 0 && rho_grid[i] <= rho_grid[i - 1])) {
      throw Error(ErrorKind::InvalidParams, "rho grid must be positive and increasing");
    }
  }
  PenaltyCalibration cal;
  cal.method = CalibrationMethod::DimensionJump;
  cal.rho_grid.assign(rho_grid.begin(), rho_grid.end());
  for (const double rho : rho_grid) {
    const auto sel = select_model(fits, rho, n);
    cal.selections.push_back(sel);
    cal.complexity.push_back(sel.dimension * sel.order + sel.order * (sel.order - 1));
  }
  int largest_drop = 0;
  for (std::size_t i = 0; i + 1 < cal.complexity.size(); ++i) {
    const int drop = cal.complexity[i] - cal.complexity[i + 1];
    if (drop < 0) cal.complexity_monotone = false;
    if (drop > largest_drop) {
      largest_drop = drop;
      cal.jump_index = i + 1;
    }
  }
  if (largest_drop == 0) {
    cal.no_jump_detected = true;
    cal.drop_ratio = 1.0;
    cal.jump_index = rho_grid.size() - 1;
  } else {
    cal.drop_ratio = static_cast<double>(cal.complexity[cal.jump_index - 1]) /
                     static_cast<double>(cal.complexity[cal.jump_index]);
    cal.no_jump_detected = cal.drop_ratio < 3.0;
  }
  cal.rho_jump = rho_grid[cal.jump_index];
  cal.rho_hat = 2.0 * cal.rho_jump;
  return cal;
}

PenaltyCalibration calibrate_slope(std::span<const ModelFit> fits, std::size_t n) {
  std::vector<std::pair<double, double>> points;
  for (const auto& f : fits) {
    if (f.ok() && std::isfinite(f.gamma)) points.emplace_back(pen_shape(n, f.dimension, f.order), -f.gamma);
  }
  if (points.size() < 3) throw Error(ErrorKind::InsufficientData, "slope heuristic needs fitted models");
  std::vector<double> shapes;
  for (const auto& p : points) shapes.push_back(p.first);
  std::sort(shapes.begin(), shapes.end());
  const double cutoff = shapes[(2 * shapes.size()) / 3];

  double sx = 0.0, sy = 0.0;
  std::size_t count = 0;
  for (const auto& [x, y] : points) {
    if (x >= cutoff) {
      sx += x;
      sy += y;
      ++count;
    }
  }
  if (count < 10) {
    throw Error(ErrorKind::InsufficientData,
                "slope region holds " + std::to_string(count) + " fits, need at least 10");
  }
  const double mx = sx / count;
  const double my = sy / count;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& [x, y] : points) {
    if (x < cutoff) continue;
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  if (!(sxx > 0.0)) throw Error(ErrorKind::InsufficientData, "slope region has a single pen_shape value");

  PenaltyCalibration cal;
  cal.method = CalibrationMethod::Slope;
  cal.slope = sxy / sxx;
  cal.intercept = my - cal.slope * mx;
  cal.region_size = count;
  cal.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  if (!(cal.slope > 0.0)) {
    throw Error(ErrorKind::NegativeSlope, "contrast does not decrease along pen_shape over large models");
  }
  cal.rho_hat = 2.0 * cal.slope;
  const auto sel = select_model(fits, cal.rho_hat, n);
  cal.rho_grid = {cal.rho_hat};
  cal.selections = {sel};
  cal.complexity = {sel.dimension * sel.order + sel.order * (sel.order - 1)};
  return cal;
}

}  // namespace hmmorder
