#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hmmorder/density_model.hpp"

namespace hmmorder {

/// Models S_{K,M} swept by the least squares procedure.
struct ModelGrid {
  int max_order = 5;
  int max_dimension = 25;
  // Increasing subset of 1..max_dimension; empty means every M.
  std::vector<int> dimensions;

  static inline constexpr int kOrderCap = kMaxPermutationOrder;

  /// Every dimension when `dimensions` is empty; validated otherwise.
  std::vector<int> resolved_dimensions() const;

  /// 1, 1 + stride, ... plus max_dimension itself.
  static ModelGrid strided(int max_order, int max_dimension, int stride);

  void validate() const;
};

/// Free parameter count M K + K^2 - 1 of S_{K,M}.
int model_complexity(int order, int dimension);

/// (MK + K^2 - 1) log(n) / n.
double pen_shape(std::size_t n, int dimension, int order);

enum class InitSource { SingleUniform, DuplicatedState, PaddedFromSmallerM };

std::string_view to_string(InitSource source);

struct ModelFit {
  int order = 0;
  int dimension = 0;
  double gamma = 0.0;
  std::optional<CandidateModel> model;
  long evaluations = 0;
  InitSource init_source = InitSource::SingleUniform;
  // State duplicated (0-based) when init_source is DuplicatedState.
  int init_state = -1;
  bool budget_exhausted = false;
  // Replaced by an embedded smaller fit during monotonicity repair.
  bool repaired = false;
  // Non-empty when the cell failed; gamma is then +inf.
  std::string error;

  bool ok() const;
};

struct FitOptions {
  // Objective evaluations for the whole cell. Half is shared by short runs
  // from every start, the other half by `restarts` runs from the incumbent.
  long budget = 20000;
  int restarts = 2;
  // Initial CMA-ES step on the transition logits and on the emission
  // coefficients; 0 sets the latter to 1/sqrt(n).
  double sigma0 = 0.1;
  double emission_sigma0 = 0.0;
  double l2_bound = kDefaultL2Bound;
  int population = 0;
  // L-BFGS iterations on the analytic gradient after each CMA-ES run (L = 3
  // only); 0 disables the polish.
  int polish_iterations = 200;
};

/// Candidate starting point together with its provenance.
struct InitPoint {
  CandidateModel model;
  InitSource source = InitSource::SingleUniform;
  int state = -1;
};

/// Minimizes gamma_n over S_{K,M} from each start. Q is parametrized by
/// row-wise softmax logits (one gauge-fixed entry per row), pi is the
/// stationary law of Q and emission columns are rescaled onto the L2 ball.
/// Deterministic in `seed`. Throws OptimizerDiverged when no finite value
/// was ever found.
ModelFit fit_cell(int order, int dimension, const EmpiricalContrast& contrast,
                  std::span<const InitPoint> inits, const FitOptions& options, std::uint64_t seed);

/// Splits state `state` (0-based) into two copies I1, I2 that take the
/// positions `state` and `state + 1`. Inbound mass and the self-transition
/// are halved between the copies, outbound rows are copied and both keep
/// the emission of the original state, so the observed law is unchanged.
CandidateModel duplicate_state(const CandidateModel& model, int state);

/// Embeds the emissions into a larger basis by zero-padding.
CandidateModel pad_dimension(const CandidateModel& model, int dimension);

/// Fits every (K, M) cell, K ascending and M ascending, seeding each cell
/// with state duplications of (K-1, M) and the padded (K, M_prev) fit, then
/// forces gamma to be nonincreasing in K and M. Cells of one anti-diagonal
/// run concurrently on `threads` workers. Failed cells are reported in
/// ModelFit::error and do not stop the sweep.
std::vector<ModelFit> run_grid(const EmpiricalContrast& contrast, const ModelGrid& grid,
                               const FitOptions& options, std::uint64_t seed, int threads = 1);

struct Selection {
  int order = 0;
  int dimension = 0;
  std::size_t index = 0;
};

/// argmin over fits of gamma + rho * pen_shape; ties go to the smaller
/// complexity, then the smaller K. Throws EmptyGrid.
Selection select_model(std::span<const ModelFit> fits, double rho, std::size_t n);

enum class CalibrationMethod { DimensionJump, Slope };

struct PenaltyCalibration {
  CalibrationMethod method = CalibrationMethod::DimensionJump;
  std::vector<double> rho_grid;
  std::vector<Selection> selections;
  // M K + K (K - 1) of the selected model at each rho.
  std::vector<int> complexity;
  double rho_hat = 0.0;

  // Dimension jump diagnostics.
  double rho_jump = 0.0;
  std::size_t jump_index = 0;
  double drop_ratio = 0.0;
  bool no_jump_detected = false;
  bool complexity_monotone = true;

  // Slope diagnostics.
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::size_t region_size = 0;
};

/// 64 log-spaced points spanning [1e-3, 1e3] / log(n).
std::vector<double> default_rho_grid(std::size_t n, std::size_t points = 64);

/// Comp(rho) on the grid; rho_jump sits just after the largest single-step
/// drop and rho_hat = 2 rho_jump. no_jump_detected is set when the drop ratio
/// is below 3.
PenaltyCalibration calibrate_dimension_jump(std::span<const ModelFit> fits, std::span<const double> rho_grid,
                                            std::size_t n);

/// OLS of -gamma on pen_shape over the top tercile of pen_shape; rho_hat is
/// twice the slope. Throws NegativeSlope, InsufficientData.
PenaltyCalibration calibrate_slope(std::span<const ModelFit> fits, std::size_t n);

}  // namespace hmmorder
