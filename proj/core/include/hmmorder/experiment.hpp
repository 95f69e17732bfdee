#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hmmorder/hmm.hpp"
#include "hmmorder/ls_estimator.hpp"
#include "hmmorder/spectral.hpp"

namespace hmmorder {

enum class Method { LeastSquares, Spectral, Both };

std::string_view to_string(Method method);

struct SpectralSettings {
  int dimension = 40;
  int regression_size = 35;
  double tau = 1.5;
};

struct ExperimentConfig {
  // "easier-beta", "harder-beta" or "custom".
  std::string preset = "custom";
  HmmParams hmm = presets::easier_beta();
  // Sequence lengths: each run observes Y_1..Y_n.
  std::vector<std::size_t> n_values{3000};
  int replications = 5;
  Method method = Method::Both;
  ModelGrid grid = ModelGrid::strided(5, 25, 2);
  SpectralSettings spectral;
  FitOptions fit;
  CalibrationMethod calibration = CalibrationMethod::DimensionJump;
  std::uint64_t seed = 20240601;
  int threads = 1;
  int window_length = 3;

  static ExperimentConfig from_preset(const std::string& name);

  /// Throws ConfigError.
  void validate() const;
};

/// Parses a JSON config. A "preset" key expands to the preset chain and may
/// be combined with overrides. Throws ConfigError.
ExperimentConfig config_from_json(const std::string& text);

/// Self-contained JSON with the HMM written out in full.
std::string config_to_json(const ExperimentConfig& config);

/// Seed of replication `rep` at length `n`, a pure function of its inputs.
std::uint64_t replication_seed(std::uint64_t base, std::size_t n, int rep);

struct ResultRow {
  std::size_t n = 0;
  int replication = 0;
  Method method = Method::LeastSquares;
  int k_hat = 0;
  // LS only.
  std::optional<int> m_hat;
  std::optional<double> rho_hat;
  // Filled when k_hat equals the true order.
  std::optional<double> d_perm;
  double runtime_seconds = 0.0;
  std::string error;

  bool ok() const { return error.empty(); }
};

struct LsRun {
  std::vector<ModelFit> fits;
  PenaltyCalibration calibration;
  Selection selection;
  std::optional<ParameterSet> estimate;
};

/// Grid sweep, penalty calibration and selection at rho_hat.
LsRun run_least_squares(const ObservationRecord& obs, const ExperimentConfig& config, std::uint64_t seed,
                        int threads = 1);

struct SpectralRun {
  SpectralOrderReport report;
  std::optional<SpectralParams> params;
};

/// Regression order estimate; parameters are recovered when `with_params`
/// and the estimated order does not exceed M.
SpectralRun run_spectral(const ObservationRecord& obs, const ExperimentConfig& config, std::uint64_t seed,
                         bool with_params);

/// True parameters with emissions projected on the first `dimension` functions.
ParameterSet truth_parameters(const HmmParams& hmm, int dimension);

struct SummaryRow {
  std::size_t n = 0;
  Method method = Method::LeastSquares;
  int replications = 0;
  int correct = 0;
  int failures = 0;
  double probability = 0.0;
};

struct ExperimentResult {
  // Sorted by (n, replication, method).
  std::vector<ResultRow> rows;
  std::vector<SummaryRow> summary;

  bool partial_failure() const;
};

/// A single (n, rep) cell, reproducible in isolation.
std::vector<ResultRow> run_replication(const ExperimentConfig& config, std::size_t n, int rep);

/// Replications run on config.threads workers; failures become rows with
/// an error and never stop the campaign.
ExperimentResult run_experiment(const ExperimentConfig& config);

std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows, int true_order);

/// n,replication,method,K_hat,M_hat,rho_hat,correct,d_perm,status
void write_results_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows, int true_order);
/// n,method,replications,correct,failures,probability
void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows);
/// n,replication,method,runtime_seconds
void write_timings_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows);

/// For every n, replication 0: writes n_<n>/fits.csv, calibration.csv and
/// spectrum.csv under `out`, plus results.csv over all of them. When `cache`
/// is given the LS fits are read from cache/n_<n>/fits.csv instead of being
/// recomputed; a missing file raises MissingCache.
ExperimentResult reproduce_figures(const ExperimentConfig& config, const std::filesystem::path& out,
                                   const std::optional<std::filesystem::path>& cache = std::nullopt);

}  // namespace hmmorder
