#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hmmorder/hmm.hpp"
#include "hmmorder/ls_estimator.hpp"
#include "hmmorder/spectral.hpp"

namespace hmmorder::io {

/// Fixed-format decimal with 12 significant digits.
std::string format_number(double value);

/// Observation file: a `# n=<windows> L=<L> seed=<seed>` header, a `y`
/// column header, then one value per line with round-trip precision.
void write_observations_csv(const std::filesystem::path& path, const ObservationRecord& obs);
ObservationRecord read_observations_csv(const std::filesystem::path& path);

std::string params_to_json(const HmmParams& params, int indent = 2);
HmmParams params_from_json(const std::string& text);
void write_params_json(const std::filesystem::path& path, const HmmParams& params);

/// Rows `family,M,state,c0,...`; family is always "trig".
void write_coefficients_csv(const std::filesystem::path& path, const Matrix& emissions);
Matrix read_coefficients_csv(const std::filesystem::path& path);

/// K,M,gamma,pen_shape,evals,init_source
void write_fits_csv(const std::filesystem::path& path, std::span<const ModelFit> fits, std::size_t n);

/// Fits recovered from fits.csv carry gamma and the cell only (no model).
struct FitRow {
  int order = 0;
  int dimension = 0;
  double gamma = 0.0;
  double pen_shape = 0.0;
  long evaluations = 0;
  std::string init_source;
};
std::vector<FitRow> read_fits_csv(const std::filesystem::path& path);

/// Rebuilds ModelFit entries usable by select_model and the calibrations.
std::vector<ModelFit> fits_from_rows(std::span<const FitRow> rows);

/// rho,K_hat,M_hat,comp
void write_calibration_csv(const std::filesystem::path& path, const PenaltyCalibration& calibration);

/// index,sigma_empirical,sigma_theoretical,regression_prediction
void write_spectrum_csv(const std::filesystem::path& path, const SpectralOrderReport& report,
                        const std::optional<Vector>& theoretical);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace hmmorder::io
