#include "hmmorder/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <map>
#include <thread>

#include "hmmorder/basis.hpp"
#include "hmmorder/density_model.hpp"
#include "hmmorder/errors.hpp"
#include "hmmorder/io.hpp"
#include "json.hpp"

namespace hmmorder {

namespace {

using nlohmann::json;

std::uint64_t splitmix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) { return splitmix(seed ^ splitmix(tag)); }

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorKind::ConfigError, what); }

Method method_from(const std::string& s) {
  if (s == "ls") return Method::LeastSquares;
  if (s == "spectral") return Method::Spectral;
  if (s == "both") return Method::Both;
  config_error("method must be ls, spectral or both, got '" + s + "'");
}

CalibrationMethod calibration_from(const std::string& s) {
  if (s == "dimension-jump") return CalibrationMethod::DimensionJump;
  if (s == "slope") return CalibrationMethod::Slope;
  config_error("calibration must be dimension-jump or slope, got '" + s + "'");
}

bool runs_ls(Method m) { return m != Method::Spectral; }
bool runs_spectral(Method m) { return m != Method::LeastSquares; }

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

ObservationRecord simulate_cell(const ExperimentConfig& config, std::size_t n, int rep) {
  SimulationOptions opts;
  opts.window_length = config.window_length;
  return simulate(config.hmm, n, replication_seed(config.seed, n, rep), opts);
}

ResultRow ls_row(const ExperimentConfig& config, const ObservationRecord& obs, std::size_t n, int rep,
                 int threads, LsRun* keep = nullptr) {
  ResultRow row;
  row.n = n;
  row.replication = rep;
  row.method = Method::LeastSquares;
  const auto start = std::chrono::steady_clock::now();
  try {
    auto run = run_least_squares(obs, config, derive(obs.seed, 1), threads);
    row.k_hat = run.selection.order;
    row.m_hat = run.selection.dimension;
    row.rho_hat = run.calibration.rho_hat;
    if (row.k_hat == config.hmm.order() && run.estimate) {
      row.d_perm = d_perm(*run.estimate, truth_parameters(config.hmm, run.selection.dimension));
    }
    if (keep) *keep = std::move(run);
  } catch (const Error& e) {
    row.error = e.what();
  }
  row.runtime_seconds = seconds_since(start);
  return row;
}

ResultRow spectral_row(const ExperimentConfig& config, const ObservationRecord& obs, std::size_t n, int rep,
                       SpectralRun* keep = nullptr) {
  ResultRow row;
  row.n = n;
  row.replication = rep;
  row.method = Method::Spectral;
  const auto start = std::chrono::steady_clock::now();
  try {
    auto run = run_spectral(obs, config, derive(obs.seed, 2), true);
    row.k_hat = run.report.order;
    if (run.params && row.k_hat == config.hmm.order()) {
      row.d_perm = d_perm(run.params->parameters(), truth_parameters(config.hmm, config.spectral.dimension));
    }
    if (keep) *keep = std::move(run);
  } catch (const Error& e) {
    row.error = e.what();
  }
  row.runtime_seconds = seconds_since(start);
  return row;
}

std::string optional_number(const std::optional<double>& v) { return v ? io::format_number(*v) : ""; }

}  // namespace

std::string_view to_string(Method method) {
  switch (method) {
    case Method::LeastSquares: return "ls";
    case Method::Spectral: return "spectral";
    case Method::Both: return "both";
  }
  return "unknown";
}

ExperimentConfig ExperimentConfig::from_preset(const std::string& name) {
  ExperimentConfig c;
  if (name == "easier-beta") {
    c.hmm = presets::easier_beta();
  } else if (name == "harder-beta") {
    c.hmm = presets::harder_beta();
  } else {
    config_error("unknown preset '" + name + "'");
  }
  c.preset = name;
  return c;
}

void ExperimentConfig::validate() const {
  if (replications < 1) config_error("replications must be >= 1");
  if (n_values.empty()) config_error("n_values must not be empty");
  if (window_length < 1) config_error("L must be >= 1");
  for (const auto n : n_values) {
    if (n < static_cast<std::size_t>(window_length)) config_error("every n must be >= L");
  }
  if (threads < 1) config_error("threads must be >= 1");
  if (fit.budget < 1 || fit.restarts < 0 || fit.polish_iterations < 0 || !(fit.sigma0 > 0.0) ||
      fit.emission_sigma0 < 0.0 || !(fit.l2_bound > 0.0)) {
    config_error("fit settings out of range");
  }
  if (runs_spectral(method)) {
    if (window_length < 3) config_error("the spectral method needs L >= 3");
    if (spectral.dimension < 2 || spectral.regression_size < 2 || spectral.regression_size > spectral.dimension ||
        !(spectral.tau > 1.0)) {
      config_error("spectral settings need M >= 2, 2 <= M_reg <= M and tau > 1");
    }
  }
  try {
    grid.validate();
    hmm.validate();
  } catch (const Error& e) {
    config_error(e.what());
  }
}

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    config_error(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) config_error("config must be a JSON object");
  try {
    ExperimentConfig c;
    if (j.contains("preset")) c = ExperimentConfig::from_preset(j.at("preset").get<std::string>());
    if (j.contains("hmm")) {
      if (!j.contains("preset")) c.preset = "custom";
      c.hmm = io::params_from_json(j.at("hmm").dump());
    }
    if (j.contains("n_values")) c.n_values = j.at("n_values").get<std::vector<std::size_t>>();
    if (j.contains("replications")) c.replications = j.at("replications").get<int>();
    if (j.contains("method")) c.method = method_from(j.at("method").get<std::string>());
    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      const int kmax = g.value("K_max", c.grid.max_order);
      const int mmax = g.value("M_max", c.grid.max_dimension);
      if (g.contains("M_values")) {
        c.grid = ModelGrid{kmax, mmax, g.at("M_values").get<std::vector<int>>()};
      } else if (g.contains("stride")) {
        c.grid = ModelGrid::strided(kmax, mmax, g.at("stride").get<int>());
      } else {
        c.grid = ModelGrid{kmax, mmax, {}};
      }
    }
    if (j.contains("spectral")) {
      const auto& s = j.at("spectral");
      c.spectral.dimension = s.value("M", c.spectral.dimension);
      c.spectral.regression_size = s.value("M_reg", c.spectral.regression_size);
      c.spectral.tau = s.value("tau", c.spectral.tau);
    }
    if (j.contains("fit")) {
      const auto& f = j.at("fit");
      c.fit.budget = f.value("budget", c.fit.budget);
      c.fit.restarts = f.value("restarts", c.fit.restarts);
      c.fit.sigma0 = f.value("sigma0", c.fit.sigma0);
      c.fit.emission_sigma0 = f.value("emission_sigma0", c.fit.emission_sigma0);
      c.fit.l2_bound = f.value("l2_bound", c.fit.l2_bound);
      c.fit.population = f.value("population", c.fit.population);
      c.fit.polish_iterations = f.value("polish_iterations", c.fit.polish_iterations);
    }
    if (j.contains("budget")) c.fit.budget = j.at("budget").get<long>();
    if (j.contains("calibration")) c.calibration = calibration_from(j.at("calibration").get<std::string>());
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("threads")) c.threads = j.at("threads").get<int>();
    if (j.contains("L")) c.window_length = j.at("L").get<int>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    config_error(std::string("bad config field: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::ConfigError) throw;
    config_error(e.what());
  }
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["preset"] = c.preset;
  j["hmm"] = json::parse(io::params_to_json(c.hmm));
  j["n_values"] = c.n_values;
  j["replications"] = c.replications;
  j["method"] = std::string(to_string(c.method));
  j["grid"] = {{"K_max", c.grid.max_order},
               {"M_max", c.grid.max_dimension},
               {"M_values", c.grid.resolved_dimensions()}};
  j["spectral"] = {{"M", c.spectral.dimension}, {"M_reg", c.spectral.regression_size}, {"tau", c.spectral.tau}};
  j["fit"] = {{"budget", c.fit.budget},
              {"restarts", c.fit.restarts},
              {"sigma0", c.fit.sigma0},
              {"emission_sigma0", c.fit.emission_sigma0},
              {"l2_bound", c.fit.l2_bound},
              {"population", c.fit.population},
              {"polish_iterations", c.fit.polish_iterations}};
  j["calibration"] = c.calibration == CalibrationMethod::Slope ? "slope" : "dimension-jump";
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["L"] = c.window_length;
  return j.dump(2);
}

std::uint64_t replication_seed(std::uint64_t base, std::size_t n, int rep) {
  const std::uint64_t h = splitmix(splitmix(static_cast<std::uint64_t>(n)) ^ static_cast<std::uint64_t>(rep));
  return splitmix(base ^ h);
}

ParameterSet truth_parameters(const HmmParams& hmm, int dimension) {
  Matrix o(dimension, hmm.order());
  for (int k = 0; k < hmm.order(); ++k) o.col(k) = project_emission(hmm.emissions[k], dimension);
  return {hmm.stationary.vector(), hmm.transition.matrix(), o};
}

LsRun run_least_squares(const ObservationRecord& obs, const ExperimentConfig& config, std::uint64_t seed,
                        int threads) {
  const EmpiricalContrast contrast(obs, config.grid.max_dimension);
  const std::size_t n = obs.window_count();
  LsRun run;
  run.fits = run_grid(contrast, config.grid, config.fit, seed, threads);
  if (config.calibration == CalibrationMethod::Slope) {
    run.calibration = calibrate_slope(run.fits, n);
  } else {
    run.calibration = calibrate_dimension_jump(run.fits, default_rho_grid(n), n);
  }
  run.selection = select_model(run.fits, run.calibration.rho_hat, n);
  const auto& fit = run.fits[run.selection.index];
  if (fit.model) run.estimate = fit.model->parameters();
  return run;
}

SpectralRun run_spectral(const ObservationRecord& obs, const ExperimentConfig& config, std::uint64_t seed,
                         bool with_params) {
  const auto& s = config.spectral;
  auto second = compute_moments(obs, s.dimension, false);
  SpectralRun run;
  run.report = order_by_regression(second, s.regression_size, s.tau);
  if (with_params && run.report.order >= 1 && run.report.order <= s.dimension) {
    try {
      run.params = spectral_params(compute_moments(obs, s.dimension, true), run.report.order, seed);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::IllConditioned && e.kind() != ErrorKind::ComplexEigenvalues) throw;
    }
  }
  return run;
}

bool ExperimentResult::partial_failure() const {
  return std::any_of(rows.begin(), rows.end(), [](const ResultRow& r) { return !r.ok(); });
}

std::vector<ResultRow> run_replication(const ExperimentConfig& config, std::size_t n, int rep) {
  std::vector<ResultRow> rows;
  ObservationRecord obs;
  try {
    obs = simulate_cell(config, n, rep);
  } catch (const Error& e) {
    for (const Method m : {Method::LeastSquares, Method::Spectral}) {
      if ((m == Method::LeastSquares && runs_ls(config.method)) ||
          (m == Method::Spectral && runs_spectral(config.method))) {
        ResultRow row;
        row.n = n;
        row.replication = rep;
        row.method = m;
        row.error = e.what();
        rows.push_back(row);
      }
    }
    return rows;
  }
  if (runs_ls(config.method)) rows.push_back(ls_row(config, obs, n, rep, 1));
  if (runs_spectral(config.method)) rows.push_back(spectral_row(config, obs, n, rep));
  return rows;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  std::vector<std::pair<std::size_t, int>> cells;
  for (const auto n : config.n_values) {
    for (int rep = 0; rep < config.replications; ++rep) cells.emplace_back(n, rep);
  }
  std::vector<std::vector<ResultRow>> per_cell(cells.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      per_cell[i] = run_replication(config, cells[i].first, cells[i].second);
    }
  };
  const int workers = std::min<int>(config.threads, static_cast<int>(cells.size()));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
  }

  ExperimentResult result;
  for (auto& rows : per_cell) {
    for (auto& r : rows) result.rows.push_back(std::move(r));
  }
  std::stable_sort(result.rows.begin(), result.rows.end(), [](const ResultRow& a, const ResultRow& b) {
    if (a.n != b.n) return a.n < b.n;
    if (a.replication != b.replication) return a.replication < b.replication;
    return a.method < b.method;
  });
  result.summary = summarize(result.rows, config.hmm.order());
  return result;
}

std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows, int true_order) {
  std::map<std::pair<std::size_t, int>, SummaryRow> acc;
  for (const auto& r : rows) {
    auto& s = acc[{r.n, static_cast<int>(r.method)}];
    s.n = r.n;
    s.method = r.method;
    ++s.replications;
    if (!r.ok()) {
      ++s.failures;
    } else if (r.k_hat == true_order) {
      ++s.correct;
    }
  }
  std::vector<SummaryRow> out;
  for (auto& [key, s] : acc) {
    s.probability = static_cast<double>(s.correct) / static_cast<double>(s.replications);
    out.push_back(s);
  }
  return out;
}

void write_results_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows, int true_order) {
  std::string text = "n,replication,method,K_hat,M_hat,rho_hat,correct,d_perm,status\n";
  for (const auto& r : rows) {
    text += std::to_string(r.n) + ',' + std::to_string(r.replication) + ',' + std::string(to_string(r.method)) + ',';
    text += (r.ok() ? std::to_string(r.k_hat) : std::string()) + ',';
    text += (r.m_hat ? std::to_string(*r.m_hat) : std::string()) + ',';
    text += optional_number(r.rho_hat) + ',';
    text += std::string(r.ok() && r.k_hat == true_order ? "1" : "0") + ',';
    text += optional_number(r.d_perm) + ',';
    std::string status = r.ok() ? "ok" : r.error;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    text += status + '\n';
  }
  io::write_text(path, text);
}

void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows) {
  std::string text = "n,method,replications,correct,failures,probability\n";
  for (const auto& s : rows) {
    text += std::to_string(s.n) + ',' + std::string(to_string(s.method)) + ',' + std::to_string(s.replications) +
            ',' + std::to_string(s.correct) + ',' + std::to_string(s.failures) + ',' +
            io::format_number(s.probability) + '\n';
  }
  io::write_text(path, text);
}

void write_timings_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
  std::string text = "n,replication,method,runtime_seconds\n";
  for (const auto& r : rows) {
    text += std::to_string(r.n) + ',' + std::to_string(r.replication) + ',' + std::string(to_string(r.method)) +
            ',' + io::format_number(r.runtime_seconds) + '\n';
  }
  io::write_text(path, text);
}

ExperimentResult reproduce_figures(const ExperimentConfig& config, const std::filesystem::path& out,
                                   const std::optional<std::filesystem::path>& cache) {
  config.validate();
  ExperimentResult result;
  for (const auto n : config.n_values) {
    const auto dir = out / ("n_" + std::to_string(n));
    const auto obs = simulate_cell(config, n, 0);
    const std::size_t windows = obs.window_count();

    if (runs_ls(config.method)) {
      std::vector<ModelFit> fits;
      ResultRow row;
      row.n = n;
      row.method = Method::LeastSquares;
      if (cache) {
        const auto cached = *cache / ("n_" + std::to_string(n)) / "fits.csv";
        if (!std::filesystem::exists(cached)) {
          throw Error(ErrorKind::MissingCache, "no cached fits at " + cached.string());
        }
        const auto table = io::read_fits_csv(cached);
        fits = io::fits_from_rows(table);
        const auto start = std::chrono::steady_clock::now();
        try {
          PenaltyCalibration cal = config.calibration == CalibrationMethod::Slope
                                       ? calibrate_slope(fits, windows)
                                       : calibrate_dimension_jump(fits, default_rho_grid(windows), windows);
          const auto sel = select_model(fits, cal.rho_hat, windows);
          row.k_hat = sel.order;
          row.m_hat = sel.dimension;
          row.rho_hat = cal.rho_hat;
        } catch (const Error& e) {
          row.error = e.what();
        }
        row.runtime_seconds = seconds_since(start);
      } else {
        LsRun run;
        row = ls_row(config, obs, n, 0, config.threads, &run);
        fits = std::move(run.fits);
      }
      if (!fits.empty()) {
        io::write_fits_csv(dir / "fits.csv", fits, windows);
        io::write_calibration_csv(dir / "calibration.csv",
                                  calibrate_dimension_jump(fits, default_rho_grid(windows), windows));
      }
      result.rows.push_back(std::move(row));
    }

    if (runs_spectral(config.method)) {
      SpectralRun run;
      auto row = spectral_row(config, obs, n, 0, &run);
      if (row.ok()) {
        const Vector theory = singular_values(theoretical_N(config.hmm, config.spectral.dimension));
        io::write_spectrum_csv(dir / "spectrum.csv", run.report, theory);
      }
      result.rows.push_back(std::move(row));
    }
  }
  write_results_csv(out / "results.csv", result.rows, config.hmm.order());
  result.summary = summarize(result.rows, config.hmm.order());
  return result;
}

}  // namespace hmmorder
