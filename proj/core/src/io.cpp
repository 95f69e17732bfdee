#include "hmmorder/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "hmmorder/errors.hpp"
#include "json.hpp"

namespace hmmorder::io {

namespace {

using nlohmann::json;

std::string round_trip(double value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() && s.find_first_not_of(" \r\t", used) != std::string::npos) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::IoError, path.string() + ": cannot parse number '" + s + "'");
  }
}

long parse_long(const std::string& s, const std::filesystem::path& path) {
  const double v = parse_double(s, path);
  return static_cast<long>(v);
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  return in;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

json emission_to_json(const EmissionSpec& e) {
  if (const auto* b = std::get_if<BetaDensity>(&e)) {
    return {{"family", "beta"}, {"alpha", b->alpha}, {"beta", b->beta}};
  }
  const auto& c = std::get<BasisCoefficients>(e);
  return {{"family", "trig"}, {"coeffs", std::vector<double>(c.coeffs.begin(), c.coeffs.end())}};
}

EmissionSpec emission_from_json(const json& j) {
  const std::string family = j.at("family").get<std::string>();
  if (family == "beta") return BetaDensity{j.at("alpha").get<double>(), j.at("beta").get<double>()};
  if (family == "trig") {
    const auto c = j.at("coeffs").get<std::vector<double>>();
    return BasisCoefficients{Eigen::Map<const Vector>(c.data(), static_cast<Eigen::Index>(c.size()))};
  }
  throw Error(ErrorKind::ConfigError, "unknown emission family '" + family + "'");
}

InitSource init_source_from(const std::string& s) {
  if (s == "duplicated_state") return InitSource::DuplicatedState;
  if (s == "padded") return InitSource::PaddedFromSmallerM;
  return InitSource::SingleUniform;
}

}  // namespace

std::string format_number(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", value);
  return buf;
}

void write_observations_csv(const std::filesystem::path& path, const ObservationRecord& obs) {
  auto out = open_out(path);
  out << "# n=" << obs.window_count() << " L=" << obs.window_length << " seed=" << obs.seed << '\n';
  out << "y\n";
  for (const double y : obs.values) out << round_trip(y) << '\n';
}

ObservationRecord read_observations_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  ObservationRecord obs;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    strip_cr(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream meta(line.substr(1));
      std::string token;
      while (meta >> token) {
        const auto eq = token.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = token.substr(0, eq);
        const std::string val = token.substr(eq + 1);
        if (key == "L") obs.window_length = static_cast<int>(parse_long(val, path));
        if (key == "seed") obs.seed = std::stoull(val);
      }
      continue;
    }
    if (!header_seen && line == "y") {
      header_seen = true;
      continue;
    }
    obs.values.push_back(parse_double(line, path));
  }
  obs.validate();
  return obs;
}

std::string params_to_json(const HmmParams& params, int indent) {
  json j;
  const Matrix& q = params.transition.matrix();
  json rows = json::array();
  for (int i = 0; i < q.rows(); ++i) {
    rows.push_back(std::vector<double>(q.row(i).begin(), q.row(i).end()));
  }
  j["transition"] = rows;
  const Vector& pi = params.stationary.vector();
  j["stationary"] = std::vector<double>(pi.begin(), pi.end());
  json ems = json::array();
  for (const auto& e : params.emissions) ems.push_back(emission_to_json(e));
  j["emissions"] = ems;
  return j.dump(indent);
}

HmmParams params_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    const auto rows = j.at("transition").get<std::vector<std::vector<double>>>();
    const int k = static_cast<int>(rows.size());
    Matrix q(k, k);
    for (int i = 0; i < k; ++i) {
      if (static_cast<int>(rows[i].size()) != k) throw Error(ErrorKind::ConfigError, "transition must be square");
      for (int c = 0; c < k; ++c) q(i, c) = rows[i][c];
    }
    std::vector<EmissionSpec> ems;
    for (const auto& e : j.at("emissions")) ems.push_back(emission_from_json(e));
    if (j.contains("stationary")) {
      const auto pi = j.at("stationary").get<std::vector<double>>();
      HmmParams p{TransitionMatrix(q),
                  ProbabilityVector(Eigen::Map<const Vector>(pi.data(), static_cast<Eigen::Index>(pi.size()))),
                  std::move(ems)};
      p.validate();
      return p;
    }
    return HmmParams::from_transition(TransitionMatrix(q), std::move(ems));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ConfigError, std::string("bad parameter file: ") + e.what());
  }
}

void write_params_json(const std::filesystem::path& path, const HmmParams& params) {
  write_text(path, params_to_json(params) + "\n");
}

void write_coefficients_csv(const std::filesystem::path& path, const Matrix& emissions) {
  auto out = open_out(path);
  out << "family,M,state";
  for (int a = 0; a < emissions.rows(); ++a) out << ",c" << a;
  out << '\n';
  for (int k = 0; k < emissions.cols(); ++k) {
    out << "trig," << emissions.rows() << ',' << k;
    for (int a = 0; a < emissions.rows(); ++a) out << ',' << format_number(emissions(a, k));
    out << '\n';
  }
}

Matrix read_coefficients_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  std::vector<std::vector<double>> cols;
  std::getline(in, line);
  while (std::getline(in, line)) {
    strip_cr(line);
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() < 3) throw Error(ErrorKind::IoError, path.string() + ": short coefficient row");
    const long m = parse_long(cells[1], path);
    if (static_cast<long>(cells.size()) != m + 3) {
      throw Error(ErrorKind::IoError, path.string() + ": coefficient count does not match M");
    }
    std::vector<double> c;
    for (std::size_t i = 3; i < cells.size(); ++i) c.push_back(parse_double(cells[i], path));
    cols.push_back(std::move(c));
  }
  if (cols.empty()) return Matrix();
  Matrix o(static_cast<Eigen::Index>(cols.front().size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) {
    if (cols[k].size() != cols.front().size()) throw Error(ErrorKind::IoError, path.string() + ": ragged rows");
    for (std::size_t a = 0; a < cols[k].size(); ++a) o(a, k) = cols[k][a];
  }
  return o;
}

void write_fits_csv(const std::filesystem::path& path, std::span<const ModelFit> fits, std::size_t n) {
  auto out = open_out(path);
  out << "K,M,gamma,pen_shape,evals,init_source\n";
  for (const auto& f : fits) {
    out << f.order << ',' << f.dimension << ',' << format_number(f.gamma) << ','
        << format_number(pen_shape(n, f.dimension, f.order)) << ',' << f.evaluations << ','
        << to_string(f.init_source) << '\n';
  }
}

std::vector<FitRow> read_fits_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  std::getline(in, line);
  strip_cr(line);
  const auto header = split(line);
  const auto column = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw Error(ErrorKind::IoError, path.string() + ": missing column " + name);
  };
  const std::size_t ck = column("K"), cm = column("M"), cg = column("gamma"), cp = column("pen_shape");
  const std::size_t ce = column("evals"), cs = column("init_source");
  std::vector<FitRow> rows;
  while (std::getline(in, line)) {
    strip_cr(line);
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() < header.size()) throw Error(ErrorKind::IoError, path.string() + ": short row");
    FitRow r;
    r.order = static_cast<int>(parse_long(cells[ck], path));
    r.dimension = static_cast<int>(parse_long(cells[cm], path));
    r.gamma = cells[cg] == "inf" ? std::numeric_limits<double>::infinity() : parse_double(cells[cg], path);
    r.pen_shape = parse_double(cells[cp], path);
    r.evaluations = parse_long(cells[ce], path);
    r.init_source = cells[cs];
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<ModelFit> fits_from_rows(std::span<const FitRow> rows) {
  std::vector<ModelFit> fits;
  fits.reserve(rows.size());
  for (const auto& r : rows) {
    ModelFit f;
    f.order = r.order;
    f.dimension = r.dimension;
    f.gamma = r.gamma;
    f.evaluations = r.evaluations;
    f.init_source = init_source_from(r.init_source);
    fits.push_back(std::move(f));
  }
  return fits;
}

void write_calibration_csv(const std::filesystem::path& path, const PenaltyCalibration& calibration) {
  auto out = open_out(path);
  out << "rho,K_hat,M_hat,comp\n";
  for (std::size_t i = 0; i < calibration.rho_grid.size(); ++i) {
    const auto& s = calibration.selections[i];
    out << format_number(calibration.rho_grid[i]) << ',' << s.order << ',' << s.dimension << ','
        << calibration.complexity[i] << '\n';
  }
}

void write_spectrum_csv(const std::filesystem::path& path, const SpectralOrderReport& report,
                        const std::optional<Vector>& theoretical) {
  auto out = open_out(path);
  out << "index,sigma_empirical,sigma_theoretical,regression_prediction\n";
  const bool regression = report.method == OrderMethod::Regression;
  for (int i = 0; i < report.singular_values.size(); ++i) {
    out << i + 1 << ',' << format_number(report.singular_values(i)) << ',';
    if (theoretical && i < theoretical->size()) out << format_number((*theoretical)(i));
    out << ',';
    if (regression) out << format_number(report.predicted(i + 1));
    out << '\n';
  }
}

std::string read_text(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
}

}  // namespace hmmorder::io
