#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <boost/random/sobol.hpp>

#include "hmmorder/basis.hpp"
#include "hmmorder/density_model.hpp"
#include "hmmorder/experiment.hpp"
#include "hmmorder/hmm.hpp"
#include "hmmorder/io.hpp"
#include "hmmorder/ls_estimator.hpp"
#include "hmmorder/spectral.hpp"
#include "oracles.hpp"

using namespace hmmorder;
namespace oracle = hmmorder::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) { return io::format_number(v); }

int worker_threads() { return std::max(1, static_cast<int>(std::thread::hardware_concurrency())); }

int correct_count(const ExperimentResult& r, std::size_t n, Method method) {
  for (const auto& s : r.summary) {
    if (s.n == n && s.method == method) return s.correct;
  }
  return 0;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

Outcome order_reproduction(const std::string& preset, std::size_t n_ls, std::size_t n_spectral_high) {
  auto c = ExperimentConfig::from_preset(preset);
  c.threads = worker_threads();
  c.replications = 5;
  c.method = Method::Both;
  c.n_values = {n_ls};
  const auto low = run_experiment(c);
  const int ls = correct_count(low, n_ls, Method::LeastSquares);
  const int sp = correct_count(low, n_ls, Method::Spectral);
  bool pass = ls >= 4 && sp <= 1;
  std::ostringstream d;
  d << "LS " << ls << "/5 at n=" << n_ls << " (need >= 4), spectral " << sp << "/5 (need <= 1)";
  if (n_spectral_high > 0) {
    c.method = Method::Spectral;
    c.n_values = {n_spectral_high};
    const int high = correct_count(run_experiment(c), n_spectral_high, Method::Spectral);
    pass = pass && high >= 4;
    d << ", spectral " << high << "/5 at n=" << n_spectral_high << " (need >= 4)";
  }
  return {pass, d.str()};
}

Outcome rank_property() {
  double worst_tail = 0.0, worst_third = 1.0;
  for (const auto& p : {presets::easier_beta(), presets::harder_beta()}) {
    for (int m : {10, 20, 40}) {
      const Vector s = singular_values(theoretical_N(p, m));
      worst_tail = std::max(worst_tail, s(3) / s(0));
      worst_third = std::min(worst_third, s(2) / s(0));
    }
  }
  return {worst_tail < 1e-8 && worst_third > 1e-4,
          "max sigma4/sigma1 " + fmt(worst_tail) + ", min sigma3/sigma1 " + fmt(worst_third)};
}

Outcome concentration_scaling() {
  const auto p = presets::easier_beta();
  const Matrix truth = theoretical_N(p, 20);
  std::vector<double> med;
  for (std::size_t n : {1000, 4000, 16000}) {
    std::vector<double> err;
    for (int rep = 0; rep < 20; ++rep) {
      const auto obs = simulate(p, n, replication_seed(404, n, rep));
      err.push_back((compute_moments(obs, 20, false).pair - truth).norm());
    }
    med.push_back(median(err));
  }
  const double r1 = med[0] / med[1], r2 = med[1] / med[2];
  const auto in_band = [](double r) { return r >= 1.6 && r <= 2.6; };
  return {in_band(r1) && in_band(r2), "median ratios " + fmt(r1) + ", " + fmt(r2) + " (band [1.6, 2.6])"};
}

Outcome population_exactness() {
  const auto p = presets::easier_beta();
  const auto est = spectral_params(population_moments(p, 20), 3, 7);
  const double d = d_perm(est.parameters(), truth_parameters(p, 20));
  return {d < 1e-6, "d_perm " + fmt(d)};
}

Outcome duplication_invariance() {
  std::mt19937_64 rng(606);
  const auto obs = simulate(presets::harder_beta(), 2000, 606);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 1 + trial % 4;
    const auto model = oracle::random_model(k, 8, 3, rng);
    const int s = static_cast<int>(rng() % k);
    worst = std::max(worst, std::abs(gamma_n(duplicate_state(model, s), obs).gamma - gamma_n(model, obs).gamma));
  }
  return {worst < 1e-10, "max |difference| " + fmt(worst)};
}

Outcome calibration_sanity() {
  auto c = ExperimentConfig::from_preset("harder-beta");
  c.threads = worker_threads();
  c.grid = ModelGrid::strided(5, 50, 4);
  c.fit.polish_iterations = 1000;
  const auto obs = simulate(c.hmm, 49998, 5);
  const auto run = run_least_squares(obs, c, c.seed, c.threads);
  const std::size_t n = obs.window_count();
  const auto jump = calibrate_dimension_jump(run.fits, default_rho_grid(n), n);
  const auto slope = calibrate_slope(run.fits, n);
  const double ratio = std::max(jump.rho_hat, slope.rho_hat) / std::min(jump.rho_hat, slope.rho_hat);
  const bool pass = std::isfinite(ratio) && ratio <= 3.0 && slope.r_squared >= 0.8 && jump.drop_ratio >= 3.0;
  return {pass, "rho jump " + fmt(jump.rho_hat) + ", rho slope " + fmt(slope.rho_hat) + ", ratio " + fmt(ratio) +
                    ", R^2 " + fmt(slope.r_squared) + ", drop ratio " + fmt(jump.drop_ratio)};
}

HmmParams polynomial_truth() {
  Vector c1(4), c2(4), c3(4);
  c1 << 1.0, 0.5, 0.1, 0.0;
  c2 << 1.0, -0.4, 0.2, 0.05;
  c3 << 1.0, 0.0, -0.45, 0.1;
  return HmmParams::from_transition(presets::benchmark_transition(),
                                    {BasisCoefficients{c1}, BasisCoefficients{c2}, BasisCoefficients{c3}});
}

Outcome property_suites() {
  std::vector<std::string> failed;
  const auto check = [&](bool ok, const std::string& name) {
    if (!ok) failed.push_back(name);
  };
  std::mt19937_64 rng(808);

  // d_perm: zero on relabelled copies, invariant under relabelling either side.
  bool dperm_ok = true;
  for (int trial = 0; trial < 10; ++trial) {
    const ParameterSet a{oracle::random_probability(3, rng), oracle::random_stochastic(3, rng),
                         oracle::random_emissions(5, 3, rng)};
    const ParameterSet b{oracle::random_probability(3, rng), oracle::random_stochastic(3, rng),
                         oracle::random_emissions(5, 3, rng)};
    std::vector<int> perm{0, 1, 2};
    do {
      dperm_ok = dperm_ok && d_perm(a, permute(a, perm)) < 1e-12;
      dperm_ok = dperm_ok && std::abs(d_perm(permute(a, perm), b) - d_perm(a, b)) < 1e-12;
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
  check(dperm_ok, "d_perm");

  // Projections against mesh search.
  std::normal_distribution<double> g(0.25, 0.5);
  bool proj_ok = true;
  for (int trial = 0; trial < 3; ++trial) {
    Vector v(4);
    for (auto& x : v) x = g(rng);
    const Vector p = project_simplex(v).vector();
    const Vector mesh = oracle::grid_projection(v, 1000);
    proj_ok = proj_ok && (p - mesh).norm() < 2e-3 && (p - v).norm() <= (mesh - v).norm() + 1e-12;
  }
  Matrix r(4, 4);
  for (auto& x : r.reshaped()) x = g(rng);
  const Matrix q = project_transition(r).matrix();
  for (int i = 0; i < 4; ++i) {
    proj_ok = proj_ok && (q.row(i).transpose() - oracle::grid_projection(r.row(i).transpose(), 400)).norm() < 5e-3;
  }
  check(proj_ok, "projections");

  // norm_sq against path enumeration and quasi-Monte Carlo.
  bool enum_ok = true;
  for (int k = 1; k <= 3; ++k) {
    for (int l = 1; l <= 4; ++l) {
      const auto model = oracle::random_model(k, 5, l, rng);
      enum_ok = enum_ok && std::abs(norm_sq(model) - oracle::enumerate_inner(model, model)) < 1e-12;
    }
  }
  check(enum_ok, "norm_sq enumeration");
  const auto model = oracle::random_model(3, 4, 3, rng);
  boost::random::sobol qrng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int points = 1000000;
  double acc = 0.0;
  std::vector<double> z(3);
  for (int i = 0; i < points; ++i) {
    for (auto& v : z) v = u(qrng);
    const double w = eval_window(model, z);
    acc += w * w;
  }
  check(std::abs(norm_sq(model) - acc / points) < 1e-3 * acc / points, "norm_sq Sobol");

  // E gamma_n(t) = ||t||^2 - 2 <t, g*> when g* lies in the model.
  const auto truth_params = polynomial_truth();
  Matrix o(4, 3);
  for (int k = 0; k < 3; ++k) o.col(k) = project_emission(truth_params.emissions[k], 4);
  const auto truth = CandidateModel::from_transition(truth_params.transition, o);
  const auto t = oracle::random_model(2, 3, 3, rng);
  const double target = norm_sq(t) - 2.0 * oracle::enumerate_inner(t, truth);
  std::vector<double> dev;
  for (int rep = 0; rep < 100; ++rep) dev.push_back(gamma_n(t, simulate(truth_params, 502, 9000 + rep)).gamma - target);
  const double mean = std::accumulate(dev.begin(), dev.end(), 0.0) / dev.size();
  double var = 0.0;
  for (double v : dev) var += (v - mean) * (v - mean) / (dev.size() - 1);
  check(std::abs(mean) < 4.0 * std::sqrt(var / dev.size()), "gamma_n unbiasedness");

  // Weyl: |sigma_i(A) - sigma_i(B)| <= sigma_1(A - B).
  bool weyl_ok = true;
  for (const auto& p : {presets::easier_beta(), presets::harder_beta()}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      for (int m : {10, 20}) {
        const Matrix n_hat = compute_moments(simulate(p, 2000, seed), m, false).pair;
        const Matrix n_true = theoretical_N(p, m);
        const Vector a = singular_values(n_hat), b = singular_values(n_true);
        const double bound = singular_values(n_hat - n_true)(0);
        for (int i = 0; i < m; ++i) weyl_ok = weyl_ok && std::abs(a(i) - b(i)) <= bound + 1e-12;
      }
    }
  }
  check(weyl_ok, "Weyl");

  std::string detail = failed.empty() ? "all properties hold" : "failed:";
  for (const auto& f : failed) detail += " " + f;
  return {failed.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  // --allow-fail <id>: report the criterion but keep the exit status clean.
  std::set<int> allowed;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if ((arg == "--allow-fail" || arg == "--only") && i + 1 < argc) {
      (arg == "--only" ? only : allowed).insert(std::atoi(argv[++i]));
    } else {
      std::cerr << "usage: acceptance_suite [--only <id>]... [--allow-fail <id>]...\n";
      return 2;
    }
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"order selection, easier Betas", [] { return order_reproduction("easier-beta", 3000, 9999); }},
      {"order selection, harder Betas", [] { return order_reproduction("harder-beta", 30000, 0); }},
      {"rank of N_M", rank_property},
      {"concentration of N_20", concentration_scaling},
      {"spectral recovery from population moments", population_exactness},
      {"state duplication leaves gamma_n unchanged", duplication_invariance},
      {"penalty calibration agreement", calibration_sanity},
      {"property suites", property_suites},
  };

  int unexpected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (out.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << criteria[i].first << " | "
              << out.detail << " | " << std::fixed << std::setprecision(1) << secs << std::defaultfloat << " s";
    if (!out.pass && allowed.count(id)) std::cout << " (known)";
    std::cout << std::endl;
    if (!out.pass && !allowed.count(id)) ++unexpected;
  }
  return unexpected == 0 ? 0 : 1;
}
