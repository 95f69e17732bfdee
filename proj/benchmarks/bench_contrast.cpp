#include <benchmark/benchmark.h>

#include "hmmorder/cmaes.hpp"
#include "hmmorder/density_model.hpp"
#include "hmmorder/hmm.hpp"

using namespace hmmorder;

namespace {

const ObservationRecord& sample(std::size_t n) {
  static const ObservationRecord obs = simulate(presets::easier_beta(), n, 11);
  return obs;
}

CandidateModel random_model(int k, int m, unsigned seed) {
  std::srand(seed);
  Matrix q = (Matrix::Random(k, k).array() + 1.5).matrix();
  for (int i = 0; i < k; ++i) q.row(i) /= q.row(i).sum();
  Matrix o = 0.3 * Matrix::Random(m, k);
  o.row(0).setOnes();
  return CandidateModel::from_transition(TransitionMatrix(q), o);
}

void BM_TensorContrast(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  const int m = static_cast<int>(state.range(1));
  const EmpiricalContrast contrast(sample(3000), 25);
  const auto model = random_model(k, m, 3);
  for (auto _ : state) benchmark::DoNotOptimize(contrast.evaluate(model).gamma);
}
BENCHMARK(BM_TensorContrast)->Args({3, 9})->Args({3, 25})->Args({5, 25});

void BM_WindowedContrast(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  const int m = static_cast<int>(state.range(1));
  const auto& obs = sample(3000);
  const auto model = random_model(k, m, 3);
  for (auto _ : state) benchmark::DoNotOptimize(gamma_n(model, obs).gamma);
}
BENCHMARK(BM_WindowedContrast)->Args({3, 9})->Args({5, 25});

void BM_MomentTensor(benchmark::State& state) {
  const auto& obs = sample(3000);
  for (auto _ : state) benchmark::DoNotOptimize(third_moment_tensor(obs, static_cast<int>(state.range(0))).data());
}
BENCHMARK(BM_MomentTensor)->Arg(25);

void BM_CmaesSphere(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  CmaesOptions opts;
  opts.max_evaluations = 5000;
  for (auto _ : state) {
    const auto res = cmaes_minimize([](const Vector& x) { return x.squaredNorm(); }, Vector::Ones(d), opts);
    benchmark::DoNotOptimize(res.value);
  }
}
BENCHMARK(BM_CmaesSphere)->Arg(10)->Arg(50)->Arg(145);

}  // namespace
BENCHMARK_MAIN();
