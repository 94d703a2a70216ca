#include <benchmark/benchmark.h>

#include "gpgrid/asymptotics.hpp"
#include "gpgrid/covariance.hpp"
#include "gpgrid/design.hpp"
#include "gpgrid/estimators.hpp"
#include "gpgrid/gp.hpp"
#include "gpgrid/special.hpp"
#include "gpgrid/toeplitz.hpp"

using namespace gpgrid;

static void BM_BesselK(benchmark::State& state) {
  const double nu = static_cast<double>(state.range(0)) / 2.0;
  double x = 0.1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(bessel_k(nu, x));
    x = x < 30.0 ? x * 1.07 : 0.1;
  }
}
BENCHMARK(BM_BesselK)->Arg(1)->Arg(3)->Arg(5)->Arg(10);

static void BM_CovBundle(benchmark::State& state) {
  const MaternModel m = state.range(1) == 0 ? MaternModel::ell_only(1.5) : MaternModel::joint();
  const Eigen::VectorXd th = state.range(1) == 0 ? Eigen::VectorXd::Constant(1, 1.0) : Eigen::Vector2d(1.0, 1.5);
  const PerturbedDesign d = sample_design(state.range(0), 1, 0.3, 1);
  for (auto _ : state) benchmark::DoNotOptimize(build_cov_bundle(m, th, d));
}
BENCHMARK(BM_CovBundle)->Args({256, 0})->Args({256, 1})->Args({1024, 0})->Unit(benchmark::kMillisecond);

static void BM_Traces(benchmark::State& state) {
  const MaternModel m = MaternModel::ell_only(1.5);
  const Eigen::VectorXd th = Eigen::VectorXd::Constant(1, 1.0);
  const PerturbedDesign d = sample_design(state.range(0), 1, 0.3, 1);
  for (auto _ : state) benchmark::DoNotOptimize(compute_traces(m, th, d, state.range(1) != 0));
}
BENCHMARK(BM_Traces)->Args({256, 0})->Args({256, 1})->Args({1024, 1})->Unit(benchmark::kMillisecond);

static void BM_ClosedForms(benchmark::State& state) {
  const MaternModel m = MaternModel::ell_only(1.5);
  const Eigen::VectorXd th = Eigen::VectorXd::Constant(1, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(closed_form_sigmas(build_spectra(m, th, state.range(0))));
}
BENCHMARK(BM_ClosedForms)->Arg(1024)->Arg(8192)->Unit(benchmark::kMillisecond);

static void BM_Estimate(benchmark::State& state) {
  const MaternModel m = MaternModel::ell_only(1.5);
  const Eigen::VectorXd th = Eigen::VectorXd::Constant(1, 1.0);
  const GpDataset data = simulate_dataset(m, th, sample_design(state.range(0), 1, 0.25, 2), 3);
  const ParamBox box(Eigen::VectorXd::Constant(1, 0.05), Eigen::VectorXd::Constant(1, 10.0));
  const EstimatorKind kind = state.range(1) == 0 ? EstimatorKind::kML : EstimatorKind::kCV;
  for (auto _ : state) benchmark::DoNotOptimize(estimate(m, data, kind, box));
}
BENCHMARK(BM_Estimate)->Args({100, 0})->Args({100, 1})->Args({400, 0})->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
