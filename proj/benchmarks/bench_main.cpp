#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "kanforget/networks.hpp"
#include "kanforget/overlap_mc.hpp"
#include "kanforget/spline_basis.hpp"
#include "kanforget/task_corpus.hpp"
#include "kanforget/training.hpp"

using namespace kanforget;

namespace {

Matrix random_batch(std::size_t rows, std::size_t cols) {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = u(gen);
  return m;
}

void BM_EvalBasis(benchmark::State& state) {
  const KnotGrid grid(-1.0, 1.0, static_cast<int>(state.range(0)), 3);
  std::vector<double> out(grid.basis_count());
  double x = -0.999;
  for (auto _ : state) {
    eval_basis_into(grid, x, out);
    benchmark::DoNotOptimize(out.data());
    x = x > 0.99 ? -0.999 : x + 1e-3;
  }
}
BENCHMARK(BM_EvalBasis)->Arg(5)->Arg(20);

void BM_EvalBasisLocal(benchmark::State& state) {
  const KnotGrid grid(-1.0, 1.0, static_cast<int>(state.range(0)), 3);
  std::vector<double> local(4);
  double x = -0.999;
  for (auto _ : state) {
    benchmark::DoNotOptimize(eval_basis_local(grid, x, local));
    x = x > 0.99 ? -0.999 : x + 1e-3;
  }
}
BENCHMARK(BM_EvalBasisLocal)->Arg(5)->Arg(20);

void BM_ForwardBackward(benchmark::State& state) {
  const std::vector<std::size_t> dims{static_cast<std::size_t>(state.range(0)), 16, 10};
  KanInitOptions opt;
  opt.grid_size = 10;
  const KanNetwork net = init_kan(dims, opt, 0);
  const Matrix x = random_batch(20, dims[0]);
  const Matrix g(20, 10, 0.01);
  for (auto _ : state) {
    const auto trace = forward(net, x);
    benchmark::DoNotOptimize(backward(net, trace, g).parameters.data());
  }
  state.SetItemsProcessed(state.iterations() * 20);
}
BENCHMARK(BM_ForwardBackward)->Arg(64)->Arg(784)->Unit(benchmark::kMicrosecond);

void BM_DecimalEpoch(benchmark::State& state) {
  const auto tasks = gen_decimal_tasks();
  KanInitOptions opt;
  opt.grid_size = static_cast<int>(state.range(0));
  const KanNetwork net = init_kan(std::vector<std::size_t>{2, 3, 2}, opt, 0);
  TrainConfig cfg;
  cfg.epochs_per_task = 1;
  cfg.batch_size = 1;
  cfg.record_curves = false;
  for (auto _ : state) {
    auto r = train_sequence(net, std::span<const TaskDataset>(tasks), cfg);
    benchmark::DoNotOptimize(r.ledger.loss.values().data());
  }
}
BENCHMARK(BM_DecimalEpoch)->Arg(5)->Arg(20)->Unit(benchmark::kMicrosecond);

void BM_McExpectedOverlap(benchmark::State& state) {
  McConfig cfg;
  cfg.trials = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(mc_expected_overlap(SupportModel::torus(0.2), SupportModel::torus(0.3), cfg).mean);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_McExpectedOverlap)->Arg(100000)->Unit(benchmark::kMillisecond);

void BM_TorusOverlap(benchmark::State& state) {
  double s = 0.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(torus_overlap({s, 0.3}, {0.95, 0.2}));
    s = s > 0.99 ? 0.0 : s + 1e-3;
  }
}
BENCHMARK(BM_TorusOverlap);

}  // namespace
BENCHMARK_MAIN();
