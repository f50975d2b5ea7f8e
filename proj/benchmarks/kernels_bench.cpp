#include <benchmark/benchmark.h>

#include <random>

#include "dvn/tape.hpp"
#include "dvn/tensor.hpp"

namespace {

dvn::Tensor random_tensor(dvn::Shape shape, unsigned seed) {
  dvn::Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : t.data()) v = normal(rng);
  return t;
}

void BM_MatmulForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  dvn::Tensor w = random_tensor({n, n}, 2);
  const dvn::Tensor x = random_tensor({32, n}, 1);
  dvn::Tape tape;
  const dvn::NodeId in = tape.input();
  const dvn::NodeId p = tape.parameter(w);
  tape.sum_squares(tape.matmul(in, p));
  for (auto _ : state) {
    benchmark::DoNotOptimize(tape.forward_eval({x}).item());
    tape.backward_eval();
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(16)->Arg(64)->Arg(128);

void BM_ConvForwardBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  dvn::Tensor k = random_tensor({3, 3, c, c}, 4);
  const dvn::Tensor x = random_tensor({8, 16, 16, c}, 3);
  dvn::Tape tape;
  const dvn::NodeId in = tape.input();
  const dvn::NodeId p = tape.parameter(k);
  tape.sum_squares(tape.conv2d(in, p));
  for (auto _ : state) {
    benchmark::DoNotOptimize(tape.forward_eval({x}).item());
    tape.backward_eval();
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_ConvForwardBackward)->Arg(4)->Arg(8)->Arg(16);

}  // namespace
