/* Copyright 2026 The NRDM Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
        limitations under the License.
==============================================================================*/


#include <benchmark/benchmark.h>

#include "nrdm/autodiff.hpp"
#include "nrdm/data_eval.hpp"
#include "nrdm/dynamics.hpp"
#include "nrdm/residual_stack.hpp"
#include "nrdm/training.hpp"

namespace {

using namespace nrdm;

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = Rng(1).normal_tensor({n, n});
  const Tensor b = Rng(2).normal_tensor({n, n});
  for (auto _ : state) {
    Tape tape;
    const Var out = sum(matmul(tape.leaf(a), tape.leaf(b)));
    benchmark::DoNotOptimize(backward(out));
  }
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

StackConfig stack_config(std::size_t depth, Fashion fashion) {
  StackConfig c;
  c.fashion = fashion;
  c.depth = depth;
  c.mapper = {MapperKind::mlp2, 2, 32, Activation::silu, TimeConditioning::concat, 16};
  c.step = 1.0 / static_cast<double>(depth);
  return c;
}

void BM_StackForward(benchmark::State& state) {
  Rng rng(3);
  const StackModel m(stack_config(static_cast<std::size_t>(state.range(0)), Fashion::flow), rng);
  const Tensor z = Rng(4).normal_tensor({256, 2});
  for (auto _ : state) benchmark::DoNotOptimize(flow_stack_forward(z, m, 0.5).output);
}
BENCHMARK(BM_StackForward)->Arg(8)->Arg(64);

void BM_StackBackward(benchmark::State& state) {
  const auto fashion = state.range(1) == 0 ? Fashion::flow : Fashion::u_shaped;
  Rng rng(3);
  const StackModel m(stack_config(static_cast<std::size_t>(state.range(0)), fashion), rng);
  const Tensor z = Rng(4).normal_tensor({256, 2});
  const Tensor emb = time_embedding(std::vector<double>(256, 0.5), 16);
  for (auto _ : state) {
    Tape tape;
    Conditioning cond;
    cond.embedding = tape.constant(emb);
    const auto pass = m.forward(tape, m.bind(tape), tape.leaf(z), cond);
    benchmark::DoNotOptimize(backward(sum(square(pass.output))));
  }
}
BENCHMARK(BM_StackBackward)->Args({8, 0})->Args({64, 0})->Args({8, 1})->Args({64, 1});

void BM_SlicedWasserstein(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = Rng(5).normal_tensor({n, 2});
  const Tensor b = Rng(6).normal_tensor({n, 2});
  for (auto _ : state) benchmark::DoNotOptimize(sliced_wasserstein(a, b));
}
BENCHMARK(BM_SlicedWasserstein)->Arg(1000)->Arg(10000);

void BM_PfOdeSampling(benchmark::State& state) {
  ScheduleSpec spec;
  spec.kind = ScheduleKind::ou;
  const ClosedFormSchedule s(spec);
  ScoreNetworkConfig nc;
  nc.stack.depth = 8;
  Rng rng(7);
  const ScoreNetwork net(nc, rng);
  Rng prior_rng(8);
  const Tensor prior = sample_prior(s, static_cast<std::size_t>(state.range(0)), 2, prior_rng);
  const TimeFn score = score_function(net, s);
  for (auto _ : state) benchmark::DoNotOptimize(sample_pf_ode(s, score, prior, Solver::heun, 50));
}
BENCHMARK(BM_PfOdeSampling)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
