// SPDX-License-Identifier: Apache-2.0
//
// Forward and forward+backward cost of the full fusion stack on one window.
// Arguments: window length, recursion depth.
#include <benchmark/benchmark.h>

#include "tagf/model.hpp"
#include "tagf/objectives.hpp"
#include "tagf/synthdata.hpp"

namespace {

using namespace tagf;

struct Fixture {
  fusion::ModelConfig model;
  ParameterStore params;
  synth::Episode episode;

  Fixture(std::size_t length, std::size_t depth) {
    model.recursion_depth = depth;
    params = fusion::init_parameters(model);
    synth::GenConfig gen;
    gen.n_episodes = 1;
    gen.length = length;
    episode = synth::generate_episode(gen, 0);
  }
};

void BM_Forward(benchmark::State& state) {
  const Fixture f(static_cast<std::size_t>(state.range(0)),
                  static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) {
    Tape tape;
    BoundParameters p(tape, f.params);
    auto out = fusion::forward(p, f.model, f.episode.audio, f.episode.visual);
    benchmark::DoNotOptimize(out.fused.prediction.values().data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ForwardBackward(benchmark::State& state) {
  const Fixture f(static_cast<std::size_t>(state.range(0)),
                  static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) {
    Tape tape;
    BoundParameters p(tape, f.params);
    const auto out = fusion::forward(p, f.model, f.episode.audio, f.episode.visual);
    const auto loss =
        objectives::ccc_loss(out.fused.prediction, f.episode.truth, f.episode.truth_mask);
    auto grads = tape.backward(loss);
    benchmark::DoNotOptimize(grads.size());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_CccLoss(benchmark::State& state) {
  const Fixture f(static_cast<std::size_t>(state.range(0)), 1);
  std::vector<double> pred(2 * f.episode.length(), 0.1);
  for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = 0.001 * double(i % 97);
  for (auto _ : state) {
    Tape tape;
    const Tensor p = tape.parameter("p", {f.episode.length(), 2}, pred);
    auto grads = tape.backward(objectives::ccc_loss(p, f.episode.truth));
    benchmark::DoNotOptimize(grads.size());
  }
}

BENCHMARK(BM_Forward)->Args({120, 3})->Args({300, 1})->Args({300, 3})->Args({300, 5})
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForwardBackward)->Args({120, 3})->Args({300, 3})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CccLoss)->Arg(300)->Arg(3000)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
