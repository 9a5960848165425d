#include <benchmark/benchmark.h>

#include <random>

#include "sctrans/model.hpp"
#include "sctrans/ops.hpp"

namespace {

using namespace sct;

Tensor<float> noise(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-1.0F, 1.0F);
  Tensor<float> t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = d(rng);
  return t;
}

// 3x3 convolution, C -> C channels on a 64x64 map.
void BM_Conv3x3(benchmark::State& state) {
  const Index c = state.range(0);
  const ConvSpec spec = ConvSpec::square(c, c, 3, 1, 1);
  const auto x = Var<float>::constant(noise({1, c, 64, 64}, 1));
  const auto w = Var<float>::constant(noise(spec.weight_shape(), 2));
  const auto b = Var<float>::constant(noise({c}, 3));
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, spec, w, b));
  state.counters["FLOP/s"] = benchmark::Counter(static_cast<double>(spec.flops(64, 64)), benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv3x3)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

// One transformer block at the default widths on the 16x16 token grid of a 256x256 input.
void BM_TransformerBlock(benchmark::State& state) {
  const ModelConfig cfg;
  ParamStore<float> store;
  Builder<float> b(store, 1);
  const SCTBlock<float> block(b, "blk", cfg);
  Levels<float> in;
  for (int i = 0; i < kLevels; ++i)
    in[static_cast<std::size_t>(i)] = Var<float>::constant(noise({1, cfg.channels[static_cast<std::size_t>(i)], 16, 16}, 4 + static_cast<std::uint64_t>(i)));
  for (auto _ : state) benchmark::DoNotOptimize(block.forward({}, in));
}
BENCHMARK(BM_TransformerBlock)->Unit(benchmark::kMillisecond);

// Eval-mode forward of the default model.
void BM_Predict(benchmark::State& state) {
  const SCTransNet<float> model(ModelConfig{});
  const Index s = state.range(0);
  const Tensor<float> x = noise({1, 1, s, s}, 9);
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(x));
  state.counters["FLOP/s"] = benchmark::Counter(static_cast<double>(model.count_flops(s, s).total()), benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Predict)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

// One training step (forward, loss, backward) of the default model on a 64x64 crop.
void BM_TrainStep(benchmark::State& state) {
  SCTransNet<float> model(ModelConfig{});
  const Tensor<float> x = noise({1, 1, 64, 64}, 10);
  Tensor<float> mask({1, 1, 64, 64});
  mask[64 * 32 + 32] = 1.0F;
  for (auto _ : state) {
    GradTape<float> tape;
    const Context<float> ctx{&tape, true, nullptr};
    const auto terms = total_loss(model.forward(ctx, tape.leaf(x)), mask, model.config().loss_weights);
    model.params().zero_grad();
    tape.backward(terms.total);
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
