// Microbenchmarks for the hot kernels: batched matmul, windowed attention
// forward/backward, and a tiny end-to-end model forward.

#include <benchmark/benchmark.h>

#include "tdl/model.hpp"
#include "tdl/swin.hpp"

namespace {

using namespace tdl;

Tensor<float> random_tensor(const Shape& shape, Rng& rng) {
  Tensor<float> t = Tensor<float>::zeros(shape);
  for (float& v : t.mutable_data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const int64_t n = state.range(0);
  Rng rng(1);
  Tensor<float> a = random_tensor({n, n}, rng);
  Tensor<float> b = random_tensor({n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128);

void BM_WindowAttentionForward(benchmark::State& state) {
  Rng rng(2);
  WindowAttention<float> wa(96, 3, 7, rng);
  Tensor<float> x = random_tensor({16, 49, 96}, rng);
  Tensor<float> mask;
  for (auto _ : state) benchmark::DoNotOptimize(wa.forward(x, mask));
}
BENCHMARK(BM_WindowAttentionForward);

void BM_WindowAttentionBackward(benchmark::State& state) {
  Rng rng(3);
  WindowAttention<float> wa(96, 3, 7, rng);
  Tensor<float> x = random_tensor({16, 49, 96}, rng);
  x.set_requires_grad(true);
  Tensor<float> mask;
  for (auto _ : state) {
    Tape<float> tape;
    Tensor<float> loss = mean_all(wa.forward(x, mask));
    tape.backward(loss);
    benchmark::DoNotOptimize(x.grad().data());
    x.zero_grad();
  }
}
BENCHMARK(BM_WindowAttentionBackward);

void BM_TinyModelForward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.img_size = 32;
  cfg.embed_dim = 8;
  cfg.depths = {2, 2};
  cfg.num_heads = {2, 2};
  cfg.window_size = 4;
  cfg.num_classes = 2;
  Model<float> model = Model<float>::build(cfg);
  Rng rng(4);
  Tensor<float> img = random_tensor({1, 3, 32, 32}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(img));
}
BENCHMARK(BM_TinyModelForward);

}  // namespace

BENCHMARK_MAIN();
