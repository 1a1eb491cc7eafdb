#include <benchmark/benchmark.h>

#include <cstdint>
#include <filesystem>
#include <vector>

#include "plop/bundle.hpp"
#include "plop/nfn.hpp"
#include "plop/rng.hpp"
#include "plop/tensor.hpp"
#include "plop/transformer.hpp"

namespace {

using namespace plop;

void bm_matvec(benchmark::State& state) {
  const int64_t n = state.range(0);
  Rng wr = Rng::stream(1, "bench/w");
  Rng zr = Rng::stream(1, "bench/z");
  Matrix W = gaussian_matrix(wr, n, n);
  Vector z = gaussian_vector(zr, n);
  for (auto _ : state) {
    Vector y = matvec(W, z);
    benchmark::DoNotOptimize(y.data.data());
  }
  state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(bm_matvec)->Arg(64)->Arg(256)->Arg(1024);

void bm_nfn_sample(benchmark::State& state) {
  const int64_t n = state.range(0);
  const int m = static_cast<int>(state.range(1));
  Rng wr = Rng::stream(2, "bench/w");
  Rng zr = Rng::stream(2, "bench/z");
  Matrix W = gaussian_matrix(wr, n, n);
  Vector z = gaussian_vector(zr, n);
  int64_t i = 0;
  for (auto _ : state) {
    Rng mc = Rng::stream(2, "bench/mc", i++);
    float s = nfn_sample(W, z, m, mc);
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(bm_nfn_sample)->Args({256, 4})->Args({256, 64})->Args({1024, 4});

void bm_score_modules(benchmark::State& state) {
  const int workers = static_cast<int>(state.range(0));
  Rng r = Rng::stream(3, "bench/mods");
  std::vector<Matrix> ws;
  std::vector<ActivationBatch> batches;
  for (int i = 0; i < 14; ++i) {
    ws.push_back(gaussian_matrix(r, 128, 128));
    ActivationBatch b;
    b.module_name = "m" + std::to_string(i);
    for (int s = 0; s < 64; ++s) b.inputs.push_back(gaussian_vector(r, 128));
    batches.push_back(std::move(b));
  }
  std::vector<const Matrix*> wp;
  std::vector<const ActivationBatch*> bp;
  for (int i = 0; i < 14; ++i) {
    wp.push_back(&ws[static_cast<size_t>(i)]);
    bp.push_back(&batches[static_cast<size_t>(i)]);
  }
  NfnOptions opts;
  for (auto _ : state) {
    auto scores = score_modules(wp, bp, opts, 7, workers);
    benchmark::DoNotOptimize(scores.data());
  }
}
BENCHMARK(bm_score_modules)->Arg(1)->Arg(2)->Arg(4)->Arg(8)->UseRealTime();

void bm_captured_forward(benchmark::State& state) {
  toy::TransformerConfig c;
  c.vocab = 16;
  c.d_model = 64;
  c.n_heads = 4;
  c.d_mlp = 128;
  c.n_layers = 2;
  c.max_seq = 32;
  c.seed = 4;
  toy::Transformer m = toy::init_transformer(c);
  auto data = toy::sample_batch(toy::Task::kArithmetic, 8, 32, 11, 0);
  for (auto _ : state) {
    auto caps = toy::capture_inputs(m, data);
    benchmark::DoNotOptimize(caps.data());
  }
}
BENCHMARK(bm_captured_forward);

void bm_bundle_roundtrip(benchmark::State& state) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "plopkit_bench";
  fs::create_directories(dir);
  Rng r = Rng::stream(5, "bench/bundle");
  TensorBundle b;
  for (int i = 0; i < 14; ++i) {
    BundleEntry e;
    e.name = "m" + std::to_string(i);
    e.kind = TensorKind::kWeight;
    e.data = gaussian_matrix(r, 128, 128);
    b.entries.push_back(std::move(e));
  }
  for (auto _ : state) {
    write_bundle(b, dir / "bench");
    TensorBundle back = read_bundle(dir / "bench.manifest.json");
    benchmark::DoNotOptimize(back.entries.data());
  }
  state.SetBytesProcessed(state.iterations() * 14 * 128 * 128 * 4);
}
BENCHMARK(bm_bundle_roundtrip);

}  // namespace

BENCHMARK_MAIN();
