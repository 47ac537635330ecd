#include <benchmark/benchmark.h>

#include <sys/socket.h>

#include <future>
#include <numeric>

#include "ddvkit/adapter.hpp"
#include "ddvkit/dataset.hpp"
#include "ddvkit/model.hpp"
#include "ddvkit/probe.hpp"
#include "ddvkit/runtime.hpp"
#include "ddvkit/similarity.hpp"

using namespace ddv;

namespace {

const char* kArchs[] = {"convnetA", "convnetB"};

Model arch(std::int64_t i) { return make_architecture(kArchs[i], 4, 1, kArchs[i]); }

Tensor images(std::size_t n) {
  const auto data = make_dataset("taskA", 7, std::max<std::size_t>(n, 200));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return data.images.gather_rows(idx);
}

void BM_Forward(benchmark::State& state) {
  const Model m = arch(state.range(0));
  const Tensor x = images(static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(x));
  state.SetItemsProcessed(state.iterations() * state.range(1));
  state.SetLabel(kArchs[state.range(0)]);
}
BENCHMARK(BM_Forward)->ArgsProduct({{0, 1}, {1, 200}})->Unit(benchmark::kMicrosecond);

void BM_InputGradient(benchmark::State& state) {
  const Model m = arch(state.range(0));
  const Tensor x = images(static_cast<std::size_t>(state.range(1)));
  const OutputObjective sum = [](const Tensor& y, Tensor& g) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      s += y[i];
      g[i] = 1.0f;
    }
    return s;
  };
  for (auto _ : state) benchmark::DoNotOptimize(input_gradient(m, x, sum));
  state.SetItemsProcessed(state.iterations() * state.range(1));
  state.SetLabel(kArchs[state.range(0)]);
}
BENCHMARK(BM_InputGradient)->ArgsProduct({{0, 1}, {1, 100}})->Unit(benchmark::kMicrosecond);

// One mutation step of the black-box search, amortized over a short run.
void BM_BlackboxIteration(benchmark::State& state) {
  const Model m = arch(0);
  const Tensor seeds = images(static_cast<std::size_t>(state.range(0)));
  GenConfig cfg;
  cfg.mode = GenMode::blackbox;
  cfg.n_inputs = seeds.rows();
  cfg.iterations = 20;
  for (auto _ : state) benchmark::DoNotOptimize(gen_blackbox(m, seeds, cfg));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(cfg.iterations));
}
BENCHMARK(BM_BlackboxIteration)->Arg(10)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_WhiteboxStep(benchmark::State& state) {
  const Model m = arch(0);
  const Tensor seeds = images(100);
  GenConfig cfg;
  cfg.pgd_steps = 5;
  for (auto _ : state) benchmark::DoNotOptimize(gen_whitebox(m, seeds, cfg));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(cfg.pgd_steps));
}
BENCHMARK(BM_WhiteboxStep)->Unit(benchmark::kMillisecond);

void BM_ComputeDdv(benchmark::State& state) {
  const Model m = arch(0);
  const Tensor x = images(100);
  Tensor x2 = x;
  for (float& v : x2.data()) v = std::min(1.0f, v + 0.05f);
  const auto set = make_pairset(x, x2, m.id(), GenConfig{});
  for (auto _ : state) benchmark::DoNotOptimize(compute_ddv(m, set));
}
BENCHMARK(BM_ComputeDdv)->Unit(benchmark::kMicrosecond);

void BM_AdapterRoundTrip(benchmark::State& state) {
  const EchoClassifier echo({1, 16, 16}, 4);
  int sv[2];
  ::socketpair(AF_UNIX, SOCK_STREAM, 0, sv);
  auto served = std::async(std::launch::async, [&echo, fd = sv[1]] {
    Channel ch(fd);
    return serve_session(echo, ch);
  });
  {
    RemoteModel remote(Channel(sv[0]), {});
    const Tensor x = images(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(remote.forward(x));
    state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(x.size() * sizeof(float)));
  }
  served.get();
}
BENCHMARK(BM_AdapterRoundTrip)->Arg(1)->Arg(200)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
