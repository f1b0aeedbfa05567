#include <benchmark/benchmark.h>

#include "xfreq/aos_renderer.hpp"
#include "xfreq/parallel.hpp"
#include "xfreq/scene.hpp"
#include "xfreq/widefreq_net.hpp"

namespace {

using namespace xfreq;

const Box kRoom{Vec3(0, 0, 0), Vec3(6, 5, 3)};
const ReceiverConfig kRx{Vec3(3.0, 2.5, 0.4), 0.05};
const TxDescriptor kTx{Vec3(1.3, 4.1, 2.2), 24.25e9};

Model bench_model(std::size_t n) {
  Model m;
  m.scene = init_scene(n, kRoom, 1, 0.15);
  NetworkConfig nc;
  nc.bounds = kRoom;
  m.net = NetworkParams::random(nc, 2);
  m.net.head[1].bias[0] = 2.2;
  return m;
}

void BM_Render(benchmark::State& state) {
  set_thread_count(1);
  const Model m = bench_model(static_cast<std::size_t>(state.range(0)));
  const AngularGrid grid(45, 180);
  for (auto _ : state) benchmark::DoNotOptimize(render_graph(m, kTx, kRx, grid));
}
BENCHMARK(BM_Render)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);

void BM_Backward(benchmark::State& state) {
  set_thread_count(1);
  const Model m = bench_model(static_cast<std::size_t>(state.range(0)));
  const AngularGrid grid(45, 180);
  const auto graph = render_graph(m, kTx, kRx, grid);
  const std::vector<double> upstream(grid.size(), 1.0 / static_cast<double>(grid.size()));
  for (auto _ : state) benchmark::DoNotOptimize(backward(graph, m, upstream));
}
BENCHMARK(BM_Backward)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);

void BM_NetworkForward(benchmark::State& state) {
  set_thread_count(1);
  const Model m = bench_model(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(forward_batch(m.net, kTx, m.scene));
}
BENCHMARK(BM_NetworkForward)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
