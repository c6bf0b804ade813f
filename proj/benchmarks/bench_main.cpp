#include <benchmark/benchmark.h>

#include "layerdag/dag.hpp"
#include "layerdag/diffusion.hpp"
#include "layerdag/lp.hpp"
#include "layerdag/model.hpp"
#include "layerdag/nn.hpp"

using namespace layerdag;

namespace {

Dag make_random_dag(int n, uint64_t seed) {
  Rng rng(seed);
  Dag d;
  d.num_nodes = n;
  d.attrs.assign(n, {0});
  for (int v = 1; v < n; ++v) {
    int preds = 1 + static_cast<int>(rng.below(4));
    for (int i = 0; i < preds; ++i) {
      int u = static_cast<int>(rng.below(v));
      d.edges.emplace_back(u, v);
    }
  }
  std::sort(d.edges.begin(), d.edges.end());
  d.edges.erase(std::unique(d.edges.begin(), d.edges.end()), d.edges.end());
  return d;
}

void bm_layer_partition(benchmark::State& state) {
  Dag d = make_random_dag(static_cast<int>(state.range(0)), 7);
  for (auto _ : state) benchmark::DoNotOptimize(layer_partition(d));
}
BENCHMARK(bm_layer_partition)->Arg(50)->Arg(200)->Arg(400);

void bm_transition_matrices(benchmark::State& state) {
  std::vector<double> m(static_cast<size_t>(state.range(0)),
                        1.0 / state.range(0));
  NoiseModel nm(64, m);
  for (auto _ : state)
    for (int t = 1; t <= 64; ++t) {
      benchmark::DoNotOptimize(step_transition(t, nm));
      benchmark::DoNotOptimize(composed_transition(t - 1, nm));
    }
}
BENCHMARK(bm_transition_matrices)->Arg(2)->Arg(8);

void bm_bimpnn_forward(benchmark::State& state) {
  int n = static_cast<int>(state.range(0)), d = 128;
  Rng rng(3);
  ParamStore ps;
  ps.add("wf", xavier_uniform(d, d, rng));
  ps.add("wr", xavier_uniform(d, d, rng));
  ps.add("ws", xavier_uniform(d, d, rng));
  Tensor h = xavier_uniform(n, d, rng);
  Tensor adj({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) adj.at(i, j) = rng.bernoulli(0.1);
  for (auto _ : state) {
    Tape t;
    ParamVars pv = ParamVars::bind(t, ps);
    Tape::VarId out = bimpnn_linear(t, t.input(adj, false), t.input(h, false),
                                    pv["wf"], pv["wr"], pv["ws"]);
    benchmark::DoNotOptimize(t.value(out));
  }
}
BENCHMARK(bm_bimpnn_forward)->Arg(25)->Arg(100)->Arg(400);

void bm_sampling_layer(benchmark::State& state) {
  ArchConfig arch;
  arch.hidden_dim = 64;
  arch.mpnn_layers = 2;
  arch.attn_blocks = 1;
  ModelParams p = init_model(arch, {2}, false, 5, 11);
  p.l_max = 5;
  p.max_nodes = 25;
  p.d_in = 2.0;
  p.t_train = 8;
  SampleConfig cfg;
  cfg.count = 1;
  cfg.schedule = {4, 4, 5};
  cfg.threads = 1;
  uint64_t seed = 0;
  for (auto _ : state) {
    cfg.seed = seed++;
    benchmark::DoNotOptimize(sample(p, cfg));
  }
}
BENCHMARK(bm_sampling_layer)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
