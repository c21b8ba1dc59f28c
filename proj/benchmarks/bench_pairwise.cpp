#include "asot/anchor_space.hpp"
#include "asot/batch.hpp"
#include "asot/datasets.hpp"
#include "asot/kmeans.hpp"

#include <benchmark/benchmark.h>

#include <map>
#include <random>

using namespace asot;

namespace {

// MUTAG-shaped corpus: 10-28 nodes per graph, GIN features of dimension 35.
struct Corpus {
  std::vector<DiscreteDistribution> raw;
  std::vector<DiscreteDistribution> mapped;
  CostMatrix anchor_cost;
};

const Corpus& corpus(Index graphs) {
  static std::map<Index, Corpus> cache;
  auto it = cache.find(graphs);
  if (it != cache.end()) return it->second;
  BlobConfig bc;
  bc.n_graphs = graphs;
  bc.min_nodes = 10;
  bc.max_nodes = 28;
  bc.n_clusters = 7;
  bc.dim = 7;
  bc.seed = 1;
  GraphDataset ds = gin_preprocess(synth_blobs(bc), 4);
  scale_features(ds, FeatureScaling::max_abs);
  Corpus c;
  c.raw = to_distributions(ds);
  Index pooled = 0;
  for (const auto& d : c.raw) pooled += d.size();
  Matrix pool(pooled, c.raw.front().samples().cols());
  Index row = 0;
  for (const auto& d : c.raw) {
    pool.middleRows(row, d.size()) = d.samples();
    row += d.size();
  }
  KmeansConfig kc;
  kc.k = 28;
  const AnchorSpace space = fit_kmeans(pool, kc).space;
  c.anchor_cost = anchor_cost(space);
  for (const auto& d : c.raw) {
    const MappedDistribution m = map_distribution(d, encode_onehot_rows(d.samples(), space));
    c.mapped.emplace_back(space.anchors(), m.mass());
  }
  return cache.emplace(graphs, std::move(c)).first->second;
}

void run_pairwise(benchmark::State& state, Strategy strategy, bool anchored) {
  const Corpus& c = corpus(state.range(0));
  PairwiseOptions opt;
  opt.strategy = strategy;
  if (anchored) opt.shared_cost = c.anchor_cost;
  const ProblemSet problems = ProblemSet::all_pairs(anchored ? c.mapped : c.raw);
  for (auto _ : state) {
    DistanceMatrix m = pairwise_matrix(problems, opt);
    benchmark::DoNotOptimize(m);
  }
  state.counters["pairs"] = static_cast<double>(problems.pairs().size());
  state.counters["pairs/s"] =
      benchmark::Counter(static_cast<double>(problems.pairs().size()), benchmark::Counter::kIsIterationInvariantRate);
}

void BM_ExactPerPair(benchmark::State& s) { run_pairwise(s, Strategy::exact, false); }
void BM_SinkhornOneByOne(benchmark::State& s) { run_pairwise(s, Strategy::sinkhorn_one_by_one, false); }
void BM_BdsSinkhorn(benchmark::State& s) { run_pairwise(s, Strategy::bds_sinkhorn, false); }
void BM_AsotExact(benchmark::State& s) { run_pairwise(s, Strategy::exact, true); }
void BM_EasotBatched(benchmark::State& s) { run_pairwise(s, Strategy::easot_batched, true); }

void BM_SolveExact(benchmark::State& state) {
  const Index n = state.range(0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Matrix x = Matrix::NullaryExpr(n, 5, [&] { return u(rng); });
  const Matrix y = Matrix::NullaryExpr(n, 5, [&] { return u(rng); });
  const CostMatrix c = euclidean_cost(x, y);
  const Vector a = Vector::Constant(n, 1.0 / static_cast<double>(n));
  for (auto _ : state) benchmark::DoNotOptimize(solve_exact(a, a, c).cost);
}

void BM_Sinkhorn(benchmark::State& state) {
  const Index n = state.range(0);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const CostMatrix c(Matrix::NullaryExpr(n, n, [&] { return u(rng); }));
  const Vector a = Vector::Constant(n, 1.0 / static_cast<double>(n));
  SinkhornConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(sinkhorn(a, a, c, cfg).cost);
}

}  // namespace

BENCHMARK(BM_ExactPerPair)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SinkhornOneByOne)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BdsSinkhorn)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AsotExact)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EasotBatched)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SolveExact)->RangeMultiplier(2)->Range(8, 64)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Sinkhorn)->RangeMultiplier(2)->Range(8, 64)->Unit(benchmark::kMicrosecond);
BENCHMARK_MAIN();
