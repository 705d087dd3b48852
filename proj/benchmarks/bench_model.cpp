#include <benchmark/benchmark.h>

#include "objtx/experiment.hpp"
#include "objtx/model.hpp"
#include "objtx/numerics/ops.hpp"
#include "objtx/numerics/rng.hpp"
#include "objtx/preprocess.hpp"
#include "objtx/synthetic.hpp"

using namespace objtx;

namespace {

num::Tensor<double> random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  num::Rng rng(seed);
  num::Tensor<double> t(num::Shape{r, c});
  for (auto& x : t.data()) x = num::normal(rng);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) {
    num::Graph<double> g;
    benchmark::DoNotOptimize(num::matmul(g.constant(a), g.constant(b)).value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

struct EncodeSetup {
  experiment::AblationConfig cfg = experiment::desk_ablation_config();
  track::Span span;
  EncodeSetup() {
    auto gc = cfg.gen;
    gc.n_movies = 1;
    gc.segments_per_movie = 1;
    auto gen = synth::generate_corpus(gc);
    span = prep::truncate_tokens(prep::cut_span(gen.corpus.videos[0], 0.0, 60.0), cfg.model.token_cap);
  }
};

void BM_EncodeForward(benchmark::State& state) {
  EncodeSetup s;
  model::ObjectTransformer<double> m(s.cfg.model, 1);
  num::Rng slot(0), drop(0);
  std::size_t tokens = 0;
  for (auto _ : state) {
    num::Graph<double> g;
    auto seq = model::embed_tokens(g, s.span, m, num::Mode::kEval, slot);
    tokens = seq.size();
    benchmark::DoNotOptimize(model::encode(seq, m, num::Mode::kEval, drop).value().data().data());
  }
  state.counters["tokens"] = static_cast<double>(tokens);
}
BENCHMARK(BM_EncodeForward)->Unit(benchmark::kMillisecond);

void BM_EncodeForwardBackward(benchmark::State& state) {
  EncodeSetup s;
  model::ObjectTransformer<double> m(s.cfg.model, 1);
  num::Rng slot(0), drop(0);
  for (auto _ : state) {
    num::Graph<double> g;
    auto seq = model::embed_tokens(g, s.span, m, num::Mode::kTrain, slot);
    auto loss = num::sum(model::head_mask(model::encode(seq, m, num::Mode::kTrain, drop), m));
    m.registry().zero_grad();
    g.backward(loss);
    benchmark::DoNotOptimize(m.registry()[0].grad.data().data());
  }
}
BENCHMARK(BM_EncodeForwardBackward)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
