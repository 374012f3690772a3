#include <benchmark/benchmark.h>

#include <random>

#include "disperse/encoder.hpp"
#include "disperse/eval.hpp"
#include "disperse/rng.hpp"
#include "disperse/synth.hpp"
#include "disperse/unlearn.hpp"

using namespace disperse;

namespace {

ad::Tensor random_tensor(std::size_t rows, std::size_t cols,
                         std::mt19937_64& rng, bool requires_grad = false) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = normal(rng);
  return ad::Tensor::from(std::move(v), rows, cols, requires_grad);
}

void BM_MatmulForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  auto a = random_tensor(n, n, rng, true);
  const auto b = random_tensor(n, n, rng, true);
  for (auto _ : state) {
    a.zero_grad();
    ad::backward(ad::sum(ad::matmul(a, b)));
    benchmark::DoNotOptimize(a.grad().data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(32)->Arg(64)->Arg(128);

void BM_CosfaceStep(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const auto enc = model::make_encoder(16, 32, 100, {128, 128}, 16.0, 0.4, 1);
  const auto x = random_tensor(32, 16, rng);
  std::uniform_int_distribution<std::size_t> dist(0, 99);
  std::vector<std::size_t> labels(32);
  for (auto& l : labels) l = dist(rng);
  auto params = const_cast<model::EncoderModel&>(enc).parameters();
  for (auto _ : state) {
    for (auto& p : params) p.zero_grad();
    ad::backward(model::cosface_loss(enc, x, labels));
    benchmark::DoNotOptimize(params[0].grad().data());
  }
}
BENCHMARK(BM_CosfaceStep);

void BM_DispersionStep(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const auto enc = model::make_encoder(16, 32, 100, {128, 128}, 16.0, 0.4, 1);
  const auto x = random_tensor(32, 16, rng);
  std::vector<std::size_t> labels;
  for (std::size_t id = 0; id < 8; ++id)
    for (int k = 0; k < 4; ++k) labels.push_back(id);
  auto params = const_cast<model::EncoderModel&>(enc).parameters();
  for (auto _ : state) {
    for (auto& p : params) p.zero_grad();
    ad::backward(
        unlearn::dispersion_loss(model::embed(enc, x), labels, 0.2));
    benchmark::DoNotOptimize(params[0].grad().data());
  }
}
BENCHMARK(BM_DispersionStep);

void BM_RetrievalEvaluate(benchmark::State& state) {
  const auto gallery_size = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> id_dist(0, 9);

  eval::EmbeddingSet queries;
  queries.embeddings = ad::l2_normalize_rows(random_tensor(100, 32, rng));
  for (std::size_t i = 0; i < 100; ++i) {
    queries.identities.push_back(i / 10);
    queries.sample_ids.push_back(i);
  }
  eval::EmbeddingSet pool;
  pool.embeddings =
      ad::l2_normalize_rows(random_tensor(gallery_size, 32, rng));
  for (std::size_t i = 0; i < gallery_size; ++i) {
    pool.identities.push_back(100 + id_dist(rng));
    pool.sample_ids.push_back(1000 + i);
  }
  const auto bench = eval::build_benchmark(
      queries, eval::SourceTag::kForgetTest, pool, eval::GalleryMode::kBase, 0,
      {});
  for (auto _ : state) {
    const auto m = eval::evaluate(bench);
    benchmark::DoNotOptimize(m.map);
  }
}
BENCHMARK(BM_RetrievalEvaluate)->Arg(1000)->Arg(4000);

void BM_PkSampling(benchmark::State& state) {
  const auto ds = data::generate(100, 20, 16, 1, 0.38);
  std::vector<std::size_t> pool(ds.samples.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  auto rng = make_rng(7, 0);
  for (auto _ : state) {
    auto batch = data::sample_batch(ds.samples, pool, 32, 8, rng);
    benchmark::DoNotOptimize(batch.data());
  }
}
BENCHMARK(BM_PkSampling);

}  // namespace

BENCHMARK_MAIN();
