#include <random>

#include <benchmark/benchmark.h>

#include "pda/adaptation.hpp"
#include "pda/datasets.hpp"
#include "pda/model.hpp"

namespace {

pda::Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  pda::Matrix m(r, c);
  for (auto& v : m.values()) v = n(rng);
  return m;
}

pda::EncoderArchitecture default_arch() {
  pda::EncoderArchitecture a;
  a.input_dim = 10;
  return a;
}

void BM_EncodeBatch(benchmark::State& state) {
  const pda::Encoder enc(default_arch(), 1);
  const auto x = random_matrix(static_cast<std::size_t>(state.range(0)), 10, 2);
  for (auto _ : state) benchmark::DoNotOptimize(pda::encode(enc, x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncodeBatch)->Arg(32)->Arg(400);

void BM_EncodeBackward(benchmark::State& state) {
  const pda::Encoder enc(default_arch(), 1);
  const auto x = random_matrix(32, 10, 2);
  const auto fwd = pda::encode(enc, x);
  const auto d = random_matrix(32, 32, 3);
  for (auto _ : state) benchmark::DoNotOptimize(pda::encoder_backward(enc, fwd, d));
}
BENCHMARK(BM_EncodeBackward);

void BM_LossNl(benchmark::State& state) {
  const std::size_t k = 8, b = 32;
  std::vector<pda::Matrix> w{random_matrix(32, k, 1), random_matrix(32, k, 2), random_matrix(32, k, 3)};
  const auto z = random_matrix(b, 32, 4);
  const pda::Matrix h(b, k);
  pda::Rng rng(5);
  std::vector<pda::ComplementSets> sets;
  for (std::size_t j = 0; j < b; ++j) sets.push_back(pda::gen_complement_sets(j % k, k, 3, 2, rng));
  for (auto _ : state) benchmark::DoNotOptimize(pda::loss_nl({&w, &z, &h, 4, sets}));
}
BENCHMARK(BM_LossNl);

void BM_GeometryLosses(benchmark::State& state) {
  const pda::PrototypeMatrix mu(random_matrix(32, 8, 1), true);
  const auto z = random_matrix(32, 32, 2);
  std::vector<int> y(32);
  for (std::size_t j = 0; j < y.size(); ++j) y[j] = static_cast<int>(j % 4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(pda::loss_inter(z, y, mu));
    benchmark::DoNotOptimize(pda::loss_intra(z, y, mu));
  }
}
BENCHMARK(BM_GeometryLosses);

void BM_ComplementSets(benchmark::State& state) {
  pda::Rng rng(1);
  std::size_t y = 0;
  for (auto _ : state) benchmark::DoNotOptimize(pda::gen_complement_sets(y++ % 8, 8, 3, 2, rng));
}
BENCHMARK(BM_ComplementSets);

void BM_AdaptEpoch(benchmark::State& state) {
  pda::SyntheticSpec spec;
  spec.seed = 1;
  const auto pair = pda::generate_synthetic(spec);
  pda::PrototypeMatrix mu(32, 8, 1);
  mu.freeze();
  pda::AdaptConfig cfg;
  cfg.complement_size = 2;
  cfg.warmup_epochs = 0;
  cfg.epochs = 1;
  for (auto _ : state) {
    pda::Encoder enc(default_arch(), 1);
    benchmark::DoNotOptimize(pda::adapt(enc, mu, pair.target, cfg));
  }
}
BENCHMARK(BM_AdaptEpoch)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
