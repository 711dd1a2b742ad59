// Wall-clock prefill comparison: full causal attention vs block attention
// with a final query block, on the toy model.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "blockattn/cache_sim.hpp"
#include "blockattn/model.hpp"

using namespace blockattn;

namespace {

constexpr int kQueryLen = 200;
constexpr int kBlocks = 8;

const Model& bench_model(int max_seq_len) {
  static ModelConfig cfg = [max_seq_len] {
    ModelConfig c;
    c.num_layers = 1;
    c.num_heads = 2;
    c.head_dim = 4;
    c.hidden_dim = 8;
    c.vocab_size = 32;
    c.max_seq_len = max_seq_len;
    c.seed = 7;
    return c;
  }();
  static Model model(cfg);
  return model;
}

std::vector<int> random_tokens(int n) {
  std::mt19937_64 rng(11);
  std::vector<int> t(n);
  for (auto& x : t) x = static_cast<int>(rng() % 32);
  return t;
}

BlockPartition equal_partition(int context_len, int blocks, int query_len) {
  BlockPartition p;
  for (int b = 0; b < blocks; ++b)
    p.ranges.emplace_back(b * context_len / blocks, (b + 1) * context_len / blocks);
  p.ranges.emplace_back(context_len, context_len + query_len);
  return p;
}

void BM_PrefillFull(benchmark::State& state) {
  const int context_len = static_cast<int>(state.range(0));
  const int n = context_len + kQueryLen;
  const Model& model = bench_model(1 << 16);
  const auto tokens = random_tokens(n);
  std::vector<int> pos(n);
  for (int i = 0; i < n; ++i) pos[i] = i;
  const auto mask = build_full_causal(n);
  for (auto _ : state) {
    auto out = forward(model, tokens, mask, pos);
    benchmark::DoNotOptimize(out.logits.a.data());
  }
  state.counters["pairs"] = static_cast<double>(mask.allowed_pair_count());
}

void BM_PrefillBlock(benchmark::State& state) {
  const int context_len = static_cast<int>(state.range(0));
  const int n = context_len + kQueryLen;
  const Model& model = bench_model(1 << 16);
  const auto tokens = random_tokens(n);
  std::vector<int> pos(n);
  for (int i = 0; i < n; ++i) pos[i] = i;
  const auto mask = build_block_mask(equal_partition(context_len, kBlocks, kQueryLen));
  for (auto _ : state) {
    auto out = forward(model, tokens, mask, pos);
    benchmark::DoNotOptimize(out.logits.a.data());
  }
  state.counters["pairs"] = static_cast<double>(mask.allowed_pair_count());
}

}  // namespace

BENCHMARK(BM_PrefillFull)->Arg(4096)->Arg(8192)->Arg(16384)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PrefillBlock)->Arg(4096)->Arg(8192)->Arg(16384)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
