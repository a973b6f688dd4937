#include <benchmark/benchmark.h>

#include "kvq/cache.hpp"
#include "kvq/key_quant.hpp"
#include "kvq/quant.hpp"
#include "kvq/rng.hpp"
#include "kvq/synth.hpp"
#include "kvq/value_quant.hpp"

namespace {

using namespace kvq;

KvSlab gaussian_slab(std::size_t tokens, std::size_t channels, uint64_t seed) {
    KvSlab slab(tokens, channels);
    Rng rng(seed);
    for (auto& v : slab.data) v = static_cast<float>(rng.gaussian());
    return slab;
}

void bm_uniform_quantize_2bit(benchmark::State& state) {
    const KvSlab slab = gaussian_slab(static_cast<std::size_t>(state.range(0)), 128, 1);
    const GroupGeometry geometry{GroupAxis::per_channel, 32};
    for (auto _ : state) {
        benchmark::DoNotOptimize(uniform_quantize(slab, 2, geometry));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(slab.data.size()));
}
BENCHMARK(bm_uniform_quantize_2bit)->Arg(256)->Arg(1024);

void bm_pack_codes_2bit(benchmark::State& state) {
    Rng rng(2);
    std::vector<uint32_t> codes(static_cast<std::size_t>(state.range(0)));
    for (auto& c : codes) c = static_cast<uint32_t>(rng.next_below(4));
    for (auto _ : state) {
        benchmark::DoNotOptimize(pack_codes(codes, 2));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(bm_pack_codes_2bit)->Arg(1 << 14)->Arg(1 << 18);

void bm_ternary_quantize(benchmark::State& state) {
    const KvSlab slab = gaussian_slab(static_cast<std::size_t>(state.range(0)), 128, 3);
    const TernaryParams params{0.7, GroupGeometry{GroupAxis::per_channel, 32}};
    for (auto _ : state) {
        benchmark::DoNotOptimize(ternary_quantize(slab, params));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(slab.data.size()));
}
BENCHMARK(bm_ternary_quantize)->Arg(256)->Arg(1024);

void bm_fft_sign_quantize(benchmark::State& state) {
    const KvSlab slab = gaussian_slab(static_cast<std::size_t>(state.range(0)), 128, 4);
    for (auto _ : state) {
        benchmark::DoNotOptimize(fft_sign_quantize_block(slab, 32));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(slab.data.size()));
}
BENCHMARK(bm_fft_sign_quantize)->Arg(256)->Arg(1024);

void bm_key_block_quantize(benchmark::State& state) {
    const KvSlab slab = gaussian_slab(static_cast<std::size_t>(state.range(0)), 128, 5);
    const KeyQuantParams params{0.5, ChannelMetric::range, 3.0, true, 32};
    for (auto _ : state) {
        benchmark::DoNotOptimize(quantize_key_block(slab, params));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(slab.data.size()));
}
BENCHMARK(bm_key_block_quantize)->Arg(256)->Arg(1024);

void bm_decode_step(benchmark::State& state, bool fastpath) {
    const std::size_t channels = 128;
    const KvSlab keys = gaussian_slab(1024, channels, 6);
    const KvSlab values = gaussian_slab(1024, channels, 7);
    const DecodeTrace trace = gen_trace(1, channels, 8);

    QuantConfig config;
    config.value_mode = ValueMode::ternary;
    config.ternary_fastpath = fastpath;
    const CacheState base = prefill(keys, values, config, SegmentSpec{0, 1024, 0});

    for (auto _ : state) {
        CacheState scratch = base;
        benchmark::DoNotOptimize(
            decode_step(scratch, trace.steps[0].q, trace.steps[0].k, trace.steps[0].v));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(keys.data.size()));
}
void bm_decode_step_fastpath(benchmark::State& state) { bm_decode_step(state, true); }
void bm_decode_step_dequant(benchmark::State& state) { bm_decode_step(state, false); }
BENCHMARK(bm_decode_step_fastpath);
BENCHMARK(bm_decode_step_dequant);

void bm_attention_reference(benchmark::State& state) {
    const std::size_t channels = 128;
    const KvSlab keys = gaussian_slab(static_cast<std::size_t>(state.range(0)), channels, 9);
    const KvSlab values = gaussian_slab(static_cast<std::size_t>(state.range(0)), channels, 10);
    const DecodeTrace trace = gen_trace(1, channels, 11);
    for (auto _ : state) {
        benchmark::DoNotOptimize(attention_reference(trace.steps[0].q, keys, values));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(keys.data.size()));
}
BENCHMARK(bm_attention_reference)->Arg(1024)->Arg(4096);

}  // namespace

BENCHMARK_MAIN();
