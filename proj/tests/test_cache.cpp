#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "kvq/cache.hpp"
#include "kvq/rng.hpp"
#include "kvq/synth.hpp"
#include "test_util.hpp"

using namespace kvq;
using kvqtest::gaussian_slab;
using kvqtest::make_slab;
using kvqtest::raised_kind;
using kvqtest::rel_l2;

namespace {

// Independent attention oracle: long double accumulation, two explicit passes.
std::vector<double> attention_oracle(const std::vector<float>& q, const KvSlab& keys,
                                     const KvSlab& values) {
    const std::size_t n = keys.tokens;
    const long double inv_sqrt_d = 1.0L / std::sqrt(static_cast<long double>(keys.channels));
    std::vector<long double> logits(n, 0.0L);
    for (std::size_t t = 0; t < n; ++t) {
        long double acc = 0.0L;
        for (std::size_t c = 0; c < keys.channels; ++c)
            acc += static_cast<long double>(q[c]) * static_cast<long double>(keys.at(t, c));
        logits[t] = acc * inv_sqrt_d;
    }
    long double hi = logits[0];
    for (long double l : logits) hi = std::max(hi, l);
    long double z = 0.0L;
    for (long double& l : logits) {
        l = std::exp(l - hi);
        z += l;
    }
    std::vector<double> out(values.channels, 0.0);
    for (std::size_t c = 0; c < values.channels; ++c) {
        long double acc = 0.0L;
        for (std::size_t t = 0; t < n; ++t)
            acc += logits[t] / z * static_cast<long double>(values.at(t, c));
        out[c] = static_cast<double>(acc);
    }
    return out;
}

QuantConfig ternary_config() {
    QuantConfig config;
    config.value_mode = ValueMode::ternary;
    return config;
}

struct Workload {
    KvSlab keys;
    KvSlab values;
    DecodeTrace trace;
    SegmentSpec segments;
};

Workload make_run(std::size_t tokens, std::size_t channels, std::size_t steps, uint64_t seed) {
    Workload w;
    w.keys = gaussian_slab(tokens, channels, mix_seed(seed, 0));
    w.values = gaussian_slab(tokens, channels, mix_seed(seed, 1));
    w.trace = gen_trace(steps, channels, mix_seed(seed, 2));
    w.segments = SegmentSpec{0, tokens, 0};
    return w;
}

}  // namespace

TEST_SUITE("cache") {

TEST_CASE("config validation rejects out-of-range settings") {
    QuantConfig config;
    config.validate();

    auto expect_config_error = [](auto&& mutate) {
        QuantConfig bad;
        mutate(bad);
        CHECK(raised_kind([&] { bad.validate(); }) == ErrorKind::config);
    };
    expect_config_error([](QuantConfig& c) { c.key_k = 1.5; });
    expect_config_error([](QuantConfig& c) { c.key_k = -0.1; });
    expect_config_error([](QuantConfig& c) { c.p = 2.0; });
    expect_config_error([](QuantConfig& c) { c.G = 0; });
    expect_config_error([](QuantConfig& c) { c.R = 16; });  // R < G
    expect_config_error([](QuantConfig& c) { c.gamma = 0.0; });
    expect_config_error([](QuantConfig& c) { c.key_M = 0.0; });
    expect_config_error([](QuantConfig& c) { c.p = 0.2; });  // needs ternary_stp
    expect_config_error([](QuantConfig& c) { c.value_mode = ValueMode::uniform1; });
    expect_config_error([](QuantConfig& c) {
        c.key_requant = KeyRequant::frozen_incremental;
        c.R = 100;  // not a multiple of G
    });

    QuantConfig stp;
    stp.value_mode = ValueMode::ternary_stp;
    stp.p = 0.2;
    stp.validate();

    QuantConfig experimental;
    experimental.value_mode = ValueMode::uniform1;
    experimental.allow_experimental = true;
    experimental.validate();
}

TEST_CASE("fft gating follows the anomalous-channel budget") {
    QuantConfig config;
    config.fft_mode = FftMode::automatic;
    config.key_k = 0.5;
    CHECK(config.fft_enabled());
    config.key_k = 0.75;
    CHECK(config.fft_enabled());
    config.key_k = 0.25;
    CHECK(!config.fft_enabled());
    config.fft_mode = FftMode::on;
    CHECK(config.fft_enabled());
    config.fft_mode = FftMode::off;
    config.key_k = 0.5;
    CHECK(!config.fft_enabled());
}

TEST_CASE("prefill splits the prompt at the last full group") {
    Workload w = make_run(70, 32, 0, 1);
    CacheState state = prefill(w.keys, w.values, ternary_config(), w.segments);
    CHECK(state.quantized_key_tokens() == 64);
    CHECK(state.quantized_value_tokens() == 64);
    CHECK(state.key_residual.tokens == 6);
    CHECK(state.value_residual.tokens == 6);
    CHECK(state.tokens_seen == 70);
    CHECK(state.key_view.tokens == 64);
    CHECK(state.value_view.tokens == 64);

    Workload exact = make_run(32, 32, 0, 2);
    CacheState boundary = prefill(exact.keys, exact.values, ternary_config(), exact.segments);
    CHECK(boundary.quantized_key_tokens() == 32);
    CHECK(boundary.key_residual.tokens == 0);

    Workload tiny = make_run(10, 32, 0, 3);
    CacheState small = prefill(tiny.keys, tiny.values, ternary_config(), tiny.segments);
    CHECK(small.quantized_key_tokens() == 0);
    CHECK(small.key_blocks.empty());
    CHECK(small.key_residual.tokens == 10);
}

TEST_CASE("prefill validates shapes, segments and embeddings") {
    Workload w = make_run(32, 16, 0, 4);
    KvSlab short_values = w.values.slice_tokens(0, 16);
    CHECK(raised_kind([&] { prefill(w.keys, short_values, ternary_config(), w.segments); }) ==
          ErrorKind::geometry);

    SegmentSpec bad{0, 30, 0};
    CHECK(raised_kind([&] { prefill(w.keys, w.values, ternary_config(), bad); }) ==
          ErrorKind::geometry);

    QuantConfig stp;
    stp.value_mode = ValueMode::ternary_stp;
    stp.p = 0.2;
    CHECK(raised_kind([&] { prefill(w.keys, w.values, stp, w.segments); }) == ErrorKind::config);
}

TEST_CASE("a single cached token receives the whole softmax weight") {
    KvSlab one_k = make_slab(1, 4, {0.3f, -0.2f, 0.9f, 0.1f});
    KvSlab one_v = make_slab(1, 4, {1.0f, 2.0f, 3.0f, 4.0f});
    std::vector<float> q{0.5f, 0.5f, 0.5f, 0.5f};
    std::vector<double> out = attention_reference(q, one_k, one_v);
    for (std::size_t c = 0; c < 4; ++c) CHECK(out[c] == doctest::Approx(one_v.at(0, c)));

    // same through the engine: the appended decode token is the only one cached
    CacheState state = prefill(KvSlab(0, 4), KvSlab(0, 4), ternary_config(), SegmentSpec{});
    std::vector<double> stepped =
        decode_step(state, q, {0.3f, -0.2f, 0.9f, 0.1f}, {1.0f, 2.0f, 3.0f, 4.0f});
    for (std::size_t c = 0; c < 4; ++c) CHECK(stepped[c] == doctest::Approx(1.0 + c));
}

TEST_CASE("a zero query averages the values") {
    KvSlab keys = gaussian_slab(8, 4, 5);
    KvSlab values = gaussian_slab(8, 4, 6);
    std::vector<double> out = attention_reference(std::vector<float>(4, 0.0f), keys, values);
    for (std::size_t c = 0; c < 4; ++c) {
        double mean = 0.0;
        for (std::size_t t = 0; t < 8; ++t) mean += values.at(t, c);
        CHECK(out[c] == doctest::Approx(mean / 8.0));
    }
}

TEST_CASE("reference attention matches an independent oracle") {
    Rng rng(7);
    KvSlab keys = gaussian_slab(64, 16, 8);
    KvSlab values = gaussian_slab(64, 16, 9);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<float> q(16);
        for (auto& x : q) x = static_cast<float>(rng.gaussian());
        CHECK(rel_l2(attention_reference(q, keys, values), attention_oracle(q, keys, values)) <=
              1e-6);
    }
}

TEST_CASE("identity mode reproduces the reference at every step") {
    Workload w = make_run(64, 16, 32, 10);
    QuantConfig off;
    off.enabled = false;
    CacheState state = prefill(w.keys, w.values, off, w.segments);
    CHECK(state.key_residual.tokens == 64);

    KvSlab keys = w.keys;
    KvSlab values = w.values;
    for (const DecodeStep& step : w.trace.steps) {
        std::vector<double> got = decode_step(state, step.q, step.k, step.v);
        KvSlab one(1, 16);
        std::copy(step.k.begin(), step.k.end(), one.data.begin());
        keys.append_tokens(one);
        std::copy(step.v.begin(), step.v.end(), one.data.begin());
        values.append_tokens(one);
        CHECK(rel_l2(got, attention_reference(step.q, keys, values)) <= 1e-6);
    }
    CHECK(state.flush_count == 0);
    CHECK(state.key_residual.tokens == 64 + 32);
}

TEST_CASE("decode flushes exactly when the residual reaches R") {
    Workload w = make_run(70, 32, 256, 11);
    QuantConfig config = ternary_config();
    CacheState state = prefill(w.keys, w.values, config, w.segments);
    REQUIRE(state.value_residual.tokens == 6);

    for (std::size_t i = 0; i < 121; ++i) {
        CHECK(state.value_residual.tokens < config.R);
        decode_step(state, w.trace.steps[i].q, w.trace.steps[i].k, w.trace.steps[i].v);
    }
    CHECK(state.flush_count == 0);
    CHECK(state.value_residual.tokens == 127);

    decode_step(state, w.trace.steps[121].q, w.trace.steps[121].k, w.trace.steps[121].v);
    CHECK(state.flush_count == 1);
    CHECK(state.value_residual.tokens == 0);
    CHECK(state.key_residual.tokens == 0);
    CHECK(state.quantized_value_tokens() == 192);
    CHECK(state.quantized_key_tokens() == 192);
    CHECK(state.tokens_seen == 192);

    // the cycle repeats after another R steps
    for (std::size_t i = 122; i < 122 + 128; ++i)
        decode_step(state, w.trace.steps[i].q, w.trace.steps[i].k, w.trace.steps[i].v);
    CHECK(state.flush_count == 2);
    CHECK(state.quantized_value_tokens() == 320);
}

TEST_CASE("an R that is not a group multiple retains the remainder at flush") {
    Workload w = make_run(32, 32, 100, 12);
    QuantConfig config = ternary_config();
    config.R = 100;
    CacheState state = prefill(w.keys, w.values, config, w.segments);
    for (std::size_t i = 0; i < 100; ++i)
        decode_step(state, w.trace.steps[i].q, w.trace.steps[i].k, w.trace.steps[i].v);
    CHECK(state.flush_count == 1);
    // 100 residual tokens flush as three groups of 32; 4 stay behind
    CHECK(state.quantized_value_tokens() == 32 + 96);
    CHECK(state.value_residual.tokens == 4);
}

TEST_CASE("a forced flush below one group is a counted no-op") {
    Workload w = make_run(70, 32, 0, 13);
    CacheState state = prefill(w.keys, w.values, ternary_config(), w.segments);
    flush_residual(state);
    CHECK(state.flush_count == 1);
    CHECK(state.value_residual.tokens == 6);
    CHECK(state.quantized_value_tokens() == 64);
}

TEST_CASE("frozen mode appends blocks under the prefill partition") {
    Workload w = make_run(64, 32, 128, 14);
    QuantConfig config = ternary_config();
    config.key_requant = KeyRequant::frozen_incremental;
    CacheState state = prefill(w.keys, w.values, config, w.segments);
    REQUIRE(state.frozen_partition.has_value());
    ChannelPartition prefill_partition = *state.frozen_partition;
    CHECK(state.key_blocks.size() == 1);

    for (std::size_t i = 0; i < 128; ++i)
        decode_step(state, w.trace.steps[i].q, w.trace.steps[i].k, w.trace.steps[i].v);
    CHECK(state.flush_count == 1);
    CHECK(state.key_blocks.size() == 2);
    CHECK(state.key_blocks[1].partition == prefill_partition);
    CHECK(state.key_blocks[1].token_begin == 64);
    // R = 128, G = 32: the flushed window carries four token groups per channel
    CHECK(state.key_blocks[1].tokens == 128);
}

TEST_CASE("faithful mode rebuilds one block spanning the whole history") {
    Workload w = make_run(64, 32, 128, 15);
    QuantConfig config = ternary_config();
    config.key_requant = KeyRequant::faithful_full;
    CacheState state = prefill(w.keys, w.values, config, w.segments);
    for (std::size_t i = 0; i < 128; ++i)
        decode_step(state, w.trace.steps[i].q, w.trace.steps[i].k, w.trace.steps[i].v);
    CHECK(state.flush_count == 1);
    CHECK(state.key_blocks.size() == 1);
    CHECK(state.key_blocks[0].tokens == 192);
    CHECK(state.value_blocks.size() == 2);  // value spans always append
}

TEST_CASE("decode output stays close to the reference under quantization") {
    Workload w = make_run(96, 32, 24, 16);
    DivergenceReport report =
        run_divergence(w.keys, w.values, w.trace, ternary_config(), w.segments);
    REQUIRE(report.per_step.size() == 24);
    CHECK(report.mean > 0.0);
    CHECK(report.mean < 1.0);
    CHECK(report.max >= report.mean);
    double mean = 0.0;
    for (double v : report.per_step) mean += v;
    CHECK(report.mean == doctest::Approx(mean / 24.0));

    QuantConfig off;
    off.enabled = false;
    DivergenceReport clean = run_divergence(w.keys, w.values, w.trace, off, w.segments);
    CHECK(clean.max <= 1e-6);
}

TEST_CASE("ternary fast path tracks the dequantize-multiply path") {
    Workload w = make_run(96, 32, 40, 17);
    QuantConfig fast = ternary_config();
    fast.ternary_fastpath = true;
    QuantConfig slow = ternary_config();
    slow.ternary_fastpath = false;

    CacheState a = prefill(w.keys, w.values, fast, w.segments);
    CacheState b = prefill(w.keys, w.values, slow, w.segments);
    for (const DecodeStep& step : w.trace.steps) {
        std::vector<double> fa = decode_step(a, step.q, step.k, step.v);
        std::vector<double> fb = decode_step(b, step.q, step.k, step.v);
        CHECK(rel_l2(fa, fb) <= 1e-4);
    }
}

TEST_CASE("fast path agreement holds with protected tokens in the block") {
    Workload w = make_run(96, 32, 8, 18);
    QuantConfig fast;
    fast.value_mode = ValueMode::ternary_stp;
    fast.p = 0.2;
    QuantConfig slow = fast;
    slow.ternary_fastpath = false;
    KvSlab vision = gaussian_slab(96, 32, mix_seed(18, 3));
    KvSlab text = gaussian_slab(8, 32, mix_seed(18, 4));

    CacheState a = prefill(w.keys, w.values, fast, w.segments, &vision, &text);
    CacheState b = prefill(w.keys, w.values, slow, w.segments, &vision, &text);
    CHECK(!a.protected_set.indices.empty());
    for (const DecodeStep& step : w.trace.steps)
        CHECK(rel_l2(decode_step(a, step.q, step.k, step.v),
                     decode_step(b, step.q, step.k, step.v)) <= 1e-4);
}

TEST_CASE("uniform value modes quantize whole windows") {
    Workload w = make_run(64, 32, 0, 19);

    QuantConfig uniform2 = ternary_config();
    uniform2.value_mode = ValueMode::uniform2;
    CacheState s2 = prefill(w.keys, w.values, uniform2, w.segments);
    REQUIRE(s2.value_blocks.size() == 1);
    CHECK(s2.value_blocks[0].is_uniform);
    CHECK(s2.value_blocks[0].uniform.n_bits == 2);
    CHECK(s2.value_blocks[0].uniform.geometry.axis == GroupAxis::per_channel);

    QuantConfig per_token = ternary_config();
    per_token.value_mode = ValueMode::uniform2_per_token;
    CacheState st = prefill(w.keys, w.values, per_token, w.segments);
    CHECK(st.value_blocks[0].uniform.geometry.axis == GroupAxis::per_token);

    QuantConfig one_bit = ternary_config();
    one_bit.value_mode = ValueMode::uniform1;
    one_bit.allow_experimental = true;
    CacheState s1 = prefill(w.keys, w.values, one_bit, w.segments);
    CHECK(s1.value_blocks[0].uniform.n_bits == 1);

    // the experimental 1-bit mode loses to 2-bit on reconstruction
    KvSlab v2 = s2.dequantized_values();
    KvSlab v1 = s1.dequantized_values();
    double mse2 = 0.0;
    double mse1 = 0.0;
    for (std::size_t i = 0; i < v2.data.size(); ++i) {
        const double d2 = v2.data[i] - w.values.data[i];
        const double d1 = v1.data[i] - w.values.data[i];
        mse2 += d2 * d2;
        mse1 += d1 * d1;
    }
    CHECK(mse1 > mse2);
}

TEST_CASE("decode rejects mismatched widths and non-finite inputs") {
    Workload w = make_run(32, 16, 1, 20);
    CacheState state = prefill(w.keys, w.values, ternary_config(), w.segments);
    std::vector<float> narrow(8, 0.0f);
    std::vector<float> wide(16, 0.0f);
    CHECK(raised_kind([&] { decode_step(state, narrow, wide, wide); }) == ErrorKind::geometry);
    std::vector<float> poisoned = wide;
    poisoned[3] = std::numeric_limits<float>::infinity();
    CHECK(raised_kind([&] { decode_step(state, wide, poisoned, wide); }) == ErrorKind::data);
}

TEST_CASE("mode names round trip through their parsers") {
    for (auto mode : {FftMode::automatic, FftMode::on, FftMode::off})
        CHECK(fft_mode_from_string(to_string(mode)) == mode);
    for (auto mode : {ValueMode::uniform2, ValueMode::ternary, ValueMode::ternary_stp,
                      ValueMode::uniform2_per_token, ValueMode::uniform1})
        CHECK(value_mode_from_string(to_string(mode)) == mode);
    for (auto mode : {KeyRequant::faithful_full, KeyRequant::frozen_incremental})
        CHECK(key_requant_from_string(to_string(mode)) == mode);
    CHECK(raised_kind([] { fft_mode_from_string("maybe"); }) == ErrorKind::config);
    CHECK(raised_kind([] { value_mode_from_string("binary"); }) == ErrorKind::config);
    CHECK(raised_kind([] { key_requant_from_string("sometimes"); }) == ErrorKind::config);
}

}  // TEST_SUITE
