#include <cmath>

#include "doctest.h"
#include "kvq/report.hpp"
#include "test_util.hpp"

using namespace kvq;
using kvqtest::gaussian_slab;
using kvqtest::make_slab;
using kvqtest::raised_kind;

namespace {

constexpr std::uint64_t kFootnoteBytes = 719'323'136'000ull;

// Naive two-pass oracle: plain double accumulation, separate passes per axis.
ErrorReport naive_error(const KvSlab& a, const KvSlab& b) {
    ErrorReport r;
    double total = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        total += d * d;
        r.max_abs = std::max(r.max_abs, std::abs(d));
    }
    r.mse = total / static_cast<double>(a.data.size());
    r.per_channel_mse.assign(a.channels, 0.0);
    for (std::size_t c = 0; c < a.channels; ++c) {
        double acc = 0.0;
        for (std::size_t t = 0; t < a.tokens; ++t) {
            const double d = static_cast<double>(a.at(t, c)) - static_cast<double>(b.at(t, c));
            acc += d * d;
        }
        r.per_channel_mse[c] = acc / static_cast<double>(a.tokens);
    }
    r.per_token_mse.assign(a.tokens, 0.0);
    for (std::size_t t = 0; t < a.tokens; ++t) {
        double acc = 0.0;
        for (std::size_t c = 0; c < a.channels; ++c) {
            const double d = static_cast<double>(a.at(t, c)) - static_cast<double>(b.at(t, c));
            acc += d * d;
        }
        r.per_token_mse[t] = acc / static_cast<double>(a.channels);
    }
    return r;
}

}  // namespace

TEST_SUITE("report") {

TEST_CASE("identical slabs report zero error") {
    KvSlab slab = gaussian_slab(8, 4, 1);
    ErrorReport r = reconstruction_error(slab, slab);
    CHECK(r.mse == 0.0);
    CHECK(r.max_abs == 0.0);
    for (double v : r.per_channel_mse) CHECK(v == 0.0);
    for (double v : r.per_token_mse) CHECK(v == 0.0);
}

TEST_CASE("a constant offset shows up exactly") {
    KvSlab slab = gaussian_slab(16, 8, 2);
    KvSlab shifted = slab;
    for (auto& v : shifted.data) v += 0.1f;
    ErrorReport r = reconstruction_error(slab, shifted);
    CHECK(r.mse == doctest::Approx(0.01).epsilon(1e-4));
    CHECK(r.max_abs == doctest::Approx(0.1).epsilon(1e-4));
}

TEST_CASE("breakdowns match a naive two-pass oracle") {
    KvSlab a = gaussian_slab(33, 17, 3);
    KvSlab b = gaussian_slab(33, 17, 4);
    ErrorReport got = reconstruction_error(a, b);
    ErrorReport want = naive_error(a, b);
    CHECK(got.mse == doctest::Approx(want.mse).epsilon(1e-7));
    CHECK(got.max_abs == doctest::Approx(want.max_abs).epsilon(1e-12));
    for (std::size_t c = 0; c < a.channels; ++c)
        CHECK(got.per_channel_mse[c] == doctest::Approx(want.per_channel_mse[c]).epsilon(1e-7));
    for (std::size_t t = 0; t < a.tokens; ++t)
        CHECK(got.per_token_mse[t] == doctest::Approx(want.per_token_mse[t]).epsilon(1e-7));

    // the global figure is the element-weighted mean of the channel figures
    double mean = 0.0;
    for (double v : got.per_channel_mse) mean += v;
    CHECK(got.mse == doctest::Approx(mean / static_cast<double>(a.channels)).epsilon(1e-9));
}

TEST_CASE("shape mismatch is a geometry error") {
    CHECK(raised_kind([] {
              reconstruction_error(gaussian_slab(4, 4, 1), gaussian_slab(4, 5, 1));
          }) == ErrorKind::geometry);
}

TEST_CASE("the full-precision baseline reproduces the footnote figure") {
    QuantConfig off;
    off.enabled = false;
    MemoryReport r = memory_report(off, DeployShape{});
    CHECK(r.fp16_total_bytes == kFootnoteBytes);
    CHECK(r.total_bytes == kFootnoteBytes);
    CHECK(r.key.code_bits_per_element == 16.0);
}

TEST_CASE("key code bytes follow the mixed-precision ratio exactly") {
    QuantConfig config;
    config.key_k = 0.5;
    MemoryReport r = memory_report(config, DeployShape{});
    const std::uint64_t side_fp16 = r.fp16_total_bytes / 2;
    CHECK(r.key.code_bytes == side_fp16 * 3 / 32);  // 1.5 / 16
    CHECK(r.key.code_bits_per_element == doctest::Approx(1.5));
}

TEST_CASE("the key bit ledger is exact across the budget grid") {
    const double want[] = {1.25, 1.5, 1.75, 2.0};
    const double ks[] = {0.25, 0.5, 0.75, 1.0};
    for (int i = 0; i < 4; ++i) {
        QuantConfig config;
        config.key_k = ks[i];
        MemoryReport r = memory_report(config, DeployShape{});
        CHECK(r.key.code_bits_per_element == want[i]);
    }
}

TEST_CASE("value bits report both the packed and the information figure") {
    QuantConfig ternary;
    ternary.value_mode = ValueMode::ternary;
    MemoryReport r = memory_report(ternary, DeployShape{});
    CHECK(r.value.code_bits_per_element == doctest::Approx(1.6));
    CHECK(r.value.theory_bits_per_element == doctest::Approx(std::log2(3.0)));

    QuantConfig stp;
    stp.value_mode = ValueMode::ternary_stp;
    stp.p = 0.2;
    MemoryReport rs = memory_report(stp, DeployShape{});
    CHECK(rs.value.code_bits_per_element == doctest::Approx(0.2 * 2 + 0.8 * 1.6));
    CHECK(rs.value.theory_bits_per_element ==
          doctest::Approx(0.2 * 2 + 0.8 * std::log2(3.0)).epsilon(1e-6));
}

TEST_CASE("totals and residual bytes use exact integer arithmetic") {
    QuantConfig config;
    MemoryReport r = memory_report(config, DeployShape{});
    CHECK(r.total_bytes == r.key.code_bytes + r.key.metadata_bytes + r.value.code_bytes +
                               r.value.metadata_bytes);
    // FP32 residual window of R tokens on both sides
    DeployShape shape;
    CHECK(r.residual_bytes ==
          shape.kv_pairs * shape.layers * shape.head_dim * shape.batch * config.R * 4);
    CHECK(r.total_bytes < r.fp16_total_bytes);

    DeployShape bad;
    bad.layers = 0;
    CHECK(raised_kind([&] { memory_report(config, bad); }) == ErrorKind::config);
}

}  // TEST_SUITE
