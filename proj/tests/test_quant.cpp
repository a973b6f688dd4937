#include <cmath>
#include <limits>

#include "doctest.h"
#include "kvq/quant.hpp"
#include "kvq/rng.hpp"
#include "test_util.hpp"

using namespace kvq;
using kvqtest::gaussian_slab;
using kvqtest::make_slab;
using kvqtest::raised_kind;

namespace {

const GroupGeometry kCol4{GroupAxis::per_channel, 4};

}  // namespace

TEST_SUITE("quant") {

TEST_CASE("codes pack LSB-first") {
    CHECK(pack_codes({1, 0, 1, 1, 0, 0, 0, 0}, 1) == std::vector<uint8_t>{0x0d});
    CHECK(pack_codes({3, 2, 1, 0}, 2) == std::vector<uint8_t>{0x1b});
    // short tails stay in one byte with high bits zero
    CHECK(pack_codes({1}, 1) == std::vector<uint8_t>{0x01});
    CHECK(pack_codes({3, 1}, 2) == std::vector<uint8_t>{0x07});
}

TEST_CASE("pack and unpack are exact inverses") {
    Rng rng(7);
    for (int n_bits : {1, 2}) {
        for (std::size_t count : {1024u, 1021u, 1u}) {
            std::vector<uint32_t> codes(count);
            for (auto& c : codes)
                c = static_cast<uint32_t>(rng.next_below(1u << n_bits));
            CHECK(unpack_codes(pack_codes(codes, n_bits), n_bits, count) == codes);
        }
    }
}

TEST_CASE("code overflow is a range error") {
    CHECK(raised_kind([] { pack_codes({2}, 1); }) == ErrorKind::range);
    CHECK(raised_kind([] { pack_codes({4}, 2); }) == ErrorKind::range);
}

TEST_CASE("ternary digits pack five per base-3 byte") {
    CHECK(pack_ternary({1, 1, 1, 1, 1}) == std::vector<uint8_t>{242});
    CHECK(pack_ternary({0, 0, 0, 0, 0}) == std::vector<uint8_t>{121});
    CHECK(pack_ternary({-1, -1, -1, -1, -1}) == std::vector<uint8_t>{0});
    // a short final run leaves the higher powers at zero
    CHECK(pack_ternary({1}) == std::vector<uint8_t>{2});
    CHECK(pack_ternary({0, 1}) == std::vector<uint8_t>{1 + 2 * 3});

    Rng rng(13);
    std::vector<int8_t> digits(1237);
    for (auto& d : digits) d = static_cast<int8_t>(rng.next_below(3)) - 1;
    std::vector<uint8_t> packed = pack_ternary(digits);
    CHECK(packed.size() == (digits.size() + 4) / 5);
    for (uint8_t b : packed) CHECK(b <= 242);
    CHECK(unpack_ternary(packed, digits.size()) == digits);

    CHECK(raised_kind([] { pack_ternary({2}); }) == ErrorKind::range);
    CHECK(raised_kind([] { unpack_ternary({243}, 5); }) == ErrorKind::data);
}

TEST_CASE("an exact linear grid quantizes losslessly") {
    KvSlab window = make_slab(4, 1, {0, 1, 2, 3});
    PackedBlock block = uniform_quantize(window, 2, kCol4);
    REQUIRE(block.scales.size() == 1);
    CHECK(block.scales[0] == 1.0f);
    CHECK(block.zeros[0] == 0.0f);
    CHECK(unpack_codes(block.codes, 2, 4) == std::vector<uint32_t>{0, 1, 2, 3});
    CHECK(uniform_dequantize(block) == window);
}

TEST_CASE("a constant group degenerates to scale zero") {
    KvSlab window = make_slab(4, 1, {5, 5, 5, 5});
    PackedBlock block = uniform_quantize(window, 2, kCol4);
    CHECK(block.scales[0] == 0.0f);
    CHECK(block.zeros[0] == 5.0f);
    CHECK(unpack_codes(block.codes, 2, 4) == std::vector<uint32_t>{0, 0, 0, 0});
    CHECK(uniform_dequantize(block) == window);
}

TEST_CASE("hand-evaluated group matches the affine rule") {
    KvSlab window = make_slab(4, 1, {0.0f, 0.5f, 1.2f, 1.2f});
    PackedBlock block = uniform_quantize(window, 2, kCol4);
    CHECK(block.scales[0] == doctest::Approx(0.4).epsilon(1e-6));
    CHECK(block.zeros[0] == 0.0f);
    CHECK(unpack_codes(block.codes, 2, 4) == std::vector<uint32_t>{0, 1, 3, 3});

    KvSlab back = uniform_dequantize(block);
    CHECK(back.at(0, 0) == doctest::Approx(0.0));
    CHECK(back.at(1, 0) == doctest::Approx(0.4).epsilon(1e-6));
    CHECK(back.at(2, 0) == doctest::Approx(1.2).epsilon(1e-6));
    double max_err = 0.0;
    for (std::size_t t = 0; t < 4; ++t)
        max_err = std::max(max_err, std::abs(static_cast<double>(window.at(t, 0)) - back.at(t, 0)));
    CHECK(max_err <= doctest::Approx(0.1).epsilon(1e-5));
    CHECK(max_err <= 0.4 / 2 + 1e-6);
}

TEST_CASE("rounding at ties goes away from zero") {
    // s = 1, z = 0: 0.5 -> code 1, 2.5 -> code 3 (round-half-even would give 0 and 2)
    KvSlab window = make_slab(4, 1, {0.0f, 0.5f, 2.5f, 3.0f});
    PackedBlock block = uniform_quantize(window, 2, kCol4);
    CHECK(block.scales[0] == 1.0f);
    CHECK(unpack_codes(block.codes, 2, 4) == std::vector<uint32_t>{0, 1, 3, 3});
}

TEST_CASE("group extents must divide into the grouping axis") {
    KvSlab window = gaussian_slab(5, 1, 1);
    CHECK(raised_kind([&] { uniform_quantize(window, 2, kCol4); }) == ErrorKind::geometry);
    KvSlab wide = gaussian_slab(1, 5, 1);
    CHECK(raised_kind([&] {
              uniform_quantize(wide, 2, GroupGeometry{GroupAxis::per_token, 4});
          }) == ErrorKind::geometry);
    CHECK(raised_kind([] { GroupGeometry{GroupAxis::per_channel, 0}.validate(); }) ==
          ErrorKind::geometry);
    CHECK(raised_kind([&] { uniform_quantize(window, 3, kCol4); }) == ErrorKind::config);
}

TEST_CASE("per-channel groups run down columns, per-token groups across rows") {
    // column 0 is a grid, column 1 constant
    KvSlab window = make_slab(4, 2, {0, 5, 1, 5, 2, 5, 3, 5});
    PackedBlock cols = uniform_quantize(window, 2, kCol4);
    REQUIRE(cols.scales.size() == 2);
    CHECK(cols.scales[0] == 1.0f);
    CHECK(cols.zeros[0] == 0.0f);
    CHECK(cols.scales[1] == 0.0f);
    CHECK(cols.zeros[1] == 5.0f);
    CHECK(uniform_dequantize(cols) == window);

    // per-token: each row [x, 5] forms one group of two
    KvSlab rows = make_slab(2, 2, {0, 4, 8, 2});
    PackedBlock per_tok = uniform_quantize(rows, 2, GroupGeometry{GroupAxis::per_token, 2});
    REQUIRE(per_tok.scales.size() == 2);
    CHECK(per_tok.zeros[0] == 0.0f);
    CHECK(per_tok.zeros[1] == 2.0f);
    CHECK(per_tok.scales[0] == doctest::Approx(4.0 / 3));
    CHECK(per_tok.scales[1] == doctest::Approx(2.0));
    CHECK(uniform_dequantize(per_tok).at(1, 0) == doctest::Approx(8.0));
}

TEST_CASE("codes are invariant under a positive affine map of the window") {
    KvSlab window = gaussian_slab(32, 3, 5);
    KvSlab mapped = window;
    for (auto& v : mapped.data) v = 2.0f * v + 1.0f;

    for (int n_bits : {1, 2}) {
        PackedBlock a = uniform_quantize(window, n_bits, GroupGeometry{GroupAxis::per_channel, 32});
        PackedBlock b = uniform_quantize(mapped, n_bits, GroupGeometry{GroupAxis::per_channel, 32});
        CHECK(a.codes == b.codes);
        for (std::size_t g = 0; g < a.scales.size(); ++g) {
            CHECK(b.scales[g] == doctest::Approx(2.0 * a.scales[g]).epsilon(1e-6));
            CHECK(b.zeros[g] == doctest::Approx(2.0 * a.zeros[g] + 1.0).epsilon(1e-5));
        }
    }
}

TEST_CASE("every element obeys the half-step error bound") {
    Rng rng(101);
    const double eps = std::numeric_limits<float>::epsilon();
    for (int rep = 0; rep < 200; ++rep) {
        const int n_bits = 1 + (rep & 1);
        KvSlab window(32, 1);
        const double spread = rng.uniform(0.01, 20.0);
        for (auto& v : window.data) v = static_cast<float>(spread * rng.gaussian());
        PackedBlock block = uniform_quantize(window, n_bits, GroupGeometry{GroupAxis::per_channel, 32});
        KvSlab back = uniform_dequantize(block);
        const double s = block.scales[0];
        for (std::size_t t = 0; t < 32; ++t) {
            const double err = std::abs(static_cast<double>(window.at(t, 0)) - back.at(t, 0));
            CHECK(err <= s / 2 + 4 * eps * std::abs(s));
        }
    }
}

TEST_CASE("payload sizes follow the bit ledger") {
    KvSlab window = gaussian_slab(32, 2, 9);
    PackedBlock two = uniform_quantize(window, 2, GroupGeometry{GroupAxis::per_channel, 32});
    CHECK(two.code_bytes() == 2 * 64 / 8);  // 2 bits per element
    PackedBlock one = uniform_quantize(window, 1, GroupGeometry{GroupAxis::per_channel, 32});
    CHECK(one.code_bytes() == 64 / 8);  // 1 bit per element
    CHECK(two.group_count() == 2);
    CHECK(two.bytes_per_group() == 8);
}

TEST_CASE("group layout enumerates token-major storage correctly") {
    GroupLayout layout = GroupLayout::create(GroupGeometry{GroupAxis::per_channel, 2}, 4, 3);
    CHECK(layout.lines() == 3);
    CHECK(layout.groups_per_line() == 2);
    CHECK(layout.group_count() == 6);
    // group 0 = channel 0, tokens {0, 1}; group 1 = channel 0, tokens {2, 3}
    CHECK(layout.element_index(0, 1) == 1 * 3 + 0);
    CHECK(layout.element_index(1, 0) == 2 * 3 + 0);
    // group 2 = channel 1, tokens {0, 1}
    CHECK(layout.element_index(2, 0) == 0 * 3 + 1);

    GroupLayout rows = GroupLayout::create(GroupGeometry{GroupAxis::per_token, 3}, 4, 3);
    CHECK(rows.lines() == 4);
    CHECK(rows.element_index(2, 1) == 2 * 3 + 1);
}

}  // TEST_SUITE
