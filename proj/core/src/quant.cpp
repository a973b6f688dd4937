#include "kvq/quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace kvq {

GroupAxis group_axis_from_string(const std::string& name) {
    if (name == "per_channel") return GroupAxis::per_channel;
    if (name == "per_token") return GroupAxis::per_token;
    raise(ErrorKind::config, "unknown group axis: " + name);
}

const char* to_string(GroupAxis axis) {
    switch (axis) {
        case GroupAxis::per_channel: return "per_channel";
        case GroupAxis::per_token: return "per_token";
    }
    return "?";
}

std::vector<uint8_t> pack_codes(const std::vector<uint32_t>& codes, int n_bits) {
    if (n_bits < 1 || n_bits > 8) raise(ErrorKind::range, "n_bits must be in [1, 8]");
    const uint32_t limit = (1u << n_bits) - 1u;
    std::vector<uint8_t> bytes((codes.size() * static_cast<std::size_t>(n_bits) + 7) / 8, 0);
    std::size_t bit = 0;
    for (uint32_t code : codes) {
        if (code > limit) raise(ErrorKind::range, "code exceeds n-bit range");
        for (int b = 0; b < n_bits; ++b, ++bit) {
            if ((code >> b) & 1u) bytes[bit / 8] |= static_cast<uint8_t>(1u << (bit % 8));
        }
    }
    return bytes;
}

std::vector<uint32_t> unpack_codes(const std::vector<uint8_t>& bytes, int n_bits,
                                   std::size_t count) {
    if (n_bits < 1 || n_bits > 8) raise(ErrorKind::range, "n_bits must be in [1, 8]");
    if (bytes.size() * 8 < count * static_cast<std::size_t>(n_bits))
        raise(ErrorKind::length, "packed stream shorter than requested code count");
    std::vector<uint32_t> codes(count, 0);
    std::size_t bit = 0;
    for (std::size_t i = 0; i < count; ++i) {
        uint32_t code = 0;
        for (int b = 0; b < n_bits; ++b, ++bit) {
            if ((bytes[bit / 8] >> (bit % 8)) & 1u) code |= 1u << b;
        }
        codes[i] = code;
    }
    return codes;
}

std::vector<uint8_t> pack_ternary(const std::vector<int8_t>& digits) {
    std::vector<uint8_t> bytes((digits.size() + 4) / 5, 0);
    for (std::size_t i = 0; i < digits.size(); ++i) {
        int8_t d = digits[i];
        if (d < -1 || d > 1) raise(ErrorKind::range, "ternary digit must be in {-1, 0, +1}");
        uint32_t trit = static_cast<uint32_t>(d + 1);
        static const uint32_t pow3[5] = {1, 3, 9, 27, 81};
        bytes[i / 5] = static_cast<uint8_t>(bytes[i / 5] + trit * pow3[i % 5]);
    }
    return bytes;
}

std::vector<int8_t> unpack_ternary(const std::vector<uint8_t>& bytes, std::size_t count) {
    if (bytes.size() * 5 < count)
        raise(ErrorKind::length, "packed stream shorter than requested digit count");
    std::vector<int8_t> digits(count, 0);
    for (std::size_t byte_i = 0; byte_i * 5 < count; ++byte_i) {
        uint32_t v = bytes[byte_i];
        if (v > 242) raise(ErrorKind::data, "byte exceeds maximum base-3 value 242");
        std::size_t run = std::min<std::size_t>(5, count - byte_i * 5);
        for (std::size_t j = 0; j < run; ++j) {
            digits[byte_i * 5 + j] = static_cast<int8_t>(static_cast<int>(v % 3) - 1);
            v /= 3;
        }
    }
    return digits;
}

GroupLayout GroupLayout::create(const GroupGeometry& geometry, std::size_t tokens,
                                std::size_t channels) {
    geometry.validate();
    GroupLayout layout{geometry, tokens, channels};
    if (layout.line_len() % geometry.group_size != 0)
        raise(ErrorKind::geometry,
              "extent along grouping axis (" + std::to_string(layout.line_len()) +
                  ") is not a multiple of group size " + std::to_string(geometry.group_size));
    return layout;
}

std::size_t PackedBlock::group_count() const {
    return GroupLayout{geometry, tokens, channels}.group_count();
}

std::size_t PackedBlock::groups_per_line() const {
    return GroupLayout{geometry, tokens, channels}.groups_per_line();
}

std::size_t TernaryBlock::group_count() const {
    return GroupLayout{geometry, tokens, channels}.group_count();
}

PackedBlock uniform_quantize(const KvSlab& window, int n_bits, const GroupGeometry& geometry) {
    window.validate();
    if (n_bits != 1 && n_bits != 2) raise(ErrorKind::config, "uniform quantizer supports 1 or 2 bits");
    GroupLayout walk = GroupLayout::create(geometry, window.tokens, window.channels);

    PackedBlock block;
    block.n_bits = n_bits;
    block.geometry = geometry;
    block.tokens = window.tokens;
    block.channels = window.channels;

    const std::size_t groups = walk.group_count();
    const std::size_t g_size = geometry.group_size;
    const double levels = static_cast<double>((1u << n_bits) - 1u);

    block.scales.resize(groups);
    block.zeros.resize(groups);
    block.codes.resize(groups * block.bytes_per_group(), 0);

    std::vector<uint32_t> group_codes(g_size);
    for (std::size_t g = 0; g < groups; ++g) {
        float lo = std::numeric_limits<float>::infinity();
        float hi = -std::numeric_limits<float>::infinity();
        for (std::size_t e = 0; e < g_size; ++e) {
            float v = window.data[walk.element_index(g, e)];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const double scale = (static_cast<double>(hi) - static_cast<double>(lo)) / levels;
        block.scales[g] = static_cast<float>(scale);
        block.zeros[g] = lo;
        if (scale == 0.0) {
            std::fill(group_codes.begin(), group_codes.end(), 0u);
        } else {
            for (std::size_t e = 0; e < g_size; ++e) {
                double x = window.data[walk.element_index(g, e)];
                double q = std::round((x - static_cast<double>(lo)) / scale);
                q = std::clamp(q, 0.0, levels);
                group_codes[e] = static_cast<uint32_t>(q);
            }
        }
        std::vector<uint8_t> packed = pack_codes(group_codes, n_bits);
        std::copy(packed.begin(), packed.end(),
                  block.codes.begin() + static_cast<std::ptrdiff_t>(g * block.bytes_per_group()));
    }
    return block;
}

KvSlab uniform_dequantize(const PackedBlock& block) {
    GroupLayout walk = GroupLayout::create(block.geometry, block.tokens, block.channels);
    const std::size_t groups = walk.group_count();
    if (block.scales.size() != groups || block.zeros.size() != groups)
        raise(ErrorKind::length, "scale/zero count does not match group count");
    if (block.codes.size() != groups * block.bytes_per_group())
        raise(ErrorKind::length, "code byte count does not match group count");

    KvSlab out;
    out.tokens = block.tokens;
    out.channels = block.channels;
    out.data.assign(block.tokens * block.channels, 0.0f);

    const std::size_t g_size = block.geometry.group_size;
    const std::size_t bpg = block.bytes_per_group();
    for (std::size_t g = 0; g < groups; ++g) {
        std::vector<uint8_t> packed(block.codes.begin() + static_cast<std::ptrdiff_t>(g * bpg),
                                    block.codes.begin() + static_cast<std::ptrdiff_t>((g + 1) * bpg));
        std::vector<uint32_t> codes = unpack_codes(packed, block.n_bits, g_size);
        const float s = block.scales[g];
        const float z = block.zeros[g];
        for (std::size_t e = 0; e < g_size; ++e) {
            out.data[walk.element_index(g, e)] =
                static_cast<float>(static_cast<double>(codes[e]) * static_cast<double>(s) +
                                   static_cast<double>(z));
        }
    }
    return out;
}

}  // namespace kvq
