#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kvq/tensor.hpp"

namespace kvq {

enum class GroupAxis {
    per_channel,  // group = G consecutive tokens within one channel
    per_token,    // group = G consecutive channels within one token
};

GroupAxis group_axis_from_string(const std::string& name);
const char* to_string(GroupAxis axis);

struct GroupGeometry {
    GroupAxis axis = GroupAxis::per_channel;
    std::size_t group_size = 32;

    void validate() const {
        if (group_size < 1) raise(ErrorKind::geometry, "group size must be >= 1");
    }

    bool operator==(const GroupGeometry&) const = default;
};

// Enumerates the elements of each group over a token-major slab. A line is
// one channel (per_channel) or one token (per_token); its extent must be a
// multiple of the group size.
struct GroupLayout {
    GroupGeometry geometry;
    std::size_t tokens = 0;
    std::size_t channels = 0;

    static GroupLayout create(const GroupGeometry& geometry, std::size_t tokens,
                              std::size_t channels);

    std::size_t lines() const {
        return geometry.axis == GroupAxis::per_channel ? channels : tokens;
    }
    std::size_t line_len() const {
        return geometry.axis == GroupAxis::per_channel ? tokens : channels;
    }
    std::size_t groups_per_line() const { return line_len() / geometry.group_size; }
    std::size_t group_count() const { return lines() * groups_per_line(); }

    // flat index into token-major slab data of element e of group g
    std::size_t element_index(std::size_t g, std::size_t e) const {
        std::size_t line = g / groups_per_line();
        std::size_t pos = (g % groups_per_line()) * geometry.group_size + e;
        if (geometry.axis == GroupAxis::per_channel) return pos * channels + line;
        return line * channels + pos;
    }
};

// ── bit packing ─────────────────────────────────────────────────────────
//
// Codes are packed LSB-first: code i occupies bits [i*n, (i+1)*n) of the
// byte stream, low bit first. Ternary digits are shifted to {0,1,2} and
// stored five per byte as sum(d_i * 3^i); a short final run leaves the
// higher powers at zero.

std::vector<uint8_t> pack_codes(const std::vector<uint32_t>& codes, int n_bits);
std::vector<uint32_t> unpack_codes(const std::vector<uint8_t>& bytes, int n_bits,
                                   std::size_t count);

std::vector<uint8_t> pack_ternary(const std::vector<int8_t>& digits);
std::vector<int8_t> unpack_ternary(const std::vector<uint8_t>& bytes, std::size_t count);

// ── packed blocks ───────────────────────────────────────────────────────

// Group-wise uniform n-bit payload. Groups are laid out channel-major for
// per_channel geometry (channel, then token-group) and token-major for
// per_token; each group's codes start at a byte boundary so single groups
// can be sliced out of the stream.
struct PackedBlock {
    int n_bits = 2;  // 1 or 2
    GroupGeometry geometry;
    std::size_t tokens = 0;
    std::size_t channels = 0;
    std::vector<uint8_t> codes;
    std::vector<float> scales;  // one per group
    std::vector<float> zeros;   // one per group

    std::size_t group_count() const;
    std::size_t groups_per_line() const;  // token-groups per channel, or channel-groups per token
    std::size_t bytes_per_group() const {
        return (geometry.group_size * static_cast<std::size_t>(n_bits) + 7) / 8;
    }
    std::size_t code_bytes() const { return codes.size(); }

    bool operator==(const PackedBlock&) const = default;
};

// Group-wise ternary payload: digits in {-1, 0, +1}, one scale per group,
// digit stream packed base-3 across the whole block.
struct TernaryBlock {
    GroupGeometry geometry;
    std::size_t tokens = 0;
    std::size_t channels = 0;
    std::vector<uint8_t> digits;  // base-3 packed, group-major element order
    std::vector<float> scales;    // one per group

    std::size_t group_count() const;
    std::size_t digit_count() const { return tokens * channels; }

    bool operator==(const TernaryBlock&) const = default;
};

// Eq-style round-to-nearest affine quantizer:
//   s = (max - min) / (2^n - 1), z = min,
//   code = clamp(round((x - z) / s), 0, 2^n - 1),
// with round() = half away from zero and a degenerate group (max == min)
// encoded as s = 0, codes 0. The extent along the grouping axis must be a
// multiple of the group size.
PackedBlock uniform_quantize(const KvSlab& window, int n_bits, const GroupGeometry& geometry);

// x' = code * s + z
KvSlab uniform_dequantize(const PackedBlock& block);

}  // namespace kvq
