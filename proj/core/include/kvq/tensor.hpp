#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kvq/error.hpp"

namespace kvq {

// Dense token-major scalar matrix holding one (layer, head) key or value
// cache segment. Immutable by convention once filled: every transform in
// the library returns a fresh slab.
struct KvSlab {
    std::size_t tokens = 0;
    std::size_t channels = 0;
    std::vector<float> data;  // row-major, data[t * channels + c]

    KvSlab() = default;
    KvSlab(std::size_t t, std::size_t c) : tokens(t), channels(c), data(t * c, 0.0f) {}
    KvSlab(std::size_t t, std::size_t c, std::vector<float> values)
        : tokens(t), channels(c), data(std::move(values)) {}

    std::size_t size() const { return tokens * channels; }
    bool empty() const { return size() == 0; }

    float& at(std::size_t t, std::size_t c) { return data[t * channels + c]; }
    float at(std::size_t t, std::size_t c) const { return data[t * channels + c]; }

    std::span<const float> row(std::size_t t) const {
        return {data.data() + t * channels, channels};
    }
    std::span<float> row(std::size_t t) {
        return {data.data() + t * channels, channels};
    }

    // Throws when the invariants do not hold (size mismatch, non-finite values).
    void validate() const;

    // Token range [begin, end) as a new slab.
    KvSlab slice_tokens(std::size_t begin, std::size_t end) const;

    // Gathered subset of rows / columns, in the order given.
    KvSlab gather_tokens(const std::vector<std::size_t>& idx) const;
    KvSlab gather_channels(const std::vector<std::size_t>& idx) const;

    // Rows of `other` appended below this slab.
    void append_tokens(const KvSlab& other);

    bool operator==(const KvSlab& other) const = default;
};

// Token-segment bookkeeping for one prefill prompt: system, vision, text.
struct SegmentSpec {
    std::size_t system_len = 0;
    std::size_t vision_len = 0;
    std::size_t text_len = 0;

    std::size_t total() const { return system_len + vision_len + text_len; }

    void validate(std::size_t slab_tokens) const {
        if (total() != slab_tokens)
            raise(ErrorKind::geometry,
                  "segment lengths sum to " + std::to_string(total()) +
                      " but slab has " + std::to_string(slab_tokens) + " tokens");
    }
};

struct DecodeStep {
    std::vector<float> q;
    std::vector<float> k;
    std::vector<float> v;
};

struct DecodeTrace {
    std::size_t channels = 0;
    std::vector<DecodeStep> steps;

    void validate() const;
};

// ── KVT container ───────────────────────────────────────────────────────
//
// Bit-exact on-disk layout, little-endian throughout:
//   bytes 0..7   magic "KVTENS01"
//   bytes 8..11  tokens   (u32)
//   bytes 12..15 channels (u32)
//   then tokens*channels IEEE-754 binary32 values, token-major.
//
// A decode trace uses the same header plus a stream-count field (= 3)
// at bytes 16..19, followed per step by the q, k, v vectors.

inline constexpr char kKvtMagic[8] = {'K', 'V', 'T', 'E', 'N', 'S', '0', '1'};
inline constexpr std::size_t kKvtHeaderBytes = 16;

KvSlab kvt_read(const std::string& path);
void kvt_write(const KvSlab& slab, const std::string& path);

DecodeTrace trace_read(const std::string& path);
void trace_write(const DecodeTrace& trace, const std::string& path);

// In-memory encodings (shared by file I/O and snapshot embedding).
std::vector<uint8_t> kvt_encode(const KvSlab& slab);
KvSlab kvt_decode(std::span<const uint8_t> bytes);

}  // namespace kvq
