#include "kvq/tensor.hpp"

#include "kvq/wire.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace kvq {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::format: return "format";
        case ErrorKind::length: return "length";
        case ErrorKind::data: return "data";
        case ErrorKind::geometry: return "geometry";
        case ErrorKind::config: return "config";
        case ErrorKind::range: return "range";
        case ErrorKind::index: return "index";
        case ErrorKind::io: return "io";
    }
    return "unknown";
}

void KvSlab::validate() const {
    if (data.size() != tokens * channels)
        raise(ErrorKind::length, "slab data length " + std::to_string(data.size()) +
                                     " != tokens*channels " +
                                     std::to_string(tokens * channels));
    for (float v : data)
        if (!std::isfinite(v)) raise(ErrorKind::data, "slab contains a non-finite value");
}

KvSlab KvSlab::slice_tokens(std::size_t begin, std::size_t end) const {
    if (begin > end || end > tokens)
        raise(ErrorKind::index, "token slice [" + std::to_string(begin) + ", " +
                                    std::to_string(end) + ") outside of " +
                                    std::to_string(tokens) + " tokens");
    KvSlab out(end - begin, channels);
    std::copy(data.begin() + static_cast<std::ptrdiff_t>(begin * channels),
              data.begin() + static_cast<std::ptrdiff_t>(end * channels), out.data.begin());
    return out;
}

KvSlab KvSlab::gather_tokens(const std::vector<std::size_t>& idx) const {
    KvSlab out(idx.size(), channels);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= tokens)
            raise(ErrorKind::index, "token index " + std::to_string(idx[i]) + " out of range");
        std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(idx[i] * channels), channels,
                    out.data.begin() + static_cast<std::ptrdiff_t>(i * channels));
    }
    return out;
}

KvSlab KvSlab::gather_channels(const std::vector<std::size_t>& idx) const {
    KvSlab out(tokens, idx.size());
    for (std::size_t c = 0; c < idx.size(); ++c) {
        if (idx[c] >= channels)
            raise(ErrorKind::index, "channel index " + std::to_string(idx[c]) + " out of range");
        for (std::size_t t = 0; t < tokens; ++t) out.at(t, c) = at(t, idx[c]);
    }
    return out;
}

void KvSlab::append_tokens(const KvSlab& other) {
    if (other.empty() && other.tokens == 0) return;
    if (channels == 0 && tokens == 0) channels = other.channels;
    if (other.channels != channels)
        raise(ErrorKind::geometry, "append: channel mismatch " + std::to_string(other.channels) +
                                       " vs " + std::to_string(channels));
    data.insert(data.end(), other.data.begin(), other.data.end());
    tokens += other.tokens;
}

void DecodeTrace::validate() const {
    for (const auto& s : steps) {
        if (s.q.size() != channels || s.k.size() != channels || s.v.size() != channels)
            raise(ErrorKind::geometry, "trace step vector width differs from declared channels");
        for (const auto* vec : {&s.q, &s.k, &s.v})
            for (float v : *vec)
                if (!std::isfinite(v)) raise(ErrorKind::data, "trace contains a non-finite value");
    }
}

// ── little-endian primitives ────────────────────────────────────────────

namespace {

void put_magic(std::vector<uint8_t>& out) {
    for (std::size_t i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(kKvtMagic[i]));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

uint32_t get_u32(std::span<const uint8_t> in, std::size_t off) {
    return static_cast<uint32_t>(in[off]) | (static_cast<uint32_t>(in[off + 1]) << 8) |
           (static_cast<uint32_t>(in[off + 2]) << 16) |
           (static_cast<uint32_t>(in[off + 3]) << 24);
}

void put_f32(std::vector<uint8_t>& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

float get_f32(std::span<const uint8_t> in, std::size_t off) {
    uint32_t bits = get_u32(in, off);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

std::vector<uint8_t> kvt_encode(const KvSlab& slab) {
    slab.validate();
    std::vector<uint8_t> out;
    out.reserve(kKvtHeaderBytes + slab.size() * 4);
    put_magic(out);
    put_u32(out, static_cast<uint32_t>(slab.tokens));
    put_u32(out, static_cast<uint32_t>(slab.channels));
    for (float v : slab.data) put_f32(out, v);
    return out;
}

KvSlab kvt_decode(std::span<const uint8_t> bytes) {
    if (bytes.size() < kKvtHeaderBytes || std::memcmp(bytes.data(), kKvtMagic, 8) != 0)
        raise(ErrorKind::format, "not a KVT container (bad magic)");
    const std::size_t tokens = get_u32(bytes, 8);
    const std::size_t channels = get_u32(bytes, 12);
    const std::size_t want = kKvtHeaderBytes + tokens * channels * 4;
    if (bytes.size() != want)
        raise(ErrorKind::length, "KVT payload is " + std::to_string(bytes.size()) +
                                     " bytes, expected " + std::to_string(want));
    KvSlab slab(tokens, channels);
    for (std::size_t i = 0; i < slab.size(); ++i)
        slab.data[i] = get_f32(bytes, kKvtHeaderBytes + i * 4);
    for (float v : slab.data)
        if (!std::isfinite(v)) raise(ErrorKind::data, "KVT payload contains a non-finite value");
    return slab;
}

KvSlab kvt_read(const std::string& path) { return kvt_decode(wire::read_file(path)); }

void kvt_write(const KvSlab& slab, const std::string& path) {
    // Encode first so an invalid slab never leaves a partial file behind.
    wire::write_file(path, kvt_encode(slab));
}

void trace_write(const DecodeTrace& trace, const std::string& path) {
    trace.validate();
    std::vector<uint8_t> out;
    put_magic(out);
    put_u32(out, static_cast<uint32_t>(trace.steps.size()));
    put_u32(out, static_cast<uint32_t>(trace.channels));
    put_u32(out, 3);  // streams per step: q, k, v
    for (const auto& s : trace.steps) {
        for (float v : s.q) put_f32(out, v);
        for (float v : s.k) put_f32(out, v);
        for (float v : s.v) put_f32(out, v);
    }
    wire::write_file(path, out);
}

DecodeTrace trace_read(const std::string& path) {
    const auto bytes = wire::read_file(path);
    if (bytes.size() < 20 || std::memcmp(bytes.data(), kKvtMagic, 8) != 0)
        raise(ErrorKind::format, "not a decode trace (bad magic)");
    const std::size_t steps = get_u32(bytes, 8);
    const std::size_t channels = get_u32(bytes, 12);
    const uint32_t streams = get_u32(bytes, 16);
    if (streams != 3)
        raise(ErrorKind::format, "decode trace must declare 3 streams, found " +
                                     std::to_string(streams));
    const std::size_t want = 20 + steps * channels * 3 * 4;
    if (bytes.size() != want)
        raise(ErrorKind::length, "trace payload is " + std::to_string(bytes.size()) +
                                     " bytes, expected " + std::to_string(want));
    DecodeTrace trace;
    trace.channels = channels;
    trace.steps.resize(steps);
    std::size_t off = 20;
    for (auto& s : trace.steps) {
        s.q.resize(channels);
        s.k.resize(channels);
        s.v.resize(channels);
        for (auto* vec : {&s.q, &s.k, &s.v})
            for (auto& v : *vec) {
                v = get_f32(bytes, off);
                off += 4;
            }
    }
    trace.validate();
    return trace;
}

}  // namespace kvq
