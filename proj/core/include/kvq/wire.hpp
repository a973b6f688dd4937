#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kvq/error.hpp"

// Little-endian scalar codec shared by the on-disk formats. Readers track a
// cursor and raise a length error instead of reading past the buffer.
namespace kvq::wire {

inline void put_u8(std::vector<uint8_t>& out, uint8_t v) { out.push_back(v); }

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

inline void put_f32(std::vector<uint8_t>& out, float v) {
    put_u32(out, std::bit_cast<uint32_t>(v));
}

inline void put_f64(std::vector<uint8_t>& out, double v) {
    put_u64(out, std::bit_cast<uint64_t>(v));
}

inline void put_bytes(std::vector<uint8_t>& out, std::span<const uint8_t> bytes) {
    out.insert(out.end(), bytes.begin(), bytes.end());
}

struct Reader {
    std::span<const uint8_t> bytes;
    std::size_t cursor = 0;

    void need(std::size_t n) const {
        if (cursor + n > bytes.size())
            raise(ErrorKind::length, "container truncated at byte " + std::to_string(cursor));
    }
    uint8_t u8() {
        need(1);
        return bytes[cursor++];
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[cursor++]) << (8 * i);
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[cursor++]) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::vector<uint8_t> raw(std::size_t n) {
        need(n);
        std::vector<uint8_t> out(bytes.begin() + static_cast<std::ptrdiff_t>(cursor),
                                 bytes.begin() + static_cast<std::ptrdiff_t>(cursor + n));
        cursor += n;
        return out;
    }
    bool done() const { return cursor == bytes.size(); }
};

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<uint8_t>& bytes);

}  // namespace kvq::wire
