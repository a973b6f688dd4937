#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kvq/cache.hpp"

namespace kvq {

// Cache snapshot container, byte-deterministic for identical states:
// 8-byte magic "KVSNAP01", then the config record, segment spec, counters,
// frozen partition, protected set, key blocks, value blocks, and both
// residuals embedded in KVT layout. All scalars little-endian; f32/f64 by
// bit pattern.
inline constexpr char kSnapshotMagic[9] = "KVSNAP01";

std::vector<uint8_t> snapshot_encode(const CacheState& state);
CacheState snapshot_decode(std::span<const uint8_t> bytes);

void snapshot_write(const CacheState& state, const std::string& path);
CacheState snapshot_read(const std::string& path);

// human-readable dump used by the `inspect` subcommand
std::string snapshot_summary(const CacheState& state);

}  // namespace kvq
