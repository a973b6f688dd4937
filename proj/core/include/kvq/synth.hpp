#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kvq/tensor.hpp"

namespace kvq {

enum class SynthKind {
    gaussian_outlier_channels,  // a few channels scaled up: key-cache shape
    gaussian_outlier_tokens,    // a few tokens scaled up: value-cache shape
    periodic_frames,            // frame pattern repeated along tokens
    uniform_noise,              // i.i.d. uniform in [-1, 1)
};

SynthKind synth_kind_from_string(const std::string& name);
const char* to_string(SynthKind kind);

struct SynthSpec {
    SynthKind kind = SynthKind::uniform_noise;
    std::size_t tokens = 0;
    std::size_t channels = 0;
    std::size_t outlier_count = 0;
    double outlier_magnitude = 1.0;
    std::size_t frame_len = 1;      // periodic_frames only
    double noise = 0.0;             // per-frame jitter for periodic_frames
    double channel_spread = 1.0;    // per-channel sigma in [1/spread, spread]; 1 = i.i.d.
    uint64_t seed = 0;

    void validate() const;
};

// Deterministic synthesis: equal (spec, seed) gives equal output on every
// platform. Per-channel streams are derived from the seed so channel c's
// values do not depend on the total channel count ordering.
KvSlab gen_synthetic(const SynthSpec& spec);

// The channel (or token) indices scaled by outlier_magnitude for this spec.
// Recomputes the same pseudo-random choice gen_synthetic made.
std::vector<std::size_t> synth_outlier_indices(const SynthSpec& spec);

// Gaussian q/k/v decode trace with the given width.
DecodeTrace gen_trace(std::size_t steps, std::size_t channels, uint64_t seed);

}  // namespace kvq
