#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kvq/quant.hpp"
#include "kvq/tensor.hpp"

namespace kvq {

enum class ChannelMetric {
    range,          // max - min per channel
    variance,       // population variance per channel
    outlier_count,  // elements with value > M * channel mean
};

ChannelMetric channel_metric_from_string(const std::string& name);
const char* to_string(ChannelMetric metric);

struct ChannelScore {
    ChannelMetric metric = ChannelMetric::range;
    double M = 3.0;
    std::vector<double> values;  // one per channel
};

struct ChannelPartition {
    double k = 0.0;
    std::vector<uint8_t> anomalous_mask;  // one flag per channel

    std::size_t channels() const { return anomalous_mask.size(); }
    std::size_t anomalous_count() const;
    std::vector<std::size_t> anomalous_indices() const;
    std::vector<std::size_t> normal_indices() const;

    bool operator==(const ChannelPartition&) const = default;
};

// Sign bits of the half-spectrum of each (channel, G-token) group plus the
// group's mean absolute component magnitude. Stored components per group:
// real parts of bins 0..G/2 and imaginary parts of bins 1..G/2-1, exactly G
// bits, packed LSB-first in that order and byte-aligned per group.
struct FftSignBlock {
    std::size_t tokens = 0;
    std::size_t channels = 0;
    std::size_t group_size = 32;  // per_channel axis: G consecutive tokens
    std::vector<uint8_t> sign_bits;
    std::vector<float> scales;  // s_fft per channel-group

    std::size_t group_count() const;
    std::size_t bytes_per_group() const { return (group_size + 7) / 8; }

    bool operator==(const FftSignBlock&) const = default;
};

struct KeyQuantParams {
    double k = 0.5;
    ChannelMetric metric = ChannelMetric::range;
    double M = 3.0;
    bool use_fft = true;  // applied to the normal (1-bit) channel set
    std::size_t group_size = 32;
};

struct QuantizedKeyBlock {
    ChannelPartition partition;
    PackedBlock anomalous;  // 2-bit per_channel over the anomalous channel subset
    bool fft_used = false;
    FftSignBlock normal_fft;     // populated when fft_used
    PackedBlock normal_uniform;  // 1-bit per_channel, populated when !fft_used
    std::size_t token_begin = 0;
    std::size_t tokens = 0;
    std::size_t channels = 0;
};

ChannelScore score_channels(const KvSlab& window, ChannelMetric metric, double M);

// Marks the round(k * channels) highest-scoring channels anomalous; ties
// keep the lower channel index.
ChannelPartition partition_channels(const ChannelScore& scores, double k);

struct FftSignGroup {
    std::vector<uint8_t> bits;  // ceil(G/8) bytes
    float s_fft = 0.0f;
};

// window length = G (even); bit = 1 iff the stored spectral component >= 0.
FftSignGroup fft_sign_quantize(const std::vector<double>& window);

// Rebuilds components as (2b - 1) * s_fft, zeroes the DC/Nyquist imaginary
// parts, mirrors the Hermitian half and inverse-transforms.
std::vector<double> fft_sign_dequantize(const std::vector<uint8_t>& bits, float s_fft,
                                        std::size_t group_size);

FftSignBlock fft_sign_quantize_block(const KvSlab& window, std::size_t group_size);
KvSlab fft_sign_dequantize_block(const FftSignBlock& block);

// Scores and partitions the window (unless a frozen partition is supplied),
// then routes anomalous channels to 2-bit uniform groups and normal channels
// to FFT sign coding or 1-bit uniform groups.
QuantizedKeyBlock quantize_key_block(const KvSlab& window, const KeyQuantParams& params,
                                     const std::optional<ChannelPartition>& frozen = std::nullopt);

KvSlab dequantize_key_block(const QuantizedKeyBlock& block);

}  // namespace kvq
