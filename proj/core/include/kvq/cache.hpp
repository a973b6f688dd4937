#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "kvq/key_quant.hpp"
#include "kvq/tensor.hpp"
#include "kvq/value_quant.hpp"

namespace kvq {

enum class FftMode { automatic, on, off };
enum class ValueMode { uniform2, ternary, ternary_stp, uniform2_per_token, uniform1 };
enum class KeyRequant { faithful_full, frozen_incremental };

FftMode fft_mode_from_string(const std::string& name);
ValueMode value_mode_from_string(const std::string& name);
KeyRequant key_requant_from_string(const std::string& name);
const char* to_string(FftMode mode);
const char* to_string(ValueMode mode);
const char* to_string(KeyRequant mode);

struct QuantConfig {
    bool enabled = true;  // false = keep everything in FP residuals (identity mode)
    double key_k = 0.5;
    ChannelMetric key_metric = ChannelMetric::range;
    double key_M = 3.0;
    FftMode fft_mode = FftMode::automatic;
    ValueMode value_mode = ValueMode::ternary;
    double gamma = 0.7;
    double p = 0.0;
    std::size_t G = 32;
    std::size_t R = 128;
    KeyRequant key_requant = KeyRequant::faithful_full;
    bool ternary_fastpath = true;
    bool allow_experimental = false;  // unlocks the uniform1 value mode

    void validate() const;
    // auto gating: FFT sign coding only at k = 0.5 or k = 0.75
    bool fft_enabled() const;
    KeyQuantParams key_params() const;
    TernaryParams ternary_params() const;

    bool operator==(const QuantConfig&) const = default;
};

// One quantized value span; `uniform` is used by the uniform2/uniform1/
// uniform2_per_token modes, `ternary` by ternary and ternary_stp.
struct ValueBlockEntry {
    bool is_uniform = false;
    QuantizedValueBlock ternary;
    PackedBlock uniform;
    std::size_t token_begin = 0;
    std::size_t tokens = 0;

    // derived, rebuilt via CacheState::rebuild_derived; never serialized
    std::vector<int8_t> digit_cache;
    std::vector<std::size_t> unprotected_local;
};

struct CacheState {
    QuantConfig config;
    SegmentSpec segments;
    std::size_t channels = 0;
    std::size_t tokens_seen = 0;
    std::size_t flush_count = 0;
    std::vector<QuantizedKeyBlock> key_blocks;
    std::vector<ValueBlockEntry> value_blocks;
    KvSlab key_residual;
    KvSlab value_residual;
    std::optional<ChannelPartition> frozen_partition;  // set when key_requant = frozen_incremental
    ProtectedSet protected_set;                        // prefill vision tokens kept at 2-bit

    // derived views, rebuilt after prefill/flush/load; never serialized
    KvSlab key_view;    // dequantized key blocks, concatenated
    KvSlab value_view;  // dequantized value blocks, concatenated

    std::size_t quantized_key_tokens() const;
    std::size_t quantized_value_tokens() const;
    KvSlab dequantized_keys() const;    // concatenation over key blocks
    KvSlab dequantized_values() const;  // concatenation over value blocks
    void rebuild_derived();
};

// Quantizes one value window under the configured value mode. Decode-time
// flushes pass an empty protected set.
ValueBlockEntry quantize_value_window(const QuantConfig& config, const KvSlab& window,
                                      std::size_t token_begin,
                                      const ProtectedSet& protected_set);
KvSlab dequantize_value_entry(const ValueBlockEntry& entry);

// Splits the prompt at l - (l % G), quantizes the left part and keeps the
// remainder in FP residuals. Cross-modal embeddings are required iff p > 0;
// the protected set is selected here, once.
CacheState prefill(const KvSlab& keys, const KvSlab& values, const QuantConfig& config,
                   const SegmentSpec& segments, const KvSlab* vision_embed = nullptr,
                   const KvSlab* text_embed = nullptr);

// Appends (k, v) to the residuals, attends over quantized blocks plus
// residuals, then flushes once the value residual reaches R tokens.
std::vector<double> decode_step(CacheState& state, const std::vector<float>& q,
                                const std::vector<float>& k, const std::vector<float>& v);

// Quantizes the multiple-of-G prefix of both residuals and retains the
// remainder. Key handling follows config.key_requant: faithful_full rebuilds
// one block from the full dequantized-plus-residual key; frozen_incremental
// appends a block for the flushed window under the frozen partition.
void flush_residual(CacheState& state);

// Exact full-precision attention: softmax(q . K^T / sqrt(channels)) . V
// with max-subtracted softmax and double accumulation.
std::vector<double> attention_reference(const std::vector<float>& q, const KvSlab& keys,
                                        const KvSlab& values);

struct DivergenceReport {
    std::vector<double> per_step;  // relative L2 vs the full-precision reference
    double mean = 0.0;
    double max = 0.0;
};

// Replays prefill plus the trace under `config` and under full precision,
// reporting the relative L2 gap of every decode output.
DivergenceReport run_divergence(const KvSlab& keys, const KvSlab& values, const DecodeTrace& trace,
                                const QuantConfig& config, const SegmentSpec& segments,
                                const KvSlab* vision_embed = nullptr,
                                const KvSlab* text_embed = nullptr);

}  // namespace kvq
