#pragma once

#include <cstdint>
#include <vector>

#include "kvq/cache.hpp"
#include "kvq/tensor.hpp"

namespace kvq {

struct ErrorReport {
    double mse = 0.0;
    double max_abs = 0.0;
    std::vector<double> per_channel_mse;
    std::vector<double> per_token_mse;
    double attention_divergence = 0.0;  // filled by simulate paths, else 0
};

// element-count product (kv_pairs * layers * head_dim * tokens * batch)
struct DeployShape {
    std::uint64_t kv_pairs = 2;  // one key tensor + one value tensor
    std::uint64_t layers = 28;
    std::uint64_t head_dim = 128;
    std::uint64_t tokens = 196000;
    std::uint64_t batch = 256;

    std::uint64_t elements() const { return kv_pairs * layers * head_dim * tokens * batch; }
    // elements of one side (all key tensors, or all value tensors)
    std::uint64_t side_elements() const;
    void validate() const;
};

struct SideMemory {
    double code_bits_per_element = 0.0;      // packed figure (ternary counts 8/5)
    double theory_bits_per_element = 0.0;    // information figure (ternary counts log2 3)
    double metadata_bits_per_element = 0.0;  // scales/zeros per group
    std::uint64_t code_bytes = 0;
    std::uint64_t metadata_bytes = 0;
};

struct MemoryReport {
    SideMemory key;
    SideMemory value;
    std::uint64_t fp16_total_bytes = 0;  // unquantized 16-bit baseline for the shape
    std::uint64_t total_bytes = 0;       // key + value codes and metadata
    std::uint64_t residual_bytes = 0;    // FP32 residual window, both sides, extra to total
};

// MSE/max-abs with per-channel and per-token breakdowns; shapes must match.
ErrorReport reconstruction_error(const KvSlab& original, const KvSlab& reconstructed);

// Exact integer byte accounting of codes, scales/zeros and the residual
// window for a deployment shape under `config`.
MemoryReport memory_report(const QuantConfig& config, const DeployShape& shape);

}  // namespace kvq
