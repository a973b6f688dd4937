#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kvq/cache.hpp"
#include "kvq/report.hpp"
#include "kvq/synth.hpp"

namespace kvq {

// Named synthetic suites with fixed parameters, shared between sweeps and
// the acceptance tests. tokens/channels of 0 take the suite defaults.
SynthSpec suite_spec(const std::string& suite, std::size_t tokens, std::size_t channels,
                     uint64_t seed);

struct WorkloadSpec {
    std::string suite = "standard";
    std::size_t tokens = 0;
    std::size_t channels = 0;
    std::size_t steps = 0;  // decode trace length; 0 skips divergence
    std::size_t seeds = 20;
    uint64_t seed0 = 1;
};

struct SweepGrid {
    WorkloadSpec workload;
    QuantConfig base;
    // axis field name -> candidate values, expanded as a cartesian product
    std::vector<std::pair<std::string, std::vector<std::string>>> axes;
};

SweepGrid parse_grid_text(const std::string& text);
SweepGrid parse_grid_file(const std::string& path);

struct SweepOutputs {
    std::string csv_text;      // one row per (config point, seed)
    std::string summary_json;  // per-point means across seeds
};

// Deterministic: identical grid produces byte-identical outputs.
SweepOutputs run_sweep(const SweepGrid& grid);
void run_sweep_to_files(const SweepGrid& grid, const std::string& csv_path,
                        const std::string& json_path);

// The K/V slab pair plus decode trace and cross-modal embeddings one
// sweep point quantifies; exposed so tests reuse the exact workload.
struct SweepWorkload {
    KvSlab keys;
    KvSlab values;
    DecodeTrace trace;
    KvSlab vision_embed;
    KvSlab text_embed;
    SegmentSpec segments;
};

SweepWorkload make_workload(const WorkloadSpec& spec, uint64_t seed, bool with_embeddings);

struct AxisComparison {
    std::vector<double> per_channel_mse;  // one entry per seed
    std::vector<double> per_token_mse;
    double win_rate = 0.0;  // fraction of seeds with per_channel < per_token
};

// Paired per_channel vs per_token value-quantization MSE. `quantizer` is
// "uniform2" or "ternary".
AxisComparison compare_axes(const WorkloadSpec& spec, const std::string& quantizer);

}  // namespace kvq
