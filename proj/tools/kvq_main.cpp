#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "kvq/cache.hpp"
#include "kvq/config.hpp"
#include "kvq/error.hpp"
#include "kvq/report.hpp"
#include "kvq/snapshot.hpp"
#include "kvq/sweep.hpp"
#include "kvq/synth.hpp"
#include "kvq/tensor.hpp"

namespace {

using kvq::ErrorKind;
using kvq::KvSlab;
using kvq::QuantConfig;
using ordered_json = nlohmann::ordered_json;

// flags mirroring the QuantConfig field names, applied over an optional
// config file
struct ConfigCli {
    std::string file;
    std::map<std::string, std::string> values;
};

constexpr const char* kConfigFields[] = {"enabled",     "key_k",     "key_metric",
                                         "key_M",       "fft_mode",  "value_mode",
                                         "gamma",       "p",         "G",
                                         "R",           "key_requant", "ternary_fastpath",
                                         "allow_experimental"};

void add_config_flags(CLI::App* cmd, ConfigCli& cc) {
    cmd->add_option("--config", cc.file, "config file, one 'field = value' per line");
    for (const char* field : kConfigFields) {
        cmd->add_option_function<std::string>(
            std::string("--") + field,
            [&cc, field](const std::string& v) { cc.values[field] = v; },
            std::string("QuantConfig field ") + field);
    }
}

QuantConfig resolve_config(const ConfigCli& cc) {
    QuantConfig config;
    if (!cc.file.empty()) config = kvq::parse_config_file(cc.file);
    for (const auto& [field, value] : cc.values) kvq::apply_config_kv(config, field, value);
    config.validate();
    return config;
}

kvq::SegmentSpec resolve_segments(const std::string& text, std::size_t tokens) {
    if (text.empty()) return kvq::SegmentSpec{0, tokens, 0};
    unsigned long long s = 0, v = 0, t = 0;
    if (std::sscanf(text.c_str(), "%llu,%llu,%llu", &s, &v, &t) != 3)
        kvq::raise(ErrorKind::config, "segments must be 'system,vision,text'");
    kvq::SegmentSpec seg{static_cast<std::size_t>(s), static_cast<std::size_t>(v),
                         static_cast<std::size_t>(t)};
    seg.validate(tokens);
    return seg;
}

ordered_json error_report_json(const kvq::ErrorReport& r) {
    ordered_json j;
    j["mse"] = r.mse;
    j["max_abs"] = r.max_abs;
    j["attention_divergence"] = r.attention_divergence;
    j["per_channel_mse"] = r.per_channel_mse;
    j["per_token_mse"] = r.per_token_mse;
    return j;
}

ordered_json side_memory_json(const kvq::SideMemory& s) {
    ordered_json j;
    j["code_bits_per_element"] = s.code_bits_per_element;
    j["theory_bits_per_element"] = s.theory_bits_per_element;
    j["metadata_bits_per_element"] = s.metadata_bits_per_element;
    j["code_bytes"] = s.code_bytes;
    j["metadata_bytes"] = s.metadata_bytes;
    return j;
}

void print_json(const ordered_json& j) { std::printf("%s\n", j.dump(2).c_str()); }

// ── gen ─────────────────────────────────────────────────────────────────

struct GenArgs {
    std::string suite;
    std::string kind = "gaussian_outlier_channels";
    std::size_t tokens = 0;  // 0 keeps the suite default (or 64 for raw kinds)
    std::size_t channels = 0;
    std::size_t outlier_count = 0;
    double magnitude = 1.0;
    std::size_t frame_len = 1;
    double noise = 0.0;
    double spread = 1.0;
    uint64_t seed = 0;
    std::size_t trace_steps = 0;
    std::string out;
};

int run_gen(const GenArgs& a) {
    const std::size_t tokens = a.tokens != 0 ? a.tokens : 64;
    const std::size_t channels = a.channels != 0 ? a.channels : 32;
    if (a.trace_steps > 0) {
        kvq::trace_write(kvq::gen_trace(a.trace_steps, channels, a.seed), a.out);
        ordered_json j;
        j["trace"] = a.out;
        j["steps"] = a.trace_steps;
        j["channels"] = channels;
        print_json(j);
        return 0;
    }
    kvq::SynthSpec spec;
    if (!a.suite.empty()) {
        spec = kvq::suite_spec(a.suite, a.tokens, a.channels, a.seed);
    } else {
        spec.kind = kvq::synth_kind_from_string(a.kind);
        spec.tokens = tokens;
        spec.channels = channels;
        spec.outlier_count = a.outlier_count;
        spec.outlier_magnitude = a.magnitude;
        spec.frame_len = a.frame_len;
        spec.noise = a.noise;
        spec.channel_spread = a.spread;
        spec.seed = a.seed;
    }
    kvq::kvt_write(kvq::gen_synthetic(spec), a.out);
    ordered_json j;
    j["slab"] = a.out;
    j["kind"] = kvq::to_string(spec.kind);
    j["tokens"] = spec.tokens;
    j["channels"] = spec.channels;
    print_json(j);
    return 0;
}

// ── quantize ────────────────────────────────────────────────────────────

struct QuantizeArgs {
    std::string keys, values, vision, text, segments, snapshot;
    ConfigCli config;
};

int run_quantize(const QuantizeArgs& a) {
    const QuantConfig config = resolve_config(a.config);
    const KvSlab keys = kvq::kvt_read(a.keys);
    const KvSlab values = kvq::kvt_read(a.values);
    const kvq::SegmentSpec seg = resolve_segments(a.segments, keys.tokens);

    KvSlab vision, text;
    const KvSlab* xv = nullptr;
    const KvSlab* xt = nullptr;
    if (!a.vision.empty()) {
        vision = kvq::kvt_read(a.vision);
        xv = &vision;
    }
    if (!a.text.empty()) {
        text = kvq::kvt_read(a.text);
        xt = &text;
    }

    kvq::CacheState state = kvq::prefill(keys, values, config, seg, xv, xt);
    const std::size_t q_len = state.quantized_key_tokens();

    ordered_json j;
    j["tokens"] = keys.tokens;
    j["channels"] = keys.channels;
    j["quantized_tokens"] = q_len;
    j["residual_tokens"] = state.key_residual.tokens;
    j["protected_tokens"] = state.protected_set.indices.size();
    if (q_len > 0) {
        j["key"] = error_report_json(
            kvq::reconstruction_error(keys.slice_tokens(0, q_len), state.key_view));
        j["value"] = error_report_json(
            kvq::reconstruction_error(values.slice_tokens(0, q_len), state.value_view));
    }
    if (!a.snapshot.empty()) {
        kvq::snapshot_write(state, a.snapshot);
        j["snapshot"] = a.snapshot;
    }
    print_json(j);
    return 0;
}

// ── simulate ────────────────────────────────────────────────────────────

struct SimulateArgs {
    std::string keys, values, trace, vision, text, segments;
    bool per_step = false;
    ConfigCli config;
};

int run_simulate(const SimulateArgs& a) {
    const QuantConfig config = resolve_config(a.config);
    const KvSlab keys = kvq::kvt_read(a.keys);
    const KvSlab values = kvq::kvt_read(a.values);
    const kvq::DecodeTrace trace = kvq::trace_read(a.trace);
    const kvq::SegmentSpec seg = resolve_segments(a.segments, keys.tokens);

    KvSlab vision, text;
    const KvSlab* xv = nullptr;
    const KvSlab* xt = nullptr;
    if (!a.vision.empty()) {
        vision = kvq::kvt_read(a.vision);
        xv = &vision;
    }
    if (!a.text.empty()) {
        text = kvq::kvt_read(a.text);
        xt = &text;
    }

    const kvq::DivergenceReport rep =
        kvq::run_divergence(keys, values, trace, config, seg, xv, xt);
    ordered_json j;
    j["steps"] = rep.per_step.size();
    j["divergence_mean"] = rep.mean;
    j["divergence_max"] = rep.max;
    if (a.per_step) j["per_step"] = rep.per_step;
    print_json(j);
    return 0;
}

// ── sweep ───────────────────────────────────────────────────────────────

int run_sweep_cmd(const std::string& grid_path, const std::string& csv_path,
                  const std::string& json_path) {
    const kvq::SweepGrid grid = kvq::parse_grid_file(grid_path);
    kvq::run_sweep_to_files(grid, csv_path, json_path);
    ordered_json j;
    j["csv"] = csv_path;
    j["summary"] = json_path;
    std::size_t points = 1;
    for (const auto& [axis, values] : grid.axes) points *= values.size();
    j["points"] = points;
    j["rows"] = points * grid.workload.seeds;
    print_json(j);
    return 0;
}

// ── compare-axes ────────────────────────────────────────────────────────

struct CompareArgs {
    std::string suite = "outlier_tokens";
    std::string quantizer = "ternary";
    std::size_t tokens = 0;
    std::size_t channels = 0;
    std::size_t seeds = 100;
    uint64_t seed0 = 1;
};

int run_compare(const CompareArgs& a) {
    kvq::WorkloadSpec spec;
    spec.suite = a.suite;
    spec.tokens = a.tokens;
    spec.channels = a.channels;
    spec.seeds = a.seeds;
    spec.seed0 = a.seed0;
    const kvq::AxisComparison cmp = kvq::compare_axes(spec, a.quantizer);
    double pc = 0, pt = 0;
    for (double v : cmp.per_channel_mse) pc += v;
    for (double v : cmp.per_token_mse) pt += v;
    ordered_json j;
    j["suite"] = a.suite;
    j["quantizer"] = a.quantizer;
    j["seeds"] = a.seeds;
    j["win_rate"] = cmp.win_rate;
    j["mean_per_channel_mse"] = pc / static_cast<double>(a.seeds);
    j["mean_per_token_mse"] = pt / static_cast<double>(a.seeds);
    j["per_channel_mse"] = cmp.per_channel_mse;
    j["per_token_mse"] = cmp.per_token_mse;
    print_json(j);
    return 0;
}

// ── mem ─────────────────────────────────────────────────────────────────

struct MemArgs {
    kvq::DeployShape shape;
    bool fp16 = false;
    ConfigCli config;
};

int run_mem(const MemArgs& a) {
    QuantConfig config = resolve_config(a.config);
    if (a.fp16) config.enabled = false;
    const kvq::MemoryReport rep = kvq::memory_report(config, a.shape);
    ordered_json j;
    j["shape"] = {{"kv_pairs", a.shape.kv_pairs},
                  {"layers", a.shape.layers},
                  {"head_dim", a.shape.head_dim},
                  {"tokens", a.shape.tokens},
                  {"batch", a.shape.batch},
                  {"elements", a.shape.elements()}};
    j["fp16_total_bytes"] = rep.fp16_total_bytes;
    j["total_bytes"] = rep.total_bytes;
    j["residual_bytes"] = rep.residual_bytes;
    j["key"] = side_memory_json(rep.key);
    j["value"] = side_memory_json(rep.value);
    print_json(j);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"low-bit KV-cache quantization toolkit"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* cmd_gen = app.add_subcommand("gen", "synthesize a KVT slab or decode trace");
    cmd_gen->add_option("--suite", gen.suite, "named suite preset");
    cmd_gen->add_option("--kind", gen.kind, "synthesis kind");
    cmd_gen->add_option("--tokens", gen.tokens, "token count");
    cmd_gen->add_option("--channels", gen.channels, "channel count");
    cmd_gen->add_option("--outlier-count", gen.outlier_count, "scaled channels/tokens");
    cmd_gen->add_option("--magnitude", gen.magnitude, "outlier scale factor");
    cmd_gen->add_option("--frame-len", gen.frame_len, "periodic frame length");
    cmd_gen->add_option("--noise", gen.noise, "periodic jitter sigma");
    cmd_gen->add_option("--spread", gen.spread, "per-channel sigma spread");
    cmd_gen->add_option("--seed", gen.seed, "generator seed");
    cmd_gen->add_option("--trace", gen.trace_steps, "emit a decode trace of N steps");
    cmd_gen->add_option("--out", gen.out, "output path")->required();

    QuantizeArgs qa;
    auto* cmd_quant = app.add_subcommand("quantize", "quantize a prompt, report errors");
    cmd_quant->add_option("--keys", qa.keys, "key slab (KVT)")->required();
    cmd_quant->add_option("--values", qa.values, "value slab (KVT)")->required();
    cmd_quant->add_option("--vision", qa.vision, "vision embeddings (KVT), needed when p > 0");
    cmd_quant->add_option("--text", qa.text, "text embeddings (KVT), needed when p > 0");
    cmd_quant->add_option("--segments", qa.segments, "system,vision,text token split");
    cmd_quant->add_option("--snapshot", qa.snapshot, "write the cache snapshot here");
    add_config_flags(cmd_quant, qa.config);

    SimulateArgs sa;
    auto* cmd_sim = app.add_subcommand("simulate", "replay a decode trace, report divergence");
    cmd_sim->add_option("--keys", sa.keys, "key slab (KVT)")->required();
    cmd_sim->add_option("--values", sa.values, "value slab (KVT)")->required();
    cmd_sim->add_option("--trace", sa.trace, "decode trace")->required();
    cmd_sim->add_option("--vision", sa.vision, "vision embeddings (KVT)");
    cmd_sim->add_option("--text", sa.text, "text embeddings (KVT)");
    cmd_sim->add_option("--segments", sa.segments, "system,vision,text token split");
    cmd_sim->add_flag("--per-step", sa.per_step, "include the per-step series");
    add_config_flags(cmd_sim, sa.config);

    std::string grid_path, csv_path, json_path;
    auto* cmd_sweep = app.add_subcommand("sweep", "run a config grid, write CSV and summary");
    cmd_sweep->add_option("--grid", grid_path, "grid file (json)")->required();
    cmd_sweep->add_option("--csv", csv_path, "CSV output path")->required();
    cmd_sweep->add_option("--json", json_path, "summary output path")->required();

    CompareArgs ca;
    auto* cmd_cmp = app.add_subcommand("compare-axes", "per_channel vs per_token value MSE");
    cmd_cmp->add_option("--suite", ca.suite, "workload suite");
    cmd_cmp->add_option("--quantizer", ca.quantizer, "ternary or uniform2");
    cmd_cmp->add_option("--tokens", ca.tokens, "token count (0 = suite default)");
    cmd_cmp->add_option("--channels", ca.channels, "channel count (0 = suite default)");
    cmd_cmp->add_option("--seeds", ca.seeds, "number of paired seeds");
    cmd_cmp->add_option("--seed0", ca.seed0, "first seed");

    MemArgs ma;
    auto* cmd_mem = app.add_subcommand("mem", "exact byte ledger for a deployment shape");
    cmd_mem->add_option("--kv-pairs", ma.shape.kv_pairs, "key+value tensors per layer");
    cmd_mem->add_option("--layers", ma.shape.layers, "transformer layers");
    cmd_mem->add_option("--head-dim", ma.shape.head_dim, "channels per head group");
    cmd_mem->add_option("--tokens", ma.shape.tokens, "cached tokens");
    cmd_mem->add_option("--batch", ma.shape.batch, "concurrent sequences");
    cmd_mem->add_flag("--fp16", ma.fp16, "report the unquantized FP16 baseline");
    add_config_flags(cmd_mem, ma.config);

    std::string snapshot_path;
    auto* cmd_inspect = app.add_subcommand("inspect", "dump a cache snapshot");
    cmd_inspect->add_option("--snapshot", snapshot_path, "snapshot file")->required();

    try {
        app.parse(argc, argv);
        if (cmd_gen->parsed()) return run_gen(gen);
        if (cmd_quant->parsed()) return run_quantize(qa);
        if (cmd_sim->parsed()) return run_simulate(sa);
        if (cmd_sweep->parsed()) return run_sweep_cmd(grid_path, csv_path, json_path);
        if (cmd_cmp->parsed()) return run_compare(ca);
        if (cmd_mem->parsed()) return run_mem(ma);
        if (cmd_inspect->parsed()) {
            std::printf("%s", kvq::snapshot_summary(kvq::snapshot_read(snapshot_path)).c_str());
            return 0;
        }
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() != 0)
            std::fprintf(stderr, "error kind=config msg=\"%s\"\n", e.what());
        return app.exit(e);
    } catch (const kvq::Error& e) {
        std::fprintf(stderr, "error kind=%s msg=\"%s\"\n", kvq::to_string(e.kind()), e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error kind=io msg=\"%s\"\n", e.what());
        return 1;
    }
    return 0;
}
