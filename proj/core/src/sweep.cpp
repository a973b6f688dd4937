#include "kvq/sweep.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <sstream>
#include <utility>

#include "json.hpp"

#include "kvq/config.hpp"
#include "kvq/error.hpp"
#include "kvq/rng.hpp"
#include "kvq/wire.hpp"

namespace kvq {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) raise(ErrorKind::range, "unformattable double");
    return std::string(buf, ptr);
}

// json scalar -> the textual form apply_config_kv expects
std::string scalar_text(const ordered_json& j) {
    if (j.is_string()) return j.get<std::string>();
    if (j.is_boolean()) return j.get<bool>() ? "true" : "false";
    if (j.is_number_integer()) return std::to_string(j.get<long long>());
    if (j.is_number_unsigned()) return std::to_string(j.get<unsigned long long>());
    if (j.is_number_float()) return format_double(j.get<double>());
    raise(ErrorKind::config, "grid values must be scalars");
}

std::string join_keys(const std::vector<std::string>& keys) {
    std::string out;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (i) out += ", ";
        out += keys[i];
    }
    return out;
}

struct GridPoint {
    std::vector<std::pair<std::string, std::string>> assignment;
    QuantConfig config;
};

ordered_json config_json(const QuantConfig& c) {
    ordered_json j;
    j["enabled"] = c.enabled;
    j["key_k"] = c.key_k;
    j["key_metric"] = to_string(c.key_metric);
    j["key_M"] = c.key_M;
    j["fft_mode"] = to_string(c.fft_mode);
    j["value_mode"] = to_string(c.value_mode);
    j["gamma"] = c.gamma;
    j["p"] = c.p;
    j["G"] = c.G;
    j["R"] = c.R;
    j["key_requant"] = to_string(c.key_requant);
    return j;
}

std::string assignment_text(const GridPoint& point) {
    std::string out;
    for (std::size_t i = 0; i < point.assignment.size(); ++i) {
        if (i) out += ",";
        out += point.assignment[i].first + "=" + point.assignment[i].second;
    }
    return out.empty() ? std::string("base") : out;
}

std::vector<GridPoint> expand_points(const SweepGrid& grid) {
    std::size_t total = 1;
    for (const auto& [name, values] : grid.axes) {
        if (values.empty())
            raise(ErrorKind::config, "empty axis in sweep grid: " + name);
        total *= values.size();
    }
    std::vector<GridPoint> points;
    points.reserve(total);
    for (std::size_t idx = 0; idx < total; ++idx) {
        GridPoint point;
        point.config = grid.base;
        // last listed axis varies fastest
        std::size_t rem = idx;
        std::vector<std::size_t> choice(grid.axes.size(), 0);
        for (std::size_t a = grid.axes.size(); a-- > 0;) {
            choice[a] = rem % grid.axes[a].second.size();
            rem /= grid.axes[a].second.size();
        }
        for (std::size_t a = 0; a < grid.axes.size(); ++a) {
            const auto& [name, values] = grid.axes[a];
            point.assignment.emplace_back(name, values[choice[a]]);
            apply_config_kv(point.config, name, values[choice[a]]);
        }
        try {
            point.config.validate();
        } catch (const Error& e) {
            raise(ErrorKind::config,
                  "invalid sweep point (" + assignment_text(point) + "): " + e.what());
        }
        points.push_back(std::move(point));
    }
    return points;
}

struct SeedMetrics {
    ErrorReport key_error;
    ErrorReport value_error;
    DivergenceReport divergence;
    bool fft_active = false;
};

SeedMetrics evaluate_point(const GridPoint& point, const WorkloadSpec& workload,
                           const SweepWorkload& data) {
    SeedMetrics m;
    const bool stp = point.config.p > 0.0;
    const KvSlab* xv = stp ? &data.vision_embed : nullptr;
    const KvSlab* xt = stp ? &data.text_embed : nullptr;

    CacheState state = prefill(data.keys, data.values, point.config, data.segments, xv, xt);
    const std::size_t q_len = state.quantized_key_tokens();
    if (q_len > 0) {
        m.key_error = reconstruction_error(data.keys.slice_tokens(0, q_len), state.key_view);
        m.value_error = reconstruction_error(data.values.slice_tokens(0, q_len), state.value_view);
    }
    m.fft_active = !state.key_blocks.empty() && state.key_blocks.front().fft_used;

    if (workload.steps > 0)
        m.divergence =
            run_divergence(data.keys, data.values, data.trace, point.config, data.segments, xv, xt);
    return m;
}

constexpr const char* kQualityNote =
    "quality proxies: reconstruction MSE and attention divergence";

constexpr const char* kCsvHeader =
    "suite,seed,enabled,key_k,key_metric,key_M,fft_mode,fft_active,value_mode,gamma,p,G,R,"
    "key_requant,tokens,channels,steps,key_code_bits,key_meta_bits,value_code_bits,"
    "value_theory_bits,value_meta_bits,key_mse,key_max_abs,value_mse,value_max_abs,"
    "divergence_mean,divergence_max";

void append_row(std::string& csv, const SweepGrid& grid, const GridPoint& point, uint64_t seed,
                const SeedMetrics& m, const MemoryReport& mem, std::size_t tokens,
                std::size_t channels) {
    const QuantConfig& c = point.config;
    std::string row;
    row += grid.workload.suite;
    row += ',';
    row += std::to_string(seed);
    row += ',';
    row += c.enabled ? '1' : '0';
    row += ',';
    row += format_double(c.key_k);
    row += ',';
    row += to_string(c.key_metric);
    row += ',';
    row += format_double(c.key_M);
    row += ',';
    row += to_string(c.fft_mode);
    row += ',';
    row += m.fft_active ? '1' : '0';
    row += ',';
    row += to_string(c.value_mode);
    row += ',';
    row += format_double(c.gamma);
    row += ',';
    row += format_double(c.p);
    row += ',';
    row += std::to_string(c.G);
    row += ',';
    row += std::to_string(c.R);
    row += ',';
    row += to_string(c.key_requant);
    row += ',';
    row += std::to_string(tokens);
    row += ',';
    row += std::to_string(channels);
    row += ',';
    row += std::to_string(grid.workload.steps);
    row += ',';
    row += format_double(mem.key.code_bits_per_element);
    row += ',';
    row += format_double(mem.key.metadata_bits_per_element);
    row += ',';
    row += format_double(mem.value.code_bits_per_element);
    row += ',';
    row += format_double(mem.value.theory_bits_per_element);
    row += ',';
    row += format_double(mem.value.metadata_bits_per_element);
    row += ',';
    row += format_double(m.key_error.mse);
    row += ',';
    row += format_double(m.key_error.max_abs);
    row += ',';
    row += format_double(m.value_error.mse);
    row += ',';
    row += format_double(m.value_error.max_abs);
    row += ',';
    row += format_double(m.divergence.mean);
    row += ',';
    row += format_double(m.divergence.max);
    row += '\n';
    csv += row;
}

}  // namespace

SynthSpec suite_spec(const std::string& suite, std::size_t tokens, std::size_t channels,
                     uint64_t seed) {
    SynthSpec spec;
    spec.seed = seed;
    std::size_t def_tokens = 0;
    std::size_t def_channels = 0;
    if (suite == "standard") {
        // temporally structured keys; the value companion in make_workload
        // carries the token outliers
        spec.kind = SynthKind::periodic_frames;
        def_tokens = 96;
        def_channels = 64;
        spec.frame_len = 16;
        spec.noise = 0.05;
        spec.channel_spread = 2.0;
    } else if (suite == "outlier_channels") {
        // half the channels scaled, matching the default k = 0.5 budget
        spec.kind = SynthKind::gaussian_outlier_channels;
        def_tokens = 64;
        def_channels = 32;
        spec.outlier_magnitude = 12.0;
        spec.channel_spread = 1.0;
    } else if (suite == "outlier_tokens") {
        spec.kind = SynthKind::gaussian_outlier_tokens;
        def_tokens = 64;
        def_channels = 64;
        spec.outlier_magnitude = 2.5;
        spec.channel_spread = 3.0;
    } else if (suite == "iid") {
        spec.kind = SynthKind::gaussian_outlier_tokens;
        def_tokens = 64;
        def_channels = 64;
        spec.outlier_magnitude = 1.0;
        spec.channel_spread = 1.0;
    } else if (suite == "periodic") {
        // one full frame per quantization window
        spec.kind = SynthKind::periodic_frames;
        def_tokens = 64;
        def_channels = 32;
        spec.frame_len = 32;
        spec.noise = 0.05;
        spec.channel_spread = 2.0;
    } else if (suite == "uniform") {
        spec.kind = SynthKind::uniform_noise;
        def_tokens = 64;
        def_channels = 32;
    } else {
        raise(ErrorKind::config, "unknown suite: " + suite);
    }
    spec.tokens = tokens != 0 ? tokens : def_tokens;
    spec.channels = channels != 0 ? channels : def_channels;
    if (spec.kind == SynthKind::gaussian_outlier_channels)
        spec.outlier_count = std::max<std::size_t>(1, spec.channels / 2);
    else if (suite == "outlier_tokens")
        spec.outlier_count = std::max<std::size_t>(1, spec.tokens / 16);
    spec.validate();
    return spec;
}

SweepGrid parse_grid_text(const std::string& text) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::format, std::string("grid parse: ") + e.what());
    }
    if (!doc.is_object()) raise(ErrorKind::format, "grid root must be a json object");

    SweepGrid grid;
    std::vector<std::string> unknown;
    std::vector<std::string> offending;
    try {
        for (const auto& [key, value] : doc.items()) {
            if (key == "suite") grid.workload.suite = value.get<std::string>();
            else if (key == "tokens") grid.workload.tokens = value.get<std::size_t>();
            else if (key == "channels") grid.workload.channels = value.get<std::size_t>();
            else if (key == "steps") grid.workload.steps = value.get<std::size_t>();
            else if (key == "seeds") grid.workload.seeds = value.get<std::size_t>();
            else if (key == "seed0") grid.workload.seed0 = value.get<uint64_t>();
            else if (key == "base") {
                if (!value.is_object()) raise(ErrorKind::config, "grid base must be an object");
                for (const auto& [field, raw] : value.items()) {
                    try {
                        apply_config_kv(grid.base, field, scalar_text(raw));
                    } catch (const Error&) {
                        offending.push_back("base." + field);
                    }
                }
            } else if (key == "axes") {
                if (!value.is_object()) raise(ErrorKind::config, "grid axes must be an object");
                for (const auto& [field, raw] : value.items()) {
                    if (!raw.is_array() || raw.empty()) {
                        offending.push_back("axes." + field);
                        continue;
                    }
                    std::vector<std::string> values;
                    QuantConfig probe = grid.base;
                    bool ok = true;
                    for (const auto& item : raw) {
                        try {
                            std::string text_value = scalar_text(item);
                            apply_config_kv(probe, field, text_value);
                            values.push_back(std::move(text_value));
                        } catch (const Error&) {
                            ok = false;
                        }
                    }
                    if (!ok) offending.push_back("axes." + field);
                    else grid.axes.emplace_back(field, std::move(values));
                }
            } else {
                unknown.push_back(key);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::config, std::string("grid field: ") + e.what());
    }
    if (!unknown.empty())
        raise(ErrorKind::config, "unknown grid keys: " + join_keys(unknown));
    if (!offending.empty())
        raise(ErrorKind::config, "invalid grid entries: " + join_keys(offending));
    if (grid.workload.seeds == 0) raise(ErrorKind::config, "grid needs seeds >= 1");
    grid.base.validate();
    return grid;
}

SweepGrid parse_grid_file(const std::string& path) {
    auto bytes = wire::read_file(path);
    return parse_grid_text(std::string(bytes.begin(), bytes.end()));
}

SweepWorkload make_workload(const WorkloadSpec& spec, uint64_t seed, bool with_embeddings) {
    SynthSpec base = suite_spec(spec.suite, spec.tokens, spec.channels, 0);
    SweepWorkload w;
    SynthSpec ks = base;
    ks.seed = mix_seed(seed, 0);
    w.keys = gen_synthetic(ks);
    SynthSpec vs = base;
    if (spec.suite == "standard") {
        // keys repeat frames; values instead carry mildly scaled token rows
        vs.kind = SynthKind::gaussian_outlier_tokens;
        vs.outlier_count = std::max<std::size_t>(1, base.tokens / 16);
        vs.outlier_magnitude = 2.0;
        vs.channel_spread = 2.0;
        vs.frame_len = 1;
        vs.noise = 0.0;
    }
    vs.seed = mix_seed(seed, 1);
    w.values = gen_synthetic(vs);
    w.trace = gen_trace(spec.steps, base.channels, mix_seed(seed, 2));
    w.segments = SegmentSpec{0, base.tokens, 0};
    if (with_embeddings) {
        SynthSpec es;
        es.kind = SynthKind::gaussian_outlier_tokens;
        es.tokens = base.tokens;
        es.channels = base.channels;
        es.outlier_count = 0;
        es.seed = mix_seed(seed, 3);
        w.vision_embed = gen_synthetic(es);
        es.tokens = 8;
        es.seed = mix_seed(seed, 4);
        w.text_embed = gen_synthetic(es);
    }
    return w;
}

SweepOutputs run_sweep(const SweepGrid& grid) {
    grid.base.validate();
    const std::vector<GridPoint> points = expand_points(grid);
    const SynthSpec shape = suite_spec(grid.workload.suite, grid.workload.tokens,
                                       grid.workload.channels, 0);
    bool needs_embeddings = false;
    for (const auto& point : points) needs_embeddings |= point.config.p > 0.0;

    std::vector<SweepWorkload> workloads;
    workloads.reserve(grid.workload.seeds);
    for (std::size_t s = 0; s < grid.workload.seeds; ++s)
        workloads.push_back(
            make_workload(grid.workload, grid.workload.seed0 + s, needs_embeddings));

    SweepOutputs out;
    out.csv_text = std::string("# ") + kQualityNote + "\n" + kCsvHeader + "\n";

    ordered_json summary;
    summary["workload"] = {{"suite", grid.workload.suite},
                           {"tokens", shape.tokens},
                           {"channels", shape.channels},
                           {"steps", grid.workload.steps},
                           {"seeds", grid.workload.seeds},
                           {"seed0", grid.workload.seed0}};
    summary["note"] = kQualityNote;
    summary["points"] = ordered_json::array();

    for (const auto& point : points) {
        const MemoryReport mem = memory_report(point.config, DeployShape{});
        double key_mse = 0.0, value_mse = 0.0, div_mean = 0.0, div_max = 0.0;
        for (std::size_t s = 0; s < grid.workload.seeds; ++s) {
            const uint64_t seed = grid.workload.seed0 + s;
            const SeedMetrics m = evaluate_point(point, grid.workload, workloads[s]);
            append_row(out.csv_text, grid, point, seed, m, mem, shape.tokens, shape.channels);
            key_mse += m.key_error.mse;
            value_mse += m.value_error.mse;
            div_mean += m.divergence.mean;
            div_max = std::max(div_max, m.divergence.max);
        }
        const double n = static_cast<double>(grid.workload.seeds);
        ordered_json entry;
        entry["assignment"] = ordered_json::object();
        for (const auto& [axis, value] : point.assignment) entry["assignment"][axis] = value;
        entry["config"] = config_json(point.config);
        entry["mean_key_mse"] = key_mse / n;
        entry["mean_value_mse"] = value_mse / n;
        entry["mean_divergence"] = div_mean / n;
        entry["max_divergence"] = div_max;
        entry["key_code_bits"] = mem.key.code_bits_per_element;
        entry["value_code_bits"] = mem.value.code_bits_per_element;
        entry["value_theory_bits"] = mem.value.theory_bits_per_element;
        summary["points"].push_back(std::move(entry));
    }
    out.summary_json = summary.dump(2) + "\n";
    return out;
}

void run_sweep_to_files(const SweepGrid& grid, const std::string& csv_path,
                        const std::string& json_path) {
    const SweepOutputs out = run_sweep(grid);
    wire::write_file(csv_path, {out.csv_text.begin(), out.csv_text.end()});
    wire::write_file(json_path, {out.summary_json.begin(), out.summary_json.end()});
}

AxisComparison compare_axes(const WorkloadSpec& spec, const std::string& quantizer) {
    const bool ternary = quantizer == "ternary";
    if (!ternary && quantizer != "uniform2")
        raise(ErrorKind::config, "unknown axis quantizer: " + quantizer);
    if (spec.seeds == 0) raise(ErrorKind::config, "compare_axes needs seeds >= 1");

    constexpr std::size_t G = 32;
    AxisComparison cmp;
    std::size_t wins = 0;
    for (std::size_t s = 0; s < spec.seeds; ++s) {
        SweepWorkload w = make_workload(spec, spec.seed0 + s, false);
        const std::size_t q_len = w.values.tokens - w.values.tokens % G;
        if (q_len == 0 || w.values.channels % G != 0)
            raise(ErrorKind::geometry, "axis comparison needs tokens >= 32 and channels % 32 == 0");
        const KvSlab window = w.values.slice_tokens(0, q_len);

        auto mse_for = [&](GroupAxis axis) {
            const GroupGeometry geom{axis, G};
            KvSlab back;
            if (ternary) back = ternary_dequantize(ternary_quantize(window, TernaryParams{0.7, geom}));
            else back = uniform_dequantize(uniform_quantize(window, 2, geom));
            return reconstruction_error(window, back).mse;
        };
        const double pc = mse_for(GroupAxis::per_channel);
        const double pt = mse_for(GroupAxis::per_token);
        cmp.per_channel_mse.push_back(pc);
        cmp.per_token_mse.push_back(pt);
        if (pc < pt) ++wins;
    }
    cmp.win_rate = static_cast<double>(wins) / static_cast<double>(spec.seeds);
    return cmp;
}

}  // namespace kvq
