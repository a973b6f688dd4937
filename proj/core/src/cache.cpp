#include "kvq/cache.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace kvq {

FftMode fft_mode_from_string(const std::string& name) {
    if (name == "auto") return FftMode::automatic;
    if (name == "on") return FftMode::on;
    if (name == "off") return FftMode::off;
    raise(ErrorKind::config, "unknown fft_mode: " + name);
}

ValueMode value_mode_from_string(const std::string& name) {
    if (name == "uniform2") return ValueMode::uniform2;
    if (name == "ternary") return ValueMode::ternary;
    if (name == "ternary_stp") return ValueMode::ternary_stp;
    if (name == "uniform2_per_token") return ValueMode::uniform2_per_token;
    if (name == "uniform1") return ValueMode::uniform1;
    raise(ErrorKind::config, "unknown value_mode: " + name);
}

KeyRequant key_requant_from_string(const std::string& name) {
    if (name == "faithful_full") return KeyRequant::faithful_full;
    if (name == "frozen_incremental") return KeyRequant::frozen_incremental;
    raise(ErrorKind::config, "unknown key_requant: " + name);
}

const char* to_string(FftMode mode) {
    switch (mode) {
        case FftMode::automatic: return "auto";
        case FftMode::on: return "on";
        case FftMode::off: return "off";
    }
    return "?";
}

const char* to_string(ValueMode mode) {
    switch (mode) {
        case ValueMode::uniform2: return "uniform2";
        case ValueMode::ternary: return "ternary";
        case ValueMode::ternary_stp: return "ternary_stp";
        case ValueMode::uniform2_per_token: return "uniform2_per_token";
        case ValueMode::uniform1: return "uniform1";
    }
    return "?";
}

const char* to_string(KeyRequant mode) {
    switch (mode) {
        case KeyRequant::faithful_full: return "faithful_full";
        case KeyRequant::frozen_incremental: return "frozen_incremental";
    }
    return "?";
}

void QuantConfig::validate() const {
    if (key_k < 0.0 || key_k > 1.0) raise(ErrorKind::config, "key_k must be in [0, 1]");
    if (p < 0.0 || p > 1.0) raise(ErrorKind::config, "p must be in [0, 1]");
    if (G < 1) raise(ErrorKind::config, "G must be >= 1");
    if (R < G) raise(ErrorKind::config, "R must be >= G");
    if (gamma <= 0.0) raise(ErrorKind::config, "gamma must be > 0");
    if (!(key_M > 0.0)) raise(ErrorKind::config, "key_M must be > 0");
    if (key_requant == KeyRequant::frozen_incremental && R % G != 0)
        raise(ErrorKind::config, "frozen_incremental requires R to be a multiple of G");
    if (p > 0.0 && value_mode != ValueMode::ternary_stp)
        raise(ErrorKind::config, "p > 0 requires value_mode = ternary_stp");
    if (value_mode == ValueMode::uniform1 && !allow_experimental)
        raise(ErrorKind::config, "value_mode = uniform1 requires allow_experimental = true");
}

bool QuantConfig::fft_enabled() const {
    switch (fft_mode) {
        case FftMode::on: return true;
        case FftMode::off: return false;
        case FftMode::automatic: break;
    }
    return std::abs(key_k - 0.5) < 1e-9 || std::abs(key_k - 0.75) < 1e-9;
}

KeyQuantParams QuantConfig::key_params() const {
    return KeyQuantParams{key_k, key_metric, key_M, fft_enabled(), G};
}

TernaryParams QuantConfig::ternary_params() const {
    return TernaryParams{gamma, GroupGeometry{GroupAxis::per_channel, G}};
}

// ── state helpers ───────────────────────────────────────────────────────

std::size_t CacheState::quantized_key_tokens() const {
    std::size_t n = 0;
    for (const auto& b : key_blocks) n += b.tokens;
    return n;
}

std::size_t CacheState::quantized_value_tokens() const {
    std::size_t n = 0;
    for (const auto& b : value_blocks) n += b.tokens;
    return n;
}

KvSlab CacheState::dequantized_keys() const {
    KvSlab out(0, channels);
    for (const auto& b : key_blocks) out.append_tokens(dequantize_key_block(b));
    return out;
}

KvSlab CacheState::dequantized_values() const {
    KvSlab out(0, channels);
    for (const auto& b : value_blocks) out.append_tokens(dequantize_value_entry(b));
    return out;
}

void CacheState::rebuild_derived() {
    key_view = dequantized_keys();
    value_view = dequantized_values();
    for (auto& entry : value_blocks) {
        entry.digit_cache.clear();
        entry.unprotected_local.clear();
        if (entry.is_uniform) continue;
        entry.digit_cache =
            unpack_ternary(entry.ternary.ternary.digits, entry.ternary.ternary.digit_count());
        const auto& prot = entry.ternary.protected_local;
        entry.unprotected_local.reserve(entry.tokens - prot.size());
        for (std::size_t t = 0, pi = 0; t < entry.tokens; ++t) {
            if (pi < prot.size() && prot[pi] == t) ++pi;
            else entry.unprotected_local.push_back(t);
        }
    }
}

// ── quantization dispatch ───────────────────────────────────────────────

ValueBlockEntry quantize_value_window(const QuantConfig& config, const KvSlab& window,
                                      std::size_t token_begin,
                                      const ProtectedSet& protected_set) {
    ValueBlockEntry entry;
    entry.token_begin = token_begin;
    entry.tokens = window.tokens;
    switch (config.value_mode) {
        case ValueMode::uniform2:
            entry.is_uniform = true;
            entry.uniform =
                uniform_quantize(window, 2, GroupGeometry{GroupAxis::per_channel, config.G});
            break;
        case ValueMode::uniform1:
            entry.is_uniform = true;
            entry.uniform =
                uniform_quantize(window, 1, GroupGeometry{GroupAxis::per_channel, config.G});
            break;
        case ValueMode::uniform2_per_token:
            entry.is_uniform = true;
            entry.uniform =
                uniform_quantize(window, 2, GroupGeometry{GroupAxis::per_token, config.G});
            break;
        case ValueMode::ternary:
        case ValueMode::ternary_stp:
            entry.ternary = quantize_value_block(window, config.ternary_params(), protected_set,
                                                 token_begin);
            break;
    }
    return entry;
}

KvSlab dequantize_value_entry(const ValueBlockEntry& entry) {
    return entry.is_uniform ? uniform_dequantize(entry.uniform)
                            : dequantize_value_block(entry.ternary);
}

namespace {

ProtectedSet intersect_span(const ProtectedSet& set, std::size_t begin, std::size_t end) {
    ProtectedSet out;
    out.p = set.p;
    for (std::size_t idx : set.indices)
        if (idx >= begin && idx < end) out.indices.push_back(idx);
    return out;
}

std::vector<double> softmax(std::vector<double> logits) {
    double hi = -std::numeric_limits<double>::infinity();
    for (double v : logits) hi = std::max(hi, v);
    double sum = 0.0;
    for (double& v : logits) {
        v = std::exp(v - hi);
        sum += v;
    }
    for (double& v : logits) v /= sum;
    return logits;
}

double dot_row(const std::vector<float>& q, std::span<const float> row) {
    double acc = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c)
        acc += static_cast<double>(q[c]) * static_cast<double>(row[c]);
    return acc;
}

// weights . V over quantized blocks plus residual; ternary spans may use
// the add/sub digit accumulation instead of dequantize-then-multiply
std::vector<double> weighted_values(const CacheState& state, const std::vector<double>& weights) {
    std::vector<double> out(state.channels, 0.0);
    const std::size_t quantized = state.quantized_value_tokens();

    if (!state.config.ternary_fastpath) {
        for (std::size_t t = 0; t < quantized; ++t) {
            auto row = state.value_view.row(t);
            for (std::size_t c = 0; c < state.channels; ++c)
                out[c] += weights[t] * static_cast<double>(row[c]);
        }
    } else {
        for (const auto& entry : state.value_blocks) {
            if (entry.is_uniform) {
                for (std::size_t t = 0; t < entry.tokens; ++t) {
                    const std::size_t g = entry.token_begin + t;
                    auto row = state.value_view.row(g);
                    for (std::size_t c = 0; c < state.channels; ++c)
                        out[c] += weights[g] * static_cast<double>(row[c]);
                }
                continue;
            }
            // protected 2-bit rows: plain multiply on the dequantized view
            for (std::size_t local : entry.ternary.protected_local) {
                const std::size_t g = entry.token_begin + local;
                auto row = state.value_view.row(g);
                for (std::size_t c = 0; c < state.channels; ++c)
                    out[c] += weights[g] * static_cast<double>(row[c]);
            }
            // ternary rows: per-group signed weight accumulation, then scale
            const TernaryBlock& tern = entry.ternary.ternary;
            const std::size_t g_size = tern.geometry.group_size;
            const std::size_t per_line = tern.tokens / g_size;
            for (std::size_t c = 0; c < tern.channels; ++c) {
                double acc_c = 0.0;
                for (std::size_t tg = 0; tg < per_line; ++tg) {
                    double acc = 0.0;
                    const std::size_t g = c * per_line + tg;
                    for (std::size_t e = 0; e < g_size; ++e) {
                        const std::size_t local = tg * g_size + e;
                        if (local >= entry.unprotected_local.size()) break;  // pad rows
                        const int8_t d = entry.digit_cache[g * g_size + e];
                        if (d == 0) continue;
                        const double w =
                            weights[entry.token_begin + entry.unprotected_local[local]];
                        acc += d > 0 ? w : -w;
                    }
                    acc_c += acc * static_cast<double>(tern.scales[g]);
                }
                out[c] += acc_c;
            }
        }
    }

    for (std::size_t t = 0; t < state.value_residual.tokens; ++t) {
        auto row = state.value_residual.row(t);
        for (std::size_t c = 0; c < state.channels; ++c)
            out[c] += weights[quantized + t] * static_cast<double>(row[c]);
    }
    return out;
}

}  // namespace

// ── lifecycle ───────────────────────────────────────────────────────────

CacheState prefill(const KvSlab& keys, const KvSlab& values, const QuantConfig& config,
                   const SegmentSpec& segments, const KvSlab* vision_embed,
                   const KvSlab* text_embed) {
    config.validate();
    keys.validate();
    values.validate();
    if (keys.tokens != values.tokens || keys.channels != values.channels)
        raise(ErrorKind::geometry, "key/value shapes differ");
    segments.validate(keys.tokens);

    CacheState state;
    state.config = config;
    state.segments = segments;
    state.channels = keys.channels;
    state.tokens_seen = keys.tokens;

    if (config.p > 0.0) {
        if (vision_embed == nullptr || text_embed == nullptr)
            raise(ErrorKind::config, "p > 0 requires vision and text embeddings");
        vision_embed->validate();
        text_embed->validate();
        if (vision_embed->tokens != segments.vision_len)
            raise(ErrorKind::geometry, "vision embedding token count != vision segment length");
        state.protected_set =
            select_protected(importance_scores(*vision_embed, *text_embed), config.p,
                             segments.system_len, segments.vision_len);
    }

    if (!config.enabled) {
        state.key_residual = keys;
        state.value_residual = values;
        state.rebuild_derived();
        return state;
    }

    const std::size_t q_len = keys.tokens - keys.tokens % config.G;
    if (q_len > 0) {
        QuantizedKeyBlock kb = quantize_key_block(keys.slice_tokens(0, q_len),
                                                  config.key_params(), std::nullopt);
        if (config.key_requant == KeyRequant::frozen_incremental)
            state.frozen_partition = kb.partition;
        state.key_blocks.push_back(std::move(kb));
        state.value_blocks.push_back(quantize_value_window(
            config, values.slice_tokens(0, q_len), 0,
            intersect_span(state.protected_set, 0, q_len)));
    }
    state.key_residual = keys.slice_tokens(q_len, keys.tokens);
    state.value_residual = values.slice_tokens(q_len, values.tokens);
    state.rebuild_derived();
    return state;
}

void flush_residual(CacheState& state) {
    if (!state.config.enabled) return;
    const QuantConfig& config = state.config;
    if (state.key_residual.tokens != state.value_residual.tokens)
        raise(ErrorKind::geometry, "key/value residual lengths diverged");
    ++state.flush_count;

    const std::size_t len = state.value_residual.tokens;
    const std::size_t q_len = len - len % config.G;
    if (q_len == 0) return;

    // values append; decode-time spans never carry protection
    state.value_blocks.push_back(quantize_value_window(config,
                                                  state.value_residual.slice_tokens(0, q_len),
                                                  state.quantized_value_tokens(), ProtectedSet{}));
    state.value_residual = state.value_residual.slice_tokens(q_len, len);

    if (config.key_requant == KeyRequant::faithful_full) {
        KvSlab full = state.dequantized_keys();
        full.append_tokens(state.key_residual);
        const std::size_t kq = full.tokens - full.tokens % config.G;
        QuantizedKeyBlock kb =
            quantize_key_block(full.slice_tokens(0, kq), config.key_params(), std::nullopt);
        state.key_blocks.clear();
        state.key_blocks.push_back(std::move(kb));
        state.key_residual = full.slice_tokens(kq, full.tokens);
    } else {
        const KvSlab window = state.key_residual.slice_tokens(0, q_len);
        QuantizedKeyBlock kb =
            quantize_key_block(window, config.key_params(), state.frozen_partition);
        kb.token_begin = state.quantized_key_tokens();
        if (!state.frozen_partition) state.frozen_partition = kb.partition;
        state.key_blocks.push_back(std::move(kb));
        state.key_residual = state.key_residual.slice_tokens(q_len, len);
    }
    state.rebuild_derived();
}

std::vector<double> decode_step(CacheState& state, const std::vector<float>& q,
                                const std::vector<float>& k, const std::vector<float>& v) {
    if (q.size() != state.channels || k.size() != state.channels || v.size() != state.channels)
        raise(ErrorKind::geometry, "decode vector width differs from cache channels");
    for (const auto* vec : {&q, &k, &v})
        for (float x : *vec)
            if (!std::isfinite(x)) raise(ErrorKind::data, "decode step contains a non-finite value");

    KvSlab one(1, state.channels);
    std::copy(k.begin(), k.end(), one.data.begin());
    state.key_residual.append_tokens(one);
    std::copy(v.begin(), v.end(), one.data.begin());
    state.value_residual.append_tokens(one);
    ++state.tokens_seen;

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(state.channels));
    const std::size_t quantized = state.quantized_key_tokens();
    std::vector<double> logits(quantized + state.key_residual.tokens);
    for (std::size_t t = 0; t < quantized; ++t)
        logits[t] = dot_row(q, state.key_view.row(t)) * inv_sqrt_d;
    for (std::size_t t = 0; t < state.key_residual.tokens; ++t)
        logits[quantized + t] = dot_row(q, state.key_residual.row(t)) * inv_sqrt_d;

    std::vector<double> out = weighted_values(state, softmax(std::move(logits)));

    if (state.config.enabled && state.value_residual.tokens >= state.config.R)
        flush_residual(state);
    return out;
}

std::vector<double> attention_reference(const std::vector<float>& q, const KvSlab& keys,
                                        const KvSlab& values) {
    if (keys.tokens != values.tokens || keys.channels != values.channels)
        raise(ErrorKind::geometry, "key/value shapes differ");
    if (q.size() != keys.channels)
        raise(ErrorKind::geometry, "query width differs from key channels");
    if (keys.tokens == 0) raise(ErrorKind::geometry, "attention over an empty cache");

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(keys.channels));
    std::vector<double> logits(keys.tokens);
    for (std::size_t t = 0; t < keys.tokens; ++t)
        logits[t] = dot_row(q, keys.row(t)) * inv_sqrt_d;
    const std::vector<double> weights = softmax(std::move(logits));

    std::vector<double> out(values.channels, 0.0);
    for (std::size_t t = 0; t < values.tokens; ++t) {
        auto row = values.row(t);
        for (std::size_t c = 0; c < values.channels; ++c)
            out[c] += weights[t] * static_cast<double>(row[c]);
    }
    return out;
}

DivergenceReport run_divergence(const KvSlab& keys, const KvSlab& values, const DecodeTrace& trace,
                                const QuantConfig& config, const SegmentSpec& segments,
                                const KvSlab* vision_embed, const KvSlab* text_embed) {
    trace.validate();
    if (trace.channels != keys.channels)
        raise(ErrorKind::geometry, "trace channel count differs from prefill slab");

    CacheState state = prefill(keys, values, config, segments, vision_embed, text_embed);
    KvSlab ref_k = keys;
    KvSlab ref_v = values;
    KvSlab one(1, keys.channels);

    DivergenceReport report;
    report.per_step.reserve(trace.steps.size());
    for (const auto& step : trace.steps) {
        std::copy(step.k.begin(), step.k.end(), one.data.begin());
        ref_k.append_tokens(one);
        std::copy(step.v.begin(), step.v.end(), one.data.begin());
        ref_v.append_tokens(one);

        const std::vector<double> got = decode_step(state, step.q, step.k, step.v);
        const std::vector<double> want = attention_reference(step.q, ref_k, ref_v);

        double num = 0.0, den = 0.0;
        for (std::size_t c = 0; c < got.size(); ++c) {
            const double d = got[c] - want[c];
            num += d * d;
            den += want[c] * want[c];
        }
        const double rel = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
        report.per_step.push_back(rel);
        report.mean += rel;
        report.max = std::max(report.max, rel);
    }
    if (!report.per_step.empty()) report.mean /= static_cast<double>(report.per_step.size());
    return report;
}

}  // namespace kvq
