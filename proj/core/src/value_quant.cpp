#include "kvq/value_quant.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kvq {

TernaryBlock ternary_quantize(const KvSlab& window, const TernaryParams& params) {
    window.validate();
    params.validate();
    GroupLayout layout = GroupLayout::create(params.geometry, window.tokens, window.channels);

    TernaryBlock block;
    block.geometry = params.geometry;
    block.tokens = window.tokens;
    block.channels = window.channels;

    const std::size_t groups = layout.group_count();
    const std::size_t g_size = params.geometry.group_size;
    block.scales.resize(groups);

    std::vector<int8_t> digits(window.tokens * window.channels, 0);
    for (std::size_t g = 0; g < groups; ++g) {
        double abs_sum = 0.0;
        for (std::size_t e = 0; e < g_size; ++e)
            abs_sum += std::abs(static_cast<double>(window.data[layout.element_index(g, e)]));
        const double s = abs_sum / static_cast<double>(g_size);
        const double alpha = params.gamma * s;
        block.scales[g] = static_cast<float>(s);
        for (std::size_t e = 0; e < g_size; ++e) {
            double v = window.data[layout.element_index(g, e)];
            int8_t d = 0;
            if (v > alpha) d = 1;
            else if (v < -alpha) d = -1;
            digits[g * g_size + e] = d;
        }
    }
    block.digits = pack_ternary(digits);
    return block;
}

KvSlab ternary_dequantize(const TernaryBlock& block) {
    GroupLayout layout = GroupLayout::create(block.geometry, block.tokens, block.channels);
    const std::size_t groups = layout.group_count();
    if (block.scales.size() != groups)
        raise(ErrorKind::length, "scale count does not match group count");
    const std::vector<int8_t> digits = unpack_ternary(block.digits, block.digit_count());

    KvSlab out(block.tokens, block.channels);
    const std::size_t g_size = block.geometry.group_size;
    for (std::size_t g = 0; g < groups; ++g) {
        const double s = block.scales[g];
        for (std::size_t e = 0; e < g_size; ++e)
            out.data[layout.element_index(g, e)] =
                static_cast<float>(static_cast<double>(digits[g * g_size + e]) * s);
    }
    return out;
}

std::vector<double> importance_scores(const KvSlab& vision, const KvSlab& text) {
    vision.validate();
    text.validate();
    if (vision.channels != text.channels)
        raise(ErrorKind::geometry, "vision/text channel counts differ");

    std::vector<double> scores(vision.tokens, 0.0);
    if (text.tokens == 0) return scores;

    // mean over text tokens of dot(v_i, t_j) = dot(v_i, mean_j t_j)
    std::vector<double> text_mean(text.channels, 0.0);
    for (std::size_t t = 0; t < text.tokens; ++t)
        for (std::size_t c = 0; c < text.channels; ++c) text_mean[c] += text.at(t, c);
    for (double& v : text_mean) v /= static_cast<double>(text.tokens);

    for (std::size_t i = 0; i < vision.tokens; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < vision.channels; ++c)
            acc += static_cast<double>(vision.at(i, c)) * text_mean[c];
        scores[i] = acc;
    }
    return scores;
}

ProtectedSet select_protected(const std::vector<double>& scores, double p, std::size_t system_len,
                              std::size_t vision_len) {
    if (p < 0.0 || p > 1.0) raise(ErrorKind::range, "p must be in [0, 1]");
    if (scores.size() != vision_len)
        raise(ErrorKind::geometry, "score count does not match vision token count");
    const std::size_t take =
        static_cast<std::size_t>(std::llround(p * static_cast<double>(vision_len)));

    std::vector<std::size_t> order(vision_len);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    order.resize(take);
    std::sort(order.begin(), order.end());

    ProtectedSet set;
    set.p = p;
    set.indices.reserve(take);
    for (std::size_t i : order) set.indices.push_back(system_len + i);
    return set;
}

namespace {

// Pads a token subset to a group multiple by replicating its last token.
// Replication leaves each group's min/max and digit pattern for the real
// tokens untouched along the token axis.
KvSlab pad_tokens(const KvSlab& part, std::size_t g_size, std::size_t& pad_out) {
    pad_out = 0;
    if (part.tokens == 0 || part.tokens % g_size == 0) return part;
    pad_out = g_size - part.tokens % g_size;
    KvSlab padded = part;
    for (std::size_t i = 0; i < pad_out; ++i) {
        padded.data.insert(padded.data.end(),
                           part.data.end() - static_cast<std::ptrdiff_t>(part.channels),
                           part.data.end());
        ++padded.tokens;
    }
    return padded;
}

}  // namespace

QuantizedValueBlock quantize_value_block(const KvSlab& window, const TernaryParams& params,
                                         const ProtectedSet& protected_set,
                                         std::size_t token_begin) {
    window.validate();
    params.validate();

    QuantizedValueBlock block;
    block.token_begin = token_begin;
    block.tokens = window.tokens;
    block.channels = window.channels;

    for (std::size_t abs_idx : protected_set.indices) {
        if (abs_idx < token_begin || abs_idx >= token_begin + window.tokens)
            raise(ErrorKind::index, "protected token " + std::to_string(abs_idx) +
                                        " outside window span");
        std::size_t local = abs_idx - token_begin;
        if (!block.protected_local.empty() && local <= block.protected_local.back())
            raise(ErrorKind::index, "protected indices must be strictly ascending");
        block.protected_local.push_back(local);
    }
    if (!block.protected_local.empty() && params.geometry.axis != GroupAxis::per_channel)
        raise(ErrorKind::config, "protected tokens require per-channel geometry");

    std::vector<std::size_t> unprotected;
    unprotected.reserve(window.tokens - block.protected_local.size());
    for (std::size_t t = 0, pi = 0; t < window.tokens; ++t) {
        if (pi < block.protected_local.size() && block.protected_local[pi] == t) ++pi;
        else unprotected.push_back(t);
    }

    const std::size_t g_size = params.geometry.group_size;
    KvSlab tern_src = window.gather_tokens(unprotected);
    if (params.geometry.axis == GroupAxis::per_channel)
        tern_src = pad_tokens(tern_src, g_size, block.ternary_pad);
    block.ternary = ternary_quantize(tern_src, params);

    KvSlab prot_src =
        pad_tokens(window.gather_tokens(block.protected_local), g_size, block.protected_pad);
    block.protected_tokens =
        uniform_quantize(prot_src, 2, GroupGeometry{GroupAxis::per_channel, g_size});
    return block;
}

KvSlab dequantize_value_block(const QuantizedValueBlock& block) {
    const KvSlab tern = ternary_dequantize(block.ternary);
    const KvSlab prot = uniform_dequantize(block.protected_tokens);
    if (tern.tokens - block.ternary_pad + prot.tokens - block.protected_pad != block.tokens)
        raise(ErrorKind::geometry, "value block paths do not cover the token span");

    KvSlab out(block.tokens, block.channels);
    std::size_t ti = 0;
    for (std::size_t t = 0, pi = 0; t < block.tokens; ++t) {
        std::span<const float> src;
        if (pi < block.protected_local.size() && block.protected_local[pi] == t) {
            src = prot.row(pi);
            ++pi;
        } else {
            src = tern.row(ti);
            ++ti;
        }
        std::copy(src.begin(), src.end(), out.row(t).begin());
    }
    return out;
}

}  // namespace kvq
