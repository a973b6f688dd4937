#include "kvq/key_quant.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>

#include "kvq/fft.hpp"

namespace kvq {

ChannelMetric channel_metric_from_string(const std::string& name) {
    if (name == "range") return ChannelMetric::range;
    if (name == "variance") return ChannelMetric::variance;
    if (name == "outlier_count") return ChannelMetric::outlier_count;
    raise(ErrorKind::config, "unknown channel metric: " + name);
}

const char* to_string(ChannelMetric metric) {
    switch (metric) {
        case ChannelMetric::range: return "range";
        case ChannelMetric::variance: return "variance";
        case ChannelMetric::outlier_count: return "outlier_count";
    }
    return "?";
}

std::size_t ChannelPartition::anomalous_count() const {
    return static_cast<std::size_t>(
        std::count(anomalous_mask.begin(), anomalous_mask.end(), uint8_t{1}));
}

std::vector<std::size_t> ChannelPartition::anomalous_indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t c = 0; c < anomalous_mask.size(); ++c)
        if (anomalous_mask[c]) idx.push_back(c);
    return idx;
}

std::vector<std::size_t> ChannelPartition::normal_indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t c = 0; c < anomalous_mask.size(); ++c)
        if (!anomalous_mask[c]) idx.push_back(c);
    return idx;
}

ChannelScore score_channels(const KvSlab& window, ChannelMetric metric, double M) {
    window.validate();
    if (window.tokens == 0 || window.channels == 0)
        raise(ErrorKind::geometry, "cannot score an empty window");

    ChannelScore score;
    score.metric = metric;
    score.M = M;
    score.values.resize(window.channels);

    for (std::size_t c = 0; c < window.channels; ++c) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        double sum = 0.0;
        for (std::size_t t = 0; t < window.tokens; ++t) {
            double v = window.at(t, c);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            sum += v;
        }
        const double mean = sum / static_cast<double>(window.tokens);
        switch (metric) {
            case ChannelMetric::range:
                score.values[c] = hi - lo;
                break;
            case ChannelMetric::variance: {
                double acc = 0.0;
                for (std::size_t t = 0; t < window.tokens; ++t) {
                    double d = window.at(t, c) - mean;
                    acc += d * d;
                }
                score.values[c] = acc / static_cast<double>(window.tokens);
                break;
            }
            case ChannelMetric::outlier_count: {
                std::size_t n = 0;
                for (std::size_t t = 0; t < window.tokens; ++t)
                    if (window.at(t, c) > M * mean) ++n;
                score.values[c] = static_cast<double>(n);
                break;
            }
        }
    }
    return score;
}

ChannelPartition partition_channels(const ChannelScore& scores, double k) {
    if (k < 0.0 || k > 1.0) raise(ErrorKind::range, "k must be in [0, 1]");
    const std::size_t channels = scores.values.size();
    const std::size_t take = static_cast<std::size_t>(
        std::llround(k * static_cast<double>(channels)));

    std::vector<std::size_t> order(channels);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores.values[a] > scores.values[b];
    });

    ChannelPartition part;
    part.k = k;
    part.anomalous_mask.assign(channels, 0);
    for (std::size_t i = 0; i < take; ++i) part.anomalous_mask[order[i]] = 1;
    return part;
}

// ── FFT sign coding ─────────────────────────────────────────────────────

namespace {

// Stored half-spectrum components in payload order: real parts of bins
// 0..G/2, then imaginary parts of bins 1..G/2-1. G components total.
std::vector<double> stored_components(const std::vector<std::complex<double>>& spectrum) {
    const std::size_t g = spectrum.size();
    std::vector<double> comps;
    comps.reserve(g);
    for (std::size_t b = 0; b <= g / 2; ++b) comps.push_back(spectrum[b].real());
    for (std::size_t b = 1; b < g / 2; ++b) comps.push_back(spectrum[b].imag());
    return comps;
}

void require_even_group(std::size_t g) {
    if (g < 2 || g % 2 != 0)
        raise(ErrorKind::geometry, "FFT sign coding requires an even group size >= 2");
}

}  // namespace

FftSignGroup fft_sign_quantize(const std::vector<double>& window) {
    require_even_group(window.size());
    const std::vector<double> comps = stored_components(dft_forward(window));

    double abs_sum = 0.0;
    std::vector<uint32_t> bits(comps.size());
    for (std::size_t i = 0; i < comps.size(); ++i) {
        abs_sum += std::abs(comps[i]);
        bits[i] = comps[i] >= 0.0 ? 1u : 0u;
    }
    FftSignGroup out;
    out.bits = pack_codes(bits, 1);
    out.s_fft = static_cast<float>(abs_sum / static_cast<double>(comps.size()));
    return out;
}

std::vector<double> fft_sign_dequantize(const std::vector<uint8_t>& bits, float s_fft,
                                        std::size_t group_size) {
    require_even_group(group_size);
    const std::vector<uint32_t> codes = unpack_codes(bits, 1, group_size);
    const double s = s_fft;

    std::vector<std::complex<double>> spectrum(group_size, {0.0, 0.0});
    const std::size_t half = group_size / 2;
    std::size_t cursor = 0;
    for (std::size_t b = 0; b <= half; ++b)
        spectrum[b].real((2.0 * codes[cursor++] - 1.0) * s);
    for (std::size_t b = 1; b < half; ++b)
        spectrum[b].imag((2.0 * codes[cursor++] - 1.0) * s);
    for (std::size_t b = half + 1; b < group_size; ++b)
        spectrum[b] = std::conj(spectrum[group_size - b]);
    return dft_inverse_real(spectrum);
}

std::size_t FftSignBlock::group_count() const {
    if (group_size == 0 || tokens % group_size != 0)
        raise(ErrorKind::geometry, "token extent is not a multiple of group size");
    return channels * (tokens / group_size);
}

FftSignBlock fft_sign_quantize_block(const KvSlab& window, std::size_t group_size) {
    window.validate();
    require_even_group(group_size);
    if (window.tokens % group_size != 0)
        raise(ErrorKind::geometry, "token extent is not a multiple of group size");

    FftSignBlock block;
    block.tokens = window.tokens;
    block.channels = window.channels;
    block.group_size = group_size;
    const std::size_t per_line = window.tokens / group_size;
    const std::size_t bpg = block.bytes_per_group();
    block.sign_bits.resize(window.channels * per_line * bpg, 0);
    block.scales.resize(window.channels * per_line, 0.0f);

    std::vector<double> group(group_size);
    for (std::size_t c = 0; c < window.channels; ++c) {
        for (std::size_t tg = 0; tg < per_line; ++tg) {
            for (std::size_t e = 0; e < group_size; ++e)
                group[e] = window.at(tg * group_size + e, c);
            FftSignGroup q = fft_sign_quantize(group);
            const std::size_t g = c * per_line + tg;
            block.scales[g] = q.s_fft;
            std::copy(q.bits.begin(), q.bits.end(),
                      block.sign_bits.begin() + static_cast<std::ptrdiff_t>(g * bpg));
        }
    }
    return block;
}

KvSlab fft_sign_dequantize_block(const FftSignBlock& block) {
    require_even_group(block.group_size);
    const std::size_t groups = block.group_count();
    if (block.scales.size() != groups)
        raise(ErrorKind::length, "scale count does not match group count");
    const std::size_t bpg = block.bytes_per_group();
    if (block.sign_bits.size() != groups * bpg)
        raise(ErrorKind::length, "sign bit byte count does not match group count");

    KvSlab out(block.tokens, block.channels);
    const std::size_t per_line = block.tokens / block.group_size;
    for (std::size_t c = 0; c < block.channels; ++c) {
        for (std::size_t tg = 0; tg < per_line; ++tg) {
            const std::size_t g = c * per_line + tg;
            std::vector<uint8_t> bits(
                block.sign_bits.begin() + static_cast<std::ptrdiff_t>(g * bpg),
                block.sign_bits.begin() + static_cast<std::ptrdiff_t>((g + 1) * bpg));
            std::vector<double> time =
                fft_sign_dequantize(bits, block.scales[g], block.group_size);
            for (std::size_t e = 0; e < block.group_size; ++e)
                out.at(tg * block.group_size + e, c) = static_cast<float>(time[e]);
        }
    }
    return out;
}

// ── mixed-precision key block ───────────────────────────────────────────

QuantizedKeyBlock quantize_key_block(const KvSlab& window, const KeyQuantParams& params,
                                     const std::optional<ChannelPartition>& frozen) {
    window.validate();
    if (window.tokens % params.group_size != 0)
        raise(ErrorKind::geometry, "token extent is not a multiple of group size");

    QuantizedKeyBlock block;
    block.tokens = window.tokens;
    block.channels = window.channels;
    if (frozen) {
        if (frozen->channels() != window.channels)
            raise(ErrorKind::geometry, "frozen partition channel count mismatch");
        block.partition = *frozen;
    } else {
        block.partition =
            partition_channels(score_channels(window, params.metric, params.M), params.k);
    }

    const GroupGeometry geom{GroupAxis::per_channel, params.group_size};
    block.anomalous =
        uniform_quantize(window.gather_channels(block.partition.anomalous_indices()), 2, geom);
    const KvSlab normal = window.gather_channels(block.partition.normal_indices());
    block.fft_used = params.use_fft && normal.channels > 0;
    if (block.fft_used) {
        block.normal_fft = fft_sign_quantize_block(normal, params.group_size);
    } else {
        block.normal_uniform = uniform_quantize(normal, 1, geom);
    }
    return block;
}

KvSlab dequantize_key_block(const QuantizedKeyBlock& block) {
    const KvSlab anomalous = uniform_dequantize(block.anomalous);
    const KvSlab normal = block.fft_used ? fft_sign_dequantize_block(block.normal_fft)
                                         : uniform_dequantize(block.normal_uniform);

    KvSlab out(block.tokens, block.channels);
    const std::vector<std::size_t> a_idx = block.partition.anomalous_indices();
    const std::vector<std::size_t> n_idx = block.partition.normal_indices();
    if (a_idx.size() != anomalous.channels || n_idx.size() != normal.channels ||
        a_idx.size() + n_idx.size() != block.channels)
        raise(ErrorKind::geometry, "partition does not cover the block's channels");
    for (std::size_t i = 0; i < a_idx.size(); ++i)
        for (std::size_t t = 0; t < block.tokens; ++t) out.at(t, a_idx[i]) = anomalous.at(t, i);
    for (std::size_t i = 0; i < n_idx.size(); ++i)
        for (std::size_t t = 0; t < block.tokens; ++t) out.at(t, n_idx[i]) = normal.at(t, i);
    return out;
}

}  // namespace kvq
