#include "kvq/report.hpp"

#include <cmath>

namespace kvq {

ErrorReport reconstruction_error(const KvSlab& original, const KvSlab& reconstructed) {
    original.validate();
    reconstructed.validate();
    if (original.tokens != reconstructed.tokens || original.channels != reconstructed.channels)
        raise(ErrorKind::geometry, "original/reconstructed shapes differ");

    ErrorReport report;
    report.per_channel_mse.assign(original.channels, 0.0);
    report.per_token_mse.assign(original.tokens, 0.0);
    double total = 0.0;
    for (std::size_t t = 0; t < original.tokens; ++t) {
        for (std::size_t c = 0; c < original.channels; ++c) {
            const double d = static_cast<double>(original.at(t, c)) -
                             static_cast<double>(reconstructed.at(t, c));
            const double sq = d * d;
            total += sq;
            report.per_channel_mse[c] += sq;
            report.per_token_mse[t] += sq;
            report.max_abs = std::max(report.max_abs, std::abs(d));
        }
    }
    const double elems = static_cast<double>(original.tokens) *
                         static_cast<double>(original.channels);
    if (elems > 0.0) {
        report.mse = total / elems;
        for (double& v : report.per_channel_mse) v /= static_cast<double>(original.tokens);
        for (double& v : report.per_token_mse) v /= static_cast<double>(original.channels);
    }
    return report;
}

std::uint64_t DeployShape::side_elements() const { return elements() / 2; }

void DeployShape::validate() const {
    if (kv_pairs == 0 || layers == 0 || head_dim == 0 || tokens == 0 || batch == 0)
        raise(ErrorKind::config, "deployment shape factors must all be nonzero");
    if (kv_pairs % 2 != 0)
        raise(ErrorKind::config, "kv_pairs must be even (key and value sides)");
}

namespace {

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

std::uint64_t rounded_fraction(double frac, std::uint64_t total) {
    return static_cast<std::uint64_t>(std::llround(frac * static_cast<double>(total)));
}

SideMemory fp16_side(std::uint64_t side) {
    SideMemory m;
    m.code_bits_per_element = 16.0;
    m.theory_bits_per_element = 16.0;
    m.code_bytes = side * 2;
    return m;
}

SideMemory key_side(const QuantConfig& config, std::uint64_t side) {
    const std::uint64_t anom = rounded_fraction(config.key_k, side);
    const std::uint64_t norm = side - anom;
    const std::uint64_t code_bits = anom * 2 + norm;

    SideMemory m;
    m.code_bytes = ceil_div(code_bits, 8);
    m.code_bits_per_element = static_cast<double>(code_bits) / static_cast<double>(side);
    m.theory_bits_per_element = m.code_bits_per_element;
    // anomalous groups carry f32 scale+zero; FFT groups a single f32 scale
    const std::uint64_t anom_meta = ceil_div(anom, config.G) * 8;
    const std::uint64_t norm_meta = ceil_div(norm, config.G) * (config.fft_enabled() ? 4 : 8);
    m.metadata_bytes = anom_meta + norm_meta;
    m.metadata_bits_per_element =
        static_cast<double>(m.metadata_bytes) * 8.0 / static_cast<double>(side);
    return m;
}

SideMemory value_side(const QuantConfig& config, std::uint64_t side) {
    const double log2_3 = std::log2(3.0);
    std::uint64_t prot = 0;
    std::uint64_t tern = 0;
    std::uint64_t uniform_elems = 0;
    int uniform_bits = 2;

    switch (config.value_mode) {
        case ValueMode::ternary: tern = side; break;
        case ValueMode::ternary_stp:
            prot = rounded_fraction(config.p, side);
            tern = side - prot;
            break;
        case ValueMode::uniform2:
        case ValueMode::uniform2_per_token: uniform_elems = side; break;
        case ValueMode::uniform1:
            uniform_elems = side;
            uniform_bits = 1;
            break;
    }

    SideMemory m;
    const std::uint64_t prot_bytes = ceil_div(prot * 2, 8);
    const std::uint64_t tern_bytes = ceil_div(tern, 5);  // five base-3 digits per byte
    const std::uint64_t unif_bytes =
        ceil_div(uniform_elems * static_cast<std::uint64_t>(uniform_bits), 8);
    m.code_bytes = prot_bytes + tern_bytes + unif_bytes;
    m.code_bits_per_element =
        static_cast<double>(m.code_bytes) * 8.0 / static_cast<double>(side);

    const double side_d = static_cast<double>(side);
    m.theory_bits_per_element = (static_cast<double>(prot) * 2.0 +
                                 static_cast<double>(tern) * log2_3 +
                                 static_cast<double>(uniform_elems) * uniform_bits) /
                                side_d;

    const std::uint64_t meta = ceil_div(prot, config.G) * 8 + ceil_div(tern, config.G) * 4 +
                               ceil_div(uniform_elems, config.G) * 8;
    m.metadata_bytes = meta;
    m.metadata_bits_per_element = static_cast<double>(meta) * 8.0 / side_d;
    return m;
}

}  // namespace

MemoryReport memory_report(const QuantConfig& config, const DeployShape& shape) {
    config.validate();
    shape.validate();

    MemoryReport report;
    const std::uint64_t side = shape.side_elements();
    report.fp16_total_bytes = shape.elements() * 2;

    if (!config.enabled) {
        report.key = fp16_side(side);
        report.value = fp16_side(side);
        report.total_bytes = report.fp16_total_bytes;
        return report;
    }

    report.key = key_side(config, side);
    report.value = value_side(config, side);
    report.total_bytes = report.key.code_bytes + report.key.metadata_bytes +
                         report.value.code_bytes + report.value.metadata_bytes;
    // FP32 residual window per side, on top of total_bytes
    const std::uint64_t res_tokens = std::min<std::uint64_t>(config.R, shape.tokens);
    report.residual_bytes =
        shape.kv_pairs * shape.layers * shape.head_dim * shape.batch * res_tokens * 4;
    return report;
}

}  // namespace kvq
