#include "kvq/snapshot.hpp"

#include <cstring>
#include <sstream>

#include "kvq/wire.hpp"

namespace kvq {

namespace {

using wire::Reader;

uint8_t tag(Reader& in, uint8_t max, const char* what) {
    const uint8_t v = in.u8();
    if (v > max) raise(ErrorKind::format, std::string("bad ") + what + " tag in snapshot");
    return v;
}

void put_config(std::vector<uint8_t>& out, const QuantConfig& c) {
    wire::put_u8(out, c.enabled ? 1 : 0);
    wire::put_f64(out, c.key_k);
    wire::put_u8(out, static_cast<uint8_t>(c.key_metric));
    wire::put_f64(out, c.key_M);
    wire::put_u8(out, static_cast<uint8_t>(c.fft_mode));
    wire::put_u8(out, static_cast<uint8_t>(c.value_mode));
    wire::put_f64(out, c.gamma);
    wire::put_f64(out, c.p);
    wire::put_u64(out, c.G);
    wire::put_u64(out, c.R);
    wire::put_u8(out, static_cast<uint8_t>(c.key_requant));
    wire::put_u8(out, c.ternary_fastpath ? 1 : 0);
    wire::put_u8(out, c.allow_experimental ? 1 : 0);
}

QuantConfig get_config(Reader& in) {
    QuantConfig c;
    c.enabled = in.u8() != 0;
    c.key_k = in.f64();
    c.key_metric = static_cast<ChannelMetric>(tag(in, 2, "channel metric"));
    c.key_M = in.f64();
    c.fft_mode = static_cast<FftMode>(tag(in, 2, "fft mode"));
    c.value_mode = static_cast<ValueMode>(tag(in, 4, "value mode"));
    c.gamma = in.f64();
    c.p = in.f64();
    c.G = in.u64();
    c.R = in.u64();
    c.key_requant = static_cast<KeyRequant>(tag(in, 1, "key requant mode"));
    c.ternary_fastpath = in.u8() != 0;
    c.allow_experimental = in.u8() != 0;
    return c;
}

void put_indices(std::vector<uint8_t>& out, const std::vector<std::size_t>& idx) {
    wire::put_u64(out, idx.size());
    for (std::size_t v : idx) wire::put_u64(out, v);
}

std::vector<std::size_t> get_indices(Reader& in) {
    const std::size_t n = in.u64();
    std::vector<std::size_t> idx(n);
    for (auto& v : idx) v = in.u64();
    return idx;
}

void put_f32s(std::vector<uint8_t>& out, const std::vector<float>& vals) {
    wire::put_u64(out, vals.size());
    for (float v : vals) wire::put_f32(out, v);
}

std::vector<float> get_f32s(Reader& in) {
    const std::size_t n = in.u64();
    std::vector<float> vals(n);
    for (auto& v : vals) v = in.f32();
    return vals;
}

void put_blob(std::vector<uint8_t>& out, const std::vector<uint8_t>& bytes) {
    wire::put_u64(out, bytes.size());
    wire::put_bytes(out, bytes);
}

std::vector<uint8_t> get_blob(Reader& in) { return in.raw(in.u64()); }

void put_partition(std::vector<uint8_t>& out, const ChannelPartition& p) {
    wire::put_f64(out, p.k);
    wire::put_u64(out, p.anomalous_mask.size());
    wire::put_bytes(out, p.anomalous_mask);
}

ChannelPartition get_partition(Reader& in) {
    ChannelPartition p;
    p.k = in.f64();
    p.anomalous_mask = in.raw(in.u64());
    return p;
}

void put_packed(std::vector<uint8_t>& out, const PackedBlock& b) {
    wire::put_u8(out, static_cast<uint8_t>(b.n_bits));
    wire::put_u8(out, static_cast<uint8_t>(b.geometry.axis));
    wire::put_u64(out, b.geometry.group_size);
    wire::put_u64(out, b.tokens);
    wire::put_u64(out, b.channels);
    put_blob(out, b.codes);
    put_f32s(out, b.scales);
    put_f32s(out, b.zeros);
}

PackedBlock get_packed(Reader& in) {
    PackedBlock b;
    b.n_bits = in.u8();
    b.geometry.axis = static_cast<GroupAxis>(tag(in, 1, "group axis"));
    b.geometry.group_size = in.u64();
    b.tokens = in.u64();
    b.channels = in.u64();
    b.codes = get_blob(in);
    b.scales = get_f32s(in);
    b.zeros = get_f32s(in);
    return b;
}

void put_fft(std::vector<uint8_t>& out, const FftSignBlock& b) {
    wire::put_u64(out, b.tokens);
    wire::put_u64(out, b.channels);
    wire::put_u64(out, b.group_size);
    put_blob(out, b.sign_bits);
    put_f32s(out, b.scales);
}

FftSignBlock get_fft(Reader& in) {
    FftSignBlock b;
    b.tokens = in.u64();
    b.channels = in.u64();
    b.group_size = in.u64();
    b.sign_bits = get_blob(in);
    b.scales = get_f32s(in);
    return b;
}

void put_ternary(std::vector<uint8_t>& out, const TernaryBlock& b) {
    wire::put_u8(out, static_cast<uint8_t>(b.geometry.axis));
    wire::put_u64(out, b.geometry.group_size);
    wire::put_u64(out, b.tokens);
    wire::put_u64(out, b.channels);
    put_blob(out, b.digits);
    put_f32s(out, b.scales);
}

TernaryBlock get_ternary_block(Reader& in) {
    TernaryBlock b;
    b.geometry.axis = static_cast<GroupAxis>(tag(in, 1, "group axis"));
    b.geometry.group_size = in.u64();
    b.tokens = in.u64();
    b.channels = in.u64();
    b.digits = get_blob(in);
    b.scales = get_f32s(in);
    return b;
}

void put_key_block(std::vector<uint8_t>& out, const QuantizedKeyBlock& b) {
    put_partition(out, b.partition);
    wire::put_u8(out, b.fft_used ? 1 : 0);
    put_packed(out, b.anomalous);
    if (b.fft_used) put_fft(out, b.normal_fft);
    else put_packed(out, b.normal_uniform);
    wire::put_u64(out, b.token_begin);
    wire::put_u64(out, b.tokens);
    wire::put_u64(out, b.channels);
}

QuantizedKeyBlock get_key_block(Reader& in) {
    QuantizedKeyBlock b;
    b.partition = get_partition(in);
    b.fft_used = in.u8() != 0;
    b.anomalous = get_packed(in);
    if (b.fft_used) b.normal_fft = get_fft(in);
    else b.normal_uniform = get_packed(in);
    b.token_begin = in.u64();
    b.tokens = in.u64();
    b.channels = in.u64();
    return b;
}

void put_value_block(std::vector<uint8_t>& out, const ValueBlockEntry& e) {
    wire::put_u8(out, e.is_uniform ? 1 : 0);
    wire::put_u64(out, e.token_begin);
    wire::put_u64(out, e.tokens);
    if (e.is_uniform) {
        put_packed(out, e.uniform);
        return;
    }
    put_ternary(out, e.ternary.ternary);
    put_packed(out, e.ternary.protected_tokens);
    wire::put_u64(out, e.ternary.ternary_pad);
    wire::put_u64(out, e.ternary.protected_pad);
    put_indices(out, e.ternary.protected_local);
    wire::put_u64(out, e.ternary.token_begin);
    wire::put_u64(out, e.ternary.tokens);
    wire::put_u64(out, e.ternary.channels);
}

ValueBlockEntry get_value_block(Reader& in) {
    ValueBlockEntry e;
    e.is_uniform = in.u8() != 0;
    e.token_begin = in.u64();
    e.tokens = in.u64();
    if (e.is_uniform) {
        e.uniform = get_packed(in);
        return e;
    }
    e.ternary.ternary = get_ternary_block(in);
    e.ternary.protected_tokens = get_packed(in);
    e.ternary.ternary_pad = in.u64();
    e.ternary.protected_pad = in.u64();
    e.ternary.protected_local = get_indices(in);
    e.ternary.token_begin = in.u64();
    e.ternary.tokens = in.u64();
    e.ternary.channels = in.u64();
    return e;
}

}  // namespace

std::vector<uint8_t> snapshot_encode(const CacheState& state) {
    std::vector<uint8_t> out;
    out.insert(out.end(), kSnapshotMagic, kSnapshotMagic + 8);
    put_config(out, state.config);
    wire::put_u64(out, state.segments.system_len);
    wire::put_u64(out, state.segments.vision_len);
    wire::put_u64(out, state.segments.text_len);
    wire::put_u64(out, state.channels);
    wire::put_u64(out, state.tokens_seen);
    wire::put_u64(out, state.flush_count);

    wire::put_u8(out, state.frozen_partition ? 1 : 0);
    if (state.frozen_partition) put_partition(out, *state.frozen_partition);

    wire::put_f64(out, state.protected_set.p);
    put_indices(out, state.protected_set.indices);

    wire::put_u64(out, state.key_blocks.size());
    for (const auto& b : state.key_blocks) put_key_block(out, b);
    wire::put_u64(out, state.value_blocks.size());
    for (const auto& b : state.value_blocks) put_value_block(out, b);

    put_blob(out, kvt_encode(state.key_residual));
    put_blob(out, kvt_encode(state.value_residual));
    return out;
}

CacheState snapshot_decode(std::span<const uint8_t> bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSnapshotMagic, 8) != 0)
        raise(ErrorKind::format, "not a cache snapshot (bad magic)");
    Reader in{bytes, 8};

    CacheState state;
    state.config = get_config(in);
    state.segments.system_len = in.u64();
    state.segments.vision_len = in.u64();
    state.segments.text_len = in.u64();
    state.channels = in.u64();
    state.tokens_seen = in.u64();
    state.flush_count = in.u64();

    if (in.u8() != 0) state.frozen_partition = get_partition(in);

    state.protected_set.p = in.f64();
    state.protected_set.indices = get_indices(in);

    const std::size_t n_key = in.u64();
    state.key_blocks.reserve(n_key);
    for (std::size_t i = 0; i < n_key; ++i) state.key_blocks.push_back(get_key_block(in));
    const std::size_t n_val = in.u64();
    state.value_blocks.reserve(n_val);
    for (std::size_t i = 0; i < n_val; ++i) state.value_blocks.push_back(get_value_block(in));

    state.key_residual = kvt_decode(get_blob(in));
    state.value_residual = kvt_decode(get_blob(in));
    if (!in.done()) raise(ErrorKind::length, "trailing bytes after snapshot payload");

    state.config.validate();
    state.rebuild_derived();
    return state;
}

void snapshot_write(const CacheState& state, const std::string& path) {
    wire::write_file(path, snapshot_encode(state));
}

CacheState snapshot_read(const std::string& path) {
    return snapshot_decode(wire::read_file(path));
}

std::string snapshot_summary(const CacheState& state) {
    std::ostringstream out;
    const QuantConfig& c = state.config;
    out << "cache snapshot\n";
    out << "  channels: " << state.channels << "  tokens_seen: " << state.tokens_seen
        << "  flushes: " << state.flush_count << "\n";
    out << "  segments: system " << state.segments.system_len << ", vision "
        << state.segments.vision_len << ", text " << state.segments.text_len << "\n";
    out << "  config: enabled=" << (c.enabled ? "true" : "false") << " key_k=" << c.key_k
        << " key_metric=" << to_string(c.key_metric) << " key_M=" << c.key_M
        << " fft_mode=" << to_string(c.fft_mode) << " (active=" << (c.fft_enabled() ? "yes" : "no")
        << ")\n          value_mode=" << to_string(c.value_mode) << " gamma=" << c.gamma
        << " p=" << c.p << " G=" << c.G << " R=" << c.R
        << " key_requant=" << to_string(c.key_requant) << "\n";
    if (state.frozen_partition)
        out << "  frozen partition: " << state.frozen_partition->anomalous_count() << "/"
            << state.frozen_partition->channels() << " anomalous channels\n";
    if (!state.protected_set.indices.empty())
        out << "  protected tokens: " << state.protected_set.indices.size() << " (p="
            << state.protected_set.p << ")\n";

    out << "  key blocks: " << state.key_blocks.size() << "\n";
    for (const auto& b : state.key_blocks) {
        out << "    [" << b.token_begin << ", " << b.token_begin + b.tokens << ") "
            << b.partition.anomalous_count() << "/" << b.channels << " anomalous, normal path "
            << (b.fft_used ? "fft-sign" : "uniform-1bit") << "\n";
    }
    out << "  value blocks: " << state.value_blocks.size() << "\n";
    for (const auto& b : state.value_blocks) {
        out << "    [" << b.token_begin << ", " << b.token_begin + b.tokens << ") ";
        if (b.is_uniform)
            out << "uniform " << b.uniform.n_bits << "-bit " << to_string(b.uniform.geometry.axis)
                << "\n";
        else
            out << "ternary (" << b.ternary.protected_local.size() << " protected tokens)\n";
    }
    out << "  residual: key " << state.key_residual.tokens << " tokens, value "
        << state.value_residual.tokens << " tokens\n";
    return out.str();
}

}  // namespace kvq
