#include "kvq/synth.hpp"

#include <algorithm>
#include <cmath>

#include "kvq/rng.hpp"

namespace kvq {

SynthKind synth_kind_from_string(const std::string& name) {
    if (name == "gaussian_outlier_channels") return SynthKind::gaussian_outlier_channels;
    if (name == "gaussian_outlier_tokens") return SynthKind::gaussian_outlier_tokens;
    if (name == "periodic_frames") return SynthKind::periodic_frames;
    if (name == "uniform_noise") return SynthKind::uniform_noise;
    raise(ErrorKind::config, "unknown synthetic kind '" + name + "'");
}

const char* to_string(SynthKind kind) {
    switch (kind) {
        case SynthKind::gaussian_outlier_channels: return "gaussian_outlier_channels";
        case SynthKind::gaussian_outlier_tokens: return "gaussian_outlier_tokens";
        case SynthKind::periodic_frames: return "periodic_frames";
        case SynthKind::uniform_noise: return "uniform_noise";
    }
    return "unknown";
}

void SynthSpec::validate() const {
    if (tokens == 0 || channels == 0)
        raise(ErrorKind::config, "synthetic spec needs tokens > 0 and channels > 0");
    if (kind == SynthKind::gaussian_outlier_channels && outlier_count > channels)
        raise(ErrorKind::config, "outlier_count exceeds channel count");
    if (kind == SynthKind::gaussian_outlier_tokens && outlier_count > tokens)
        raise(ErrorKind::config, "outlier_count exceeds token count");
    if (kind == SynthKind::periodic_frames) {
        if (frame_len == 0)
            raise(ErrorKind::config, "frame_len must be nonzero for periodic_frames");
    }
    if (channel_spread < 1.0)
        raise(ErrorKind::config, "channel_spread must be >= 1");
    if (noise < 0.0) raise(ErrorKind::config, "noise must be >= 0");
}

namespace {

// Stable sub-stream seeds: one per (seed, purpose, lane).
uint64_t derive(uint64_t seed, uint64_t purpose, uint64_t lane) {
    SplitMix64 sm(seed ^ (0x51ed2701a3c5e937ull * (purpose + 1)));
    uint64_t s = sm.next();
    SplitMix64 sm2(s + 0x9e3779b97f4a7c15ull * (lane + 1));
    return sm2.next();
}

constexpr uint64_t kPurposeSigma = 1;
constexpr uint64_t kPurposeData = 2;
constexpr uint64_t kPurposeOutliers = 3;
constexpr uint64_t kPurposeNoise = 4;

double channel_sigma(const SynthSpec& spec, std::size_t c) {
    if (spec.channel_spread == 1.0) return 1.0;
    Rng rng(derive(spec.seed, kPurposeSigma, c));
    const double u = rng.uniform(-1.0, 1.0);
    return std::pow(spec.channel_spread, u);
}

std::vector<std::size_t> pick_indices(uint64_t seed, std::size_t count, std::size_t from) {
    std::vector<std::size_t> all(from);
    for (std::size_t i = 0; i < from; ++i) all[i] = i;
    Rng rng(derive(seed, kPurposeOutliers, 0));
    // Fisher-Yates over the prefix we need.
    for (std::size_t i = 0; i < count && i + 1 < from; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_below(from - i));
        std::swap(all[i], all[j]);
    }
    std::vector<std::size_t> out(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

std::vector<std::size_t> synth_outlier_indices(const SynthSpec& spec) {
    spec.validate();
    switch (spec.kind) {
        case SynthKind::gaussian_outlier_channels:
            return pick_indices(spec.seed, spec.outlier_count, spec.channels);
        case SynthKind::gaussian_outlier_tokens:
            return pick_indices(spec.seed, spec.outlier_count, spec.tokens);
        default:
            return {};
    }
}

KvSlab gen_synthetic(const SynthSpec& spec) {
    spec.validate();
    KvSlab slab(spec.tokens, spec.channels);

    switch (spec.kind) {
        case SynthKind::uniform_noise: {
            for (std::size_t c = 0; c < spec.channels; ++c) {
                Rng rng(derive(spec.seed, kPurposeData, c));
                for (std::size_t t = 0; t < spec.tokens; ++t)
                    slab.at(t, c) = static_cast<float>(rng.uniform(-1.0, 1.0));
            }
            break;
        }
        case SynthKind::gaussian_outlier_channels:
        case SynthKind::gaussian_outlier_tokens: {
            for (std::size_t c = 0; c < spec.channels; ++c) {
                const double sigma = channel_sigma(spec, c);
                Rng rng(derive(spec.seed, kPurposeData, c));
                for (std::size_t t = 0; t < spec.tokens; ++t)
                    slab.at(t, c) = static_cast<float>(sigma * rng.gaussian());
            }
            const auto idx = synth_outlier_indices(spec);
            if (spec.kind == SynthKind::gaussian_outlier_channels) {
                for (std::size_t c : idx)
                    for (std::size_t t = 0; t < spec.tokens; ++t)
                        slab.at(t, c) = static_cast<float>(slab.at(t, c) * spec.outlier_magnitude);
            } else {
                for (std::size_t t : idx)
                    for (std::size_t c = 0; c < spec.channels; ++c)
                        slab.at(t, c) = static_cast<float>(slab.at(t, c) * spec.outlier_magnitude);
            }
            break;
        }
        case SynthKind::periodic_frames: {
            // a trailing partial frame simply truncates the pattern
            for (std::size_t c = 0; c < spec.channels; ++c) {
                const double sigma = channel_sigma(spec, c);
                Rng base_rng(derive(spec.seed, kPurposeData, c));
                std::vector<double> base(spec.frame_len);
                for (auto& v : base) v = base_rng.gaussian();
                Rng noise_rng(derive(spec.seed, kPurposeNoise, c));
                for (std::size_t t = 0; t < spec.tokens; ++t) {
                    const double jitter =
                        spec.noise > 0.0 ? spec.noise * noise_rng.gaussian() : 0.0;
                    slab.at(t, c) = static_cast<float>(sigma * (base[t % spec.frame_len] + jitter));
                }
            }
            break;
        }
    }
    return slab;
}

DecodeTrace gen_trace(std::size_t steps, std::size_t channels, uint64_t seed) {
    DecodeTrace trace;
    trace.channels = channels;
    trace.steps.resize(steps);
    for (std::size_t i = 0; i < steps; ++i) {
        Rng rng(derive(seed, 7, i));
        auto fill = [&](std::vector<float>& v) {
            v.resize(channels);
            for (auto& x : v) x = static_cast<float>(rng.gaussian());
        };
        fill(trace.steps[i].q);
        fill(trace.steps[i].k);
        fill(trace.steps[i].v);
    }
    return trace;
}

}  // namespace kvq
