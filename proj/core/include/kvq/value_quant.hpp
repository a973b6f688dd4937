#pragma once

#include <cstddef>
#include <vector>

#include "kvq/quant.hpp"
#include "kvq/tensor.hpp"

namespace kvq {

struct TernaryParams {
    double gamma = 0.7;
    GroupGeometry geometry{GroupAxis::per_channel, 32};

    void validate() const {
        if (gamma <= 0.0) raise(ErrorKind::config, "gamma must be > 0");
        geometry.validate();
    }
};

// Vision tokens kept at 2-bit. Indices are absolute sequence positions,
// sorted ascending, all within [l_s, l_s + l_v).
struct ProtectedSet {
    double p = 0.0;
    std::vector<std::size_t> indices;

    bool empty() const { return indices.empty(); }
};

struct QuantizedValueBlock {
    TernaryBlock ternary;          // unprotected tokens, original relative order
    PackedBlock protected_tokens;  // 2-bit per_channel over protected tokens
    std::size_t ternary_pad = 0;   // replicated trailing tokens inside ternary
    std::size_t protected_pad = 0;
    std::vector<std::size_t> protected_local;  // window-relative protected indices, ascending
    std::size_t token_begin = 0;
    std::size_t tokens = 0;
    std::size_t channels = 0;
};

// Per group: s = mean(|v|), alpha = gamma * s; digit = +1 if v > alpha,
// -1 if v < -alpha, else 0.
TernaryBlock ternary_quantize(const KvSlab& window, const TernaryParams& params);

// v' = digit * s of the element's group
KvSlab ternary_dequantize(const TernaryBlock& block);

// score of vision token i = mean over text tokens j of dot(X_v(i), X_t(j))
std::vector<double> importance_scores(const KvSlab& vision, const KvSlab& text);

// Top round(p * l_v) scores win; ties keep the lower token index; returned
// indices are offset by l_s into the full sequence.
ProtectedSet select_protected(const std::vector<double>& scores, double p, std::size_t system_len,
                              std::size_t vision_len);

// Protected tokens go to 2-bit per-channel groups formed over the protected
// subsequence, padded to a group multiple by replicating the last token;
// everything else goes to the ternary path. `token_begin` anchors the
// window inside the full sequence so absolute protected indices resolve.
QuantizedValueBlock quantize_value_block(const KvSlab& window, const TernaryParams& params,
                                         const ProtectedSet& protected_set,
                                         std::size_t token_begin = 0);

KvSlab dequantize_value_block(const QuantizedValueBlock& block);

}  // namespace kvq
