// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "difflora/adapter.hpp"
#include "difflora/tensor.hpp"

namespace difflora {

inline constexpr double kNormEps = 1e-6;

enum class LambdaMode : std::uint8_t { Fixed = 0, Learnable = 1 };

// Scalar weight on the subtracted attention map. Fixed mode pins the value to
// its init forever; learnable mode lets training move it (one scalar per
// layer, shared across heads).
struct LambdaState {
    LambdaMode mode = LambdaMode::Fixed;
    double value = 0.1;
    double init_value = 0.1;
};

// Per-head softmax maps captured during a forward pass: a1 is the positive
// (main) map, a2 the subtracted (denoiser) map. a2 is empty for standard
// attention.
struct AttnTrace {
    std::vector<Tensor2D> a1;
    std::vector<Tensor2D> a2;
    double lambda_used = 0.0;
};

// Intermediates the backward pass needs. Filled only when a cache pointer is
// handed to the forward functions.
struct AttnLayerCache {
    Tensor2D q1, k1, v;            // seq x d_model, merged projections
    Tensor2D q2, k2;               // seq x d_model, adapter-only projections
    std::vector<Tensor2D> a1, a2;  // per head, seq x seq
    std::vector<Tensor2D> head_pre_norm;          // per head, output before group norm
    std::vector<std::vector<double>> gn_inv_rms;  // per head, per row
    Tensor2D concat;               // seq x d_model, heads side by side (post norm)
};

// One attention layer: frozen base projections plus whatever adapters the
// variant installed. The negative-term adapters (q2/k2) have no base weight
// behind them; they ARE the projection.
struct DiffAttnLayer {
    Tensor2D w_q1, w_k1, w_v, w_o;
    std::optional<LowRankAdapter> ad_q1, ad_k1;  // positive term (BothTerms)
    std::optional<LowRankAdapter> ad_q2, ad_k2;  // negative term
    std::optional<LowRankAdapter> ad_v, ad_o;    // full-LoRA baseline only
    LambdaState lambda;
    int n_heads = 1;
    int head_dim = 1;
    bool group_norm = false;
    Tensor2D gn_gain;  // n_heads x head_dim
    double gn_lambda_init = 0.1;

    int d_model() const { return n_heads * head_dim; }
    void validate(int expect_d_model) const;
};

struct AttnResult {
    Tensor2D out;
    AttnTrace trace;
};

// Per-head softmax(Q1 K1^T / sqrt(head_dim)) V, heads concatenated and
// projected by w_o. Positive-term adapters fold into Q1/K1 when present.
AttnResult standard_attention(const Tensor2D& x, const DiffAttnLayer& layer,
                              const CausalMask& mask, AttnLayerCache* cache = nullptr);

// Per head: (sm(Q1 K1^T / sqrt(hd)) - lambda * sm(Q2 K2^T / sqrt(hd))) V,
// then optional per-head RMS norm scaled by (1 - lambda_init), concatenation,
// and the w_o projection.
AttnResult diff_attention(const Tensor2D& x, const DiffAttnLayer& layer, const CausalMask& mask,
                          AttnLayerCache* cache = nullptr);

// Per head, a1 - lambda * a2 (a1 alone when a2 is empty). Rows of the result
// sum to 1 - lambda when the negative term is present.
std::vector<Tensor2D> effective_attention_map(const AttnTrace& trace);

}  // namespace difflora
