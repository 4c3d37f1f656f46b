// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "difflora/tensor.hpp"

namespace difflora {

// Trainable low-rank weight delta. The effective update is
// (alpha / rank) * b * a with b: in_dim x rank and a: rank x out_dim.
struct LowRankAdapter {
    Tensor2D b;
    Tensor2D a;
    int rank = 0;
    double alpha = 0.0;

    int in_dim() const { return b.rows(); }
    int out_dim() const { return a.cols(); }
    double scaling() const { return alpha / static_cast<double>(rank); }

    // Dense (alpha/rank) * b * a; only for merging into a full weight.
    Tensor2D delta() const;
};

enum class PlacementMode : std::uint8_t { NegativeOnly = 0, BothTerms = 1 };

// Where adapters go: the negative-term projections always get them; the
// positive term gets its own pair (at half rank for parameter parity) in
// BothTerms mode.
struct AdapterPlacement {
    PlacementMode mode = PlacementMode::NegativeOnly;
    int rank_negative = 8;
    int rank_positive = 0;

    void validate() const;
};

// b starts all-zero and a Gaussian (sd 0.02), so the initial delta is exactly
// zero and the wrapped weight is untouched until training moves b.
// seed_b draws b from the same Gaussian instead; used for the k2 adapter,
// where a zero product on both sides of the score matmul would freeze the
// negative term at init (dq2 = ds*k2 and dk2 = ds^T*q2 both vanish when
// q2 == k2 == 0). A nonzero k2 keeps q2*k2^T == 0, so a2 rows stay exactly
// uniform, while gradients can reach the q2 factors.
LowRankAdapter init_adapter(int in_dim, int out_dim, int rank, double alpha, std::uint64_t seed,
                            bool seed_b = false);

// (alpha/rank) * x * b * a, evaluated as two rank-sized products.
Tensor2D apply_delta(const Tensor2D& x, const LowRankAdapter& adapter);

// w + (alpha/rank) * b * a.
Tensor2D merged_weight(const Tensor2D& w, const LowRankAdapter& adapter);

// Exact number of trainable scalars for a DiffLoRA placement: per layer, each
// adapted projection (Q and K per active term) costs rank * (in_dim +
// out_dim); learnable lambda adds one per layer; group norm adds
// n_heads * head_dim gains per layer.
long long trainable_param_count(const AdapterPlacement& placement, int n_layers, int in_dim,
                                int out_dim, bool lambda_learnable, bool group_norm, int head_dim,
                                int n_heads);

}  // namespace difflora
