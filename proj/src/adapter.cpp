// SPDX-License-Identifier: Apache-2.0
#include "difflora/adapter.hpp"

#include <algorithm>
#include <string>

#include "difflora/linalg.hpp"
#include "difflora/rng.hpp"

namespace difflora {

Tensor2D LowRankAdapter::delta() const {
    return linalg::scale(linalg::matmul(b, a), scaling());
}

void AdapterPlacement::validate() const {
    if (rank_negative < 1)
        throw ConfigError("adapter placement: rank_negative must be >= 1, got " +
                          std::to_string(rank_negative));
    if (mode == PlacementMode::BothTerms) {
        if (rank_positive != rank_negative)
            throw ConfigError("adapter placement: BothTerms requires rank_positive == "
                              "rank_negative, got " +
                              std::to_string(rank_positive) + " vs " +
                              std::to_string(rank_negative));
    } else if (rank_positive != 0) {
        throw ConfigError("adapter placement: NegativeOnly must have rank_positive == 0, got " +
                          std::to_string(rank_positive));
    }
}

LowRankAdapter init_adapter(int in_dim, int out_dim, int rank, double alpha, std::uint64_t seed,
                            bool seed_b) {
    if (rank < 1 || rank > std::min(in_dim, out_dim))
        throw ConfigError("init_adapter: rank " + std::to_string(rank) + " out of range for " +
                          std::to_string(in_dim) + "x" + std::to_string(out_dim));
    LowRankAdapter adapter;
    adapter.rank = rank;
    adapter.alpha = alpha;
    adapter.b = Tensor2D(in_dim, rank);
    adapter.a = Tensor2D(rank, out_dim);
    Rng rng(seed);
    for (int i = 0; i < rank; ++i)
        for (int j = 0; j < out_dim; ++j) adapter.a.at(i, j) = 0.02 * rng.normal();
    if (seed_b)
        for (int i = 0; i < in_dim; ++i)
            for (int j = 0; j < rank; ++j) adapter.b.at(i, j) = 0.02 * rng.normal();
    return adapter;
}

Tensor2D apply_delta(const Tensor2D& x, const LowRankAdapter& adapter) {
    if (x.cols() != adapter.b.rows())
        throw ShapeError("apply_delta: input " + x.shape_str() + " vs adapter b " +
                         adapter.b.shape_str());
    Tensor2D xb = linalg::matmul(x, adapter.b);
    return linalg::scale(linalg::matmul(xb, adapter.a), adapter.scaling());
}

Tensor2D merged_weight(const Tensor2D& w, const LowRankAdapter& adapter) {
    if (w.rows() != adapter.in_dim() || w.cols() != adapter.out_dim())
        throw ShapeError("merged_weight: base " + w.shape_str() + " vs adapter delta " +
                         std::to_string(adapter.in_dim()) + "x" + std::to_string(adapter.out_dim()));
    return linalg::add(w, adapter.delta());
}

long long trainable_param_count(const AdapterPlacement& placement, int n_layers, int in_dim,
                                int out_dim, bool lambda_learnable, bool group_norm, int head_dim,
                                int n_heads) {
    if (n_layers < 0 || in_dim <= 0 || out_dim <= 0)
        throw ConfigError("trainable_param_count: dimensions must be positive");
    placement.validate();
    const long long per_adapter =
        static_cast<long long>(placement.rank_negative) * (in_dim + out_dim);
    long long per_layer = 2 * per_adapter;  // negative-term Q and K
    if (placement.mode == PlacementMode::BothTerms)
        per_layer += 2ll * placement.rank_positive * (in_dim + out_dim);
    if (lambda_learnable) per_layer += 1;
    if (group_norm) per_layer += static_cast<long long>(n_heads) * head_dim;
    return per_layer * n_layers;
}

}  // namespace difflora
