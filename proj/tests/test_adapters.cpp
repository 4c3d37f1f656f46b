// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "difflora/adapter.hpp"
#include "difflora/linalg.hpp"
#include "difflora/rng.hpp"

using namespace difflora;

namespace {

Tensor2D random_tensor(int rows, int cols, std::uint64_t seed) {
    Tensor2D t(rows, cols);
    Rng rng(seed);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) t.at(i, j) = rng.normal();
    return t;
}

double max_abs(const Tensor2D& t) {
    double m = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) m = std::max(m, std::fabs(t.data()[i]));
    return m;
}

}  // namespace

TEST_CASE("default init: b zero, a gaussian, delta exactly zero") {
    const LowRankAdapter ad = init_adapter(16, 16, 4, 8.0, 3);
    CHECK(ad.in_dim() == 16);
    CHECK(ad.out_dim() == 16);
    CHECK(max_abs(ad.b) == 0.0);
    CHECK(max_abs(ad.a) > 0.0);
    CHECK(max_abs(ad.delta()) == 0.0);
    // wrapped weight untouched at init
    const Tensor2D w = random_tensor(16, 16, 4);
    const Tensor2D merged = merged_weight(w, ad);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(merged.data()[i] == w.data()[i]);
}

TEST_CASE("seed_b init draws b nonzero but keeps shapes") {
    const LowRankAdapter ad = init_adapter(16, 16, 4, 8.0, 3, true);
    CHECK(max_abs(ad.b) > 0.0);
    CHECK(ad.b.rows() == 16);
    CHECK(ad.b.cols() == 4);
    CHECK(ad.a.rows() == 4);
    CHECK(ad.a.cols() == 16);
}

TEST_CASE("init is deterministic per seed") {
    const LowRankAdapter x = init_adapter(8, 8, 2, 4.0, 11);
    const LowRankAdapter y = init_adapter(8, 8, 2, 4.0, 11);
    const LowRankAdapter z = init_adapter(8, 8, 2, 4.0, 12);
    for (std::size_t i = 0; i < x.a.size(); ++i) CHECK(x.a.data()[i] == y.a.data()[i]);
    bool differs = false;
    for (std::size_t i = 0; i < x.a.size(); ++i) differs = differs || x.a.data()[i] != z.a.data()[i];
    CHECK(differs);
}

TEST_CASE("apply_delta equals the dense (alpha/rank) x b a product") {
    LowRankAdapter ad = init_adapter(12, 10, 3, 6.0, 5);
    // push b off zero so the delta is nontrivial
    Rng rng(6);
    for (std::size_t i = 0; i < ad.b.size(); ++i) ad.b.data()[i] = 0.1 * rng.normal();
    const Tensor2D x = random_tensor(7, 12, 7);
    const Tensor2D via_lowrank = apply_delta(x, ad);
    const Tensor2D via_dense = linalg::matmul(x, ad.delta());
    REQUIRE(via_lowrank.same_shape(via_dense));
    for (std::size_t i = 0; i < via_dense.size(); ++i)
        CHECK(std::fabs(via_lowrank.data()[i] - via_dense.data()[i]) <= 1e-12);
    // and merged_weight is w + delta
    const Tensor2D w = random_tensor(12, 10, 8);
    const Tensor2D merged = merged_weight(w, ad);
    const Tensor2D sum = linalg::add(w, ad.delta());
    for (std::size_t i = 0; i < w.size(); ++i)
        CHECK(std::fabs(merged.data()[i] - sum.data()[i]) <= 1e-15);
}

TEST_CASE("scaling is alpha over rank") {
    const LowRankAdapter ad = init_adapter(4, 4, 2, 8.0, 1);
    CHECK(ad.scaling() == 4.0);
}

TEST_CASE("parameter parity: negative-only r equals both-terms r/2") {
    const int n_layers = 2, d = 32, hd = 8, heads = 4;
    for (int r : {8, 16, 32, 64}) {
        AdapterPlacement neg;
        neg.mode = PlacementMode::NegativeOnly;
        neg.rank_negative = r;
        neg.rank_positive = 0;
        AdapterPlacement both;
        both.mode = PlacementMode::BothTerms;
        both.rank_negative = r / 2;
        both.rank_positive = r / 2;
        CHECK(trainable_param_count(neg, n_layers, d, d, false, false, hd, heads) ==
              trainable_param_count(both, n_layers, d, d, false, false, hd, heads));
    }
}

TEST_CASE("reference pairing: rank 64 negative-only matches rank 32 both-terms") {
    // the published pairing: (rank 32, alpha 64) both-terms vs (rank 64,
    // alpha 128) negative-only; alpha = 2 * rank on each side, counts equal
    const int r_neg = 64, r_both = 32;
    CHECK(2 * r_neg == 128);
    CHECK(2 * r_both == 64);
    AdapterPlacement neg;
    neg.mode = PlacementMode::NegativeOnly;
    neg.rank_negative = r_neg;
    AdapterPlacement both;
    both.mode = PlacementMode::BothTerms;
    both.rank_negative = r_both;
    both.rank_positive = r_both;
    for (int d : {32, 64, 128})
        CHECK(trainable_param_count(neg, 2, d, d, false, false, d / 4, 4) ==
              trainable_param_count(both, 2, d, d, false, false, d / 4, 4));
}

TEST_CASE("count formula: rank x (in + out) per adapted projection") {
    AdapterPlacement neg;
    neg.mode = PlacementMode::NegativeOnly;
    neg.rank_negative = 8;
    // q2 and k2 per layer: 2 * r * (d + d)
    CHECK(trainable_param_count(neg, 2, 32, 32, false, false, 8, 4) ==
          2LL * 2 * 8 * (32 + 32));
    // learnable lambda adds one per layer
    CHECK(trainable_param_count(neg, 2, 32, 32, true, false, 8, 4) ==
          2LL * 2 * 8 * (32 + 32) + 2);
    // group norm adds n_heads * head_dim gains per layer
    CHECK(trainable_param_count(neg, 2, 32, 32, false, true, 8, 4) ==
          2LL * 2 * 8 * (32 + 32) + 2 * 4 * 8);
}

TEST_CASE("invalid placements are rejected") {
    AdapterPlacement p;
    p.rank_negative = 0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    AdapterPlacement q;
    q.mode = PlacementMode::BothTerms;
    q.rank_negative = 8;
    q.rank_positive = 0;
    CHECK_THROWS_AS(q.validate(), ConfigError);
    CHECK_THROWS_AS(init_adapter(8, 8, 0, 1.0, 1), ConfigError);
}
