// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "difflora/attention.hpp"
#include "difflora/linalg.hpp"
#include "difflora/rng.hpp"

using namespace difflora;

namespace {

Tensor2D random_tensor(int rows, int cols, std::uint64_t seed, double scale = 1.0) {
    Tensor2D t(rows, cols);
    Rng rng(seed);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) t.at(i, j) = scale * rng.normal();
    return t;
}

// attention layer with random frozen weights and negative-term adapters;
// nudge_b pushes the adapter b factors off zero so a2 is non-uniform
DiffAttnLayer make_layer(int d, int heads, double lambda, bool gn, std::uint64_t seed,
                         bool nudge_b) {
    DiffAttnLayer L;
    L.n_heads = heads;
    L.head_dim = d / heads;
    L.w_q1 = random_tensor(d, d, seed, 0.3);
    L.w_k1 = random_tensor(d, d, seed + 1, 0.3);
    L.w_v = random_tensor(d, d, seed + 2, 0.3);
    L.w_o = random_tensor(d, d, seed + 3, 0.3);
    L.ad_q2 = init_adapter(d, d, 4, 8.0, seed + 4);
    L.ad_k2 = init_adapter(d, d, 4, 8.0, seed + 5, true);
    if (nudge_b) {
        Rng rng(seed + 6);
        for (std::size_t i = 0; i < L.ad_q2->b.size(); ++i)
            L.ad_q2->b.data()[i] = 0.3 * rng.normal();
        for (std::size_t i = 0; i < L.ad_k2->b.size(); ++i)
            L.ad_k2->b.data()[i] = 0.3 * rng.normal();
    }
    L.lambda.value = lambda;
    L.lambda.init_value = lambda;
    if (gn) {
        L.group_norm = true;
        L.gn_gain = Tensor2D(heads, d / heads);
        L.gn_gain.fill(1.0);
        L.gn_lambda_init = lambda;
    }
    return L;
}

double row_sum(const Tensor2D& m, int r) {
    double s = 0.0;
    for (int j = 0; j < m.cols(); ++j) s += m.at(r, j);
    return s;
}

}  // namespace

TEST_CASE("effective rows sum to one minus lambda") {
    const int d = 16, heads = 2, seq = 10;
    for (double lambda : {0.0, 0.1, 0.5}) {
        const DiffAttnLayer L = make_layer(d, heads, lambda, false, 21, true);
        for (int trial = 0; trial < 10; ++trial) {
            const Tensor2D x = random_tensor(seq, d, 100 + trial);
            const AttnResult res = diff_attention(x, L, CausalMask{seq});
            const std::vector<Tensor2D> eff = effective_attention_map(res.trace);
            REQUIRE(eff.size() == static_cast<std::size_t>(heads));
            for (const Tensor2D& m : eff)
                for (int r = 0; r < seq; ++r)
                    CHECK(std::fabs(row_sum(m, r) - (1.0 - lambda)) <= 1e-12);
        }
    }
}

TEST_CASE("lambda zero reduces to the positive map bitwise") {
    const int d = 16, heads = 4, seq = 8;
    const DiffAttnLayer L = make_layer(d, heads, 0.0, false, 31, true);
    const Tensor2D x = random_tensor(seq, d, 32);
    const AttnResult diff = diff_attention(x, L, CausalMask{seq});
    const AttnResult std_attn = standard_attention(x, L, CausalMask{seq});
    for (std::size_t i = 0; i < diff.out.size(); ++i)
        CHECK(diff.out.data()[i] == std_attn.out.data()[i]);
    const std::vector<Tensor2D> eff = effective_attention_map(diff.trace);
    for (int h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < eff[static_cast<std::size_t>(h)].size(); ++i)
            CHECK(eff[static_cast<std::size_t>(h)].data()[i] ==
                  diff.trace.a1[static_cast<std::size_t>(h)].data()[i]);
}

TEST_CASE("zero-init adapters give the exact uniform causal denoiser") {
    const int d = 16, heads = 2, seq = 12;
    const DiffAttnLayer L = make_layer(d, heads, 0.1, false, 41, false);  // b kept at zero
    const Tensor2D x = random_tensor(seq, d, 42);
    const AttnResult res = diff_attention(x, L, CausalMask{seq});
    for (const Tensor2D& a2 : res.trace.a2)
        for (int t = 0; t < seq; ++t)
            for (int j = 0; j < seq; ++j) {
                const double want = j <= t ? 1.0 / static_cast<double>(t + 1) : 0.0;
                CHECK(std::fabs(a2.at(t, j) - want) <= 1e-12);
            }
}

TEST_CASE("effective map is main minus lambda times denoiser per cell") {
    const int d = 16, heads = 2, seq = 9;
    const double lambda = 0.3;
    const DiffAttnLayer L = make_layer(d, heads, lambda, false, 51, true);
    const Tensor2D x = random_tensor(seq, d, 52);
    const AttnResult res = diff_attention(x, L, CausalMask{seq});
    const std::vector<Tensor2D> eff = effective_attention_map(res.trace);
    for (int h = 0; h < heads; ++h)
        for (int t = 0; t < seq; ++t)
            for (int j = 0; j < seq; ++j)
                CHECK(std::fabs(eff[static_cast<std::size_t>(h)].at(t, j) -
                                (res.trace.a1[static_cast<std::size_t>(h)].at(t, j) -
                                 lambda * res.trace.a2[static_cast<std::size_t>(h)].at(t, j))) <=
                      1e-15);
}

TEST_CASE("group norm holds every pre-gain row at unit rms") {
    const int d = 16, heads = 2, seq = 10;
    const double lambda = 0.1;
    const DiffAttnLayer L = make_layer(d, heads, lambda, true, 61, true);
    const Tensor2D x = random_tensor(seq, d, 62);
    AttnLayerCache cache;
    const AttnResult res = diff_attention(x, L, CausalMask{seq}, &cache);
    REQUIRE(cache.head_pre_norm.size() == static_cast<std::size_t>(heads));
    REQUIRE(cache.gn_inv_rms.size() == static_cast<std::size_t>(heads));
    const int hd = d / heads;
    for (int h = 0; h < heads; ++h) {
        const Tensor2D& pre = cache.head_pre_norm[static_cast<std::size_t>(h)];
        const std::vector<double>& inv = cache.gn_inv_rms[static_cast<std::size_t>(h)];
        for (int r = 0; r < seq; ++r) {
            double ms = 0.0;
            for (int j = 0; j < hd; ++j) ms += pre.at(r, j) * pre.at(r, j);
            const double normed_rms = std::sqrt(ms / hd) * inv[static_cast<std::size_t>(r)];
            CHECK(std::fabs(normed_rms - 1.0) <= 1e-6);
        }
    }
    // with unit gains the emitted head rows sit at rms (1 - lambda_init)
    for (int h = 0; h < heads; ++h)
        for (int r = 0; r < seq; ++r) {
            double ms = 0.0;
            for (int j = 0; j < hd; ++j) {
                const double v = cache.concat.at(r, h * hd + j);
                ms += v * v;
            }
            CHECK(std::fabs(std::sqrt(ms / hd) - (1.0 - lambda)) <= 1e-6);
        }
    (void)res;
}

TEST_CASE("positive-term adapters fold into the main projections") {
    const int d = 16, heads = 2, seq = 6;
    DiffAttnLayer L = make_layer(d, heads, 0.1, false, 71, false);
    L.ad_q1 = init_adapter(d, d, 4, 8.0, 72);
    L.ad_k1 = init_adapter(d, d, 4, 8.0, 73);
    // zero-delta positive adapters leave the output untouched
    const Tensor2D x = random_tensor(seq, d, 74);
    const Tensor2D base_out = [&] {
        DiffAttnLayer plain = make_layer(d, heads, 0.1, false, 71, false);
        return diff_attention(x, plain, CausalMask{seq}).out;
    }();
    const Tensor2D with_ad = diff_attention(x, L, CausalMask{seq}).out;
    for (std::size_t i = 0; i < with_ad.size(); ++i)
        CHECK(with_ad.data()[i] == base_out.data()[i]);
    // a nonzero positive delta changes the main map
    Rng rng(75);
    for (std::size_t i = 0; i < L.ad_q1->b.size(); ++i) L.ad_q1->b.data()[i] = 0.3 * rng.normal();
    const AttnResult moved = diff_attention(x, L, CausalMask{seq});
    bool differs = false;
    for (std::size_t i = 0; i < moved.out.size(); ++i)
        differs = differs || moved.out.data()[i] != base_out.data()[i];
    CHECK(differs);
}

TEST_CASE("layer validation rejects malformed setups") {
    DiffAttnLayer L = make_layer(16, 2, 0.1, false, 81, false);
    CHECK_THROWS_AS(L.validate(32), ShapeError);  // wrong width
    DiffAttnLayer broken = make_layer(16, 2, 0.1, false, 82, false);
    broken.ad_k2.reset();
    CHECK_THROWS_AS(broken.validate(16), StateError);  // unpaired adapters
    DiffAttnLayer no_ad = make_layer(16, 2, 0.1, false, 83, false);
    no_ad.ad_q2.reset();
    no_ad.ad_k2.reset();
    const Tensor2D x = random_tensor(4, 16, 84);
    CHECK_THROWS_AS(diff_attention(x, no_ad, CausalMask{4}), ConfigError);
    DiffAttnLayer bad_gn = make_layer(16, 2, 0.1, true, 85, false);
    bad_gn.gn_lambda_init = 1.0;
    CHECK_THROWS_AS(bad_gn.validate(16), ConfigError);
}

TEST_CASE("standard attention rows are proper distributions") {
    const int d = 16, heads = 4, seq = 11;
    const DiffAttnLayer L = make_layer(d, heads, 0.0, false, 91, false);
    const Tensor2D x = random_tensor(seq, d, 92);
    const AttnResult res = standard_attention(x, L, CausalMask{seq});
    REQUIRE(res.trace.a2.empty());
    for (const Tensor2D& a1 : res.trace.a1)
        for (int r = 0; r < seq; ++r) CHECK(std::fabs(row_sum(a1, r) - 1.0) <= 1e-12);
}
