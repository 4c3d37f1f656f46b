// SPDX-License-Identifier: Apache-2.0
#include "difflora/attention.hpp"

#include <string>

#include "difflora/linalg.hpp"

namespace difflora {

namespace {

Tensor2D project(const Tensor2D& x, const Tensor2D& w,
                 const std::optional<LowRankAdapter>& adapter) {
    if (!adapter) return linalg::matmul(x, w);
    return linalg::matmul(x, merged_weight(w, *adapter));
}

void check_input(const Tensor2D& x, const DiffAttnLayer& layer, const CausalMask& mask,
                 const char* op) {
    layer.validate(x.cols());
    if (mask.seq_len != x.rows())
        throw ShapeError(std::string(op) + ": input " + x.shape_str() + " vs mask seq_len " +
                         std::to_string(mask.seq_len));
}

}  // namespace

void DiffAttnLayer::validate(int expect_d_model) const {
    if (n_heads < 1 || head_dim < 1 || d_model() != expect_d_model)
        throw ShapeError("attention layer: " + std::to_string(n_heads) + " heads x " +
                         std::to_string(head_dim) + " dims vs input width " +
                         std::to_string(expect_d_model));
    if (w_q1.rows() != expect_d_model || w_q1.cols() != expect_d_model)
        throw ShapeError("attention layer: w_q1 " + w_q1.shape_str() + " vs d_model " +
                         std::to_string(expect_d_model));
    if (static_cast<bool>(ad_q2) != static_cast<bool>(ad_k2))
        throw StateError("attention layer: negative-term adapters must come as a q/k pair");
    if (group_norm) {
        if (gn_gain.rows() != n_heads || gn_gain.cols() != head_dim)
            throw ShapeError("attention layer: group-norm gain " + gn_gain.shape_str() +
                             " vs heads " + std::to_string(n_heads) + "x" +
                             std::to_string(head_dim));
        if (gn_lambda_init <= 0.0 || gn_lambda_init >= 1.0)
            throw ConfigError("attention layer: group norm requires lambda_init in (0, 1), got " +
                              std::to_string(gn_lambda_init));
    }
}

AttnResult standard_attention(const Tensor2D& x, const DiffAttnLayer& layer,
                              const CausalMask& mask, AttnLayerCache* cache) {
    check_input(x, layer, mask, "standard_attention");
    const int hd = layer.head_dim;

    const Tensor2D q1 = project(x, layer.w_q1, layer.ad_q1);
    const Tensor2D k1 = project(x, layer.w_k1, layer.ad_k1);
    const Tensor2D v = project(x, layer.w_v, layer.ad_v);

    AttnResult result;
    result.trace.lambda_used = 0.0;
    Tensor2D concat(x.rows(), x.cols(), x.precision());
    for (int h = 0; h < layer.n_heads; ++h) {
        const int c0 = h * hd;
        const Tensor2D qh = linalg::col_block(q1, c0, c0 + hd);
        const Tensor2D kh = linalg::col_block(k1, c0, c0 + hd);
        const Tensor2D vh = linalg::col_block(v, c0, c0 + hd);
        const Tensor2D a1 = linalg::masked_row_softmax(linalg::scaled_scores(qh, kh, hd), mask);
        const Tensor2D out_h = linalg::matmul(a1, vh);
        linalg::set_col_block(concat, c0, out_h);
        result.trace.a1.push_back(a1);
        if (cache) cache->a1.push_back(a1);
    }
    if (cache) {
        cache->q1 = q1;
        cache->k1 = k1;
        cache->v = v;
        cache->concat = concat;
    }
    result.out = project(concat, layer.w_o, layer.ad_o);
    return result;
}

AttnResult diff_attention(const Tensor2D& x, const DiffAttnLayer& layer, const CausalMask& mask,
                          AttnLayerCache* cache) {
    check_input(x, layer, mask, "diff_attention");
    if (!layer.ad_q2 || !layer.ad_k2)
        throw ConfigError("diff_attention: negative-term adapters missing");
    const int hd = layer.head_dim;
    const double lambda = layer.lambda.value;

    const Tensor2D q1 = project(x, layer.w_q1, layer.ad_q1);
    const Tensor2D k1 = project(x, layer.w_k1, layer.ad_k1);
    const Tensor2D v = project(x, layer.w_v, layer.ad_v);
    const Tensor2D q2 = apply_delta(x, *layer.ad_q2);
    const Tensor2D k2 = apply_delta(x, *layer.ad_k2);

    AttnResult result;
    result.trace.lambda_used = lambda;
    Tensor2D concat(x.rows(), x.cols(), x.precision());
    for (int h = 0; h < layer.n_heads; ++h) {
        const int c0 = h * hd;
        const Tensor2D q1h = linalg::col_block(q1, c0, c0 + hd);
        const Tensor2D k1h = linalg::col_block(k1, c0, c0 + hd);
        const Tensor2D q2h = linalg::col_block(q2, c0, c0 + hd);
        const Tensor2D k2h = linalg::col_block(k2, c0, c0 + hd);
        const Tensor2D vh = linalg::col_block(v, c0, c0 + hd);
        const Tensor2D a1 = linalg::masked_row_softmax(linalg::scaled_scores(q1h, k1h, hd), mask);
        const Tensor2D a2 = linalg::masked_row_softmax(linalg::scaled_scores(q2h, k2h, hd), mask);
        const Tensor2D eff = linalg::sub(a1, linalg::scale(a2, lambda));
        Tensor2D out_h = linalg::matmul(eff, vh);
        if (layer.group_norm) {
            if (cache) cache->head_pre_norm.push_back(out_h);
            std::vector<double> inv_rms;
            const std::span<const double> gain(layer.gn_gain.row(h),
                                               static_cast<std::size_t>(hd));
            Tensor2D normed = linalg::per_head_rmsnorm(out_h, gain, kNormEps, &inv_rms);
            out_h = linalg::scale(normed, 1.0 - layer.gn_lambda_init);
            if (cache) cache->gn_inv_rms.push_back(std::move(inv_rms));
        }
        linalg::set_col_block(concat, c0, out_h);
        result.trace.a1.push_back(a1);
        result.trace.a2.push_back(a2);
        if (cache) {
            cache->a1.push_back(a1);
            cache->a2.push_back(a2);
        }
    }
    if (cache) {
        cache->q1 = q1;
        cache->k1 = k1;
        cache->v = v;
        cache->q2 = q2;
        cache->k2 = k2;
        cache->concat = concat;
    }
    result.out = project(concat, layer.w_o, layer.ad_o);
    return result;
}

std::vector<Tensor2D> effective_attention_map(const AttnTrace& trace) {
    if (!trace.a2.empty() && trace.a2.size() != trace.a1.size())
        throw ShapeError("effective_attention_map: " + std::to_string(trace.a1.size()) +
                         " a1 heads vs " + std::to_string(trace.a2.size()) + " a2 heads");
    std::vector<Tensor2D> maps;
    maps.reserve(trace.a1.size());
    for (std::size_t h = 0; h < trace.a1.size(); ++h) {
        if (trace.a2.empty()) {
            maps.push_back(trace.a1[h]);
        } else {
            maps.push_back(
                linalg::sub(trace.a1[h], linalg::scale(trace.a2[h], trace.lambda_used)));
        }
    }
    return maps;
}

}  // namespace difflora
