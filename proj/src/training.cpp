// SPDX-License-Identifier: Apache-2.0
#include "difflora/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "difflora/linalg.hpp"
#include "difflora/rng.hpp"

namespace difflora {

using nlohmann::json;

// ---------------------------------------------------------------------------
// GradientSet
// ---------------------------------------------------------------------------

std::size_t GradientSet::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return i;
    throw LookupError("gradient set has no entry '" + name + "'");
}

void GradientSet::add_scaled(const GradientSet& other, double factor) {
    if (other.names.size() != names.size())
        throw ShapeError("gradient sets hold different parameter counts");
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (other.names[i] != names[i] || other.values[i].size() != values[i].size())
            throw ShapeError("gradient sets disagree at entry '" + names[i] + "'");
        for (std::size_t k = 0; k < values[i].size(); ++k)
            values[i][k] += factor * other.values[i][k];
    }
}

void GradientSet::scale(double factor) {
    for (auto& v : values)
        for (double& g : v) g *= factor;
}

double GradientSet::l2_norm() const {
    double sum = 0.0;
    for (const auto& v : values)
        for (double g : v) sum += g * g;
    return std::sqrt(sum);
}

double GradientSet::max_abs() const {
    double m = 0.0;
    for (const auto& v : values)
        for (double g : v) m = std::max(m, std::fabs(g));
    return m;
}

GradientSet zero_gradients(ToyModel& model) {
    GradientSet set;
    for (const ParamRef& ref : model.trainable_parameters()) {
        set.names.push_back(ref.name);
        set.values.emplace_back(ref.size(), 0.0);
    }
    return set;
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

double cross_entropy(const Tensor2D& logits, const std::vector<int>& targets,
                     const std::vector<std::uint8_t>& mask) {
    const int rows = logits.rows(), vocab = logits.cols();
    if (targets.size() != static_cast<std::size_t>(rows) ||
        mask.size() != static_cast<std::size_t>(rows))
        throw ShapeError("cross_entropy: " + std::to_string(rows) + " logit rows vs " +
                         std::to_string(targets.size()) + " targets, " +
                         std::to_string(mask.size()) + " mask entries");
    int scored = 0;
    double loss = 0.0;
    for (int t = 0; t < rows; ++t) {
        if (!mask[static_cast<std::size_t>(t)]) continue;
        const int target = targets[static_cast<std::size_t>(t)];
        if (target < 0 || target >= vocab)
            throw InputError("cross_entropy: target " + std::to_string(target) +
                             " at position " + std::to_string(t) + " outside vocab " +
                             std::to_string(vocab));
        const double* row = logits.row(t);
        double mx = row[0];
        for (int v = 1; v < vocab; ++v) mx = std::max(mx, row[v]);
        double sum = 0.0;
        for (int v = 0; v < vocab; ++v) sum += std::exp(row[v] - mx);
        loss += mx + std::log(sum) - row[target];
        ++scored;
    }
    if (scored == 0) throw DegenerateBatchError("cross_entropy: mask selects no position");
    loss /= static_cast<double>(scored);
    if (!std::isfinite(loss)) throw NumericError("cross_entropy: non-finite loss");
    return loss;
}

// ---------------------------------------------------------------------------
// backward pass
// ---------------------------------------------------------------------------

namespace {

std::span<const double> gain_span(const Tensor2D& gain) {
    return {gain.row(0), static_cast<std::size_t>(gain.cols())};
}

// name -> flat gradient slot; absent names are silently skipped (frozen or
// fixed parameters have no slot)
struct GradSink {
    std::unordered_map<std::string, std::vector<double>*> slots;

    explicit GradSink(GradientSet& set) {
        for (std::size_t i = 0; i < set.names.size(); ++i)
            slots.emplace(set.names[i], &set.values[i]);
    }
    std::vector<double>* find(const std::string& name) const {
        auto it = slots.find(name);
        return it == slots.end() ? nullptr : it->second;
    }
};

void accumulate(std::vector<double>* slot, const Tensor2D& grad, const char* what) {
    if (!slot) return;
    if (slot->size() != grad.size())
        throw ShapeError(std::string("gradient slot size mismatch for ") + what);
    for (std::size_t i = 0; i < grad.size(); ++i) (*slot)[i] += grad.data()[i];
}

// backward of y = x * (w0 + s b a); w0 == nullptr means an adapter-only
// projection. Adds x's gradient into dx and the adapter's into the sink.
void linear_backward(const Tensor2D& x, const Tensor2D* w0,
                     const std::optional<LowRankAdapter>& ad, const Tensor2D& dy, Tensor2D& dx,
                     const GradSink& sink, const std::string& prefix) {
    if (w0) {
        const Tensor2D w = ad ? merged_weight(*w0, *ad) : *w0;
        linalg::add_in_place(dx, linalg::matmul_nt(dy, w));
    } else {
        const double s = ad->scaling();
        const Tensor2D dy_at = linalg::matmul_nt(dy, ad->a);  // seq x rank
        linalg::add_in_place(dx, linalg::scale(linalg::matmul_nt(dy_at, ad->b), s));
    }
    if (!ad) return;
    std::vector<double>* gb = sink.find(prefix + ".b");
    std::vector<double>* ga = sink.find(prefix + ".a");
    if (!gb && !ga) return;
    const double s = ad->scaling();
    if (gb) {
        const Tensor2D dy_at = linalg::matmul_nt(dy, ad->a);
        accumulate(gb, linalg::scale(linalg::matmul_tn(x, dy_at), s), prefix.c_str());
    }
    if (ga) {
        const Tensor2D xb = linalg::matmul(x, ad->b);
        accumulate(ga, linalg::scale(linalg::matmul_tn(xb, dy), s), prefix.c_str());
    }
}

// backward of y_ij = x_ij * inv_rms_i * gain_j, where inv_rms was computed
// with a floor: 1/sqrt(max(mean_sq, eps)). Inside the floor the norm is an
// affine map, so the projection term drops out.
Tensor2D rmsnorm_backward(const Tensor2D& x, std::span<const double> gain,
                          const std::vector<double>& inv_rms, const Tensor2D& dy, double eps,
                          double* dgain) {
    const int rows = x.rows(), n = x.cols();
    if (inv_rms.size() != static_cast<std::size_t>(rows))
        throw ShapeError("rmsnorm backward: cached inv_rms rows mismatch");
    Tensor2D dx(rows, n);
    for (int i = 0; i < rows; ++i) {
        const double ir = inv_rms[static_cast<std::size_t>(i)];
        double dot = 0.0, mean_sq = 0.0;
        for (int j = 0; j < n; ++j) {
            dot += dy.at(i, j) * gain[static_cast<std::size_t>(j)] * x.at(i, j);
            mean_sq += x.at(i, j) * x.at(i, j);
        }
        mean_sq /= static_cast<double>(n);
        const double coef = mean_sq > eps ? ir * ir * ir / static_cast<double>(n) * dot : 0.0;
        for (int j = 0; j < n; ++j) {
            dx.at(i, j) = ir * gain[static_cast<std::size_t>(j)] * dy.at(i, j) - coef * x.at(i, j);
            if (dgain) dgain[j] += dy.at(i, j) * x.at(i, j) * ir;
        }
    }
    return dx;
}

// backward of a row-wise masked softmax: ds_ij = a_ij (da_ij - sum_k a_ik da_ik)
Tensor2D softmax_backward(const Tensor2D& a, const Tensor2D& da) {
    const int n = a.rows();
    Tensor2D ds(n, n);
    for (int i = 0; i < n; ++i) {
        double dot = 0.0;
        for (int j = 0; j <= i; ++j) dot += a.at(i, j) * da.at(i, j);
        for (int j = 0; j <= i; ++j) ds.at(i, j) = a.at(i, j) * (da.at(i, j) - dot);
    }
    return ds;
}

// reverse of standard_attention/diff_attention; returns the gradient w.r.t.
// the attention input and adds parameter gradients (adapters, lambda, group
// norm gains) into the sink
Tensor2D attention_backward(const DiffAttnLayer& layer, const AttnLayerCache& c,
                            const Tensor2D& normed, const Tensor2D& dout, const GradSink& sink,
                            const std::string& prefix) {
    const int hd = layer.head_dim;
    const int seq = normed.rows(), d = normed.cols();
    const bool diff = layer.ad_q2.has_value();
    const double lambda = layer.lambda.value;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    Tensor2D dconcat(seq, d);
    linear_backward(c.concat, &layer.w_o, layer.ad_o, dout, dconcat, sink, prefix + ".o");

    Tensor2D dq1(seq, d), dk1(seq, d), dv(seq, d);
    Tensor2D dq2, dk2;
    if (diff) {
        dq2 = Tensor2D(seq, d);
        dk2 = Tensor2D(seq, d);
    }
    std::vector<double>* gn_slot = layer.group_norm ? sink.find(prefix + ".gn_gain") : nullptr;
    if (gn_slot && gn_slot->size() != static_cast<std::size_t>(layer.n_heads * hd))
        throw ShapeError("gradient slot size mismatch for " + prefix + ".gn_gain");
    double dlambda = 0.0;
    for (int h = 0; h < layer.n_heads; ++h) {
        const int c0 = h * hd;
        Tensor2D dh = linalg::col_block(dconcat, c0, c0 + hd);
        if (layer.group_norm) {
            const Tensor2D dnormed_h = linalg::scale(dh, 1.0 - layer.gn_lambda_init);
            const std::span<const double> gain(layer.gn_gain.row(h),
                                               static_cast<std::size_t>(hd));
            dh = rmsnorm_backward(c.head_pre_norm[static_cast<std::size_t>(h)], gain,
                                  c.gn_inv_rms[static_cast<std::size_t>(h)], dnormed_h, kNormEps,
                                  gn_slot ? gn_slot->data() + c0 : nullptr);
        }
        const Tensor2D vh = linalg::col_block(c.v, c0, c0 + hd);
        const Tensor2D& a1 = c.a1[static_cast<std::size_t>(h)];
        const Tensor2D eff =
            diff ? linalg::sub(a1, linalg::scale(c.a2[static_cast<std::size_t>(h)], lambda)) : a1;
        const Tensor2D deff = linalg::matmul_nt(dh, vh);
        linalg::set_col_block(dv, c0, linalg::matmul_tn(eff, dh));

        const Tensor2D ds1 = softmax_backward(a1, deff);
        const Tensor2D q1h = linalg::col_block(c.q1, c0, c0 + hd);
        const Tensor2D k1h = linalg::col_block(c.k1, c0, c0 + hd);
        linalg::set_col_block(dq1, c0, linalg::scale(linalg::matmul(ds1, k1h), inv_scale));
        linalg::set_col_block(dk1, c0, linalg::scale(linalg::matmul_tn(ds1, q1h), inv_scale));
        if (diff) {
            const Tensor2D& a2 = c.a2[static_cast<std::size_t>(h)];
            for (int i = 0; i < seq; ++i)
                for (int j = 0; j <= i; ++j) dlambda -= deff.at(i, j) * a2.at(i, j);
            const Tensor2D ds2 = softmax_backward(a2, linalg::scale(deff, -lambda));
            const Tensor2D q2h = linalg::col_block(c.q2, c0, c0 + hd);
            const Tensor2D k2h = linalg::col_block(c.k2, c0, c0 + hd);
            linalg::set_col_block(dq2, c0, linalg::scale(linalg::matmul(ds2, k2h), inv_scale));
            linalg::set_col_block(dk2, c0, linalg::scale(linalg::matmul_tn(ds2, q2h), inv_scale));
        }
    }

    Tensor2D dnormed(seq, d);
    linear_backward(normed, &layer.w_q1, layer.ad_q1, dq1, dnormed, sink, prefix + ".q1");
    linear_backward(normed, &layer.w_k1, layer.ad_k1, dk1, dnormed, sink, prefix + ".k1");
    linear_backward(normed, &layer.w_v, layer.ad_v, dv, dnormed, sink, prefix + ".v");
    if (diff) {
        linear_backward(normed, nullptr, layer.ad_q2, dq2, dnormed, sink, prefix + ".q2");
        linear_backward(normed, nullptr, layer.ad_k2, dk2, dnormed, sink, prefix + ".k2");
        if (std::vector<double>* slot = sink.find(prefix + ".lambda")) {
            if (slot->size() != 1)
                throw ShapeError("gradient slot size mismatch for " + prefix + ".lambda");
            (*slot)[0] += dlambda;
        }
    }
    return dnormed;
}

}  // namespace

double loss_and_gradients(const ToyModel& model, const TrainingExample& example,
                          GradientSet& out) {
    ForwardCache cache;
    const Tensor2D logits = forward(model, example.tokens, nullptr, &cache);
    const double loss = cross_entropy(logits, example.targets, example.mask);

    const int seq = logits.rows(), vocab = logits.cols();
    int scored = 0;
    for (std::uint8_t m : example.mask) scored += m ? 1 : 0;
    Tensor2D dlogits(seq, vocab);
    for (int t = 0; t < seq; ++t) {
        if (!example.mask[static_cast<std::size_t>(t)]) continue;
        const double* row = logits.row(t);
        double mx = row[0];
        for (int v = 1; v < vocab; ++v) mx = std::max(mx, row[v]);
        double sum = 0.0;
        for (int v = 0; v < vocab; ++v) sum += std::exp(row[v] - mx);
        for (int v = 0; v < vocab; ++v)
            dlogits.at(t, v) = std::exp(row[v] - mx) / sum / static_cast<double>(scored);
        dlogits.at(t, example.targets[static_cast<std::size_t>(t)]) -=
            1.0 / static_cast<double>(scored);
    }

    const GradSink sink(out);
    // unembedding (frozen either way)
    Tensor2D dfinal_norm = model.config.tied_unembedding
                               ? linalg::matmul(dlogits, model.tok_embed)
                               : linalg::matmul_nt(dlogits, model.unembed);
    Tensor2D dx = rmsnorm_backward(cache.final_in, gain_span(model.final_norm_gain),
                                   cache.final_norm_inv, dfinal_norm, kNormEps, nullptr);

    for (int l = static_cast<int>(model.layers.size()) - 1; l >= 0; --l) {
        const LayerBlock& L = model.layers[static_cast<std::size_t>(l)];
        const LayerForwardCache& lc = cache.layers[static_cast<std::size_t>(l)];
        const std::string p = "layers." + std::to_string(l);

        // x_out = x_mid + w_out(gelu(w_in(norm(x_mid)))); dx holds d x_out
        Tensor2D dact(seq, model.config.mlp_hidden);
        linear_backward(lc.mlp_act, &L.mlp.w_out, L.mlp.ad_out, dx, dact, sink, p + ".mlp.out");
        Tensor2D dpre(seq, model.config.mlp_hidden);
        for (std::size_t i = 0; i < dpre.size(); ++i)
            dpre.data()[i] = dact.data()[i] * gelu_grad(lc.mlp_pre.data()[i]);
        Tensor2D dmlp_norm(seq, model.config.d_model);
        linear_backward(lc.mlp_norm, &L.mlp.w_in, L.mlp.ad_in, dpre, dmlp_norm, sink,
                        p + ".mlp.in");
        linalg::add_in_place(dx, rmsnorm_backward(lc.x_mid, gain_span(L.mlp_norm_gain),
                                                  lc.mlp_norm_inv, dmlp_norm, kNormEps, nullptr));

        // x_mid = x_in + attention(norm(x_in)); dx now holds d x_mid
        Tensor2D dattn_norm =
            attention_backward(L.attn, lc.attn, lc.attn_norm, dx, sink, p + ".attn");
        linalg::add_in_place(dx, rmsnorm_backward(lc.x_in, gain_span(L.attn_norm_gain),
                                                  lc.attn_norm_inv, dattn_norm, kNormEps,
                                                  nullptr));
    }
    return loss;
}

// ---------------------------------------------------------------------------
// finite differences
// ---------------------------------------------------------------------------

double finite_diff_grad(ToyModel& model, const TrainingExample& example,
                        const std::string& param_name, std::size_t index, double eps) {
    if (eps <= 0.0) throw ConfigError("finite_diff_grad: eps must be positive");
    ParamRef ref = model.find_param(param_name);
    if (index >= ref.size())
        throw LookupError("finite_diff_grad: index " + std::to_string(index) + " out of " +
                          std::to_string(ref.size()) + " for " + param_name);
    double* value = ref.values() + index;
    const double original = *value;
    *value = original + eps;
    const double up = cross_entropy(forward(model, example.tokens), example.targets,
                                    example.mask);
    *value = original - eps;
    const double down = cross_entropy(forward(model, example.tokens), example.targets,
                                      example.mask);
    *value = original;
    return (up - down) / (2.0 * eps);
}

GradCheckReport compare_gradients(ToyModel& model, const TrainingExample& example,
                                  const GradientSet& analytic, const GradCheckConfig& config) {
    if (config.samples_per_tensor < 1)
        throw ConfigError("gradient check: samples_per_tensor must be positive");
    GradCheckReport report;
    report.tolerance = config.tolerance;
    Rng rng(config.seed);
    for (std::size_t i = 0; i < analytic.names.size(); ++i) {
        const std::size_t n = analytic.values[i].size();
        std::vector<std::size_t> picks;
        if (n <= static_cast<std::size_t>(config.samples_per_tensor)) {
            picks.resize(n);
            std::iota(picks.begin(), picks.end(), std::size_t{0});
        } else {
            std::set<std::size_t> chosen;
            while (chosen.size() < static_cast<std::size_t>(config.samples_per_tensor))
                chosen.insert(static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<int>(n) - 1)));
            picks.assign(chosen.begin(), chosen.end());
        }
        GradGroupStat group;
        group.param = analytic.names[i];
        for (std::size_t idx : picks) {
            const double numeric =
                finite_diff_grad(model, example, analytic.names[i], idx, config.eps);
            const double exact = analytic.values[i][idx];
            const double abs_err = std::fabs(exact - numeric);
            // relative above 1e-2 magnitude, absolute (x100) below: keeps
            // finite-difference noise on near-zero coordinates from failing
            const double rel =
                abs_err / std::max({std::fabs(exact), std::fabs(numeric), 1e-2});
            ++report.n_checked;
            ++group.n_checked;
            report.max_abs_err = std::max(report.max_abs_err, abs_err);
            group.max_abs_err = std::max(group.max_abs_err, abs_err);
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = analytic.names[i];
                report.worst_index = idx;
            }
            if (rel > group.max_rel_err) {
                group.max_rel_err = rel;
                group.worst_index = idx;
            }
            if (rel > config.tolerance && report.failures.size() < 32)
                report.failures.push_back(GradFailure{analytic.names[i], idx, exact, numeric, rel});
        }
        report.groups.push_back(std::move(group));
    }
    report.pass = report.max_rel_err <= config.tolerance;
    return report;
}

GradCheckReport check_gradients(ToyModel& model, const TrainingExample& example,
                                const GradCheckConfig& config) {
    GradientSet grads = zero_gradients(model);
    loss_and_gradients(model, example, grads);
    return compare_gradients(model, example, grads, config);
}

std::vector<GradSuiteCase> run_gradient_suite(double eps, double tolerance) {
    // {negative-only, both-terms} x {lambda fixed, lambda learnable}; group
    // norm additionally on for the two both-terms cases
    const char* cases[6] = {
        R"({"variant": "difflora-neg", "lambda": {"mode": "fixed", "init": 0.1}})",
        R"({"variant": "difflora-neg", "lambda": {"mode": "learnable", "init": 0.1}})",
        R"({"variant": "difflora-both", "lambda": {"mode": "fixed", "init": 0.1}})",
        R"({"variant": "difflora-both", "lambda": {"mode": "learnable", "init": 0.1}})",
        R"({"variant": "difflora-both", "lambda": {"mode": "fixed", "init": 0.1},
            "group_norm": true})",
        R"({"variant": "difflora-both", "lambda": {"mode": "learnable", "init": 0.1},
            "group_norm": true})",
    };

    // one fixed 8-token sequence with loss over its second half
    TrainingExample example;
    {
        Rng rng(202);
        const int seq = 8, vocab = 64;
        example.tokens.resize(seq);
        for (int& t : example.tokens) t = rng.uniform_int(0, vocab - 1);
        example.targets.assign(seq, -1);
        example.mask.assign(seq, 0);
        for (int t = 0; t + 1 < seq; ++t) {
            example.targets[static_cast<std::size_t>(t)] =
                example.tokens[static_cast<std::size_t>(t + 1)];
            example.mask[static_cast<std::size_t>(t)] = t >= seq / 2 ? 1 : 0;
        }
    }

    GradCheckConfig check;
    check.eps = eps;
    check.tolerance = tolerance;
    check.samples_per_tensor = std::numeric_limits<int>::max();  // every coordinate

    std::vector<GradSuiteCase> out;
    for (const char* text : cases) {
        ModelConfig mc = model_config_from_json_string(text);
        mc.d_model = 32;
        mc.n_layers = 2;
        mc.n_heads = 4;
        mc.vocab_size = 64;
        mc.precision = Precision::Double;
        ToyModel model = build_base(mc);
        inject_adapters(model);
        Rng warm(11);
        for (const ParamRef& ref : model.trainable_parameters()) {
            double* values = ref.values();
            for (std::size_t i = 0; i < ref.size(); ++i) values[i] += 0.05 * warm.normal();
        }
        GradSuiteCase result;
        result.model = model_id(mc);
        result.report = check_gradients(model, example, check);
        out.push_back(std::move(result));
    }
    return out;
}

// ---------------------------------------------------------------------------
// train config
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (steps < 0) throw ConfigError("train: steps must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be positive");
    if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
    if (optimizer != "adamw" && optimizer != "sgd")
        throw ConfigError("train: optimizer must be adamw or sgd, got '" + optimizer + "'");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
        throw ConfigError("train: betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be positive");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
    if (grad_clip < 0.0) throw ConfigError("train: grad_clip must be >= 0");
    if (log_every < 1) throw ConfigError("train: log_every must be positive");
    if (eval_every < 0) throw ConfigError("train: eval_every must be >= 0");
}

namespace {

void require_known_keys(const json& obj, const std::string& prefix,
                        const std::set<std::string>& known) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!known.count(it.key()))
            throw ConfigError("unknown config key: " + prefix + it.key());
    }
}

template <typename T>
void get_if_present(const json& obj, const char* key, T& out) {
    if (auto it = obj.find(key); it != obj.end()) out = it->get<T>();
}

}  // namespace

std::string train_config_to_json_string(const TrainConfig& c) {
    json j;
    j["steps"] = c.steps;
    j["batch_size"] = c.batch_size;
    j["lr"] = c.lr;
    j["optimizer"] = c.optimizer;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["adam_eps"] = c.adam_eps;
    j["weight_decay"] = c.weight_decay;
    j["grad_clip"] = c.grad_clip;
    j["log_every"] = c.log_every;
    j["eval_every"] = c.eval_every;
    j["seed"] = c.seed;
    return j.dump();
}

TrainConfig train_config_from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("train config: expected a JSON object");
    require_known_keys(j, "train.",
                       {"steps", "batch_size", "lr", "optimizer", "beta1", "beta2", "adam_eps",
                        "weight_decay", "grad_clip", "log_every", "eval_every", "seed"});
    TrainConfig c;
    get_if_present(j, "steps", c.steps);
    get_if_present(j, "batch_size", c.batch_size);
    get_if_present(j, "lr", c.lr);
    get_if_present(j, "optimizer", c.optimizer);
    get_if_present(j, "beta1", c.beta1);
    get_if_present(j, "beta2", c.beta2);
    get_if_present(j, "adam_eps", c.adam_eps);
    get_if_present(j, "weight_decay", c.weight_decay);
    get_if_present(j, "grad_clip", c.grad_clip);
    get_if_present(j, "log_every", c.log_every);
    get_if_present(j, "eval_every", c.eval_every);
    get_if_present(j, "seed", c.seed);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

namespace {

double first_lambda(const ToyModel& model) {
    if (model.config.variant == Variant::DiffLoRA && !model.layers.empty())
        return model.layers[0].attn.lambda.value;
    return 0.0;
}

std::vector<double> layer_lambdas(const ToyModel& model) {
    std::vector<double> out;
    if (model.config.variant != Variant::DiffLoRA || !model.adapters_injected) return out;
    for (const LayerBlock& L : model.layers) out.push_back(L.attn.lambda.value);
    return out;
}

}  // namespace

TrainResult train(ToyModel& model, const std::vector<TrainingExample>& data,
                  const TrainConfig& config, const EvalCallback& eval_callback) {
    config.validate();
    if (data.empty()) throw DegenerateBatchError("train: empty dataset");
    const GradientSet proto = zero_gradients(model);
    if (proto.names.empty()) throw ConfigError("train: model has no trainable parameters");
    std::vector<ParamRef> params = model.trainable_parameters();

    std::vector<std::vector<double>> m_state, v_state;
    const bool adam = config.optimizer == "adamw";
    if (adam) {
        for (const auto& v : proto.values) {
            m_state.emplace_back(v.size(), 0.0);
            v_state.emplace_back(v.size(), 0.0);
        }
    }

    const int batch = std::min<int>(config.batch_size, static_cast<int>(data.size()));
    Rng batch_rng(derive_seed(config.seed, "train.batches"));
    std::vector<std::size_t> perm(data.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::size_t cursor = perm.size();  // forces a shuffle before the first batch

    TrainResult result;
    for (int step = 0; step < config.steps; ++step) {
        if (cursor + static_cast<std::size_t>(batch) > perm.size()) {
            batch_rng.shuffle(perm);
            cursor = 0;
        }
        std::vector<GradientSet> slots(static_cast<std::size_t>(batch), proto);
        std::vector<double> losses(static_cast<std::size_t>(batch), 0.0);
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(batch));
#pragma omp parallel for schedule(static)
        for (int b = 0; b < batch; ++b) {
            try {
                losses[static_cast<std::size_t>(b)] = loss_and_gradients(
                    model, data[perm[cursor + static_cast<std::size_t>(b)]],
                    slots[static_cast<std::size_t>(b)]);
            } catch (...) {
                errors[static_cast<std::size_t>(b)] = std::current_exception();
            }
        }
        cursor += static_cast<std::size_t>(batch);
        for (const std::exception_ptr& err : errors) {
            if (!err) continue;
            try {
                std::rethrow_exception(err);
            } catch (const NumericError& e) {
                throw DivergenceError(std::string("training diverged: ") + e.what(), step,
                                      first_lambda(model));
            }
        }

        GradientSet grads = proto;
        double loss = 0.0;
        for (int b = 0; b < batch; ++b) {
            grads.add_scaled(slots[static_cast<std::size_t>(b)], 1.0);
            loss += losses[static_cast<std::size_t>(b)];
        }
        grads.scale(1.0 / static_cast<double>(batch));
        loss /= static_cast<double>(batch);
        if (!std::isfinite(loss))
            throw DivergenceError("training loss became non-finite", step, first_lambda(model));

        if (config.grad_clip > 0.0) {
            const double norm = grads.l2_norm();
            if (norm > config.grad_clip) grads.scale(config.grad_clip / norm);
        }

        const double t = static_cast<double>(step + 1);
        for (std::size_t i = 0; i < params.size(); ++i) {
            double* w = params[i].values();
            const std::vector<double>& g = grads.values[i];
            if (adam) {
                const double bc1 = 1.0 - std::pow(config.beta1, t);
                const double bc2 = 1.0 - std::pow(config.beta2, t);
                std::vector<double>& m = m_state[i];
                std::vector<double>& v = v_state[i];
                for (std::size_t k = 0; k < g.size(); ++k) {
                    m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
                    v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
                    w[k] -= config.lr * ((m[k] / bc1) / (std::sqrt(v[k] / bc2) + config.adam_eps) +
                                         config.weight_decay * w[k]);
                }
            } else {
                for (std::size_t k = 0; k < g.size(); ++k)
                    w[k] -= config.lr * (g[k] + config.weight_decay * w[k]);
            }
            if (params[i].tensor) params[i].tensor->round_to_precision();
            for (std::size_t k = 0; k < g.size(); ++k)
                if (!std::isfinite(w[k]))
                    throw DivergenceError("parameter " + params[i].name + " became non-finite",
                                          step, first_lambda(model));
        }

        const bool last = step == config.steps - 1;
        const bool want_eval = eval_callback && config.eval_every > 0 &&
                               ((step + 1) % config.eval_every == 0 || last);
        double eval_acc = -1.0;
        if (want_eval) eval_acc = eval_callback(model);
        if (step % config.log_every == 0 || last || want_eval) {
            StepRecord rec;
            rec.step = step;
            rec.loss = loss;
            rec.lambdas = layer_lambdas(model);
            rec.eval_accuracy = eval_acc;
            result.history.push_back(std::move(rec));
        }
        result.final_loss = loss;
    }
    result.steps_run = config.steps;
    return result;
}

}  // namespace difflora
