// SPDX-License-Identifier: Apache-2.0
#include "difflora/model.hpp"

#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "difflora/linalg.hpp"
#include "difflora/rng.hpp"
#include "difflora/tasks.hpp"

namespace difflora {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// base initialization constants
//
// The base is meant to look like a small pretrained decoder: a previous-token
// head, weak content-match heads, and token embeddings grouped into per-class
// channel bands. Adapters then have a learnable circuit to complete; a fully
// random frozen base gives Q/K-only training nothing to work with.
// ---------------------------------------------------------------------------
constexpr double kSpecialScale = 1.0;
constexpr double kBosScale = 0.6;       // small indicator keeps the decoy channel fat   // bos/sep/qmark embedding norm
constexpr double kClassScale = 1.5;     // key/filler embedding norm
constexpr double kValueScale = 1.5;     // value embedding norm (readout margin)
constexpr double kPosScale = 0.5;
constexpr double kPrevGain = 8.0;       // previous-token head score strength
constexpr double kInjectGain = 0.8;     // w_o route of the previous-token head
constexpr double kMatchGain = 0.6;      // key-band content-match heads
constexpr double kBosAttract = 1.33;    // bos sink strength of the match heads
constexpr double kSelfRepel = 2.5;      // keeps the query marker off itself
constexpr double kFakeCue = 1.3;        // decoy value cue carried by bos (< value scale)
constexpr double kRetrieveGain = 4.0;   // value-band output routes
constexpr double kNoiseScale = 0.02;
constexpr double kMlpInScale = 0.4;
constexpr double kMlpOutScale = 0.02;
constexpr double kReadoutDamp = 0.2;   // final-gain damp on non-value bands
constexpr double kPosTheta0 = 1.5707963267948966;  // pi/2
constexpr double kPosThetaRatio = 0.35;

std::span<const double> gain_span(const Tensor2D& gain) {
    return {gain.row(0), static_cast<std::size_t>(gain.cols())};
}

void fill_normal(Tensor2D& t, Rng& rng, double sd) {
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = sd * rng.normal();
}

void set_precision_round(Tensor2D& t, Precision p) {
    t.set_precision(p);
    t.round_to_precision();
}

double lambda_for_id(const ModelConfig& c) { return c.lambda_init; }

// ---------------------------------------------------------------------------
// strict JSON helpers
// ---------------------------------------------------------------------------

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

void parse_lambda(const json& value, LambdaMode& mode, double& init) {
    if (value.is_string()) {
        const std::string text = value.get<std::string>();
        const auto colon = text.find(':');
        const std::string name = text.substr(0, colon);
        if (name == "fixed")
            mode = LambdaMode::Fixed;
        else if (name == "learnable")
            mode = LambdaMode::Learnable;
        else
            throw ConfigError("lambda: expected fixed:<v> or learnable:<v>, got '" + text + "'");
        if (colon != std::string::npos) {
            try {
                init = std::stod(text.substr(colon + 1));
            } catch (const std::exception&) {
                throw ConfigError("lambda: unparsable value in '" + text + "'");
            }
        }
        return;
    }
    if (!value.is_object()) throw ConfigError("lambda: expected string or object");
    require_known_keys(value, "model.lambda.", {"mode", "init"});
    std::string name = "fixed";
    get_if_present(value, "mode", name);
    if (name == "fixed")
        mode = LambdaMode::Fixed;
    else if (name == "learnable")
        mode = LambdaMode::Learnable;
    else
        throw ConfigError("lambda.mode: expected fixed or learnable, got '" + name + "'");
    get_if_present(value, "init", init);
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size < 2) throw ConfigError("model: vocab_size must be >= 2");
    if (d_model < 1 || n_heads < 1 || n_layers < 1 || max_seq_len < 1 || mlp_hidden < 1)
        throw ConfigError("model: dimensions must be positive");
    if (d_model % n_heads != 0)
        throw ConfigError("model: d_model " + std::to_string(d_model) + " not divisible by " +
                          std::to_string(n_heads) + " heads");
    if (!std::isfinite(lambda_init)) throw ConfigError("model: lambda init must be finite");
    if (variant == Variant::DiffLoRA) {
        placement.validate();
        if (placement.rank_negative > d_model ||
            (placement.mode == PlacementMode::BothTerms && placement.rank_positive > d_model))
            throw ConfigError("model: adapter rank exceeds d_model");
    }
    if (group_norm) {
        if (variant != Variant::DiffLoRA)
            throw ConfigError("model: group_norm requires the difflora variant");
        if (lambda_init <= 0.0 || lambda_init >= 1.0)
            throw ConfigError("model: group_norm requires lambda init in (0, 1)");
    }
    if (full_lora_rank < 0) throw ConfigError("model: full_lora_rank must be >= 0");
}

std::string variant_name(Variant variant) {
    switch (variant) {
        case Variant::Baseline: return "baseline";
        case Variant::FullLoRA: return "full-lora";
        case Variant::DiffLoRA: return "difflora";
    }
    throw ConfigError("variant_name: bad enum value");
}

Variant variant_from_name(const std::string& name) {
    if (name == "baseline") return Variant::Baseline;
    if (name == "full-lora") return Variant::FullLoRA;
    if (name == "difflora-neg" || name == "difflora-both" || name == "difflora")
        return Variant::DiffLoRA;
    throw ConfigError("variant: expected baseline, full-lora, difflora-neg or difflora-both, "
                      "got '" + name + "'");
}

std::string model_id(const ModelConfig& config) {
    std::ostringstream out;
    switch (config.variant) {
        case Variant::Baseline:
            return "baseline";
        case Variant::FullLoRA:
            out << "full-lora-r";
            if (config.full_lora_rank > 0)
                out << config.full_lora_rank;
            else
                out << "auto";
            return out.str();
        case Variant::DiffLoRA: {
            const bool both = config.placement.mode == PlacementMode::BothTerms;
            out << (both ? "difflora-both-r" : "difflora-neg-r") << config.placement.rank_negative;
            out << (config.lambda_mode == LambdaMode::Fixed ? "-lfix" : "-llearn")
                << lambda_for_id(config);
            if (config.group_norm) out << "-gn";
            return out.str();
        }
    }
    throw ConfigError("model_id: bad variant");
}

std::string model_config_to_json_string(const ModelConfig& c) {
    json j;
    j["vocab_size"] = c.vocab_size;
    j["d_model"] = c.d_model;
    j["n_heads"] = c.n_heads;
    j["n_layers"] = c.n_layers;
    j["max_seq_len"] = c.max_seq_len;
    j["mlp_hidden"] = c.mlp_hidden;
    if (c.variant == Variant::DiffLoRA)
        j["variant"] = c.placement.mode == PlacementMode::BothTerms ? "difflora-both"
                                                                    : "difflora-neg";
    else
        j["variant"] = variant_name(c.variant);
    j["rank"] = c.placement.rank_negative;
    j["alpha"] = c.alpha_negative;
    j["alpha_positive"] = c.alpha_positive;
    j["full_lora_rank"] = c.full_lora_rank;
    j["full_lora_alpha"] = c.full_lora_alpha;
    j["lambda"] = json{{"mode", c.lambda_mode == LambdaMode::Fixed ? "fixed" : "learnable"},
                       {"init", c.lambda_init}};
    j["group_norm"] = c.group_norm;
    j["tied_unembedding"] = c.tied_unembedding;
    j["seed"] = c.seed;
    return j.dump();
}

ModelConfig model_config_from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("model config: expected a JSON object");
    require_known_keys(j, "model.",
                       {"vocab_size", "d_model", "n_heads", "n_layers", "max_seq_len",
                        "mlp_hidden", "variant", "rank", "alpha", "alpha_positive",
                        "full_lora_rank", "full_lora_alpha", "lambda", "group_norm",
                        "tied_unembedding", "seed"});
    ModelConfig c;
    get_if_present(j, "vocab_size", c.vocab_size);
    get_if_present(j, "d_model", c.d_model);
    get_if_present(j, "n_heads", c.n_heads);
    get_if_present(j, "n_layers", c.n_layers);
    get_if_present(j, "max_seq_len", c.max_seq_len);
    get_if_present(j, "mlp_hidden", c.mlp_hidden);
    std::string variant = "baseline";
    get_if_present(j, "variant", variant);
    c.variant = variant_from_name(variant);
    int rank = 8;
    get_if_present(j, "rank", rank);
    c.placement.mode =
        variant == "difflora-both" ? PlacementMode::BothTerms : PlacementMode::NegativeOnly;
    c.placement.rank_negative = rank;
    c.placement.rank_positive = c.placement.mode == PlacementMode::BothTerms ? rank : 0;
    get_if_present(j, "alpha", c.alpha_negative);
    get_if_present(j, "alpha_positive", c.alpha_positive);
    get_if_present(j, "full_lora_rank", c.full_lora_rank);
    get_if_present(j, "full_lora_alpha", c.full_lora_alpha);
    if (auto it = j.find("lambda"); it != j.end()) parse_lambda(*it, c.lambda_mode, c.lambda_init);
    get_if_present(j, "group_norm", c.group_norm);
    get_if_present(j, "tied_unembedding", c.tied_unembedding);
    get_if_present(j, "seed", c.seed);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// parameter registry
// ---------------------------------------------------------------------------

std::vector<ParamRef> ToyModel::parameters() {
    std::vector<ParamRef> out;
    auto add = [&out](std::string name, Tensor2D& t, bool trainable) {
        if (!t.empty()) out.push_back(ParamRef{std::move(name), &t, nullptr, trainable});
    };
    auto add_adapter = [&out](const std::string& prefix, std::optional<LowRankAdapter>& ad) {
        if (!ad) return;
        out.push_back(ParamRef{prefix + ".b", &ad->b, nullptr, true});
        out.push_back(ParamRef{prefix + ".a", &ad->a, nullptr, true});
    };
    add("tok_embed", tok_embed, false);
    add("pos_embed", pos_embed, false);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        LayerBlock& L = layers[i];
        const std::string p = "layers." + std::to_string(i);
        add(p + ".attn_norm.gain", L.attn_norm_gain, false);
        add(p + ".attn.w_q1", L.attn.w_q1, false);
        add(p + ".attn.w_k1", L.attn.w_k1, false);
        add(p + ".attn.w_v", L.attn.w_v, false);
        add(p + ".attn.w_o", L.attn.w_o, false);
        add_adapter(p + ".attn.q1", L.attn.ad_q1);
        add_adapter(p + ".attn.k1", L.attn.ad_k1);
        add_adapter(p + ".attn.q2", L.attn.ad_q2);
        add_adapter(p + ".attn.k2", L.attn.ad_k2);
        add_adapter(p + ".attn.v", L.attn.ad_v);
        add_adapter(p + ".attn.o", L.attn.ad_o);
        if (adapters_injected && config.variant == Variant::DiffLoRA)
            out.push_back(ParamRef{p + ".attn.lambda", nullptr, &L.attn.lambda.value,
                                   config.lambda_mode == LambdaMode::Learnable});
        if (L.attn.group_norm) add(p + ".attn.gn_gain", L.attn.gn_gain, true);
        add(p + ".mlp_norm.gain", L.mlp_norm_gain, false);
        add(p + ".mlp.w_in", L.mlp.w_in, false);
        add(p + ".mlp.w_out", L.mlp.w_out, false);
        add_adapter(p + ".mlp.in", L.mlp.ad_in);
        add_adapter(p + ".mlp.out", L.mlp.ad_out);
    }
    add("final_norm.gain", final_norm_gain, false);
    add("unembed", unembed, false);
    return out;
}

std::vector<ParamRef> ToyModel::trainable_parameters() {
    std::vector<ParamRef> out;
    for (ParamRef& ref : parameters())
        if (ref.trainable) out.push_back(ref);
    return out;
}

ParamRef ToyModel::find_param(const std::string& name) {
    for (ParamRef& ref : parameters())
        if (ref.name == name) return ref;
    throw LookupError("unknown parameter: " + name);
}

long long ToyModel::trainable_scalar_count() {
    long long n = 0;
    for (const ParamRef& ref : trainable_parameters()) n += static_cast<long long>(ref.size());
    return n;
}

// ---------------------------------------------------------------------------
// base construction
// ---------------------------------------------------------------------------

ToyModel build_base(const ModelConfig& config) {
    config.validate();
    ToyModel m;
    m.config = config;
    const int d = config.d_model;
    const int hd = config.head_dim();
    const int vocab = config.vocab_size;
    const Precision prec = config.precision;
    const bool structured = config.n_heads >= 4 && hd >= 4 && vocab >= 20;

    m.tok_embed = Tensor2D(vocab, d);
    m.pos_embed = Tensor2D(config.max_seq_len, d);

    if (structured) {
        const VocabPartition part = VocabPartition::standard(vocab);
        const int band1 = hd, band2 = 2 * hd, band3 = 3 * hd;
        Rng rng(derive_seed(config.seed, "base.embed"));
        for (int id = 0; id < vocab; ++id)
            for (int j = hd; j < d; ++j) m.tok_embed.at(id, j) = kNoiseScale * rng.normal();
        auto add_unit = [&](int id, int col0, int width, double scale) {
            std::vector<double> dir(static_cast<std::size_t>(width));
            double norm_sq = 0.0;
            for (double& v : dir) {
                v = rng.normal();
                norm_sq += v * v;
            }
            const double inv = scale / std::sqrt(std::max(norm_sq, 1e-12));
            for (int r = 0; r < width; ++r) m.tok_embed.at(id, col0 + r) += dir[r] * inv;
        };
        // specials get dedicated one-hot coordinates at full scale so every
        // row has a comparable norm; rmsnorm otherwise amplifies low-norm
        // rows' position content and detunes the position-matching head.
        // bos needs its own coordinate: the retrieval heads key on it.
        m.tok_embed.at(VocabPartition::kBos, band3 + 0) += kBosScale;
        m.tok_embed.at(VocabPartition::kSep, band3 + 1) += kSpecialScale;
        m.tok_embed.at(VocabPartition::kQmark, band3 + 2) += kSpecialScale;
        // bos also carries a decoy cue on one value channel: the retrieval
        // heads sink part of their attention on bos, so the decoy narrowly
        // outvotes the true value and the frozen model answers with that one
        // value regardless of the query (chance-level for the task)
        m.tok_embed.at(VocabPartition::kBos, band2 + 0) += kFakeCue;
        for (int i = 0; i < part.n_keys; ++i)
            m.tok_embed.at(part.key_symbol(i), band1 + i % hd) += kClassScale;
        for (int i = 0; i < part.n_values; ++i)
            m.tok_embed.at(part.value_symbol(i), band2 + i % hd) += kValueScale;
        for (int i = 0; i < part.n_fillers(); ++i)
            add_unit(part.filler_symbol(i), band3 + 3, hd - 3, kClassScale);

        for (int pos = 0; pos < config.max_seq_len; ++pos) {
            double theta = kPosTheta0;
            for (int k = 0; 2 * k + 1 < hd; ++k) {
                m.pos_embed.at(pos, 2 * k) = kPosScale * std::cos(pos * theta);
                m.pos_embed.at(pos, 2 * k + 1) = kPosScale * std::sin(pos * theta);
                theta *= kPosThetaRatio;
            }
        }
    } else {
        Rng rng(derive_seed(config.seed, "base.embed"));
        fill_normal(m.tok_embed, rng, 0.5);
        fill_normal(m.pos_embed, rng, 0.5);
    }
    set_precision_round(m.tok_embed, prec);
    set_precision_round(m.pos_embed, prec);

    m.layers.resize(static_cast<std::size_t>(config.n_layers));
    for (int l = 0; l < config.n_layers; ++l) {
        LayerBlock& L = m.layers[static_cast<std::size_t>(l)];
        const std::string tag = "base.layer." + std::to_string(l);
        Rng rng(derive_seed(config.seed, tag));
        L.attn.n_heads = config.n_heads;
        L.attn.head_dim = hd;
        L.attn.w_q1 = Tensor2D(d, d);
        L.attn.w_k1 = Tensor2D(d, d);
        L.attn.w_v = Tensor2D(d, d);
        L.attn.w_o = Tensor2D(d, d);
        const double noise_sd = kNoiseScale / std::sqrt(static_cast<double>(d));
        fill_normal(L.attn.w_q1, rng, noise_sd);
        fill_normal(L.attn.w_k1, rng, noise_sd);
        fill_normal(L.attn.w_v, rng, noise_sd);
        fill_normal(L.attn.w_o, rng, noise_sd);
        if (structured) {
            const int band1 = hd, band2 = 2 * hd, band3 = 3 * hd;
            // head 0: previous-token head over the sinusoidal position pairs
            const double g = std::sqrt(kPrevGain);
            double theta = kPosTheta0;
            for (int k = 0; 2 * k + 1 < hd; ++k) {
                const double c = std::cos(theta), s = std::sin(theta);
                L.attn.w_q1.at(2 * k, 2 * k) += g * c;
                L.attn.w_q1.at(2 * k + 1, 2 * k) += g * s;
                L.attn.w_q1.at(2 * k, 2 * k + 1) += -g * s;
                L.attn.w_q1.at(2 * k + 1, 2 * k + 1) += g * c;
                L.attn.w_k1.at(2 * k, 2 * k) += g;
                L.attn.w_k1.at(2 * k + 1, 2 * k + 1) += g;
                theta *= kPosThetaRatio;
            }
            // heads 2 and 3, last layer only (the key band is empty below,
            // and on earlier layers these heads would feed the bos row its
            // own decoy cue): key-band content match plus a bos sink. The
            // bos coordinate pulls every key-carrying query toward position
            // 0, where the decoy cue sits, so the match result is masked
            // until something cancels the bos contribution.
            const bool last = l == config.n_layers - 1;
            if (last)
                for (int r = 0; r < hd; ++r) {
                    L.attn.w_q1.at(band1 + r, 2 * hd + r) += kMatchGain;
                    L.attn.w_k1.at(band1 + r, 2 * hd + r) += kMatchGain;
                    L.attn.w_q1.at(band1 + r, 3 * hd + r) += kMatchGain;
                    L.attn.w_k1.at(band1 + r, 3 * hd + r) += kMatchGain;
                    L.attn.w_k1.at(band3 + 0, 2 * hd + r) += -kBosAttract;
                    L.attn.w_k1.at(band3 + 0, 3 * hd + r) += -kBosAttract;
                    L.attn.w_k1.at(band3 + 2, 2 * hd + r) += kSelfRepel;
                    L.attn.w_k1.at(band3 + 2, 3 * hd + r) += kSelfRepel;
                }
            // value routing: head 0 relays the key band (previous-token copy),
            // heads 2/3 read out the value band; head 1 is left unstructured
            for (int r = 0; r < hd; ++r) {
                L.attn.w_v.at(band1 + r, r) += 1.0;
                L.attn.w_o.at(r, band1 + r) += -kInjectGain;
                if (last) {
                    L.attn.w_v.at(band2 + r, 2 * hd + r) += 1.0;
                    L.attn.w_v.at(band2 + r, 3 * hd + r) += 1.0;
                    L.attn.w_o.at(2 * hd + r, band2 + r) += kRetrieveGain;
                    L.attn.w_o.at(3 * hd + r, band2 + r) += kRetrieveGain;
                }
            }
        } else {
            // plain random base for shapes the structured layout cannot host
            const double sd = 1.0 / std::sqrt(static_cast<double>(d));
            Rng wrng(derive_seed(config.seed, tag + ".plain"));
            fill_normal(L.attn.w_q1, wrng, sd);
            fill_normal(L.attn.w_k1, wrng, sd);
            fill_normal(L.attn.w_v, wrng, sd);
            fill_normal(L.attn.w_o, wrng, sd);
        }
        set_precision_round(L.attn.w_q1, prec);
        set_precision_round(L.attn.w_k1, prec);
        set_precision_round(L.attn.w_v, prec);
        set_precision_round(L.attn.w_o, prec);

        L.mlp.w_in = Tensor2D(d, config.mlp_hidden);
        L.mlp.w_out = Tensor2D(config.mlp_hidden, d);
        fill_normal(L.mlp.w_in, rng, kMlpInScale / std::sqrt(static_cast<double>(d)));
        fill_normal(L.mlp.w_out, rng,
                    kMlpOutScale / std::sqrt(static_cast<double>(config.mlp_hidden)));
        set_precision_round(L.mlp.w_in, prec);
        set_precision_round(L.mlp.w_out, prec);

        L.attn_norm_gain = Tensor2D(1, d, prec);
        L.attn_norm_gain.fill(1.0);
        L.mlp_norm_gain = Tensor2D(1, d, prec);
        L.mlp_norm_gain.fill(1.0);
    }

    m.final_norm_gain = Tensor2D(1, d, prec);
    m.final_norm_gain.fill(1.0);
    if (structured) {
        // readout filter: the tied unembedding would otherwise hand every
        // token a large self-logit; a trained LM's final norm learns to damp
        // bands that never carry the next token (positions, keys, fillers,
        // specials), keeping the value band as the prediction channel
        for (int j = 0; j < d; ++j)
            if (j < 2 * hd || j >= 3 * hd) m.final_norm_gain.at(0, j) = kReadoutDamp;
    }
    if (!config.tied_unembedding) {
        m.unembed = Tensor2D(d, vocab);
        Rng rng(derive_seed(config.seed, "base.unembed"));
        fill_normal(m.unembed, rng, 1.0 / std::sqrt(static_cast<double>(d)));
        set_precision_round(m.unembed, prec);
    }
    return m;
}

int solve_full_lora_rank(const ModelConfig& config) {
    const long long target = trainable_param_count(config.placement, config.n_layers,
                                                   config.d_model, config.d_model, false, false,
                                                   config.head_dim(), config.n_heads);
    const long long per_rank =
        static_cast<long long>(config.n_layers) *
        (8ll * config.d_model + 2ll * (config.d_model + config.mlp_hidden));
    const long long rank = target / per_rank;
    if (rank < 1)
        throw ConfigError("full-lora: rank 1 already exceeds the matching budget of " +
                          std::to_string(target) + " parameters");
    return static_cast<int>(rank);
}

void inject_adapters(ToyModel& m) {
    if (m.adapters_injected) throw StateError("inject_adapters: adapters already injected");
    const ModelConfig& c = m.config;
    if (c.variant == Variant::Baseline)
        throw ConfigError("inject_adapters: baseline variant has no adapters");
    const int d = c.d_model;
    auto adapter = [&](int in_dim, int out_dim, int rank, double alpha, const std::string& tag,
                       bool seed_b = false) {
        LowRankAdapter ad = init_adapter(in_dim, out_dim, rank, alpha,
                                         derive_seed(c.seed, "adapter." + tag), seed_b);
        set_precision_round(ad.b, c.precision);
        set_precision_round(ad.a, c.precision);
        return ad;
    };
    if (c.variant == Variant::DiffLoRA) {
        const int r_neg = c.placement.rank_negative;
        const int r_pos = c.placement.rank_positive;
        const double a_neg = c.alpha_negative > 0.0 ? c.alpha_negative : 2.0 * r_neg;
        const double a_pos = c.alpha_positive > 0.0 ? c.alpha_positive : 2.0 * r_pos;
        for (std::size_t l = 0; l < m.layers.size(); ++l) {
            DiffAttnLayer& attn = m.layers[l].attn;
            const std::string p = std::to_string(l);
            attn.ad_q2 = adapter(d, d, r_neg, a_neg, p + ".q2");
            // k2 seeds b so the pure-adapter score product is not a stationary
            // point at init; q2 stays zero, keeping a2 rows exactly uniform.
            attn.ad_k2 = adapter(d, d, r_neg, a_neg, p + ".k2", true);
            if (c.placement.mode == PlacementMode::BothTerms) {
                attn.ad_q1 = adapter(d, d, r_pos, a_pos, p + ".q1");
                attn.ad_k1 = adapter(d, d, r_pos, a_pos, p + ".k1");
            }
            attn.lambda = LambdaState{c.lambda_mode, c.lambda_init, c.lambda_init};
            if (c.group_norm) {
                attn.group_norm = true;
                attn.gn_gain = Tensor2D(c.n_heads, c.head_dim(), c.precision);
                attn.gn_gain.fill(1.0);
                attn.gn_lambda_init = c.lambda_init;
            }
        }
    } else {
        const int rank = c.full_lora_rank > 0 ? c.full_lora_rank : solve_full_lora_rank(c);
        m.config.full_lora_rank = rank;
        const double alpha = c.full_lora_alpha > 0.0 ? c.full_lora_alpha : 2.0 * rank;
        for (std::size_t l = 0; l < m.layers.size(); ++l) {
            LayerBlock& L = m.layers[l];
            const std::string p = std::to_string(l);
            L.attn.ad_q1 = adapter(d, d, rank, alpha, p + ".q1");
            L.attn.ad_k1 = adapter(d, d, rank, alpha, p + ".k1");
            L.attn.ad_v = adapter(d, d, rank, alpha, p + ".v");
            L.attn.ad_o = adapter(d, d, rank, alpha, p + ".o");
            L.mlp.ad_in = adapter(d, c.mlp_hidden, rank, alpha, p + ".mlp_in");
            L.mlp.ad_out = adapter(c.mlp_hidden, d, rank, alpha, p + ".mlp_out");
        }
    }
    m.adapters_injected = true;
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

Tensor2D forward(const ToyModel& m, const std::vector<int>& tokens,
                 std::vector<AttnTrace>* traces, ForwardCache* cache) {
    const ModelConfig& c = m.config;
    const int seq = static_cast<int>(tokens.size());
    if (seq < 1) throw InputError("forward: empty token sequence");
    if (seq > c.max_seq_len)
        throw InputError("forward: sequence length " + std::to_string(seq) + " exceeds max " +
                         std::to_string(c.max_seq_len));
    for (int t = 0; t < seq; ++t)
        if (tokens[static_cast<std::size_t>(t)] < 0 ||
            tokens[static_cast<std::size_t>(t)] >= c.vocab_size)
            throw InputError("forward: token id " +
                             std::to_string(tokens[static_cast<std::size_t>(t)]) +
                             " at position " + std::to_string(t) + " out of vocab " +
                             std::to_string(c.vocab_size));

    Tensor2D x(seq, c.d_model, c.precision);
    for (int t = 0; t < seq; ++t)
        for (int j = 0; j < c.d_model; ++j)
            x.at(t, j) = m.tok_embed.at(tokens[static_cast<std::size_t>(t)], j) +
                         m.pos_embed.at(t, j);
    x.round_to_precision();

    const CausalMask mask{seq};
    if (traces) traces->clear();
    if (cache) {
        cache->layers.clear();
        cache->layers.resize(m.layers.size());
        cache->x0 = x;
    }
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const LayerBlock& L = m.layers[l];
        LayerForwardCache* lc = cache ? &cache->layers[l] : nullptr;
        if (lc) lc->x_in = x;
        Tensor2D normed = linalg::per_head_rmsnorm(x, gain_span(L.attn_norm_gain), kNormEps,
                                                   lc ? &lc->attn_norm_inv : nullptr);
        if (lc) lc->attn_norm = normed;
        AttnResult attn = L.attn.ad_q2
                              ? diff_attention(normed, L.attn, mask, lc ? &lc->attn : nullptr)
                              : standard_attention(normed, L.attn, mask, lc ? &lc->attn : nullptr);
        if (traces) traces->push_back(std::move(attn.trace));
        if (lc) lc->attn_out = attn.out;
        x = linalg::add(x, attn.out);
        if (lc) lc->x_mid = x;

        normed = linalg::per_head_rmsnorm(x, gain_span(L.mlp_norm_gain), kNormEps,
                                          lc ? &lc->mlp_norm_inv : nullptr);
        if (lc) lc->mlp_norm = normed;
        Tensor2D pre = L.mlp.ad_in ? linalg::matmul(normed, merged_weight(L.mlp.w_in, *L.mlp.ad_in))
                                   : linalg::matmul(normed, L.mlp.w_in);
        if (lc) lc->mlp_pre = pre;
        Tensor2D act(pre.rows(), pre.cols(), pre.precision());
        for (std::size_t i = 0; i < pre.size(); ++i) act.data()[i] = gelu(pre.data()[i]);
        act.round_to_precision();
        act.ensure_finite("gelu");
        if (lc) lc->mlp_act = act;
        Tensor2D mlp_out =
            L.mlp.ad_out ? linalg::matmul(act, merged_weight(L.mlp.w_out, *L.mlp.ad_out))
                         : linalg::matmul(act, L.mlp.w_out);
        if (lc) lc->mlp_out = mlp_out;
        x = linalg::add(x, mlp_out);
    }
    if (cache) cache->final_in = x;
    Tensor2D final_norm = linalg::per_head_rmsnorm(x, gain_span(m.final_norm_gain), kNormEps,
                                                   cache ? &cache->final_norm_inv : nullptr);
    if (cache) cache->final_norm = final_norm;
    Tensor2D logits = c.tied_unembedding
                          ? linalg::matmul_nt(final_norm, m.tok_embed)
                          : linalg::matmul(final_norm, m.unembed);
    if (cache) cache->logits = logits;
    return logits;
}

// ---------------------------------------------------------------------------
// digest and checkpoints
// ---------------------------------------------------------------------------

namespace {

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
    return h;
}

constexpr char kMagic[4] = {'D', 'L', 'R', 'A'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct ByteReader {
    const std::string& buf;
    std::size_t off = 0;

    void need(std::size_t n, const char* what) {
        if (off + n > buf.size())
            throw FormatError(std::string("checkpoint truncated reading ") + what, off);
    }
    std::uint8_t read_u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(buf[off++]);
    }
    std::uint32_t read_u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
        off += 4;
        return v;
    }
    std::string read_str(std::size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(off, n);
        off += n;
        return s;
    }
};

}  // namespace

std::uint64_t frozen_digest(ToyModel& m) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const ParamRef& ref : m.parameters()) {
        if (ref.trainable) continue;
        h = fnv1a(h, ref.name.data(), ref.name.size());
        h = fnv1a(h, ref.values(), ref.size() * sizeof(double));
    }
    return h;
}

void save_checkpoint(ToyModel& m, const std::string& path, bool adapters_only,
                     const std::string& rng_state, int step) {
    std::string out;
    out.append(kMagic, 4);
    write_u32(out, kVersion);
    json meta;
    meta["kind"] = adapters_only ? "adapters" : "full";
    meta["config"] = json::parse(model_config_to_json_string(m.config));
    meta["precision"] = m.config.precision == Precision::Double ? "double" : "single";
    meta["rng_state"] = rng_state;
    meta["step"] = step;
    const std::string meta_str = meta.dump();
    write_u32(out, static_cast<std::uint32_t>(meta_str.size()));
    out += meta_str;

    std::vector<ParamRef> params;
    for (const ParamRef& ref : m.parameters())
        if (!adapters_only || ref.trainable) params.push_back(ref);
    write_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const ParamRef& ref : params) {
        write_u32(out, static_cast<std::uint32_t>(ref.name.size()));
        out += ref.name;
        const bool single = ref.tensor && ref.tensor->precision() == Precision::Single;
        out.push_back(single ? 1 : 0);
        write_u32(out, static_cast<std::uint32_t>(ref.rows()));
        write_u32(out, static_cast<std::uint32_t>(ref.cols()));
        const double* values = ref.values();
        if (single) {
            for (std::size_t i = 0; i < ref.size(); ++i) {
                const float f = static_cast<float>(values[i]);
                out.append(reinterpret_cast<const char*>(&f), sizeof(float));
            }
        } else {
            out.append(reinterpret_cast<const char*>(values), ref.size() * sizeof(double));
        }
    }
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw InputError("cannot open checkpoint for writing: " + path);
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw InputError("short write to checkpoint: " + path);
}

LoadedModel load_checkpoint(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw InputError("cannot open checkpoint: " + path);
    std::ostringstream raw;
    raw << file.rdbuf();
    const std::string buf = raw.str();
    ByteReader r{buf};

    r.need(4, "magic");
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        throw FormatError("checkpoint: bad magic bytes", 0);
    r.off = 4;
    const std::uint32_t version = r.read_u32("version");
    if (version != kVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version), 4);
    const std::uint32_t meta_len = r.read_u32("metadata length");
    const std::size_t meta_off = r.off;
    const std::string meta_str = r.read_str(meta_len, "metadata");
    json meta;
    try {
        meta = json::parse(meta_str);
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint metadata: ") + e.what(), meta_off);
    }
    if (!meta.is_object() || !meta.contains("kind") || !meta.contains("config"))
        throw FormatError("checkpoint metadata: missing kind/config", meta_off);
    const std::string kind = meta["kind"].get<std::string>();
    if (kind != "full" && kind != "adapters")
        throw FormatError("checkpoint metadata: bad kind '" + kind + "'", meta_off);
    ModelConfig config = model_config_from_json_string(meta["config"].dump());
    if (meta.contains("precision"))
        config.precision = meta["precision"].get<std::string>() == "single" ? Precision::Single
                                                                            : Precision::Double;
    LoadedModel loaded;
    if (meta.contains("rng_state")) loaded.rng_state = meta["rng_state"].get<std::string>();
    if (meta.contains("step")) loaded.step = meta["step"].get<int>();

    loaded.model = build_base(config);
    if (config.variant != Variant::Baseline) inject_adapters(loaded.model);

    std::vector<ParamRef> expected;
    for (const ParamRef& ref : loaded.model.parameters())
        if (kind == "full" || ref.trainable) expected.push_back(ref);

    const std::uint32_t count = r.read_u32("tensor count");
    if (count != expected.size())
        throw FormatError("checkpoint: " + std::to_string(count) + " tensors, expected " +
                          std::to_string(expected.size()), r.off - 4);
    std::set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t entry_off = r.off;
        const std::uint32_t name_len = r.read_u32("tensor name length");
        const std::string name = r.read_str(name_len, "tensor name");
        const std::uint8_t dtype = r.read_u8("tensor dtype");
        const std::uint32_t rows = r.read_u32("tensor rows");
        const std::uint32_t cols = r.read_u32("tensor cols");
        if (dtype > 1) throw FormatError("checkpoint: bad dtype for " + name, entry_off);
        const ParamRef* target = nullptr;
        for (const ParamRef& ref : expected)
            if (ref.name == name) target = &ref;
        if (!target) throw FormatError("checkpoint: unexpected tensor '" + name + "'", entry_off);
        if (!seen.insert(name).second)
            throw FormatError("checkpoint: duplicate tensor '" + name + "'", entry_off);
        if (static_cast<int>(rows) != target->rows() || static_cast<int>(cols) != target->cols())
            throw FormatError("checkpoint: tensor '" + name + "' is " + std::to_string(rows) +
                              "x" + std::to_string(cols) + ", expected " +
                              std::to_string(target->rows()) + "x" +
                              std::to_string(target->cols()), entry_off);
        const std::size_t n = static_cast<std::size_t>(rows) * cols;
        double* values = target->values();
        if (dtype == 1) {
            r.need(n * sizeof(float), "tensor data");
            for (std::size_t k = 0; k < n; ++k) {
                float f;
                std::memcpy(&f, buf.data() + r.off + k * sizeof(float), sizeof(float));
                values[k] = static_cast<double>(f);
            }
            r.off += n * sizeof(float);
        } else {
            r.need(n * sizeof(double), "tensor data");
            std::memcpy(values, buf.data() + r.off, n * sizeof(double));
            r.off += n * sizeof(double);
        }
    }
    if (seen.size() != expected.size())
        throw FormatError("checkpoint: missing tensors", r.off);
    if (r.off != buf.size()) throw FormatError("checkpoint: trailing bytes", r.off);
    return loaded;
}

}  // namespace difflora
