// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "difflora/attention.hpp"

namespace difflora {

enum class Variant : std::uint8_t { Baseline = 0, FullLoRA = 1, DiffLoRA = 2 };

struct ModelConfig {
    int vocab_size = 64;
    int d_model = 32;
    int n_heads = 4;
    int n_layers = 2;
    int max_seq_len = 128;
    int mlp_hidden = 64;
    Variant variant = Variant::Baseline;
    AdapterPlacement placement;          // DiffLoRA ranks; also FullLoRA's matching reference
    LambdaMode lambda_mode = LambdaMode::Fixed;
    double lambda_init = 0.1;
    bool group_norm = false;
    int full_lora_rank = 0;              // 0: auto-solve to match the placement's count
    double alpha_negative = 0.0;         // 0: defaults to 2 * rank
    double alpha_positive = 0.0;
    double full_lora_alpha = 0.0;
    bool tied_unembedding = true;
    Precision precision = Precision::Double;
    std::uint64_t seed = 1;

    int head_dim() const { return d_model / n_heads; }
    void validate() const;
};

// JSON round-trip for configs; parsing rejects unknown keys.
std::string model_config_to_json_string(const ModelConfig& config);
ModelConfig model_config_from_json_string(const std::string& text);

std::string variant_name(Variant variant);
Variant variant_from_name(const std::string& name);

// Short identifier naming a configured model in reports,
// e.g. "difflora-neg-r8-lfix0.1" or "full-lora-r2".
std::string model_id(const ModelConfig& config);

// Handle to one named parameter inside a model. Built on demand; never store
// across structural changes to the model.
struct ParamRef {
    std::string name;
    Tensor2D* tensor = nullptr;
    double* scalar = nullptr;  // lambda
    bool trainable = false;

    double* values() const { return tensor ? tensor->data() : scalar; }
    std::size_t size() const { return tensor ? tensor->size() : 1; }
    int rows() const { return tensor ? tensor->rows() : 1; }
    int cols() const { return tensor ? tensor->cols() : 1; }
};

struct MlpBlock {
    Tensor2D w_in, w_out;
    std::optional<LowRankAdapter> ad_in, ad_out;
};

struct LayerBlock {
    DiffAttnLayer attn;
    MlpBlock mlp;
    Tensor2D attn_norm_gain;  // 1 x d_model
    Tensor2D mlp_norm_gain;   // 1 x d_model
};

// Decoder-only toy transformer. Base weights are frozen; adapters, lambda,
// and group-norm gains are the only trainable parameters.
struct ToyModel {
    ModelConfig config;
    Tensor2D tok_embed;  // vocab x d_model
    Tensor2D pos_embed;  // max_seq x d_model
    std::vector<LayerBlock> layers;
    Tensor2D final_norm_gain;  // 1 x d_model
    Tensor2D unembed;          // d_model x vocab; empty when tied
    bool adapters_injected = false;

    // Every parameter exactly once, in a fixed order shared with checkpoints.
    std::vector<ParamRef> parameters();
    std::vector<ParamRef> trainable_parameters();
    ParamRef find_param(const std::string& name);
    long long trainable_scalar_count();
};

// Deterministic seeded base. The weights are structured the way a pretrained
// decoder's would be (previous-token head, weak content-match heads, banded
// token embeddings) so that desk-scale adapters have something to latch onto;
// structure depends only on (config minus variant), never on the variant.
ToyModel build_base(const ModelConfig& config);

// Installs the variant's adapters and registers the trainables. Base outputs
// are unchanged at injection time (zero deltas; for DiffLoRA with lambda > 0
// the subtracted term is the uniform causal map, not zero).
void inject_adapters(ToyModel& model);

// Largest full-LoRA rank whose trainable count does not exceed the DiffLoRA
// placement's count on the same dims.
int solve_full_lora_rank(const ModelConfig& config);

struct LayerForwardCache {
    Tensor2D x_in;
    Tensor2D attn_norm;
    std::vector<double> attn_norm_inv;
    AttnLayerCache attn;
    Tensor2D attn_out;
    Tensor2D x_mid;
    Tensor2D mlp_norm;
    std::vector<double> mlp_norm_inv;
    Tensor2D mlp_pre;
    Tensor2D mlp_act;
    Tensor2D mlp_out;
};

struct ForwardCache {
    Tensor2D x0;
    std::vector<LayerForwardCache> layers;
    Tensor2D final_in;
    Tensor2D final_norm;
    std::vector<double> final_norm_inv;
    Tensor2D logits;
};

// Full pass: embeddings -> per layer (pre-norm, attention, residual,
// pre-norm, GELU MLP, residual) -> final norm -> unembedding. Returns
// seq x vocab logits; traces/cache are filled when non-null.
Tensor2D forward(const ToyModel& model, const std::vector<int>& tokens,
                 std::vector<AttnTrace>* traces = nullptr, ForwardCache* cache = nullptr);

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475)); }

inline double gelu_grad(double x) {
    const double phi = 0.5 * (1.0 + std::erf(x * 0.7071067811865475));
    const double density = 0.3989422804014327 * std::exp(-0.5 * x * x);
    return phi + x * density;
}

// FNV-1a over the frozen parameters (names and raw bytes); must be unchanged
// by any amount of training.
std::uint64_t frozen_digest(ToyModel& model);

struct LoadedModel {
    ToyModel model;
    std::string rng_state;
    int step = 0;
};

// Little-endian binary checkpoint: magic "DLRA", version, JSON metadata
// (config, kind, precision, rng state, step), then named tensors. Adapter-only
// checkpoints store just the trainables and rebuild the base from the seed.
void save_checkpoint(ToyModel& model, const std::string& path, bool adapters_only = false,
                     const std::string& rng_state = "", int step = 0);
LoadedModel load_checkpoint(const std::string& path);

}  // namespace difflora
