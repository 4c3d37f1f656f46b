// SPDX-License-Identifier: Apache-2.0
// Model assembly, parameter registry, config round-trips, checkpoints.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "difflora/adapter.hpp"
#include "difflora/error.hpp"
#include "difflora/model.hpp"
#include "difflora/rng.hpp"

using namespace difflora;

namespace {

ModelConfig neg_config(std::uint64_t seed = 1) {
    ModelConfig c;
    c.variant = Variant::DiffLoRA;
    c.placement.mode = PlacementMode::NegativeOnly;
    c.placement.rank_negative = 8;
    c.seed = seed;
    return c;
}

ToyModel built(const ModelConfig& c) {
    ToyModel m = build_base(c);
    if (c.variant != Variant::Baseline) inject_adapters(m);
    return m;
}

std::vector<std::vector<double>> snapshot(ToyModel& m, bool trainable_only) {
    std::vector<std::vector<double>> out;
    auto params = trainable_only ? m.trainable_parameters() : m.parameters();
    for (const ParamRef& ref : params)
        out.emplace_back(ref.values(), ref.values() + ref.size());
    return out;
}

std::string temp_path(const std::string& stem) {
    return "test_model_" + stem + ".ckpt";
}

}  // namespace

TEST_CASE("parameter names are unique and find_param matches the registry") {
    ModelConfig c = neg_config();
    c.group_norm = true;
    c.lambda_mode = LambdaMode::Learnable;
    ToyModel m = built(c);

    std::set<std::string> names;
    for (const ParamRef& ref : m.parameters()) {
        CHECK(names.insert(ref.name).second);
        CHECK(ref.size() > 0);
    }
    CHECK(names.count("tok_embed") == 1);
    CHECK(names.count("layers.0.attn.w_q1") == 1);
    CHECK(names.count("layers.1.attn.q2.a") == 1);
    CHECK(names.count("layers.0.attn.lambda") == 1);
    CHECK(names.count("layers.0.attn.gn_gain") == 1);

    ParamRef q2a = m.find_param("layers.1.attn.q2.a");
    CHECK(q2a.rows() == 8);
    CHECK(q2a.cols() == 32);
    CHECK(q2a.trainable);
    ParamRef lam = m.find_param("layers.0.attn.lambda");
    CHECK(lam.scalar != nullptr);
    CHECK(lam.size() == 1);
    CHECK_THROWS_AS((void)m.find_param("layers.9.attn.w_q1"), LookupError);
}

TEST_CASE("trainable set matches the variant") {
    SUBCASE("baseline has no trainables") {
        ModelConfig c;
        ToyModel m = built(c);
        CHECK(m.trainable_parameters().empty());
        CHECK(m.trainable_scalar_count() == 0);
    }
    SUBCASE("negative-only placement trains q2/k2 adapters only") {
        ToyModel m = built(neg_config());
        for (const ParamRef& ref : m.trainable_parameters()) {
            const bool is_q2 = ref.name.find(".attn.q2.") != std::string::npos;
            const bool is_k2 = ref.name.find(".attn.k2.") != std::string::npos;
            CHECK((is_q2 || is_k2));
        }
        // 2 layers x 2 adapters x (32*8 + 8*32)
        CHECK(m.trainable_scalar_count() == 2048);
        CHECK(m.trainable_scalar_count() ==
              trainable_param_count(m.config.placement, m.config.n_layers, 32, 32,
                                    m.config.lambda_mode == LambdaMode::Learnable,
                                    m.config.group_norm, m.config.head_dim(),
                                    m.config.n_heads));
    }
    SUBCASE("learnable lambda and group norm add their scalars") {
        ModelConfig c = neg_config();
        c.lambda_mode = LambdaMode::Learnable;
        c.group_norm = true;
        ToyModel m = built(c);
        CHECK(m.trainable_scalar_count() == 2048 + 2 + 2 * 32);
    }
    SUBCASE("full-lora trains adapters on q1/k1/v/o and the mlp") {
        ModelConfig c = neg_config();
        c.variant = Variant::FullLoRA;
        ToyModel m = built(c);
        CHECK(m.trainable_scalar_count() > 0);
        CHECK(m.trainable_scalar_count() <= 2048);
        bool saw_mlp = false;
        for (const ParamRef& ref : m.trainable_parameters())
            if (ref.name.find(".mlp.in.") != std::string::npos) saw_mlp = true;
        CHECK(saw_mlp);
    }
}

TEST_CASE("config JSON round-trips and rejects unknown keys") {
    ModelConfig c = neg_config(17);
    c.vocab_size = 48;
    c.n_layers = 3;
    c.lambda_mode = LambdaMode::Learnable;
    c.lambda_init = 0.25;
    c.group_norm = true;
    c.tied_unembedding = false;

    const std::string text = model_config_to_json_string(c);
    ModelConfig back = model_config_from_json_string(text);
    CHECK(back.vocab_size == c.vocab_size);
    CHECK(back.n_layers == c.n_layers);
    CHECK(back.variant == c.variant);
    CHECK(back.placement.mode == c.placement.mode);
    CHECK(back.placement.rank_negative == c.placement.rank_negative);
    CHECK(back.lambda_mode == c.lambda_mode);
    CHECK(back.lambda_init == doctest::Approx(0.25).epsilon(0));
    CHECK(back.group_norm == c.group_norm);
    CHECK(back.tied_unembedding == c.tied_unembedding);
    CHECK(back.seed == c.seed);
    // second pass is a fixed point
    CHECK(model_config_to_json_string(back) == text);

    CHECK_THROWS_AS((void)model_config_from_json_string(R"({"d_modle": 32})"), ConfigError);
    CHECK_THROWS_AS((void)model_config_from_json_string(R"({"variant": "difflora-diag"})"),
                    ConfigError);
    CHECK_THROWS_AS((void)model_config_from_json_string("not json"), ConfigError);
}

TEST_CASE("model ids name the variant, rank, and lambda mode") {
    ModelConfig c;
    CHECK(model_id(c) == "baseline");

    c = neg_config();
    CHECK(model_id(c) == "difflora-neg-r8-lfix0.1");
    c.lambda_mode = LambdaMode::Learnable;
    c.group_norm = true;
    CHECK(model_id(c) == "difflora-neg-r8-llearn0.1-gn");

    c = neg_config();
    c.placement.mode = PlacementMode::BothTerms;
    c.placement.rank_negative = 4;
    c.placement.rank_positive = 4;
    CHECK(model_id(c) == "difflora-both-r4-lfix0.1");

    c = neg_config();
    c.variant = Variant::FullLoRA;
    CHECK(model_id(c) == "full-lora-rauto");
    c.full_lora_rank = 2;
    CHECK(model_id(c) == "full-lora-r2");
}

TEST_CASE("auto-solved full-lora rank fits under the matching budget") {
    ModelConfig c = neg_config();
    c.variant = Variant::FullLoRA;
    // budget 2048; full-lora spends 2*r*(4*(32+32) + (32+64) + (64+32)) per layer
    const int r = solve_full_lora_rank(c);
    CHECK(r == 2);
    ToyModel m = built(c);
    CHECK(m.trainable_scalar_count() <= 2048);

    ModelConfig tiny = c;
    tiny.placement.rank_negative = 1;
    tiny.d_model = 8;
    tiny.n_heads = 2;
    tiny.mlp_hidden = 16;
    CHECK_THROWS_AS((void)solve_full_lora_rank(tiny), ConfigError);
}

TEST_CASE("frozen digest ignores the variant and survives adapter edits") {
    ModelConfig base_cfg;
    base_cfg.seed = 9;
    ToyModel plain = built(base_cfg);

    ModelConfig neg = neg_config(9);
    ToyModel adapted = built(neg);
    CHECK(frozen_digest(plain) == frozen_digest(adapted));

    ModelConfig other = neg;
    other.variant = Variant::FullLoRA;
    ToyModel lora = built(other);
    CHECK(frozen_digest(plain) == frozen_digest(lora));

    // scribbling on every trainable leaves the digest alone
    const std::uint64_t before = frozen_digest(adapted);
    Rng rng(3);
    for (ParamRef& ref : adapted.trainable_parameters())
        for (std::size_t i = 0; i < ref.size(); ++i) ref.values()[i] += rng.normal();
    CHECK(frozen_digest(adapted) == before);

    ModelConfig reseeded = neg_config(10);
    ToyModel fresh = built(reseeded);
    CHECK(frozen_digest(fresh) != before);
}

TEST_CASE("full checkpoint round-trips bitwise") {
    ModelConfig c = neg_config(21);
    c.lambda_mode = LambdaMode::Learnable;
    c.group_norm = true;
    ToyModel m = built(c);
    Rng rng(5);
    for (ParamRef& ref : m.trainable_parameters())
        for (std::size_t i = 0; i < ref.size(); ++i) ref.values()[i] += 0.01 * rng.normal();

    const std::string path = temp_path("full");
    save_checkpoint(m, path, false, "rng:state:123", 42);
    LoadedModel loaded = load_checkpoint(path);
    std::remove(path.c_str());

    CHECK(loaded.step == 42);
    CHECK(loaded.rng_state == "rng:state:123");
    CHECK(model_id(loaded.model.config) == model_id(c));

    auto want = snapshot(m, false);
    auto got = snapshot(loaded.model, false);
    REQUIRE(want.size() == got.size());
    for (std::size_t p = 0; p < want.size(); ++p) {
        REQUIRE(want[p].size() == got[p].size());
        for (std::size_t i = 0; i < want[p].size(); ++i) CHECK(want[p][i] == got[p][i]);
    }
}

TEST_CASE("adapter-only checkpoint rebuilds the base from the seed") {
    ModelConfig c = neg_config(33);
    ToyModel m = built(c);
    Rng rng(6);
    for (ParamRef& ref : m.trainable_parameters())
        for (std::size_t i = 0; i < ref.size(); ++i) ref.values()[i] = 0.02 * rng.normal();
    const std::uint64_t digest = frozen_digest(m);

    const std::string path = temp_path("adapters");
    save_checkpoint(m, path, true, "", 7);
    LoadedModel loaded = load_checkpoint(path);

    CHECK(frozen_digest(loaded.model) == digest);
    auto want = snapshot(m, true);
    auto got = snapshot(loaded.model, true);
    REQUIRE(want.size() == got.size());
    for (std::size_t p = 0; p < want.size(); ++p)
        for (std::size_t i = 0; i < want[p].size(); ++i) CHECK(want[p][i] == got[p][i]);

    // adapter-only files are strictly smaller than full ones
    std::ifstream small(path, std::ios::binary | std::ios::ate);
    const auto small_size = small.tellg();
    const std::string full_path = temp_path("adapters_full");
    save_checkpoint(m, full_path, false);
    std::ifstream big(full_path, std::ios::binary | std::ios::ate);
    CHECK(small_size < big.tellg());
    std::remove(path.c_str());
    std::remove(full_path.c_str());
}

TEST_CASE("corrupt checkpoints are rejected with a format error") {
    ModelConfig c = neg_config(2);
    ToyModel m = built(c);
    const std::string path = temp_path("corrupt");
    save_checkpoint(m, path);

    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    SUBCASE("bad magic") {
        std::string bad = bytes;
        bad[0] = 'X';
        std::ofstream(path, std::ios::binary).write(bad.data(), (std::streamsize)bad.size());
        CHECK_THROWS_AS((void)load_checkpoint(path), FormatError);
    }
    SUBCASE("truncated tensor data") {
        std::ofstream(path, std::ios::binary)
            .write(bytes.data(), (std::streamsize)(bytes.size() / 2));
        CHECK_THROWS_AS((void)load_checkpoint(path), FormatError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS((void)load_checkpoint("no_such_dir/nothing.ckpt"), InputError);
    }
    std::remove(path.c_str());
}

TEST_CASE("forward validates tokens against the config") {
    ModelConfig c;
    c.max_seq_len = 8;
    ToyModel m = built(c);
    CHECK_THROWS_AS((void)forward(m, {}), InputError);
    CHECK_THROWS_AS((void)forward(m, std::vector<int>(9, 1)), InputError);
    CHECK_THROWS_AS((void)forward(m, {0, 64}), InputError);
    Tensor2D logits = forward(m, {0, 1, 2});
    CHECK(logits.rows() == 3);
    CHECK(logits.cols() == 64);
}
