// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "difflora/tensor.hpp"

namespace difflora {

struct ToyModel;

// Disjoint symbol classes carved out of a flat id space: 0 is BOS, 1 the
// separator, 2 the query marker, then key symbols, value symbols, and filler.
struct VocabPartition {
    int vocab_size = 64;
    int n_keys = 8;
    int n_values = 8;

    static constexpr int kBos = 0;
    static constexpr int kSep = 1;
    static constexpr int kQmark = 2;

    int key_symbol(int i) const { return 3 + i; }
    int value_symbol(int i) const { return 3 + n_keys + i; }
    int filler_symbol(int i) const { return 3 + n_keys + n_values + i; }
    int n_fillers() const { return vocab_size - 3 - n_keys - n_values; }

    bool is_key(int id) const { return id >= 3 && id < 3 + n_keys; }
    bool is_value(int id) const { return id >= 3 + n_keys && id < 3 + n_keys + n_values; }
    bool is_filler(int id) const { return id >= 3 + n_keys + n_values && id < vocab_size; }

    static VocabPartition standard(int vocab_size, int n_keys = 8, int n_values = 8);
};

enum class NeedleMode : std::uint8_t { SingleKey = 0, MultiKey = 1, MultiValue = 2 };

std::string needle_mode_name(NeedleMode mode);
NeedleMode needle_mode_from_name(const std::string& name);

// Key->value retrieval probe. MultiKey uses two-token keys and plants
// near-duplicate distractors (same first token, different second); MultiValue
// attaches values_per_key values to every key and asks for all of them.
struct NeedleSpec {
    int seq_len = 64;
    int n_pairs = 4;
    int n_queries = 256;  // number of generated examples, one query each
    NeedleMode mode = NeedleMode::SingleKey;
    int distractors = 3;      // MultiKey only
    int values_per_key = 3;   // MultiValue only
    int vocab_size = 64;
    int n_key_symbols = 8;
    int n_value_symbols = 8;
    std::uint64_t seed = 1;

    VocabPartition partition() const;
    void validate() const;
};

// Symbolic in-context classification: each example carries its own random
// pattern->label mapping, demonstrated n_shots times before the query.
struct IclSpec {
    int n_classes = 4;
    int n_shots = 8;
    int seq_len = 64;
    int n_examples = 256;
    int vocab_size = 64;
    int n_key_symbols = 8;
    int n_value_symbols = 8;
    std::uint64_t seed = 1;

    VocabPartition partition() const;
    void validate() const;
};

// Half-open [begin, end) span of positions. Spans with the same name belong
// to the same region (context appears on both sides of the needle).
struct RegionSpan {
    std::string name;
    int begin = 0;
    int end = 0;
};

struct LabeledExample {
    std::vector<int> tokens;
    std::vector<std::uint8_t> loss_mask;  // 1 exactly at answer positions
    std::vector<int> answer;
    std::vector<RegionSpan> regions;  // partition: bos, context, needle, query, answer
};

std::vector<LabeledExample> gen_needle(const NeedleSpec& spec);

std::vector<LabeledExample> gen_icl_classification(const IclSpec& spec);
std::vector<LabeledExample> gen_icl_classification(int n_classes, int n_shots, int seq_len,
                                                   std::uint64_t seed);

struct EvalRecord {
    int index = 0;
    bool correct = false;
    std::vector<int> predicted;
    std::vector<int> expected;
};

struct EvalResult {
    double accuracy = 0.0;
    int n_scored = 0;
    int n_skipped = 0;  // examples with an empty answer span
    std::vector<EvalRecord> records;
};

using LogitsFn = std::function<Tensor2D(const std::vector<int>&)>;

// Teacher-forced exact match: argmax at each answer slot, all slots must be
// right. The LogitsFn overload exists so tests can plug in oracle models.
EvalResult evaluate_accuracy(const ToyModel& model, const std::vector<LabeledExample>& dataset);
EvalResult evaluate_accuracy(const LogitsFn& logits_fn,
                             const std::vector<LabeledExample>& dataset);

// Line-delimited JSON: {"tokens": [...], "mask": [...], "answer": [...],
// "regions": [{"name": ..., "begin": ..., "end": ...}, ...]}
void write_dataset_jsonl(const std::vector<LabeledExample>& dataset, const std::string& path);
std::vector<LabeledExample> read_dataset_jsonl(const std::string& path);

// Next-token view of a labeled example: targets[t] = tokens[t+1], with loss
// only where the predicted token is an answer token.
struct TrainingExample {
    std::vector<int> tokens;
    std::vector<int> targets;
    std::vector<std::uint8_t> mask;
};

TrainingExample to_training_example(const LabeledExample& example);

std::string needle_spec_to_json_string(const NeedleSpec& spec);
NeedleSpec needle_spec_from_json_string(const std::string& text);
std::string icl_spec_to_json_string(const IclSpec& spec);
IclSpec icl_spec_from_json_string(const std::string& text);

}  // namespace difflora
