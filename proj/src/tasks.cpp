// SPDX-License-Identifier: Apache-2.0
#include "difflora/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "difflora/error.hpp"
#include "difflora/model.hpp"
#include "difflora/rng.hpp"

namespace difflora {

using nlohmann::json;

VocabPartition VocabPartition::standard(int vocab_size, int n_keys, int n_values) {
    if (n_keys < 1 || n_values < 1)
        throw ConfigError("vocab partition: need at least one key and one value symbol");
    if (vocab_size < 3 + n_keys + n_values + 1)
        throw ConfigError("vocab partition: vocab " + std::to_string(vocab_size) +
                          " too small for " + std::to_string(n_keys) + " keys and " +
                          std::to_string(n_values) + " values plus filler");
    VocabPartition p;
    p.vocab_size = vocab_size;
    p.n_keys = n_keys;
    p.n_values = n_values;
    return p;
}

std::string needle_mode_name(NeedleMode mode) {
    switch (mode) {
        case NeedleMode::SingleKey: return "single-key";
        case NeedleMode::MultiKey: return "multi-key";
        case NeedleMode::MultiValue: return "multi-value";
    }
    throw ConfigError("needle_mode_name: bad enum value");
}

NeedleMode needle_mode_from_name(const std::string& name) {
    if (name == "single-key") return NeedleMode::SingleKey;
    if (name == "multi-key") return NeedleMode::MultiKey;
    if (name == "multi-value") return NeedleMode::MultiValue;
    throw ConfigError("needle mode: expected single-key, multi-key or multi-value, got '" +
                      name + "'");
}

VocabPartition NeedleSpec::partition() const {
    return VocabPartition::standard(vocab_size, n_key_symbols, n_value_symbols);
}

VocabPartition IclSpec::partition() const {
    return VocabPartition::standard(vocab_size, n_key_symbols, n_value_symbols);
}

namespace {

// token budget of one key/value block, query included
int needle_block_len(const NeedleSpec& s) {
    switch (s.mode) {
        case NeedleMode::SingleKey: return 3;                     // sep k v
        case NeedleMode::MultiKey: return 4;                      // sep ka kb v
        case NeedleMode::MultiValue: return 2 + s.values_per_key; // sep k v1..vn
    }
    throw ConfigError("needle: bad mode");
}

// the query ends with a second ? so the answer is predicted from a marker
// position rather than from the key token itself
int needle_query_len(const NeedleSpec& s) {
    return s.mode == NeedleMode::MultiKey ? 5 : 4;  // sep ? k ?  (or sep ? ka kb ?)
}

int needle_answer_len(const NeedleSpec& s) {
    return s.mode == NeedleMode::MultiValue ? s.values_per_key : 1;
}

void append_span(std::vector<RegionSpan>& regions, const std::string& name, int begin, int end) {
    if (end > begin) regions.push_back(RegionSpan{name, begin, end});
}

std::vector<int> distinct_indices(Rng& rng, int pool, int want) {
    std::vector<int> all(static_cast<std::size_t>(pool));
    for (int i = 0; i < pool; ++i) all[static_cast<std::size_t>(i)] = i;
    rng.shuffle(all);
    all.resize(static_cast<std::size_t>(want));
    return all;
}

}  // namespace

void NeedleSpec::validate() const {
    const VocabPartition part = partition();  // validates the split
    if (seq_len < 1 || n_pairs < 1 || n_queries < 1)
        throw ConfigError("needle: seq_len, n_pairs and n_queries must be positive");
    if (n_pairs > part.n_keys)
        throw ConfigError("needle: n_pairs " + std::to_string(n_pairs) +
                          " exceeds the " + std::to_string(part.n_keys) + " key symbols");
    if (mode == NeedleMode::MultiKey && (distractors < 0 || distractors > n_pairs - 1))
        throw ConfigError("needle: distractors must lie in [0, n_pairs-1]");
    if (mode == NeedleMode::MultiValue && values_per_key < 1)
        throw ConfigError("needle: values_per_key must be positive");
    const int needed =
        1 + n_pairs * needle_block_len(*this) + needle_query_len(*this) + needle_answer_len(*this);
    if (needed > seq_len)
        throw ConfigError("needle: layout needs " + std::to_string(needed) +
                          " tokens but seq_len is " + std::to_string(seq_len));
}

void IclSpec::validate() const {
    const VocabPartition part = partition();
    if (seq_len < 1 || n_shots < 1 || n_examples < 1)
        throw ConfigError("icl: seq_len, n_shots and n_examples must be positive");
    if (n_classes < 1) throw ConfigError("icl: need at least one class");
    if (n_classes > part.n_keys || n_classes > part.n_values)
        throw ConfigError("icl: n_classes " + std::to_string(n_classes) +
                          " exceeds the key or value symbol pool");
    const int needed = 1 + 3 * n_shots + 4 + 1;  // bos, shots, "sep ? pattern ?", label
    if (needed > seq_len)
        throw ConfigError("icl: layout needs " + std::to_string(needed) +
                          " tokens but seq_len is " + std::to_string(seq_len));
}

namespace {

LabeledExample gen_needle_example(const NeedleSpec& spec, const VocabPartition& part, Rng& rng) {
    const int block_len = needle_block_len(spec);
    const int query_len = needle_query_len(spec);
    const int answer_len = needle_answer_len(spec);
    const int filler_budget =
        spec.seq_len - 1 - spec.n_pairs * block_len - query_len - answer_len;

    // distinct primary key per block; block order in the sequence is shuffled
    // below, so querying block 0 queries a uniformly placed block
    const std::vector<int> key_idx = distinct_indices(rng, part.n_keys, spec.n_pairs);
    const int target = 0;

    std::vector<std::vector<int>> blocks(static_cast<std::size_t>(spec.n_pairs));
    std::vector<std::vector<int>> block_values(static_cast<std::size_t>(spec.n_pairs));
    std::vector<int> second_idx;
    if (spec.mode == NeedleMode::MultiKey)
        second_idx = distinct_indices(rng, part.n_keys, spec.n_pairs);
    for (int b = 0; b < spec.n_pairs; ++b) {
        std::vector<int>& blk = blocks[static_cast<std::size_t>(b)];
        std::vector<int>& vals = block_values[static_cast<std::size_t>(b)];
        blk.push_back(VocabPartition::kSep);
        switch (spec.mode) {
            case NeedleMode::SingleKey:
                blk.push_back(part.key_symbol(key_idx[static_cast<std::size_t>(b)]));
                vals.push_back(part.value_symbol(rng.uniform_int(0, part.n_values - 1)));
                break;
            case NeedleMode::MultiKey: {
                // blocks 1..distractors are near-duplicates of the target:
                // same first key token, always a different second token
                const int first_idx =
                    b <= spec.distractors ? key_idx[0] : key_idx[static_cast<std::size_t>(b)];
                blk.push_back(part.key_symbol(first_idx));
                blk.push_back(part.key_symbol(second_idx[static_cast<std::size_t>(b)]));
                vals.push_back(part.value_symbol(rng.uniform_int(0, part.n_values - 1)));
                break;
            }
            case NeedleMode::MultiValue:
                blk.push_back(part.key_symbol(key_idx[static_cast<std::size_t>(b)]));
                for (int v = 0; v < spec.values_per_key; ++v)
                    vals.push_back(part.value_symbol(rng.uniform_int(0, part.n_values - 1)));
                break;
        }
        for (int v : vals) blk.push_back(v);
    }
    std::vector<int> order(static_cast<std::size_t>(spec.n_pairs));
    for (int b = 0; b < spec.n_pairs; ++b) order[static_cast<std::size_t>(b)] = b;
    rng.shuffle(order);

    // spread the filler tokens over the n_pairs + 1 gaps around the blocks
    std::vector<int> gap(static_cast<std::size_t>(spec.n_pairs) + 1, 0);
    for (int f = 0; f < filler_budget; ++f)
        ++gap[static_cast<std::size_t>(rng.uniform_int(0, spec.n_pairs))];

    LabeledExample ex;
    ex.tokens.reserve(static_cast<std::size_t>(spec.seq_len));
    ex.tokens.push_back(VocabPartition::kBos);
    append_span(ex.regions, "bos", 0, 1);
    auto push_fillers = [&](int count) {
        const int begin = static_cast<int>(ex.tokens.size());
        for (int f = 0; f < count; ++f)
            ex.tokens.push_back(part.filler_symbol(rng.uniform_int(0, part.n_fillers() - 1)));
        append_span(ex.regions, "context", begin, static_cast<int>(ex.tokens.size()));
    };
    for (int slot = 0; slot < spec.n_pairs; ++slot) {
        push_fillers(gap[static_cast<std::size_t>(slot)]);
        const int b = order[static_cast<std::size_t>(slot)];
        const int begin = static_cast<int>(ex.tokens.size());
        for (int tok : blocks[static_cast<std::size_t>(b)]) ex.tokens.push_back(tok);
        append_span(ex.regions, b == target ? "needle" : "context", begin,
                    static_cast<int>(ex.tokens.size()));
    }
    push_fillers(gap[static_cast<std::size_t>(spec.n_pairs)]);

    const int query_begin = static_cast<int>(ex.tokens.size());
    ex.tokens.push_back(VocabPartition::kSep);
    ex.tokens.push_back(VocabPartition::kQmark);
    if (spec.mode == NeedleMode::MultiKey) {
        ex.tokens.push_back(blocks[static_cast<std::size_t>(target)][1]);
        ex.tokens.push_back(blocks[static_cast<std::size_t>(target)][2]);
    } else {
        ex.tokens.push_back(blocks[static_cast<std::size_t>(target)][1]);
    }
    ex.tokens.push_back(VocabPartition::kQmark);
    append_span(ex.regions, "query", query_begin, static_cast<int>(ex.tokens.size()));

    const int answer_begin = static_cast<int>(ex.tokens.size());
    ex.answer = block_values[static_cast<std::size_t>(target)];
    for (int v : ex.answer) ex.tokens.push_back(v);
    append_span(ex.regions, "answer", answer_begin, static_cast<int>(ex.tokens.size()));

    if (static_cast<int>(ex.tokens.size()) != spec.seq_len)
        throw StateError("needle: built " + std::to_string(ex.tokens.size()) +
                         " tokens for seq_len " + std::to_string(spec.seq_len));
    ex.loss_mask.assign(ex.tokens.size(), 0);
    for (int p = answer_begin; p < static_cast<int>(ex.tokens.size()); ++p)
        ex.loss_mask[static_cast<std::size_t>(p)] = 1;
    return ex;
}

}  // namespace

std::vector<LabeledExample> gen_needle(const NeedleSpec& spec) {
    spec.validate();
    const VocabPartition part = spec.partition();
    std::vector<LabeledExample> out;
    out.reserve(static_cast<std::size_t>(spec.n_queries));
    for (int i = 0; i < spec.n_queries; ++i) {
        Rng rng(derive_seed(spec.seed, "needle." + std::to_string(i)));
        out.push_back(gen_needle_example(spec, part, rng));
    }
    return out;
}

std::vector<LabeledExample> gen_icl_classification(const IclSpec& spec) {
    spec.validate();
    const VocabPartition part = spec.partition();
    std::vector<LabeledExample> out;
    out.reserve(static_cast<std::size_t>(spec.n_examples));
    for (int i = 0; i < spec.n_examples; ++i) {
        Rng rng(derive_seed(spec.seed, "icl." + std::to_string(i)));
        // per-example pattern and label alphabets, freshly permuted so the
        // mapping must be read from the shots, never memorized
        const std::vector<int> pattern_idx = distinct_indices(rng, part.n_keys, spec.n_classes);
        const std::vector<int> label_idx = distinct_indices(rng, part.n_values, spec.n_classes);
        const int query_class = rng.uniform_int(0, spec.n_classes - 1);

        std::vector<int> shot_class(static_cast<std::size_t>(spec.n_shots));
        for (int s = 0; s < spec.n_shots; ++s)
            shot_class[static_cast<std::size_t>(s)] =
                s < spec.n_classes ? s : rng.uniform_int(0, spec.n_classes - 1);
        if (spec.n_shots < spec.n_classes)
            shot_class[static_cast<std::size_t>(rng.uniform_int(0, spec.n_shots - 1))] =
                query_class;
        rng.shuffle(shot_class);
        if (std::find(shot_class.begin(), shot_class.end(), query_class) == shot_class.end())
            shot_class[0] = query_class;

        // bos + 3 per shot + 4-token query (sep ? pattern ?) + 1-token label
        const int filler_budget = spec.seq_len - 1 - 3 * spec.n_shots - 4 - 1;
        std::vector<int> gap(static_cast<std::size_t>(spec.n_shots) + 1, 0);
        for (int f = 0; f < filler_budget; ++f)
            ++gap[static_cast<std::size_t>(rng.uniform_int(0, spec.n_shots))];

        LabeledExample ex;
        ex.tokens.reserve(static_cast<std::size_t>(spec.seq_len));
        ex.tokens.push_back(VocabPartition::kBos);
        append_span(ex.regions, "bos", 0, 1);
        auto push_fillers = [&](int count) {
            const int begin = static_cast<int>(ex.tokens.size());
            for (int f = 0; f < count; ++f)
                ex.tokens.push_back(part.filler_symbol(rng.uniform_int(0, part.n_fillers() - 1)));
            append_span(ex.regions, "context", begin, static_cast<int>(ex.tokens.size()));
        };
        for (int s = 0; s < spec.n_shots; ++s) {
            push_fillers(gap[static_cast<std::size_t>(s)]);
            const int begin = static_cast<int>(ex.tokens.size());
            const int cls = shot_class[static_cast<std::size_t>(s)];
            ex.tokens.push_back(VocabPartition::kSep);
            ex.tokens.push_back(part.key_symbol(pattern_idx[static_cast<std::size_t>(cls)]));
            ex.tokens.push_back(part.value_symbol(label_idx[static_cast<std::size_t>(cls)]));
            append_span(ex.regions, cls == query_class ? "needle" : "context", begin,
                        static_cast<int>(ex.tokens.size()));
        }
        push_fillers(gap[static_cast<std::size_t>(spec.n_shots)]);

        const int query_begin = static_cast<int>(ex.tokens.size());
        ex.tokens.push_back(VocabPartition::kSep);
        ex.tokens.push_back(VocabPartition::kQmark);
        ex.tokens.push_back(part.key_symbol(pattern_idx[static_cast<std::size_t>(query_class)]));
        ex.tokens.push_back(VocabPartition::kQmark);
        append_span(ex.regions, "query", query_begin, static_cast<int>(ex.tokens.size()));

        const int answer_begin = static_cast<int>(ex.tokens.size());
        ex.answer = {part.value_symbol(label_idx[static_cast<std::size_t>(query_class)])};
        ex.tokens.push_back(ex.answer[0]);
        append_span(ex.regions, "answer", answer_begin, static_cast<int>(ex.tokens.size()));

        if (static_cast<int>(ex.tokens.size()) != spec.seq_len)
            throw StateError("icl: built " + std::to_string(ex.tokens.size()) +
                             " tokens for seq_len " + std::to_string(spec.seq_len));
        ex.loss_mask.assign(ex.tokens.size(), 0);
        ex.loss_mask[static_cast<std::size_t>(answer_begin)] = 1;
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<LabeledExample> gen_icl_classification(int n_classes, int n_shots, int seq_len,
                                                   std::uint64_t seed) {
    IclSpec spec;
    spec.n_classes = n_classes;
    spec.n_shots = n_shots;
    spec.seq_len = seq_len;
    spec.seed = seed;
    return gen_icl_classification(spec);
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

EvalResult evaluate_accuracy(const LogitsFn& logits_fn,
                             const std::vector<LabeledExample>& dataset) {
    EvalResult result;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const LabeledExample& ex = dataset[i];
        if (ex.answer.empty()) {
            ++result.n_skipped;
            continue;
        }
        const Tensor2D logits = logits_fn(ex.tokens);
        if (logits.rows() != static_cast<int>(ex.tokens.size()))
            throw ShapeError("evaluate: logits have " + std::to_string(logits.rows()) +
                             " rows for " + std::to_string(ex.tokens.size()) + " tokens");
        EvalRecord record;
        record.index = static_cast<int>(i);
        record.correct = true;
        for (std::size_t p = 0; p < ex.tokens.size(); ++p) {
            if (!ex.loss_mask[p]) continue;
            if (p == 0) throw StateError("evaluate: answer at position 0 has no predictor");
            const double* row = logits.row(static_cast<int>(p) - 1);
            int best = 0;
            for (int v = 1; v < logits.cols(); ++v)
                if (row[v] > row[best]) best = v;
            record.predicted.push_back(best);
            record.expected.push_back(ex.tokens[p]);
            if (best != ex.tokens[p]) record.correct = false;
        }
        ++result.n_scored;
        if (record.correct) result.accuracy += 1.0;
        result.records.push_back(std::move(record));
    }
    if (result.n_scored == 0)
        throw DegenerateBatchError("evaluate: no example has a non-empty answer");
    result.accuracy /= static_cast<double>(result.n_scored);
    return result;
}

EvalResult evaluate_accuracy(const ToyModel& model, const std::vector<LabeledExample>& dataset) {
    return evaluate_accuracy(
        [&model](const std::vector<int>& tokens) { return forward(model, tokens); }, dataset);
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

void write_dataset_jsonl(const std::vector<LabeledExample>& dataset, const std::string& path) {
    std::ofstream file(path, std::ios::trunc);
    if (!file) throw InputError("cannot open dataset for writing: " + path);
    for (const LabeledExample& ex : dataset) {
        json j;
        j["tokens"] = ex.tokens;
        j["mask"] = ex.loss_mask;
        j["answer"] = ex.answer;
        json regions = json::array();
        for (const RegionSpan& span : ex.regions)
            regions.push_back({{"name", span.name}, {"begin", span.begin}, {"end", span.end}});
        j["regions"] = std::move(regions);
        file << j.dump() << '\n';
    }
    if (!file) throw InputError("short write to dataset: " + path);
}

std::vector<LabeledExample> read_dataset_jsonl(const std::string& path) {
    std::ifstream file(path);
    if (!file) throw InputError("cannot open dataset: " + path);
    std::vector<LabeledExample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(file, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError("dataset line " + std::to_string(line_no) + ": " + e.what(),
                              line_no);
        }
        if (!j.is_object() || !j.contains("tokens") || !j.contains("mask") ||
            !j.contains("answer") || !j.contains("regions"))
            throw FormatError("dataset line " + std::to_string(line_no) +
                              ": need tokens/mask/answer/regions", line_no);
        LabeledExample ex;
        try {
            ex.tokens = j["tokens"].get<std::vector<int>>();
            ex.loss_mask = j["mask"].get<std::vector<std::uint8_t>>();
            ex.answer = j["answer"].get<std::vector<int>>();
            for (const json& r : j["regions"])
                ex.regions.push_back(RegionSpan{r.at("name").get<std::string>(),
                                                r.at("begin").get<int>(),
                                                r.at("end").get<int>()});
        } catch (const json::exception& e) {
            throw FormatError("dataset line " + std::to_string(line_no) + ": " + e.what(),
                              line_no);
        }
        if (ex.loss_mask.size() != ex.tokens.size())
            throw FormatError("dataset line " + std::to_string(line_no) +
                              ": mask length differs from tokens", line_no);
        for (const RegionSpan& span : ex.regions)
            if (span.begin < 0 || span.end > static_cast<int>(ex.tokens.size()) ||
                span.begin >= span.end)
                throw FormatError("dataset line " + std::to_string(line_no) +
                                  ": bad region span", line_no);
        out.push_back(std::move(ex));
    }
    return out;
}

TrainingExample to_training_example(const LabeledExample& example) {
    const std::size_t n = example.tokens.size();
    if (n < 2) throw InputError("training example needs at least two tokens");
    TrainingExample tr;
    tr.tokens = example.tokens;
    tr.targets.assign(n, -1);
    tr.mask.assign(n, 0);
    for (std::size_t t = 0; t + 1 < n; ++t) {
        tr.targets[t] = example.tokens[t + 1];
        tr.mask[t] = example.loss_mask[t + 1];
    }
    return tr;
}

// ---------------------------------------------------------------------------
// spec JSON round-trips
// ---------------------------------------------------------------------------

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

json parse_object(const std::string& text, const char* what) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string(what) + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError(std::string(what) + ": expected a JSON object");
    return j;
}

}  // namespace

std::string needle_spec_to_json_string(const NeedleSpec& spec) {
    json j;
    j["task"] = "needle";
    j["seq_len"] = spec.seq_len;
    j["n_pairs"] = spec.n_pairs;
    j["n_queries"] = spec.n_queries;
    j["mode"] = needle_mode_name(spec.mode);
    j["distractors"] = spec.distractors;
    j["values_per_key"] = spec.values_per_key;
    j["vocab_size"] = spec.vocab_size;
    j["n_key_symbols"] = spec.n_key_symbols;
    j["n_value_symbols"] = spec.n_value_symbols;
    j["seed"] = spec.seed;
    return j.dump();
}

NeedleSpec needle_spec_from_json_string(const std::string& text) {
    const json j = parse_object(text, "needle spec");
    require_known_keys(j, "task.",
                       {"task", "seq_len", "n_pairs", "n_queries", "mode", "distractors",
                        "values_per_key", "vocab_size", "n_key_symbols", "n_value_symbols",
                        "seed"});
    if (auto it = j.find("task"); it != j.end() && it->get<std::string>() != "needle")
        throw ConfigError("needle spec: task is '" + it->get<std::string>() + "'");
    NeedleSpec spec;
    get_if_present(j, "seq_len", spec.seq_len);
    get_if_present(j, "n_pairs", spec.n_pairs);
    get_if_present(j, "n_queries", spec.n_queries);
    std::string mode = needle_mode_name(spec.mode);
    get_if_present(j, "mode", mode);
    spec.mode = needle_mode_from_name(mode);
    get_if_present(j, "distractors", spec.distractors);
    get_if_present(j, "values_per_key", spec.values_per_key);
    get_if_present(j, "vocab_size", spec.vocab_size);
    get_if_present(j, "n_key_symbols", spec.n_key_symbols);
    get_if_present(j, "n_value_symbols", spec.n_value_symbols);
    get_if_present(j, "seed", spec.seed);
    spec.validate();
    return spec;
}

std::string icl_spec_to_json_string(const IclSpec& spec) {
    json j;
    j["task"] = "icl";
    j["n_classes"] = spec.n_classes;
    j["n_shots"] = spec.n_shots;
    j["seq_len"] = spec.seq_len;
    j["n_examples"] = spec.n_examples;
    j["vocab_size"] = spec.vocab_size;
    j["n_key_symbols"] = spec.n_key_symbols;
    j["n_value_symbols"] = spec.n_value_symbols;
    j["seed"] = spec.seed;
    return j.dump();
}

IclSpec icl_spec_from_json_string(const std::string& text) {
    const json j = parse_object(text, "icl spec");
    require_known_keys(j, "task.",
                       {"task", "n_classes", "n_shots", "seq_len", "n_examples", "vocab_size",
                        "n_key_symbols", "n_value_symbols", "seed"});
    if (auto it = j.find("task"); it != j.end() && it->get<std::string>() != "icl")
        throw ConfigError("icl spec: task is '" + it->get<std::string>() + "'");
    IclSpec spec;
    get_if_present(j, "n_classes", spec.n_classes);
    get_if_present(j, "n_shots", spec.n_shots);
    get_if_present(j, "seq_len", spec.seq_len);
    get_if_present(j, "n_examples", spec.n_examples);
    get_if_present(j, "vocab_size", spec.vocab_size);
    get_if_present(j, "n_key_symbols", spec.n_key_symbols);
    get_if_present(j, "n_value_symbols", spec.n_value_symbols);
    get_if_present(j, "seed", spec.seed);
    spec.validate();
    return spec;
}

}  // namespace difflora
