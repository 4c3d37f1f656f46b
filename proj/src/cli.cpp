// SPDX-License-Identifier: Apache-2.0
#include "difflora/cli.hpp"

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "difflora/analysis.hpp"
#include "difflora/error.hpp"
#include "difflora/model.hpp"
#include "difflora/rng.hpp"
#include "difflora/tasks.hpp"
#include "difflora/training.hpp"

namespace difflora {

using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitGradFail = 4;

// ---------------------------------------------------------------------------
// config tree: {"model": {...}, "train": {...}, "task": {...}, "paths": {...}}
// ---------------------------------------------------------------------------

json empty_tree() {
    return json{{"model", json::object()},
                {"train", json::object()},
                {"task", json::object()},
                {"paths", json::object()}};
}

json load_tree(const std::string& path) {
    std::ifstream file(path);
    if (!file) throw InputError("cannot open config: " + path);
    json j;
    try {
        j = json::parse(file);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config " + path + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (it.key() != "model" && it.key() != "train" && it.key() != "task" &&
            it.key() != "paths")
            throw ConfigError("unknown config key: " + it.key());
    json tree = empty_tree();
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!it->is_object())
            throw ConfigError("config " + path + ": section '" + it.key() +
                              "' must be an object");
        tree[it.key()] = *it;
    }
    return tree;
}

// --set model.rank=4: dotted path into the tree, value parsed as JSON when
// possible and kept as a string otherwise
void apply_set(json& tree, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("--set expects key=value, got '" + assignment + "'");
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;
    }
    json* node = &tree;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string part = path.substr(start, dot - start);
        if (part.empty()) throw ConfigError("--set: empty path segment in '" + path + "'");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        if (!node->contains(part)) (*node)[part] = json::object();
        node = &(*node)[part];
        if (!node->is_object())
            throw ConfigError("--set: '" + part + "' in '" + path + "' is not an object");
        start = dot + 1;
    }
}

struct Paths {
    std::string out_dir = "out";
    std::string data;        // dataset JSONL; empty: generate from the task section
    std::string checkpoint;  // defaults to <out_dir>/model.ckpt
    std::string report;      // defaults to <out_dir>/attn_mass.csv
    std::string metrics;     // defaults to <out_dir>/metrics.jsonl
};

Paths parse_paths(const json& section) {
    static const std::set<std::string> known{"out_dir", "data", "checkpoint", "report",
                                             "metrics"};
    for (auto it = section.begin(); it != section.end(); ++it)
        if (!known.count(it.key())) throw ConfigError("unknown config key: paths." + it.key());
    Paths p;
    if (section.contains("out_dir")) p.out_dir = section["out_dir"].get<std::string>();
    if (section.contains("data")) p.data = section["data"].get<std::string>();
    if (section.contains("checkpoint")) p.checkpoint = section["checkpoint"].get<std::string>();
    if (section.contains("report")) p.report = section["report"].get<std::string>();
    if (section.contains("metrics")) p.metrics = section["metrics"].get<std::string>();
    return p;
}

Precision env_precision(Precision fallback) {
    const char* env = std::getenv("DIFFLORA_PRECISION");
    if (!env || !*env) return fallback;
    const std::string value = env;
    if (value == "single") return Precision::Single;
    if (value == "double") return Precision::Double;
    throw ConfigError("DIFFLORA_PRECISION must be single or double, got '" + value + "'");
}

bool is_icl_task(const json& task) {
    return task.contains("task") && task["task"].is_string() &&
           task["task"].get<std::string>() == "icl";
}

std::vector<LabeledExample> generate_task(const json& task, std::uint64_t seed_shift = 0) {
    if (is_icl_task(task)) {
        IclSpec spec = icl_spec_from_json_string(task.dump());
        spec.seed += seed_shift;
        return gen_icl_classification(spec);
    }
    NeedleSpec spec = needle_spec_from_json_string(task.dump());
    spec.seed += seed_shift;
    return gen_needle(spec);
}

std::vector<LabeledExample> load_or_generate(const Paths& paths, const json& task) {
    if (!paths.data.empty()) return read_dataset_jsonl(paths.data);
    return generate_task(task);
}

void check_task_fits(const ModelConfig& mc, const json& task,
                     const std::vector<LabeledExample>& dataset) {
    if (task.contains("vocab_size") && task["vocab_size"].get<int>() != mc.vocab_size)
        throw ConfigError("task vocab_size " + task["vocab_size"].dump() +
                          " differs from model vocab_size " + std::to_string(mc.vocab_size));
    for (const LabeledExample& ex : dataset) {
        if (static_cast<int>(ex.tokens.size()) > mc.max_seq_len)
            throw ConfigError("dataset sequence length " + std::to_string(ex.tokens.size()) +
                              " exceeds model max_seq_len " + std::to_string(mc.max_seq_len));
        for (int tok : ex.tokens)
            if (tok < 0 || tok >= mc.vocab_size)
                throw ConfigError("dataset token " + std::to_string(tok) +
                                  " outside model vocab " + std::to_string(mc.vocab_size));
    }
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream file(path, std::ios::trunc);
    if (!file) throw InputError("cannot open for writing: " + path);
    file << text;
    if (!file) throw InputError("short write: " + path);
}

void echo_config(const json& tree, const Paths& paths) {
    std::filesystem::create_directories(paths.out_dir);
    write_text(paths.out_dir + "/config.json", tree.dump(2) + "\n");
}

ToyModel build_model(const ModelConfig& config) {
    ToyModel model = build_base(config);
    if (config.variant != Variant::Baseline) inject_adapters(model);
    return model;
}

// resolved options shared by every subcommand
struct Common {
    std::string config_path;
    std::vector<std::string> sets;
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;

    json tree() const {
        json t = config_path.empty() ? empty_tree() : load_tree(config_path);
        for (const std::string& assignment : sets) apply_set(t, assignment);
        if (seed) {
            t["model"]["seed"] = *seed;
            t["train"]["seed"] = *seed;
            t["task"]["seed"] = *seed;
        }
        if (out_dir) t["paths"]["out_dir"] = *out_dir;
        return t;
    }
};

void add_common(CLI::App* cmd, Common& common) {
    cmd->add_option("--config", common.config_path, "JSON config file (model/train/task/paths)");
    cmd->add_option("--set", common.sets, "override one config value, e.g. model.rank=4")
        ->take_all();
    cmd->add_option("--out-dir", common.out_dir, "output directory (paths.out_dir)");
    cmd->add_option("--seed", common.seed, "seed for model, task and training at once");
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

// FNV-1a over the file bytes: lets two runs with the same seed prove they
// produced the same dataset without diffing the files.
std::uint64_t file_checksum(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw InputError("cannot reopen for checksum: " + path);
    std::uint64_t hash = 14695981039346656037ull;
    char buf[1 << 15];
    while (true) {
        file.read(buf, sizeof buf);
        const std::streamsize n = file.gcount();
        for (std::streamsize i = 0; i < n; ++i)
            hash = (hash ^ static_cast<unsigned char>(buf[i])) * 1099511628211ull;
        if (n < static_cast<std::streamsize>(sizeof buf)) break;
    }
    return hash;
}

int cmd_gen_data(const Common& common) {
    const json tree = common.tree();
    const Paths paths = parse_paths(tree["paths"]);
    std::filesystem::create_directories(paths.out_dir);
    const std::vector<LabeledExample> dataset = generate_task(tree["task"]);
    const std::string out =
        paths.data.empty() ? paths.out_dir + "/dataset.jsonl" : paths.data;
    write_dataset_jsonl(dataset, out);
    echo_config(tree, paths);
    std::size_t tokens = 0, answers = 0;
    for (const LabeledExample& ex : dataset) {
        tokens += ex.tokens.size();
        answers += ex.answer.size();
    }
    char checksum[24];
    std::snprintf(checksum, sizeof checksum, "%016llx",
                  static_cast<unsigned long long>(file_checksum(out)));
    std::cout << "wrote " << dataset.size() << " examples (" << tokens << " tokens, " << answers
              << " answer tokens) to " << out << "\n";
    std::cout << "checksum=" << checksum << "\n";
    return kExitOk;
}

int cmd_train(const Common& common, bool adapters_only) {
    const json tree = common.tree();
    const Paths paths = parse_paths(tree["paths"]);
    ModelConfig mc = model_config_from_json_string(tree["model"].dump());
    mc.precision = env_precision(mc.precision);
    const TrainConfig tc = train_config_from_json_string(tree["train"].dump());

    const std::vector<LabeledExample> dataset = load_or_generate(paths, tree["task"]);
    check_task_fits(mc, tree["task"], dataset);
    // held-out split: same task regenerated one seed later (only when the
    // training set itself was generated)
    const std::vector<LabeledExample> eval_set =
        paths.data.empty() ? generate_task(tree["task"], 1) : dataset;

    std::vector<TrainingExample> examples;
    examples.reserve(dataset.size());
    for (const LabeledExample& ex : dataset) examples.push_back(to_training_example(ex));

    ToyModel model = build_model(mc);
    std::cout << "training " << model_id(mc) << ": " << model.trainable_scalar_count()
              << " trainable scalars, " << examples.size() << " examples\n";
    std::cout << "  " << std::left << std::setw(34) << "parameter" << std::setw(10) << "shape"
              << "count\n";
    long long table_total = 0;
    for (const ParamRef& ref : model.trainable_parameters()) {
        std::ostringstream shape;
        if (ref.tensor)
            shape << ref.rows() << "x" << ref.cols();
        else
            shape << "scalar";
        std::cout << "  " << std::left << std::setw(34) << ref.name << std::setw(10) << shape.str()
                  << ref.size() << "\n";
        table_total += static_cast<long long>(ref.size());
    }
    std::cout << "  " << std::left << std::setw(34) << "total" << std::setw(10) << ""
              << table_total << "\n";

    const EvalCallback eval_cb = [&eval_set](ToyModel& m) {
        return evaluate_accuracy(m, eval_set).accuracy;
    };
    const TrainResult result = train(model, examples, tc, eval_cb);

    std::filesystem::create_directories(paths.out_dir);
    echo_config(tree, paths);
    const std::string metrics_path =
        paths.metrics.empty() ? paths.out_dir + "/metrics.jsonl" : paths.metrics;
    std::ostringstream metrics;
    for (const StepRecord& rec : result.history) {
        json j{{"step", rec.step}, {"loss", rec.loss}, {"lambdas", rec.lambdas}};
        if (rec.eval_accuracy >= 0.0) j["eval_accuracy"] = rec.eval_accuracy;
        metrics << j.dump() << "\n";
    }
    write_text(metrics_path, metrics.str());
    const std::string ckpt_path =
        paths.checkpoint.empty() ? paths.out_dir + "/model.ckpt" : paths.checkpoint;
    save_checkpoint(model, ckpt_path, adapters_only, "", result.steps_run);

    const double accuracy = evaluate_accuracy(model, eval_set).accuracy;
    std::cout << "final_loss=" << result.final_loss << " eval_accuracy=" << accuracy
              << " checkpoint=" << ckpt_path << "\n";
    return kExitOk;
}

void print_grad_report(const std::string& id, const GradCheckReport& report) {
    std::cout << "grad-check " << id << ": checked " << report.n_checked
              << " coordinates, max_rel_err=" << report.max_rel_err << " (worst "
              << report.worst_param << "[" << report.worst_index << "]), tolerance="
              << report.tolerance << " -> " << (report.pass ? "pass" : "FAIL") << "\n";
    for (const GradGroupStat& group : report.groups)
        std::cout << "  " << std::left << std::setw(26) << group.param
                  << " max_rel_err=" << group.max_rel_err << " (" << group.n_checked
                  << " checked)\n";
    for (const GradFailure& f : report.failures)
        std::cout << "  OVER TOLERANCE " << f.param << "[" << f.index << "]: analytic="
                  << f.analytic << " numeric=" << f.numeric << " rel_err=" << f.rel_err << "\n";
}

int cmd_grad_check(const Common& common, double eps, double tolerance, int samples,
                   std::uint64_t warm_seed) {
    const json tree = common.tree();
    // no explicit variant: run the whole six-configuration suite, every
    // trainable coordinate of every case
    if (!tree["model"].contains("variant")) {
        bool all_pass = true;
        for (const GradSuiteCase& c : run_gradient_suite(eps, tolerance)) {
            print_grad_report(c.model, c.report);
            all_pass = all_pass && c.report.pass;
        }
        return all_pass ? kExitOk : kExitGradFail;
    }

    ModelConfig mc = model_config_from_json_string(tree["model"].dump());
    mc.precision = env_precision(mc.precision);

    json task = tree["task"];
    // smallest single-pair retrieval layout the generator accepts
    if (!task.contains("seq_len")) task["seq_len"] = 9;
    if (!task.contains("n_pairs") && !is_icl_task(task)) task["n_pairs"] = 1;
    if (!task.contains("n_queries") && !is_icl_task(task)) task["n_queries"] = 1;
    const std::vector<LabeledExample> dataset = generate_task(task);
    check_task_fits(mc, task, dataset);
    const TrainingExample example = to_training_example(dataset.front());

    ToyModel model = build_model(mc);
    // move the trainables off their zero/identity init so every branch of the
    // backward pass carries signal
    Rng rng(warm_seed);
    for (const ParamRef& ref : model.trainable_parameters()) {
        double* values = ref.values();
        for (std::size_t i = 0; i < ref.size(); ++i)
            values[i] += 0.05 * rng.normal();
        if (ref.tensor) ref.tensor->round_to_precision();
    }

    GradCheckConfig config;
    config.eps = eps;
    config.tolerance = tolerance;
    config.samples_per_tensor = samples;
    const GradCheckReport report = check_gradients(model, example, config);
    print_grad_report(model_id(mc), report);
    return report.pass ? kExitOk : kExitGradFail;
}

int cmd_eval(const Common& common, const std::string& checkpoint) {
    const json tree = common.tree();
    const Paths paths = parse_paths(tree["paths"]);
    const std::string ckpt_path =
        !checkpoint.empty()
            ? checkpoint
            : (paths.checkpoint.empty() ? paths.out_dir + "/model.ckpt" : paths.checkpoint);
    LoadedModel loaded = load_checkpoint(ckpt_path);
    loaded.model.config.precision = env_precision(loaded.model.config.precision);

    const std::vector<LabeledExample> dataset = load_or_generate(paths, tree["task"]);
    check_task_fits(loaded.model.config, tree["task"], dataset);
    const EvalResult result = evaluate_accuracy(loaded.model, dataset);
    std::cout << "accuracy=" << result.accuracy << " scored=" << result.n_scored
              << " skipped=" << result.n_skipped << "\n";
    return kExitOk;
}

int cmd_attn_report(const Common& common, const std::string& checkpoint,
                    const std::string& rows_mode) {
    const json tree = common.tree();
    const Paths paths = parse_paths(tree["paths"]);
    QueryRows rows;
    if (rows_mode == "predictors")
        rows = QueryRows::AnswerPredictors;
    else if (rows_mode == "last")
        rows = QueryRows::LastAnswer;
    else if (rows_mode == "all")
        rows = QueryRows::All;
    else
        throw ConfigError("--rows must be predictors, last or all, got '" + rows_mode + "'");

    ToyModel model;
    if (!checkpoint.empty()) {
        model = load_checkpoint(checkpoint).model;
    } else {
        ModelConfig mc = model_config_from_json_string(tree["model"].dump());
        mc.precision = env_precision(mc.precision);
        model = build_model(mc);
    }
    const std::vector<LabeledExample> dataset = load_or_generate(paths, tree["task"]);
    check_task_fits(model.config, tree["task"], dataset);

    const AttnMassReport report = attention_mass(model, dataset, rows);
    std::filesystem::create_directories(paths.out_dir);
    const std::string csv_path =
        paths.report.empty() ? paths.out_dir + "/attn_mass.csv" : paths.report;
    write_report_csv(report, csv_path);
    const std::string json_path =
        csv_path.size() > 4 && csv_path.substr(csv_path.size() - 4) == ".csv"
            ? csv_path.substr(0, csv_path.size() - 4) + ".json"
            : csv_path + ".json";
    write_report_json(report, json_path);

    std::cout << "model=" << report.model_name << " rows=" << rows_mode << "\n";
    for (const MassRow& row : report.rows)
        if (row.layer == -1 && row.component == std::string("effective"))
            std::cout << "  effective mass " << row.region << " = " << row.mass << "\n";
    std::cout << "wrote " << csv_path << " and " << json_path << "\n";
    return kExitOk;
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"differential low-rank attention workbench"};
    app.require_subcommand(1);

    Common gen_common, train_common, grad_common, eval_common, report_common;
    bool adapters_only = false;
    double eps = 1e-5, tolerance = 1e-4;
    int samples = 8;
    std::uint64_t warm_seed = 11;
    std::string checkpoint, report_checkpoint, rows_mode = "predictors";

    CLI::App* gen = app.add_subcommand("gen-data", "generate a task dataset (JSONL)");
    add_common(gen, gen_common);

    CLI::App* train_cmd = app.add_subcommand("train", "train adapters on a task");
    add_common(train_cmd, train_common);
    train_cmd->add_flag("--save-adapters-only", adapters_only,
                        "checkpoint only the trainable tensors");

    CLI::App* grad = app.add_subcommand("grad-check",
                                        "compare the backward pass to finite differences");
    add_common(grad, grad_common);
    grad->add_option("--eps", eps, "finite-difference step");
    grad->add_option("--tolerance", tolerance, "max allowed relative error");
    grad->add_option("--samples", samples, "coordinates probed per tensor");
    grad->add_option("--warm-seed", warm_seed, "seed for the off-init warm-up noise");

    CLI::App* eval_cmd = app.add_subcommand("eval", "accuracy of a checkpoint on a task");
    add_common(eval_cmd, eval_common);
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint to evaluate");

    CLI::App* report_cmd =
        app.add_subcommand("attn-report", "attention mass per region (CSV + JSON)");
    add_common(report_cmd, report_common);
    report_cmd->add_option("--checkpoint", report_checkpoint,
                           "checkpoint to analyze (default: fresh model from --config)");
    report_cmd->add_option("--rows", rows_mode, "query rows: predictors | last | all");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen_common);
        if (train_cmd->parsed()) return cmd_train(train_common, adapters_only);
        if (grad->parsed()) return cmd_grad_check(grad_common, eps, tolerance, samples, warm_seed);
        if (eval_cmd->parsed()) return cmd_eval(eval_common, checkpoint);
        if (report_cmd->parsed())
            return cmd_attn_report(report_common, report_checkpoint, rows_mode);
        std::cerr << "error: no subcommand\n";
        return kExitError;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
}

}  // namespace difflora
