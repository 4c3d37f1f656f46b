// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "difflora/model.hpp"
#include "difflora/tasks.hpp"

namespace difflora {

// Gradients for the trainable parameters, in registry order. Entries stay
// aligned with ToyModel::trainable_parameters() of the model they were built
// from; mixing models throws.
struct GradientSet {
    std::vector<std::string> names;
    std::vector<std::vector<double>> values;

    std::size_t index_of(const std::string& name) const;
    void add_scaled(const GradientSet& other, double factor);
    void scale(double factor);
    double l2_norm() const;
    double max_abs() const;
};

GradientSet zero_gradients(ToyModel& model);

// Mean cross-entropy over the positions where mask is 1.
double cross_entropy(const Tensor2D& logits, const std::vector<int>& targets,
                     const std::vector<std::uint8_t>& mask);

// Forward plus manual reverse pass; adds this example's gradients into `out`
// (which must match the model's trainables) and returns the example loss.
double loss_and_gradients(const ToyModel& model, const TrainingExample& example,
                          GradientSet& out);

// Central-difference loss derivative for one scalar of one named parameter.
double finite_diff_grad(ToyModel& model, const TrainingExample& example,
                        const std::string& param_name, std::size_t index, double eps);

struct GradCheckConfig {
    double eps = 1e-5;
    double tolerance = 1e-4;
    int samples_per_tensor = 8;  // random scalars probed per parameter
    std::uint64_t seed = 7;
};

// Worst error seen inside one parameter group (one tensor or scalar).
struct GradGroupStat {
    std::string param;
    int n_checked = 0;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::size_t worst_index = 0;
};

// One coordinate whose relative error exceeded the tolerance.
struct GradFailure {
    std::string param;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    bool pass = false;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    int n_checked = 0;
    double tolerance = 0.0;
    std::vector<GradGroupStat> groups;   // one per trainable parameter
    std::vector<GradFailure> failures;   // offending coordinates (capped at 32)
};

// Compares an analytic gradient set against finite differences on a random
// sample of coordinates per parameter (scalars are always probed).
GradCheckReport compare_gradients(ToyModel& model, const TrainingExample& example,
                                  const GradientSet& analytic, const GradCheckConfig& config);

// compare_gradients() on the gradients loss_and_gradients() produces.
GradCheckReport check_gradients(ToyModel& model, const TrainingExample& example,
                                const GradCheckConfig& config);

// One case of the six-configuration gradient suite.
struct GradSuiteCase {
    std::string model;  // model id of the checked configuration
    GradCheckReport report;
};

// Exhaustive finite-difference check of every trainable coordinate on a small
// double-precision model (d_model 32, 2 layers, 4 heads, one 8-token
// sequence) across six adapter configurations: {negative-only, both-terms} x
// {lambda fixed 0.1, lambda learnable}, with group norm additionally enabled
// on the two both-terms cases. Trainables are nudged off their zero/identity
// init first so every backward branch carries signal.
std::vector<GradSuiteCase> run_gradient_suite(double eps = 1e-5, double tolerance = 1e-4);

struct TrainConfig {
    int steps = 1000;
    int batch_size = 16;
    double lr = 1e-3;
    std::string optimizer = "adamw";  // adamw | sgd
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
    double grad_clip = 0.0;  // global l2 clip; 0 disables
    int log_every = 50;      // history granularity; final step always recorded
    int eval_every = 0;      // run the eval callback every N steps; 0 disables
    std::uint64_t seed = 1;

    void validate() const;
};

std::string train_config_to_json_string(const TrainConfig& config);
TrainConfig train_config_from_json_string(const std::string& text);

struct StepRecord {
    int step = 0;
    double loss = 0.0;
    std::vector<double> lambdas;   // per layer; empty for non-diff variants
    double eval_accuracy = -1.0;   // -1 when no eval ran at this step
};

struct TrainResult {
    std::vector<StepRecord> history;
    double final_loss = 0.0;
    int steps_run = 0;
};

using EvalCallback = std::function<double(ToyModel&)>;

// Mini-batch training of the trainable parameters only. Batches are drawn by
// epoch-wise shuffling with a fixed seed; per-example gradients are computed
// in parallel and reduced in index order, so results do not depend on thread
// count. Throws DivergenceError when the loss or a parameter goes non-finite.
TrainResult train(ToyModel& model, const std::vector<TrainingExample>& data,
                  const TrainConfig& config, const EvalCallback& eval_callback = nullptr);

}  // namespace difflora
