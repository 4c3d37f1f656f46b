// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "difflora/model.hpp"
#include "difflora/tasks.hpp"

namespace difflora {

// One aggregated attention-mass measurement. layer == -1 and head == -1 mark
// the mean over all layer/head pairs. component is "main" (positive map),
// "denoiser" (subtracted map; zero rows for standard attention) or
// "effective" (main - lambda * denoiser).
struct MassRow {
    std::string model;
    int layer = 0;
    int head = 0;
    std::string region;
    std::string component;
    double mass = 0.0;
    double tokens = 0.0;  // mean region length per example
    // Unnormalized mean region mass per query row (mass without the
    // per-token division). Exported in the JSON sidecar only; the CSV
    // keeps its fixed seven-column schema, so a CSV round trip drops it.
    double total = 0.0;
};

struct AttnMassReport {
    std::string model_name;
    std::vector<MassRow> rows;

    const MassRow& find(int layer, int head, const std::string& region,
                        const std::string& component) const;
};

// Which attention rows of each example are measured: the rows that predict
// answer tokens (where retrieval has to happen), just the final answer
// position's row, or every row of the sequence.
enum class QueryRows { AnswerPredictors, LastAnswer, All };

// Mean attention mass per (layer, head, region, component) over the selected
// query rows of every example, plus the layer/head mean rows.
AttnMassReport attention_mass(const ToyModel& model, const std::vector<LabeledExample>& dataset,
                              QueryRows query_rows = QueryRows::AnswerPredictors,
                              const std::string& model_name = "");

// Element-wise mean of reports with identical row keys (e.g. across seeds).
AttnMassReport average_reports(const std::vector<AttnMassReport>& reports);

// Row-by-row difference (other - base) plus the two headline deltas from the
// layer/head mean rows.
struct ReportDelta {
    std::vector<MassRow> rows;  // mass holds the delta
    double bos_main_delta = 0.0;
    double needle_main_delta = 0.0;
    double bos_effective_delta = 0.0;
    double needle_effective_delta = 0.0;
};

ReportDelta compare_reports(const AttnMassReport& base, const AttnMassReport& other);

// CSV with the exact header model,layer,head,region,component,mass,tokens.
void write_report_csv(const AttnMassReport& report, const std::string& path);
AttnMassReport read_report_csv(const std::string& path);

// JSON sidecar carrying the same rows for notebook-side consumers.
void write_report_json(const AttnMassReport& report, const std::string& path);

}  // namespace difflora
