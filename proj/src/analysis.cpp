// SPDX-License-Identifier: Apache-2.0
#include "difflora/analysis.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "difflora/attention.hpp"
#include "difflora/linalg.hpp"

namespace difflora {

using nlohmann::json;

namespace {

const char* kComponents[3] = {"main", "denoiser", "effective"};
const char* kRegionOrder[5] = {"bos", "context", "needle", "query", "answer"};

int region_rank(const std::string& name) {
    for (int i = 0; i < 5; ++i)
        if (name == kRegionOrder[i]) return i;
    return 5;
}

bool region_less(const std::string& a, const std::string& b) {
    const int ra = region_rank(a), rb = region_rank(b);
    return ra != rb ? ra < rb : a < b;
}

std::vector<int> selected_rows(const LabeledExample& ex, QueryRows mode) {
    std::vector<int> rows;
    if (mode == QueryRows::All) {
        rows.resize(ex.tokens.size());
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
        return rows;
    }
    int begin = -1, end = -1;
    for (const RegionSpan& span : ex.regions) {
        if (span.name != "answer") continue;
        if (begin < 0 || span.begin < begin) begin = span.begin;
        if (span.end > end) end = span.end;
    }
    if (begin < 0) return rows;
    if (mode == QueryRows::LastAnswer) {
        rows.push_back(end - 1);
    } else {
        for (int p = begin; p < end; ++p)
            if (p > 0) rows.push_back(p - 1);
    }
    return rows;
}

}  // namespace

const MassRow& AttnMassReport::find(int layer, int head, const std::string& region,
                                    const std::string& component) const {
    for (const MassRow& row : rows)
        if (row.layer == layer && row.head == head && row.region == region &&
            row.component == component)
            return row;
    throw LookupError("report '" + model_name + "' has no row (" + std::to_string(layer) + ", " +
                      std::to_string(head) + ", " + region + ", " + component + ")");
}

AttnMassReport attention_mass(const ToyModel& model, const std::vector<LabeledExample>& dataset,
                              QueryRows query_rows, const std::string& model_name) {
    if (dataset.empty()) throw DegenerateBatchError("attention_mass: empty dataset");
    const int n_layers = static_cast<int>(model.layers.size());
    const int n_heads = model.config.n_heads;

    // [layer][head][region] -> {main, denoiser, effective} sums over query
    // rows; slots 3..5 hold the same sums without the per-token division
    std::vector<std::vector<std::map<std::string, std::array<double, 6>>>> sums(
        static_cast<std::size_t>(n_layers),
        std::vector<std::map<std::string, std::array<double, 6>>>(
            static_cast<std::size_t>(n_heads)));
    std::map<std::string, double> region_tokens;
    std::set<std::string> region_names;
    long long total_rows = 0;
    int used_examples = 0;

    for (const LabeledExample& ex : dataset) {
        const std::vector<int> rows = selected_rows(ex, query_rows);
        if (rows.empty()) continue;
        for (int q : rows)
            if (q < 0 || q >= static_cast<int>(ex.tokens.size()))
                throw InputError("attention_mass: query row " + std::to_string(q) +
                                 " outside sequence of length " +
                                 std::to_string(ex.tokens.size()));
        ++used_examples;
        total_rows += static_cast<long long>(rows.size());
        std::map<std::string, double> lengths;
        for (const RegionSpan& span : ex.regions) {
            region_names.insert(span.name);
            lengths[span.name] += span.end - span.begin;
        }
        for (const auto& [name, len] : lengths) region_tokens[name] += len;

        std::vector<AttnTrace> traces;
        forward(model, ex.tokens, &traces);
        for (int l = 0; l < n_layers; ++l) {
            const AttnTrace& trace = traces[static_cast<std::size_t>(l)];
            const double lambda = trace.lambda_used;
            const bool has_denoiser = !trace.a2.empty();
            for (int h = 0; h < n_heads; ++h) {
                const Tensor2D& a1 = trace.a1[static_cast<std::size_t>(h)];
                const Tensor2D* a2 =
                    has_denoiser ? &trace.a2[static_cast<std::size_t>(h)] : nullptr;
                auto& bucket = sums[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)];
                for (const RegionSpan& span : ex.regions) {
                    std::array<double, 6>& acc = bucket[span.name];
                    // mass is per-token: divide by the region's token count in this example
                    const double inv_len = 1.0 / lengths[span.name];
                    for (int q : rows) {
                        const int hi = std::min(span.end, q + 1);
                        for (int j = span.begin; j < hi; ++j) {
                            const double main = a1.at(q, j);
                            const double den = lambda * (a2 ? a2->at(q, j) : 0.0);
                            acc[0] += main * inv_len;
                            acc[1] += den * inv_len;
                            acc[2] += (main - den) * inv_len;
                            acc[3] += main;
                            acc[4] += den;
                            acc[5] += main - den;
                        }
                    }
                }
            }
        }
    }
    if (total_rows == 0)
        throw DegenerateBatchError("attention_mass: no example has an answer region");

    std::vector<std::string> regions(region_names.begin(), region_names.end());
    std::sort(regions.begin(), regions.end(), region_less);

    AttnMassReport report;
    report.model_name = model_name.empty() ? model_id(model.config) : model_name;
    const double inv_rows = 1.0 / static_cast<double>(total_rows);
    const double inv_examples = 1.0 / static_cast<double>(used_examples);
    auto push_row = [&](int layer, int head, const std::string& region, int comp, double mass,
                        double total) {
        MassRow row;
        row.model = report.model_name;
        row.layer = layer;
        row.head = head;
        row.region = region;
        row.component = kComponents[comp];
        row.mass = mass;
        row.tokens = region_tokens[region] * inv_examples;
        row.total = total;
        report.rows.push_back(std::move(row));
    };
    for (int l = 0; l < n_layers; ++l)
        for (int h = 0; h < n_heads; ++h)
            for (const std::string& region : regions) {
                const auto& bucket = sums[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)];
                const auto it = bucket.find(region);
                const std::array<double, 6> acc =
                    it == bucket.end() ? std::array<double, 6>{} : it->second;
                for (int comp = 0; comp < 3; ++comp)
                    push_row(l, h, region, comp, acc[static_cast<std::size_t>(comp)] * inv_rows,
                             acc[static_cast<std::size_t>(comp + 3)] * inv_rows);
            }
    // layer/head mean rows
    for (const std::string& region : regions) {
        for (int comp = 0; comp < 3; ++comp) {
            double norm_sum = 0.0, raw_sum = 0.0;
            for (int l = 0; l < n_layers; ++l)
                for (int h = 0; h < n_heads; ++h) {
                    const auto& bucket =
                        sums[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)];
                    const auto it = bucket.find(region);
                    if (it == bucket.end()) continue;
                    norm_sum += it->second[static_cast<std::size_t>(comp)];
                    raw_sum += it->second[static_cast<std::size_t>(comp + 3)];
                }
            const double scale = inv_rows / static_cast<double>(n_layers * n_heads);
            push_row(-1, -1, region, comp, norm_sum * scale, raw_sum * scale);
        }
    }
    return report;
}

namespace {

using RowKey = std::tuple<int, int, std::string, std::string>;

RowKey key_of(const MassRow& row) {
    return {row.layer, row.head, row.region, row.component};
}

}  // namespace

AttnMassReport average_reports(const std::vector<AttnMassReport>& reports) {
    if (reports.empty()) throw DegenerateBatchError("average_reports: nothing to average");
    AttnMassReport out = reports[0];
    for (std::size_t r = 1; r < reports.size(); ++r) {
        const AttnMassReport& rep = reports[r];
        if (rep.rows.size() != out.rows.size())
            throw ComparisonError("average_reports: reports have different row counts");
        for (std::size_t i = 0; i < out.rows.size(); ++i) {
            if (key_of(rep.rows[i]) != key_of(out.rows[i]))
                throw ComparisonError("average_reports: row keys disagree at index " +
                                      std::to_string(i));
            out.rows[i].mass += rep.rows[i].mass;
            out.rows[i].tokens += rep.rows[i].tokens;
            out.rows[i].total += rep.rows[i].total;
        }
    }
    const double inv = 1.0 / static_cast<double>(reports.size());
    for (MassRow& row : out.rows) {
        row.mass *= inv;
        row.tokens *= inv;
        row.total *= inv;
    }
    return out;
}

ReportDelta compare_reports(const AttnMassReport& base, const AttnMassReport& other) {
    std::map<RowKey, const MassRow*> base_rows;
    for (const MassRow& row : base.rows) base_rows.emplace(key_of(row), &row);
    if (base_rows.size() != base.rows.size())
        throw ComparisonError("compare_reports: duplicate row keys in base report");
    if (other.rows.size() != base.rows.size())
        throw ComparisonError("compare_reports: reports have different row counts");
    ReportDelta delta;
    for (const MassRow& row : other.rows) {
        const auto it = base_rows.find(key_of(row));
        if (it == base_rows.end())
            throw ComparisonError("compare_reports: base report lacks a row for (" +
                                  std::to_string(row.layer) + ", " + std::to_string(row.head) +
                                  ", " + row.region + ", " + row.component + ")");
        MassRow d = row;
        d.model = other.model_name + "-vs-" + base.model_name;
        d.mass = row.mass - it->second->mass;
        d.total = row.total - it->second->total;
        delta.rows.push_back(std::move(d));
    }
    auto scalar = [&delta](const std::string& region, const std::string& component) {
        for (const MassRow& row : delta.rows)
            if (row.layer == -1 && row.head == -1 && row.region == region &&
                row.component == component)
                return row.mass;
        return 0.0;
    };
    delta.bos_main_delta = scalar("bos", "main");
    delta.needle_main_delta = scalar("needle", "main");
    delta.bos_effective_delta = scalar("bos", "effective");
    delta.needle_effective_delta = scalar("needle", "effective");
    return delta;
}

// ---------------------------------------------------------------------------
// CSV / JSON
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kCsvHeader = "model,layer,head,region,component,mass,tokens";

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(field);
            field.clear();
        } else {
            field.push_back(c);
        }
    }
    fields.push_back(field);
    return fields;
}

}  // namespace

void write_report_csv(const AttnMassReport& report, const std::string& path) {
    std::ofstream file(path, std::ios::trunc);
    if (!file) throw InputError("cannot open report for writing: " + path);
    file << kCsvHeader << '\n';
    for (const MassRow& row : report.rows)
        file << row.model << ',' << row.layer << ',' << row.head << ',' << row.region << ','
             << row.component << ',' << format_double(row.mass) << ','
             << format_double(row.tokens) << '\n';
    if (!file) throw InputError("short write to report: " + path);
}

AttnMassReport read_report_csv(const std::string& path) {
    std::ifstream file(path);
    if (!file) throw InputError("cannot open report: " + path);
    std::string line;
    if (!std::getline(file, line)) throw FormatError("report: empty file", 0);
    if (line == std::string(kCsvHeader) + "\r") line.pop_back();
    if (line != kCsvHeader)
        throw FormatError("report: bad header '" + line + "'", 1);
    AttnMassReport report;
    std::size_t line_no = 1;
    while (std::getline(file, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> fields = split_csv_line(line);
        if (fields.size() != 7)
            throw FormatError("report line " + std::to_string(line_no) + ": expected 7 fields, "
                              "got " + std::to_string(fields.size()), line_no);
        MassRow row;
        row.model = fields[0];
        try {
            row.layer = std::stoi(fields[1]);
            row.head = std::stoi(fields[2]);
            row.region = fields[3];
            row.component = fields[4];
            row.mass = std::stod(fields[5]);
            row.tokens = std::stod(fields[6]);
        } catch (const std::exception&) {
            throw FormatError("report line " + std::to_string(line_no) + ": unparsable number",
                              line_no);
        }
        report.rows.push_back(std::move(row));
    }
    if (!report.rows.empty()) report.model_name = report.rows[0].model;
    return report;
}

void write_report_json(const AttnMassReport& report, const std::string& path) {
    json j;
    j["model"] = report.model_name;
    json rows = json::array();
    for (const MassRow& row : report.rows)
        rows.push_back({{"model", row.model},
                        {"layer", row.layer},
                        {"head", row.head},
                        {"region", row.region},
                        {"component", row.component},
                        {"mass", row.mass},
                        {"tokens", row.tokens},
                        {"total", row.total}});
    j["rows"] = std::move(rows);
    std::ofstream file(path, std::ios::trunc);
    if (!file) throw InputError("cannot open report for writing: " + path);
    file << j.dump(2) << '\n';
    if (!file) throw InputError("short write to report: " + path);
}

}  // namespace difflora
