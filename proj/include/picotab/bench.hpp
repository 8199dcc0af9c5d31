#pragma once

#include <optional>
#include <string>
#include <vector>

namespace picotab {

// scores[model][dataset], oriented so higher is always better (lower-is-better
// metrics are negated at ingestion). Missing entries are explicit.
struct ResultTable {
    std::vector<std::string> models;
    std::vector<std::string> datasets;
    std::vector<std::string> metrics;           // per dataset, original metric name
    std::vector<std::optional<double>> cells;   // [models x datasets], row-major

    int n_models() const { return static_cast<int>(models.size()); }
    int n_datasets() const { return static_cast<int>(datasets.size()); }
    const std::optional<double>& at(int model, int dataset) const;
    int model_index(const std::string& name) const;    // -1 if absent
    int dataset_index(const std::string& name) const;  // -1 if absent

    // Inserts the model/dataset on first sight; value arrives in raw metric
    // units and is negated here when the metric is lower-is-better.
    void add(const std::string& model, const std::string& dataset, const std::string& metric,
             double raw_value);
};

bool lower_is_better(const std::string& metric);

// Delimited text rows (model, dataset, metric, value) with a header line.
// Values in the file are raw metric units; orientation happens on read and is
// undone on write, so files round-trip.
ResultTable read_results(const std::string& path);
void write_results(const ResultTable& table, const std::string& path);

// (s - min) / (max - min); all-equal columns map to 0.5.
// Throws DataError("... underdetermined ...") for fewer than 2 scores.
std::vector<double> normalize_scores(const std::vector<double>& scores);

// normalize_scores applied per dataset column, skipping missing entries.
ResultTable normalize_table(const ResultTable& table);

struct AggregateRow {
    std::string model;
    double mean = 0.0;
    double sem = 0.0;  // sample std / sqrt(n); 0 when n < 2
    int n = 0;         // datasets this model was evaluated on
};

// Per-model mean and SEM over the datasets present. Expects a normalized
// table; requires >= 2 datasets overall.
std::vector<AggregateRow> aggregate(const ResultTable& normalized);

struct WinRateMatrix {
    std::vector<std::string> models;
    std::vector<std::optional<double>> w;  // [models x models], missing = no common datasets

    const std::optional<double>& at(int a, int b) const;
};

// W[a][b] = fraction of common datasets where a beats b on the raw oriented
// scores; ties count one half. W[a][b] + W[b][a] = 1 and the diagonal is 0.5
// wherever defined.
WinRateMatrix win_rate_matrix(const ResultTable& table);

}  // namespace picotab
