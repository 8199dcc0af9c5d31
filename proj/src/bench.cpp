#include "picotab/bench.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "picotab/errors.hpp"
#include "picotab/mathx.hpp"
#include "picotab/table_io.hpp"

namespace picotab {
namespace {

const std::optional<double> kMissing;

std::string format_value(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_value(const std::string& s, int lineno) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw DataError("bench: line " + std::to_string(lineno) + ": bad value '" + s + "'");
    }
    return v;
}

}  // namespace

const std::optional<double>& ResultTable::at(int model, int dataset) const {
    if (model < 0 || model >= n_models() || dataset < 0 || dataset >= n_datasets()) {
        return kMissing;
    }
    return cells[static_cast<size_t>(model) * datasets.size() + dataset];
}

int ResultTable::model_index(const std::string& name) const {
    const auto it = std::find(models.begin(), models.end(), name);
    return it == models.end() ? -1 : static_cast<int>(it - models.begin());
}

int ResultTable::dataset_index(const std::string& name) const {
    const auto it = std::find(datasets.begin(), datasets.end(), name);
    return it == datasets.end() ? -1 : static_cast<int>(it - datasets.begin());
}

void ResultTable::add(const std::string& model, const std::string& dataset,
                      const std::string& metric, double raw_value) {
    if (!std::isfinite(raw_value)) {
        throw DataError("bench: non-finite value for " + model + " on " + dataset);
    }
    int d = dataset_index(dataset);
    if (d < 0) {
        d = n_datasets();
        datasets.push_back(dataset);
        metrics.push_back(metric);
        // grow every model row by one column
        std::vector<std::optional<double>> grown;
        grown.reserve(models.size() * datasets.size());
        for (size_t m = 0; m < models.size(); ++m) {
            for (size_t j = 0; j + 1 < datasets.size(); ++j) {
                grown.push_back(cells[m * (datasets.size() - 1) + j]);
            }
            grown.push_back(std::nullopt);
        }
        cells = std::move(grown);
    } else if (metrics[static_cast<size_t>(d)] != metric) {
        throw DataError("bench: dataset '" + dataset + "' scored under two metrics ('" +
                        metrics[static_cast<size_t>(d)] + "' and '" + metric + "')");
    }
    int m = model_index(model);
    if (m < 0) {
        m = n_models();
        models.push_back(model);
        cells.resize(models.size() * datasets.size());
    }
    auto& cell = cells[static_cast<size_t>(m) * datasets.size() + d];
    if (cell.has_value()) {
        throw DataError("bench: duplicate entry for " + model + " on " + dataset);
    }
    cell = lower_is_better(metric) ? -raw_value : raw_value;
}

bool lower_is_better(const std::string& metric) {
    static const char* kLower[] = {"rmse", "mse",  "mae",   "nll",  "logloss",
                                   "error", "brier", "crps", "loss", "time"};
    for (const char* name : kLower) {
        if (metric == name) return true;
    }
    return false;
}

ResultTable read_results(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("bench: cannot read '" + path + "'");
    ResultTable table;
    std::string line;
    int lineno = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_delimited(line, ',');
        if (fields.size() != 4) {
            throw DataError("bench: line " + std::to_string(lineno) + ": expected 4 fields, got " +
                            std::to_string(fields.size()));
        }
        if (!saw_header) {
            saw_header = true;
            if (fields[0] == "model") continue;  // header row optional but expected
        }
        table.add(fields[0], fields[1], fields[2], parse_value(fields[3], lineno));
    }
    if (!saw_header) throw DataError("bench: empty results file '" + path + "'");
    return table;
}

void write_results(const ResultTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("bench: cannot write '" + path + "'");
    out << "model,dataset,metric,value\n";
    for (int m = 0; m < table.n_models(); ++m) {
        for (int d = 0; d < table.n_datasets(); ++d) {
            const auto& cell = table.at(m, d);
            if (!cell.has_value()) continue;
            const std::string& metric = table.metrics[static_cast<size_t>(d)];
            const double raw = lower_is_better(metric) ? -*cell : *cell;
            out << table.models[static_cast<size_t>(m)] << ','
                << table.datasets[static_cast<size_t>(d)] << ',' << metric << ','
                << format_value(raw) << '\n';
        }
    }
    if (!out) throw DataError("bench: failed writing '" + path + "'");
}

std::vector<double> normalize_scores(const std::vector<double>& scores) {
    if (scores.size() < 2) {
        throw DataError("bench: underdetermined normalization (need >= 2 scores, got " +
                        std::to_string(scores.size()) + ")");
    }
    const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
    const double lo = *lo_it, hi = *hi_it;
    std::vector<double> out(scores.size());
    if (lo == hi) {
        std::fill(out.begin(), out.end(), 0.5);
        return out;
    }
    for (size_t i = 0; i < scores.size(); ++i) out[i] = (scores[i] - lo) / (hi - lo);
    return out;
}

ResultTable normalize_table(const ResultTable& table) {
    ResultTable out = table;
    for (int d = 0; d < table.n_datasets(); ++d) {
        std::vector<double> column;
        std::vector<int> rows;
        for (int m = 0; m < table.n_models(); ++m) {
            if (table.at(m, d).has_value()) {
                column.push_back(*table.at(m, d));
                rows.push_back(m);
            }
        }
        if (column.size() < 2) {
            throw DataError("bench: underdetermined dataset '" +
                            table.datasets[static_cast<size_t>(d)] + "' (" +
                            std::to_string(column.size()) + " scores)");
        }
        const auto norm = normalize_scores(column);
        for (size_t i = 0; i < rows.size(); ++i) {
            out.cells[static_cast<size_t>(rows[i]) * table.datasets.size() + d] = norm[i];
        }
        out.metrics[static_cast<size_t>(d)] = "normalized_score";
    }
    return out;
}

std::vector<AggregateRow> aggregate(const ResultTable& normalized) {
    if (normalized.n_datasets() < 2) {
        throw DataError("bench: aggregation needs >= 2 datasets");
    }
    std::vector<AggregateRow> rows;
    for (int m = 0; m < normalized.n_models(); ++m) {
        AggregateRow row;
        row.model = normalized.models[static_cast<size_t>(m)];
        std::vector<double> values;
        for (int d = 0; d < normalized.n_datasets(); ++d) {
            if (normalized.at(m, d).has_value()) values.push_back(*normalized.at(m, d));
        }
        row.n = static_cast<int>(values.size());
        if (!values.empty()) row.mean = mean(values);
        if (values.size() >= 2) {
            row.sem = sample_std(values) / std::sqrt(static_cast<double>(values.size()));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

const std::optional<double>& WinRateMatrix::at(int a, int b) const {
    if (a < 0 || b < 0 || a >= static_cast<int>(models.size()) ||
        b >= static_cast<int>(models.size())) {
        return kMissing;
    }
    return w[static_cast<size_t>(a) * models.size() + b];
}

WinRateMatrix win_rate_matrix(const ResultTable& table) {
    WinRateMatrix out;
    out.models = table.models;
    const int n = table.n_models();
    out.w.assign(static_cast<size_t>(n) * n, std::nullopt);
    for (int a = 0; a < n; ++a) {
        for (int b = 0; b < n; ++b) {
            int common = 0;
            double wins = 0.0;
            for (int d = 0; d < table.n_datasets(); ++d) {
                const auto& sa = table.at(a, d);
                const auto& sb = table.at(b, d);
                if (!sa.has_value() || !sb.has_value()) continue;
                ++common;
                if (*sa > *sb) {
                    wins += 1.0;
                } else if (*sa == *sb) {
                    wins += 0.5;
                }
            }
            if (common > 0) {
                out.w[static_cast<size_t>(a) * n + b] = wins / common;
            }
        }
    }
    return out;
}

}  // namespace picotab
