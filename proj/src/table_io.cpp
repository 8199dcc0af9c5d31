#include "picotab/table_io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "picotab/errors.hpp"

namespace picotab {
namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

bool parse_real(const std::string& s, double& out) {
    const char* begin = s.data();
    const char* end = begin + s.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(*begin))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(end[-1]))) --end;
    if (begin == end) return false;
    auto [ptr, ec] = std::from_chars(begin, end, out);
    return ec == std::errc() && ptr == end;
}

std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

bool needs_quoting(const std::string& s, char delim) {
    return s.find(delim) != std::string::npos || s.find('"') != std::string::npos ||
           s.find('\n') != std::string::npos;
}

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

}  // namespace

bool is_missing_token(const std::string& cell) {
    const std::string t = lower(cell);
    return t.empty() || t == "na" || t == "nan" || t == "null";
}

std::vector<std::string> split_delimited(const std::string& line, char delimiter) {
    std::vector<std::string> fields;
    std::string cur;
    bool in_quotes = false;
    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"' && cur.empty()) {
            in_quotes = true;
        } else if (c == delimiter) {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

Dataset load_table(const std::string& path, const LoadOptions& options) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open table: " + path);

    std::string line;
    if (!std::getline(in, line)) throw DataError("empty table file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::vector<std::string> header = split_delimited(line, options.delimiter);
    const size_t n_cols_raw = header.size();

    int target_idx = -1;
    if (!options.target.empty()) {
        for (size_t j = 0; j < header.size(); ++j) {
            if (header[j] == options.target) target_idx = static_cast<int>(j);
        }
        if (target_idx < 0) {
            throw DataError("target column '" + options.target + "' not found in " + path);
        }
    }

    std::vector<std::vector<std::string>> cells(n_cols_raw);
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() && in.peek() == EOF) break;  // trailing newline
        std::vector<std::string> fields = split_delimited(line, options.delimiter);
        if (fields.size() != n_cols_raw) {
            throw DataError("ragged row at line " + std::to_string(line_no) + " in " + path +
                            ": expected " + std::to_string(n_cols_raw) + " fields, got " +
                            std::to_string(fields.size()));
        }
        for (size_t j = 0; j < n_cols_raw; ++j) cells[j].push_back(std::move(fields[j]));
    }
    const int n_rows = cells.empty() ? 0 : static_cast<int>(cells[0].size());
    if (n_rows == 0) throw DataError("table has a header but no rows: " + path);

    // Column typing: numeric iff every non-missing cell parses as a real.
    std::vector<bool> numeric(n_cols_raw, true);
    for (size_t j = 0; j < n_cols_raw; ++j) {
        for (const auto& cell : cells[j]) {
            double v;
            if (!is_missing_token(cell) && !parse_real(cell, v)) {
                numeric[j] = false;
                break;
            }
        }
    }

    Dataset data;
    const int n_features = static_cast<int>(n_cols_raw) - (target_idx >= 0 ? 1 : 0);
    data.x = Tensor({n_rows, n_features});
    data.missing.assign(static_cast<size_t>(n_rows) * n_features, 0);

    int out_col = 0;
    for (size_t j = 0; j < n_cols_raw; ++j) {
        if (static_cast<int>(j) == target_idx) continue;
        ColumnSchema col;
        col.name = header[j];
        col.kind = numeric[j] ? ColumnKind::numeric : ColumnKind::categorical;
        std::map<std::string, int> code;
        if (col.kind == ColumnKind::categorical) {
            for (const auto& cell : cells[j]) {
                if (!is_missing_token(cell)) code.emplace(cell, 0);
            }
            int next = 0;
            for (auto& [name, c] : code) {
                c = next++;
                col.categories.push_back(name);
            }
        }
        for (int i = 0; i < n_rows; ++i) {
            const std::string& cell = cells[j][static_cast<size_t>(i)];
            if (is_missing_token(cell)) {
                data.missing[static_cast<size_t>(i) * n_features + out_col] = 1;
                continue;
            }
            if (col.kind == ColumnKind::numeric) {
                double v = 0.0;
                parse_real(cell, v);
                data.x.at(i, out_col) = v;
            } else {
                data.x.at(i, out_col) = static_cast<double>(code[cell]);
            }
        }
        data.schema.push_back(std::move(col));
        ++out_col;
    }

    if (target_idx >= 0) {
        data.has_target = true;
        data.target_name = header[static_cast<size_t>(target_idx)];
        const auto& tcells = cells[static_cast<size_t>(target_idx)];
        for (int i = 0; i < n_rows; ++i) {
            if (is_missing_token(tcells[static_cast<size_t>(i)])) {
                throw DataError("missing target value at line " + std::to_string(i + 2) + " in " +
                                path);
            }
        }
        if (numeric[static_cast<size_t>(target_idx)]) {
            data.target_kind = TaskKind::regression;
            data.y.resize(n_rows);
            for (int i = 0; i < n_rows; ++i) parse_real(tcells[static_cast<size_t>(i)], data.y[static_cast<size_t>(i)]);
        } else {
            data.target_kind = TaskKind::classification;
            std::map<std::string, int> code;
            for (const auto& cell : tcells) code.emplace(cell, 0);
            int next = 0;
            for (auto& [name, c] : code) {
                c = next++;
                data.target_categories.push_back(name);
            }
            data.y.resize(n_rows);
            for (int i = 0; i < n_rows; ++i) {
                data.y[static_cast<size_t>(i)] = static_cast<double>(code[tcells[static_cast<size_t>(i)]]);
            }
        }
    }
    return data;
}

void save_table(const Dataset& data, const std::string& path, char delimiter) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write table: " + path);
    const int n = data.n_rows();
    const int c = data.n_cols();

    for (int j = 0; j < c; ++j) {
        if (j) out << delimiter;
        const std::string& name = data.schema[static_cast<size_t>(j)].name;
        out << (needs_quoting(name, delimiter) ? quote(name) : name);
    }
    if (data.has_target) out << delimiter << data.target_name;
    out << '\n';

    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < c; ++j) {
            if (j) out << delimiter;
            if (data.is_missing(i, j)) continue;
            const auto& col = data.schema[static_cast<size_t>(j)];
            if (col.kind == ColumnKind::numeric) {
                out << format_value(data.x.at(i, j));
            } else {
                const auto& cat = col.categories[static_cast<size_t>(data.x.at(i, j))];
                out << (needs_quoting(cat, delimiter) ? quote(cat) : cat);
            }
        }
        if (data.has_target) {
            out << delimiter;
            if (data.target_kind == TaskKind::classification) {
                out << data.target_categories[static_cast<size_t>(data.y[static_cast<size_t>(i)])];
            } else {
                out << format_value(data.y[static_cast<size_t>(i)]);
            }
        }
        out << '\n';
    }
}

}  // namespace picotab
