#pragma once

#include <string>
#include <vector>

#include "picotab/dataset.hpp"

namespace picotab {

struct LoadOptions {
    std::string target;  // column name; empty = no target
    char delimiter = ',';
};

// Reads a delimited text file with a header row. A column is numeric iff
// every non-missing cell parses as a real number, otherwise categorical.
// Missing tokens: "", "NA", "NaN", "null" (case-insensitive).
Dataset load_table(const std::string& path, const LoadOptions& options = {});

// Writes the dataset back out (missing cells as empty fields). Values
// round-trip exactly through load_table.
void save_table(const Dataset& data, const std::string& path, char delimiter = ',');

bool is_missing_token(const std::string& cell);

// Splits one delimited line honoring double-quoted fields.
std::vector<std::string> split_delimited(const std::string& line, char delimiter);

}  // namespace picotab
