#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "picotab/tensor.hpp"

namespace picotab {

enum class ColumnKind { numeric, categorical };

struct ColumnSchema {
    std::string name;
    ColumnKind kind = ColumnKind::numeric;
    // Sorted unique category strings; a categorical cell stores its index here.
    std::vector<std::string> categories;
};

enum class TaskKind { classification, regression };

// Mixed-type table. Categorical cells hold the index of their category in
// the column's sorted category list, so the encoding does not depend on row
// order. Missing cells hold 0 with the mask bit set.
struct Dataset {
    std::vector<ColumnSchema> schema;
    Tensor x;                        // [n_rows, n_cols]
    std::vector<uint8_t> missing;    // n_rows * n_cols
    bool has_target = false;
    TaskKind target_kind = TaskKind::regression;
    std::string target_name;
    std::vector<double> y;                       // class index or real value
    std::vector<std::string> target_categories;  // classification only, sorted

    int n_rows() const { return x.rank() > 0 ? x.dim(0) : 0; }
    int n_cols() const { return x.rank() > 1 ? x.dim(1) : 0; }
    bool is_missing(int i, int j) const {
        return missing[static_cast<size_t>(i) * n_cols() + j] != 0;
    }
    int n_classes() const { return static_cast<int>(target_categories.size()); }
};

}  // namespace picotab
