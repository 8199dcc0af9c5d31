#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "picotab/checkpoint.hpp"
#include "picotab/dataset.hpp"
#include "picotab/tensor.hpp"

namespace picotab {

enum class NumericTransform { robust_softclip, quantile, standard, robust_softclip_svd };

// One ensemble member's preprocessing plan. Everything downstream of the
// raw dataset is a pure function of (dataset, recipe).
struct EstimatorRecipe {
    uint64_t seed = 0;
    NumericTransform numeric_transform = NumericTransform::robust_softclip;
    std::vector<int> feature_subset;          // source column indices, size = min(c, cap)
    std::vector<int> feature_permutation;     // bijection over the subset positions
    std::vector<int> class_label_permutation; // classification; empty otherwise
    int svd_k = 0;                            // requested side features; 0 = unused
};

struct EnsembleSpec {
    int n_columns = 0;
    int n_classes = 0;  // 0 for regression
    int feature_cap = 500;
};

// Deterministic recipe list: transforms cycle through the menu, every
// recipe gets its own child seed, subsets are drawn without replacement
// when the dataset exceeds the feature cap.
std::vector<EstimatorRecipe> build_ensemble_configs(int n_estimators, const EnsembleSpec& spec,
                                                    uint64_t master_seed);

// --- column-level transforms -------------------------------------------

struct RobustScale {
    double center = 0.0;
    double scale = 1.0;
    bool zeros = false;  // degenerate column: output is identically 0

    double operator()(double v) const { return zeros ? 0.0 : (v - center) / scale; }
};

// Fit on the observed (non-missing) values of a training column.
// (x - median)/IQR; IQR < 1e-12 falls back to std; std < 1e-12 yields zeros.
// Throws DataError on an empty input.
RobustScale fit_robust_scale(const std::vector<double>& observed);

// robust_scale as a one-shot op: missing cells pass through untouched.
std::vector<double> robust_scale(const std::vector<double>& column,
                                 const std::vector<uint8_t>& missing);

inline double soft_clip(double x, double c = 4.0) { return c * std::tanh(x / c); }

// Rank -> normal-score transform fitted on a training column. Train value
// of mid-rank r among n maps to phi^-1((r+0.5)/n); unseen values
// interpolate the empirical CDF linearly, clamped to +-phi^-1((n-0.5)/n).
class QuantileTransform {
  public:
    static QuantileTransform fit(const std::vector<double>& observed);

    double operator()(double v) const;
    bool degenerate() const { return degenerate_; }

  private:
    friend class FittedRecipe;  // persistence

    std::vector<double> unique_;  // sorted unique train values
    std::vector<double> cdf_;     // mid-rank CDF position per unique value
    double p_lo_ = 0.5, p_hi_ = 0.5;
    int n_ = 0;
    bool degenerate_ = true;
};

// One-shot op per the module contract: fit on train, map test.
// Degenerate train column (<2 distinct) -> zeros, *flagged via out param.
std::vector<double> quantile_transform(const std::vector<double>& train_column,
                                       const std::vector<double>& test_column,
                                       bool* degenerate = nullptr);

struct StandardScale {
    double mean = 0.0;
    double stddev = 1.0;
    bool zeros = false;

    double operator()(double v) const { return zeros ? 0.0 : (v - mean) / stddev; }
};

StandardScale fit_standard_scale(const std::vector<double>& observed);

// --- SVD side features ---------------------------------------------------

struct SvdResult {
    Tensor projections;             // [n, k_eff], unit-variance columns
    Tensor basis;                   // [c, k_eff] right singular vectors
    std::vector<double> col_scale;  // divisor per projection column
    std::vector<double> singular_values;  // descending, all of them
    int k_requested = 0;
    bool truncated = false;  // rank < k_requested
};

// Top-k projections of a standardized matrix via one-sided Jacobi.
SvdResult svd_features(const Tensor& x_std, int k);

// --- the fitted pipeline --------------------------------------------------

// Train-side fit of a recipe; transforms any schema-compatible dataset with
// train statistics only.
class FittedRecipe {
  public:
    static FittedRecipe fit(const Dataset& train, const EstimatorRecipe& recipe);

    // values: [n_rows, out_columns()]; flags: parallel missing indicators.
    void transform(const Dataset& data, Tensor* values, std::vector<uint8_t>* flags) const;

    int out_columns() const { return n_base_ + n_svd_; }
    int base_columns() const { return n_base_; }
    int svd_columns() const { return n_svd_; }
    const EstimatorRecipe& recipe() const { return recipe_; }

    // Persist the fitted state under `prefix` inside a checkpoint container.
    // Numeric statistics pass through the container's float32 payload, so a
    // restored recipe reproduces transforms to f32 precision.
    void to_container(CheckpointContainer& out, const std::string& prefix) const;
    static FittedRecipe from_container(const CheckpointContainer& in, const std::string& prefix);

  private:
    struct Column {
        int source = 0;
        bool categorical = false;
        bool all_missing = false;
        std::vector<int> code_of;  // categorical: canonical index -> shuffled code
        int unseen_code = 0;
        double impute = 0.0;  // raw-value imputation (train median)
        // fitted transforms (active one depends on the recipe)
        RobustScale robust;
        QuantileTransform quantile;
        StandardScale standard;
        bool quantile_degenerate = false;
    };

    double transform_value(const Column& col, double raw) const;

    EstimatorRecipe recipe_;
    std::vector<Column> columns_;  // in subset order
    int n_base_ = 0;
    int n_svd_ = 0;
    // svd recipes: standardization of the base block + projection basis
    std::vector<double> svd_mean_, svd_std_;
    Tensor svd_basis_;                  // [n_base, n_svd]
    std::vector<double> svd_col_scale_; // unit-variance divisors
};

// Spec-level convenience: fit on the dataset and transform it in one go.
void apply_recipe(const Dataset& data, const EstimatorRecipe& recipe, Tensor* values,
                  std::vector<uint8_t>* flags);

}  // namespace picotab
