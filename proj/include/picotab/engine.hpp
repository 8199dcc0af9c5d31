#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "picotab/model.hpp"
#include "picotab/preproc.hpp"

namespace picotab {

enum class FitMode { lazy, fit_with_cache };

struct FitOptions {
    int n_estimators = 8;
    FitMode fit_mode = FitMode::fit_with_cache;
    int batch_size_test = 1024;
    int device_workers = 1;
    uint64_t seed = 0;

    void validate() const;  // throws ConfigError
};

// Fitting larger inputs works but is outside the validated envelope; fit()
// records a warning instead of rejecting.
constexpr int kRecommendedMaxRows = 50000;
constexpr int kRecommendedMaxCols = 2000;

struct PredictiveDistribution {
    TaskKind kind = TaskKind::classification;
    std::vector<double> probs;  // classification: [C_observed]; regression: [K]
    // regression decode info (bins live in the z-space of the training target)
    BinSpec bins;
    double y_mean = 0.0;
    double y_std = 1.0;

    // argmax class (ties -> lowest index) or expected target value
    double point() const;
};

// Everything predict() needs, frozen at fit time. Treat as immutable: predict
// is const and may run concurrently from many threads.
struct FittedModel {
    std::shared_ptr<const Model> net;
    TaskKind kind = TaskKind::classification;
    int n_classes = 0;
    std::vector<std::string> class_names;
    double y_mean = 0.0;
    double y_std = 1.0;
    BinSpec bins;
    std::vector<ColumnSchema> schema;
    FitOptions options;
    std::vector<EstimatorRecipe> recipes;
    std::vector<FittedRecipe> preproc;
    std::vector<TaskContext> contexts;  // one per estimator
    std::vector<ContextCache> caches;   // fit_with_cache only, parallel to contexts
    std::vector<std::string> warnings;

    bool has_cache() const { return !caches.empty(); }
};

FittedModel fit(std::shared_ptr<const Model> net, const Dataset& train, const FitOptions& options);

// Mean of the per-estimator probability vectors, class ids mapped back to the
// canonical (sorted) order. Test rows run in batches of batch_size_test.
std::vector<PredictiveDistribution> predict_distribution(const FittedModel& model,
                                                         const Dataset& test);

// Class index (classification) or decoded target value (regression) per row.
std::vector<double> predict(const FittedModel& model, const Dataset& test);

// Throws DataError("... incompatible-input ...") unless `data` matches the
// column count, kinds, and category lists the model was fitted on.
void check_schema_compatible(const std::vector<ColumnSchema>& expected, const Dataset& data);

// Generic fit-then-predict over plain numeric matrices. Downstream modules
// (causal meta-learners, the HPO surrogate) plug any implementation with this
// shape; engine_fit_predict wires in the in-context model itself.
using FitPredictFn = std::function<std::vector<double>(
    const Tensor& x_train, const std::vector<double>& y_train, const Tensor& x_eval)>;

// Regression returns point predictions; classification the probability of
// class "1" (training labels must be 0/1).
FitPredictFn engine_fit_predict(std::shared_ptr<const Model> net, FitOptions options,
                                TaskKind kind);

// --- resource estimation -----------------------------------------------

enum class MemorySide { device, host };

// Published per-cell constants of the paper-scale model: 6.1 KB device /
// 48.8 KB host per training cell, regression 25% less. Returns bytes
// (KB = 1024), computed as cells * per_cell_kb * factor * 1024.
double estimate_cache_memory(double n_rows, double n_cols, TaskKind kind, MemorySide side);

// Exact bytes per training cell of this build's row-axis KV cache, for
// reporting next to the paper-scale constants.
double desk_cache_bytes_per_cell(const ModelConfig& config, int n_rows, int n_cols);

// alpha * r^2 * m + beta * r * m^2 with m = min(c, 500).
double predict_cost_model(double n_rows, double n_cols, double alpha, double beta);

struct CostSample {
    double n_rows = 0;
    double n_cols = 0;
    double seconds = 0;
};

// Least-squares (alpha, beta) over measured timings; negatives clamp to 0.
std::pair<double, double> fit_cost_coeffs(const std::vector<CostSample>& samples);

}  // namespace picotab
