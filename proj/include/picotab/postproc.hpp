#pragma once

#include <memory>
#include <vector>

#include "picotab/engine.hpp"
#include "picotab/tensor.hpp"

namespace picotab {

enum class ThresholdMetric { macro_f1, f1, accuracy };

struct ThresholdPolicy {
    ThresholdMetric metric = ThresholdMetric::macro_f1;
    double threshold = 0.5;  // predict positive iff p >= threshold
};

// Binary metrics over labels in {0, 1}. f1 scores the positive class;
// macro_f1 averages both per-class F1 values.
double threshold_metric(ThresholdMetric metric, const std::vector<int>& y,
                        const std::vector<int>& y_hat);

// Exact sweep: candidate thresholds are {0, 1} plus the midpoints between
// consecutive sorted unique probabilities; ties break toward the lower
// threshold. Throws DataError("undefined-metric") when y is single-class.
ThresholdPolicy tune_threshold(const std::vector<double>& positive_probs,
                               const std::vector<int>& y, ThresholdMetric metric);

// Out-of-fold positive-class probabilities for threshold tuning: 5-fold
// refit over the training set so the tuning data is never seen by the
// estimator producing its probability.
std::vector<double> oof_positive_probs(std::shared_ptr<const Model> net, const Dataset& train,
                                       const FitOptions& options, int folds = 5);

struct Temperature {
    double t = 1.0;
};

// Minimizes mean NLL over a 200-point log grid on [0.05, 20] (t = 1 is always
// a candidate), then refines with 30 bisection steps on the gradient sign.
Temperature fit_temperature(const Tensor& logits, const std::vector<int>& y);

// softmax(logits / t) row by row.
Tensor apply_temperature(const Tensor& logits, double t);

// Mean negative log-likelihood of labels under softmax(logits / t).
double temperature_nll(const Tensor& logits, const std::vector<int>& y, double t);

}  // namespace picotab
