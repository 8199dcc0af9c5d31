#include "picotab/postproc.hpp"

#include <algorithm>
#include <cmath>

#include "picotab/errors.hpp"
#include "picotab/mathx.hpp"
#include "picotab/rng.hpp"

namespace picotab {

namespace {

double f1_for_class(const std::vector<int>& y, const std::vector<int>& y_hat, int cls) {
    int tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < y.size(); ++i) {
        const bool truth = y[i] == cls;
        const bool pred = y_hat[i] == cls;
        tp += truth && pred;
        fp += !truth && pred;
        fn += truth && !pred;
    }
    const int denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * tp / denom;
}

}  // namespace

double threshold_metric(ThresholdMetric metric, const std::vector<int>& y,
                        const std::vector<int>& y_hat) {
    if (y.empty() || y.size() != y_hat.size()) throw ConfigError("metric: size mismatch");
    switch (metric) {
        case ThresholdMetric::accuracy: {
            int hits = 0;
            for (size_t i = 0; i < y.size(); ++i) hits += y[i] == y_hat[i];
            return static_cast<double>(hits) / y.size();
        }
        case ThresholdMetric::f1:
            return f1_for_class(y, y_hat, 1);
        case ThresholdMetric::macro_f1:
            return 0.5 * (f1_for_class(y, y_hat, 0) + f1_for_class(y, y_hat, 1));
    }
    throw ConfigError("metric: unknown kind");
}

ThresholdPolicy tune_threshold(const std::vector<double>& positive_probs,
                               const std::vector<int>& y, ThresholdMetric metric) {
    if (positive_probs.size() != y.size() || y.empty()) {
        throw ConfigError("tune_threshold: size mismatch");
    }
    bool has0 = false, has1 = false;
    for (const int v : y) {
        if (v == 0) has0 = true;
        else if (v == 1) has1 = true;
        else throw DataError("tune_threshold: labels must be binary 0/1");
    }
    if (!has0 || !has1) throw DataError("tune_threshold: undefined-metric (single-class labels)");

    std::vector<double> sorted = positive_probs;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

    std::vector<double> candidates;
    candidates.push_back(0.0);
    for (size_t i = 0; i + 1 < sorted.size(); ++i) {
        candidates.push_back(0.5 * (sorted[i] + sorted[i + 1]));
    }
    candidates.push_back(1.0);
    std::sort(candidates.begin(), candidates.end());

    ThresholdPolicy best{metric, 0.0};
    double best_score = -1.0;
    std::vector<int> y_hat(y.size());
    for (const double t : candidates) {
        for (size_t i = 0; i < y.size(); ++i) y_hat[i] = positive_probs[i] >= t ? 1 : 0;
        const double score = threshold_metric(metric, y, y_hat);
        if (score > best_score) {  // strict: equal scores keep the lower threshold
            best_score = score;
            best.threshold = t;
        }
    }
    return best;
}

std::vector<double> oof_positive_probs(std::shared_ptr<const Model> net, const Dataset& train,
                                       const FitOptions& options, int folds) {
    if (folds < 2) throw ConfigError("oof: need at least 2 folds");
    if (train.target_kind != TaskKind::classification || train.n_classes() != 2) {
        throw DataError("oof: threshold tuning needs a binary classification target");
    }
    const int n = train.n_rows();
    if (n < folds) throw DataError("oof: fewer rows than folds");

    Rng rng(Rng::splitmix(options.seed ^ 0x00fF01dULL));
    const std::vector<int> order = rng.permutation(n);
    std::vector<int> fold_of(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) fold_of[static_cast<size_t>(order[static_cast<size_t>(i)])] = i % folds;

    auto subset = [&](bool in_fold, int fold) {
        Dataset d;
        d.schema = train.schema;
        d.has_target = !in_fold;
        d.target_kind = train.target_kind;
        d.target_name = train.target_name;
        d.target_categories = train.target_categories;
        std::vector<int> rows;
        for (int i = 0; i < n; ++i) {
            if ((fold_of[static_cast<size_t>(i)] == fold) == in_fold) rows.push_back(i);
        }
        d.x = Tensor({static_cast<int>(rows.size()), train.n_cols()});
        d.missing.assign(rows.size() * static_cast<size_t>(train.n_cols()), 0);
        for (size_t r = 0; r < rows.size(); ++r) {
            for (int j = 0; j < train.n_cols(); ++j) {
                d.x.at(static_cast<int>(r), j) = train.x.at(rows[r], j);
                d.missing[r * static_cast<size_t>(train.n_cols()) + j] =
                    train.missing[static_cast<size_t>(rows[r]) * train.n_cols() + j];
            }
            if (!in_fold) d.y.push_back(train.y[static_cast<size_t>(rows[r])]);
        }
        return std::pair(d, rows);
    };

    std::vector<double> probs(static_cast<size_t>(n), 0.0);
    for (int fold = 0; fold < folds; ++fold) {
        auto [fit_part, fit_rows] = subset(false, fold);
        auto [held, held_rows] = subset(true, fold);
        if (held.n_rows() == 0) continue;
        // a fold can lose one class entirely; fall back to the prior rate
        bool both = false, seen0 = false, seen1 = false;
        for (const double v : fit_part.y) (v < 0.5 ? seen0 : seen1) = true;
        both = seen0 && seen1;
        if (!both) {
            const double rate = seen1 ? 1.0 : 0.0;
            for (const int r : held_rows) probs[static_cast<size_t>(r)] = rate;
            continue;
        }
        const FittedModel m = fit(net, fit_part, options);
        const std::vector<PredictiveDistribution> dists = predict_distribution(m, held);
        for (size_t i = 0; i < held_rows.size(); ++i) {
            probs[static_cast<size_t>(held_rows[i])] = dists[i].probs[1];
        }
    }
    return probs;
}

Tensor apply_temperature(const Tensor& logits, double t) {
    if (!(t > 0)) throw ConfigError("temperature: t must be positive");
    Tensor probs(logits.shape());
    const int n = logits.dim(0), c = logits.dim(1);
    for (int i = 0; i < n; ++i) {
        const double* z = logits.row(i);
        double* p = probs.row(i);
        for (int j = 0; j < c; ++j) p[j] = z[j] / t;
        softmax_inplace(p, c);
    }
    return probs;
}

double temperature_nll(const Tensor& logits, const std::vector<int>& y, double t) {
    const int n = logits.dim(0), c = logits.dim(1);
    double total = 0;
    std::vector<double> row(static_cast<size_t>(c));
    for (int i = 0; i < n; ++i) {
        const double* z = logits.row(i);
        for (int j = 0; j < c; ++j) row[static_cast<size_t>(j)] = z[j] / t;
        const double lse = log_sum_exp(row.data(), c);
        total += lse - row[static_cast<size_t>(y[static_cast<size_t>(i)])];
    }
    return total / n;
}

namespace {

// d(mean NLL)/dt; positive means the minimum lies to the left
double nll_grad(const Tensor& logits, const std::vector<int>& y, double t) {
    const int n = logits.dim(0), c = logits.dim(1);
    double acc = 0;
    std::vector<double> p(static_cast<size_t>(c));
    for (int i = 0; i < n; ++i) {
        const double* z = logits.row(i);
        for (int j = 0; j < c; ++j) p[static_cast<size_t>(j)] = z[j] / t;
        softmax_inplace(p.data(), c);
        double expect = 0;
        for (int j = 0; j < c; ++j) expect += p[static_cast<size_t>(j)] * z[j];
        acc += z[y[static_cast<size_t>(i)]] - expect;
    }
    return acc / (n * t * t);
}

}  // namespace

Temperature fit_temperature(const Tensor& logits, const std::vector<int>& y) {
    if (logits.rank() != 2 || logits.dim(0) < 2 || logits.dim(1) < 2) {
        throw ConfigError("temperature: need logits [n >= 2, C >= 2]");
    }
    if (static_cast<int>(y.size()) != logits.dim(0)) throw ConfigError("temperature: label size");
    for (const int v : y) {
        if (v < 0 || v >= logits.dim(1)) throw DataError("temperature: label out of range");
    }

    constexpr double kLo = 0.05, kHi = 20.0;
    std::vector<double> grid;
    grid.reserve(201);
    for (int k = 0; k < 200; ++k) {
        grid.push_back(kLo * std::pow(kHi / kLo, static_cast<double>(k) / 199.0));
    }
    grid.push_back(1.0);
    std::sort(grid.begin(), grid.end());

    size_t best = 0;
    double best_nll = temperature_nll(logits, y, grid[0]);
    for (size_t k = 1; k < grid.size(); ++k) {
        const double nll = temperature_nll(logits, y, grid[k]);
        if (nll < best_nll) {
            best_nll = nll;
            best = k;
        }
    }

    double lo = best == 0 ? kLo : grid[best - 1];
    double hi = best + 1 == grid.size() ? kHi : grid[best + 1];
    // flat regions (gradient rounds to 0) resolve toward the colder side
    if (best == 0 && nll_grad(logits, y, kLo) >= 0) return {kLo};
    if (best + 1 == grid.size() && nll_grad(logits, y, kHi) < 0) return {kHi};
    for (int it = 0; it < 30; ++it) {
        const double mid = 0.5 * (lo + hi);
        (nll_grad(logits, y, mid) >= 0 ? hi : lo) = mid;
    }
    return {0.5 * (lo + hi)};
}

}  // namespace picotab
