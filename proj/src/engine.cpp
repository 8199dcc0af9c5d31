#include "picotab/engine.hpp"

#include <algorithm>
#include <cmath>

#include "picotab/errors.hpp"
#include "picotab/mathx.hpp"
#include "picotab/rng.hpp"
#include "picotab/thread_pool.hpp"

namespace picotab {

void FitOptions::validate() const {
    if (n_estimators < 1) throw ConfigError("fit: n_estimators must be >= 1");
    if (batch_size_test < 1) throw ConfigError("fit: batch_size_test must be >= 1");
    if (device_workers < 1) throw ConfigError("fit: device_workers must be >= 1");
}

double PredictiveDistribution::point() const {
    if (kind == TaskKind::classification) {
        int best = 0;
        for (int j = 1; j < static_cast<int>(probs.size()); ++j) {
            if (probs[static_cast<size_t>(j)] > probs[static_cast<size_t>(best)]) best = j;
        }
        return static_cast<double>(best);
    }
    return y_mean + y_std * bins.point_from(probs.data());
}

FittedModel fit(std::shared_ptr<const Model> net, const Dataset& train, const FitOptions& options) {
    if (!net) throw ConfigError("fit: null model");
    options.validate();
    if (!train.has_target) throw DataError("fit: dataset has no target");
    if (train.n_rows() < 2) throw DataError("fit: need at least 2 training rows");
    if (train.n_cols() < 1) throw DataError("fit: empty-input (no feature columns)");

    FittedModel out;
    out.net = net;
    out.kind = train.target_kind;
    out.schema = train.schema;
    out.options = options;

    if (train.target_kind == TaskKind::classification) {
        out.n_classes = train.n_classes();
        out.class_names = train.target_categories;
        if (out.n_classes < 2) throw DataError("fit: degenerate-target (single class)");
        if (out.n_classes > net->config.max_classes) {
            throw DataError("fit: " + std::to_string(out.n_classes) +
                            " classes exceed model capacity " +
                            std::to_string(net->config.max_classes));
        }
    } else {
        const double sd = train.y.size() > 1 ? sample_std(train.y) : 0.0;
        if (sd < 1e-12) throw DataError("fit: degenerate-target (constant value)");
    }

    if (train.n_rows() > kRecommendedMaxRows) {
        out.warnings.push_back("rows " + std::to_string(train.n_rows()) +
                               " exceed the recommended maximum " +
                               std::to_string(kRecommendedMaxRows) + "; proceeding anyway");
    }
    if (train.n_cols() > kRecommendedMaxCols) {
        out.warnings.push_back("columns " + std::to_string(train.n_cols()) +
                               " exceed the recommended maximum " +
                               std::to_string(kRecommendedMaxCols) + "; proceeding anyway");
    }

    EnsembleSpec spec;
    spec.n_columns = train.n_cols();
    spec.n_classes = train.target_kind == TaskKind::classification ? out.n_classes : 0;
    spec.feature_cap = net->config.feature_cap;
    out.recipes = build_ensemble_configs(options.n_estimators, spec, options.seed);

    out.preproc.resize(out.recipes.size());
    out.contexts.resize(out.recipes.size());
    if (options.fit_mode == FitMode::fit_with_cache) out.caches.resize(out.recipes.size());

    ThreadPool pool(options.device_workers);
    pool.parallel_for(static_cast<int>(out.recipes.size()), [&](int e) {
        const EstimatorRecipe& recipe = out.recipes[static_cast<size_t>(e)];
        FittedRecipe fitted = FittedRecipe::fit(train, recipe);
        Tensor values;
        std::vector<uint8_t> flags;
        fitted.transform(train, &values, &flags);

        std::vector<double> y = train.y;
        if (train.target_kind == TaskKind::classification) {
            for (double& v : y) {
                v = recipe.class_label_permutation[static_cast<size_t>(static_cast<int>(v))];
            }
        }
        out.contexts[static_cast<size_t>(e)] =
            assemble_context(values, flags, y, train.target_kind,
                             train.target_kind == TaskKind::classification ? out.n_classes : 0,
                             net->config, recipe.seed);
        if (options.fit_mode == FitMode::fit_with_cache) {
            out.caches[static_cast<size_t>(e)] =
                fit_context(*net, out.contexts[static_cast<size_t>(e)]);
        }
        out.preproc[static_cast<size_t>(e)] = std::move(fitted);
    });

    if (train.target_kind == TaskKind::regression) {
        out.y_mean = out.contexts[0].y_mean;
        out.y_std = out.contexts[0].y_std;
        out.bins = out.contexts[0].bins;
    }
    return out;
}

void check_schema_compatible(const std::vector<ColumnSchema>& expected, const Dataset& data) {
    if (static_cast<int>(expected.size()) != data.n_cols()) {
        throw DataError("predict: incompatible-input (column count mismatch)");
    }
    for (size_t j = 0; j < expected.size(); ++j) {
        const ColumnSchema& a = expected[j];
        const ColumnSchema& b = data.schema[j];
        if (a.kind != b.kind) {
            throw DataError("predict: incompatible-input (column '" + a.name + "' changed type)");
        }
        if (a.kind == ColumnKind::categorical && a.categories != b.categories) {
            throw DataError("predict: incompatible-input (column '" + a.name +
                            "' has different categories)");
        }
    }
}

std::vector<PredictiveDistribution> predict_distribution(const FittedModel& model,
                                                         const Dataset& test) {
    if (!model.net) throw ConfigError("predict: model is not fitted");
    check_schema_compatible(model.schema, test);
    const int n = test.n_rows();
    if (n < 1) throw DataError("predict: no test rows");

    const int n_est = static_cast<int>(model.recipes.size());
    const int n_out = model.kind == TaskKind::classification ? model.n_classes
                                                             : model.net->config.n_bins;

    // per-estimator probabilities into slots; deterministic mean afterwards
    std::vector<Tensor> slot(static_cast<size_t>(n_est));
    ThreadPool pool(model.options.device_workers);
    pool.parallel_for(n_est, [&](int e) {
        const TaskContext& ctx = model.contexts[static_cast<size_t>(e)];
        Tensor values;
        std::vector<uint8_t> flags;
        model.preproc[static_cast<size_t>(e)].transform(test, &values, &flags);
        const TaskQueries queries = assemble_queries(values, flags, ctx, model.net->config);

        Tensor probs;
        if (model.has_cache()) {
            probs = predict_probs(*model.net, ctx, model.caches[static_cast<size_t>(e)], queries,
                                  model.options.batch_size_test);
        } else {
            const ContextCache cache = fit_context(*model.net, ctx);
            probs = predict_probs(*model.net, ctx, cache, queries, model.options.batch_size_test);
        }

        if (model.kind == TaskKind::classification) {
            // class c was trained under id perm[c]; map the columns back
            const std::vector<int>& perm = model.recipes[static_cast<size_t>(e)].class_label_permutation;
            Tensor fixed({n, n_out});
            for (int i = 0; i < n; ++i) {
                for (int c = 0; c < n_out; ++c) {
                    fixed.at(i, c) = probs.at(i, perm[static_cast<size_t>(c)]);
                }
            }
            probs = std::move(fixed);
        }
        slot[static_cast<size_t>(e)] = std::move(probs);
    });

    const double inv = 1.0 / n_est;
    std::vector<PredictiveDistribution> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        PredictiveDistribution& d = out[static_cast<size_t>(i)];
        d.kind = model.kind;
        d.probs.assign(static_cast<size_t>(n_out), 0.0);
        for (int e = 0; e < n_est; ++e) {
            const double* row = slot[static_cast<size_t>(e)].row(i);
            for (int c = 0; c < n_out; ++c) d.probs[static_cast<size_t>(c)] += inv * row[c];
        }
        if (model.kind == TaskKind::regression) {
            d.bins = model.bins;
            d.y_mean = model.y_mean;
            d.y_std = model.y_std;
        }
    }
    return out;
}

std::vector<double> predict(const FittedModel& model, const Dataset& test) {
    const std::vector<PredictiveDistribution> dists = predict_distribution(model, test);
    std::vector<double> out;
    out.reserve(dists.size());
    for (const PredictiveDistribution& d : dists) out.push_back(d.point());
    return out;
}

double estimate_cache_memory(double n_rows, double n_cols, TaskKind kind, MemorySide side) {
    if (n_rows < 0 || n_cols < 0) throw ConfigError("cache estimate: negative size");
    const double per_cell_kb = side == MemorySide::device ? 6.1 : 48.8;
    const double factor = kind == TaskKind::regression ? 0.75 : 1.0;
    const double cells = n_rows * n_cols;
    return cells * per_cell_kb * factor * 1024.0;
}

double desk_cache_bytes_per_cell(const ModelConfig& config, int n_rows, int n_cols) {
    if (n_rows < 1 || n_cols < 1) throw ConfigError("cache estimate: need positive sizes");
    const double cols = config.groups_for(n_cols) + 1;
    const double rows = config.n_thinking + n_rows;
    const double bytes = 2.0 * config.depth * cols * rows * config.dim * sizeof(double);
    return bytes / (static_cast<double>(n_rows) * n_cols);
}

double predict_cost_model(double n_rows, double n_cols, double alpha, double beta) {
    const double m = std::min(n_cols, 500.0);
    return alpha * n_rows * n_rows * m + beta * n_rows * m * m;
}

std::pair<double, double> fit_cost_coeffs(const std::vector<CostSample>& samples) {
    if (samples.size() < 2) throw ConfigError("cost fit: need at least 2 samples");
    // normal equations over features f1 = r^2 m, f2 = r m^2
    double a11 = 0, a12 = 0, a22 = 0, b1 = 0, b2 = 0;
    for (const CostSample& s : samples) {
        const double m = std::min(s.n_cols, 500.0);
        const double f1 = s.n_rows * s.n_rows * m;
        const double f2 = s.n_rows * m * m;
        a11 += f1 * f1;
        a12 += f1 * f2;
        a22 += f2 * f2;
        b1 += f1 * s.seconds;
        b2 += f2 * s.seconds;
    }
    const double det = a11 * a22 - a12 * a12;
    double alpha, beta;
    if (std::abs(det) < 1e-30) {
        // collinear features: fall back to a single shared coefficient
        alpha = beta = (b1 + b2) / std::max(a11 + 2 * a12 + a22, 1e-30);
    } else {
        alpha = (b1 * a22 - b2 * a12) / det;
        beta = (a11 * b2 - a12 * b1) / det;
    }
    return {std::max(alpha, 0.0), std::max(beta, 0.0)};
}

FitPredictFn engine_fit_predict(std::shared_ptr<const Model> net, FitOptions options,
                                TaskKind kind) {
    if (!net) throw ConfigError("engine: fit-predict adapter needs a model");
    options.validate();
    return [net, options, kind](const Tensor& x_train, const std::vector<double>& y_train,
                                const Tensor& x_eval) {
        if (x_eval.dim(1) != x_train.dim(1)) {
            throw DataError("engine: fit-predict column mismatch");
        }
        auto as_dataset = [](const Tensor& x) {
            Dataset d;
            const int c = x.dim(1);
            d.schema.resize(static_cast<size_t>(c));
            for (int j = 0; j < c; ++j) {
                d.schema[static_cast<size_t>(j)].name = "f" + std::to_string(j);
                d.schema[static_cast<size_t>(j)].kind = ColumnKind::numeric;
            }
            d.x = x;
            d.missing.assign(static_cast<size_t>(x.dim(0)) * c, 0);
            return d;
        };
        Dataset train = as_dataset(x_train);
        train.has_target = true;
        train.target_kind = kind;
        train.target_name = "y";
        train.y = y_train;
        if (kind == TaskKind::classification) {
            for (double v : y_train) {
                if (v != 0.0 && v != 1.0) {
                    throw DataError("engine: fit-predict classification labels must be 0/1");
                }
            }
            train.target_categories = {"0", "1"};
        }
        const FittedModel model = fit(net, train, options);
        const auto dists = predict_distribution(model, as_dataset(x_eval));
        std::vector<double> out(dists.size());
        if (kind == TaskKind::classification) {
            const auto it =
                std::find(model.class_names.begin(), model.class_names.end(), std::string("1"));
            if (it == model.class_names.end()) {
                throw DataError("engine: fit-predict saw a single training class");
            }
            const size_t idx = static_cast<size_t>(it - model.class_names.begin());
            for (size_t i = 0; i < dists.size(); ++i) out[i] = dists[i].probs[idx];
        } else {
            for (size_t i = 0; i < dists.size(); ++i) out[i] = dists[i].point();
        }
        return out;
    };
}

}  // namespace picotab
