#include "picotab/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <numbers>

#include "picotab/mathx.hpp"
#include "picotab/preproc.hpp"
#include "picotab/thread_pool.hpp"

namespace picotab {

void TrainConfig::validate() const {
    if (steps < 1) throw ConfigError("train: steps must be >= 1");
    if (batch_tasks < 1) throw ConfigError("train: batch_tasks must be >= 1");
    if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("train: lr must be positive");
    if (warmup < 0) throw ConfigError("train: warmup must be >= 0");
    if (!(grad_clip > 0)) throw ConfigError("train: grad_clip must be positive");
    if (lr_floor_frac < 0 || lr_floor_frac > 1) throw ConfigError("train: lr_floor_frac in [0,1]");
    if (!(ctx_frac_min > 0) || !(ctx_frac_max < 1) || ctx_frac_min > ctx_frac_max) {
        throw ConfigError("train: need 0 < ctx_frac_min <= ctx_frac_max < 1");
    }
    if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be >= 0");
    if (workers < 1) throw ConfigError("train: workers must be >= 1");
}

double learning_rate_at(const TrainConfig& config, int step) {
    if (config.warmup > 0 && step < config.warmup) {
        return config.lr * (step + 1) / config.warmup;
    }
    const double floor = config.lr * config.lr_floor_frac;
    const int span = std::max(1, config.steps - 1 - config.warmup);
    const double progress = std::clamp(static_cast<double>(step - config.warmup) / span, 0.0, 1.0);
    return floor + (config.lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

constexpr uint64_t kTaskSalt = 0x7a5c0de500001ULL;
constexpr uint64_t kSplitSalt = 0x51e77a5c0de5ULL;

// context/query row split with every observed class represented in context
std::pair<std::vector<int>, std::vector<int>> split_rows(const SyntheticTask& task, Rng& rng,
                                                         double frac_lo, double frac_hi) {
    const int n = task.n_rows();
    const double frac = rng.uniform(frac_lo, frac_hi);
    int n_ctx = std::clamp(static_cast<int>(std::lround(frac * n)), 2, n - 1);
    std::vector<int> order = rng.permutation(n);
    std::vector<int> ctx(order.begin(), order.begin() + n_ctx);
    std::vector<int> query(order.begin() + n_ctx, order.end());

    if (task.kind == TaskKind::classification) {
        std::vector<int> count(static_cast<size_t>(task.n_classes), 0);
        for (const int r : ctx) ++count[static_cast<size_t>(task.y[static_cast<size_t>(r)])];
        for (int cls = 0; cls < task.n_classes; ++cls) {
            if (count[static_cast<size_t>(cls)] > 0) continue;
            // pull one row of this class out of the query side
            auto take = std::find_if(query.begin(), query.end(), [&](int r) {
                return static_cast<int>(task.y[static_cast<size_t>(r)]) == cls;
            });
            if (take == query.end()) continue;  // class absent from the task
            // swap against a context row whose class stays represented
            auto give = std::find_if(ctx.begin(), ctx.end(), [&](int r) {
                return count[static_cast<size_t>(static_cast<int>(task.y[static_cast<size_t>(r)]))] > 1;
            });
            if (give != ctx.end()) {
                --count[static_cast<size_t>(static_cast<int>(task.y[static_cast<size_t>(*give)]))];
                std::swap(*take, *give);
            } else if (query.size() > 1) {
                ctx.push_back(*take);
                query.erase(take);
            } else {
                break;  // cannot shrink the query side further
            }
            ++count[static_cast<size_t>(cls)];
        }
    }
    return {std::move(ctx), std::move(query)};
}

}  // namespace

SplitTask assemble_prior_task(const SyntheticTask& task, const ModelConfig& config,
                              double ctx_frac_min, double ctx_frac_max, uint64_t seed) {
    if (task.kind == TaskKind::classification && task.n_classes > config.max_classes) {
        throw ConfigError("assemble: task has more classes than the model supports");
    }
    const int c = std::min(task.n_cols(), config.feature_cap);

    DataError last_error("assemble: no attempts made");
    for (int attempt = 0; attempt < 5; ++attempt) {
        Rng rng(Rng::splitmix(seed ^ kSplitSalt ^ (0x9e3779b9ULL * attempt)));
        auto [ctx_rows, query_rows] = split_rows(task, rng, ctx_frac_min, ctx_frac_max);

        // canonical preprocessing: robust scale + soft clip, context stats only
        const int n_ctx = static_cast<int>(ctx_rows.size());
        const int n_query = static_cast<int>(query_rows.size());
        Tensor xc({n_ctx, c}), xq({n_query, c});
        std::vector<uint8_t> fc(static_cast<size_t>(n_ctx) * c, 0);
        std::vector<uint8_t> fq(static_cast<size_t>(n_query) * c, 0);
        for (int j = 0; j < c; ++j) {
            std::vector<double> observed;
            observed.reserve(ctx_rows.size());
            for (const int r : ctx_rows) {
                if (!task.missing[static_cast<size_t>(r) * task.n_cols() + j]) {
                    observed.push_back(task.x.at(r, j));
                }
            }
            RobustScale rs;
            if (!observed.empty()) rs = fit_robust_scale(observed);
            auto emit = [&](const std::vector<int>& rows, Tensor& out, std::vector<uint8_t>& flags) {
                for (size_t i = 0; i < rows.size(); ++i) {
                    const int r = rows[i];
                    if (task.missing[static_cast<size_t>(r) * task.n_cols() + j]) {
                        out.at(static_cast<int>(i), j) = 0.0;  // imputed at the center
                        flags[i * static_cast<size_t>(c) + j] = 1;
                    } else {
                        out.at(static_cast<int>(i), j) =
                            soft_clip((task.x.at(r, j) - rs.center) / rs.scale);
                    }
                }
            };
            emit(ctx_rows, xc, fc);
            emit(query_rows, xq, fq);
        }

        try {
            SplitTask out;
            const uint64_t pos_seed = Rng::splitmix(seed ^ 0x9051ab1eULL);
            if (task.kind == TaskKind::classification) {
                // per-task random relabeling; the model must not latch onto ids
                std::vector<int> relabel = rng.permutation(task.n_classes);
                std::vector<double> y_ctx(ctx_rows.size());
                for (size_t i = 0; i < ctx_rows.size(); ++i) {
                    y_ctx[i] = relabel[static_cast<size_t>(
                        static_cast<int>(task.y[static_cast<size_t>(ctx_rows[i])]))];
                }
                out.ctx = assemble_context(xc, fc, y_ctx, TaskKind::classification, task.n_classes,
                                           config, pos_seed);
                out.targets.resize(query_rows.size());
                for (size_t i = 0; i < query_rows.size(); ++i) {
                    out.targets[i] = relabel[static_cast<size_t>(
                        static_cast<int>(task.y[static_cast<size_t>(query_rows[i])]))];
                }
            } else {
                std::vector<double> y_ctx(ctx_rows.size());
                for (size_t i = 0; i < ctx_rows.size(); ++i) {
                    y_ctx[i] = task.y[static_cast<size_t>(ctx_rows[i])];
                }
                out.ctx = assemble_context(xc, fc, y_ctx, TaskKind::regression, 0, config, pos_seed);
                out.targets.resize(query_rows.size());
                for (size_t i = 0; i < query_rows.size(); ++i) {
                    const double z =
                        (task.y[static_cast<size_t>(query_rows[i])] - out.ctx.y_mean) / out.ctx.y_std;
                    out.targets[i] = out.ctx.bins.bin_of(z);
                }
            }
            out.queries = assemble_queries(xq, fq, out.ctx, config);
            return out;
        } catch (const DataError& e) {
            last_error = e;  // e.g. degenerate context target; re-split and retry
        }
    }
    throw last_error;
}

namespace {

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    int step = 0;  // completed optimizer steps

    static AdamState zeros(const Model& model) {
        AdamState s;
        for (const auto& [name, t] : model.params.entries()) {
            s.m.push_back(Tensor::zeros_like(t));
            s.v.push_back(Tensor::zeros_like(t));
        }
        return s;
    }
};

CheckpointContainer state_to_container(const Model& model, const AdamState& adam) {
    CheckpointContainer box = model.to_checkpoint();
    box.set_header("object", "train_state");
    box.set_header("step", std::to_string(adam.step));
    const auto& entries = model.params.entries();
    for (size_t i = 0; i < entries.size(); ++i) {
        box.set_tensor("adam.m." + entries[i].first, adam.m[i]);
        box.set_tensor("adam.v." + entries[i].first, adam.v[i]);
    }
    return box;
}

AdamState state_from_container(const CheckpointContainer& box, const Model& model) {
    AdamState adam;
    try {
        adam.step = std::stoi(box.header_value("step"));
    } catch (const std::exception&) {
        throw DataError("train_state: bad or missing step header");
    }
    for (const auto& [name, t] : model.params.entries()) {
        for (const char* kind : {"adam.m.", "adam.v."}) {
            const std::string key = std::string(kind) + name;
            if (!box.has_tensor(key)) throw DataError("train_state: missing tensor " + key);
            if (!box.tensor(key).same_shape(t)) throw DataError("train_state: shape mismatch " + key);
        }
        adam.m.push_back(box.tensor("adam.m." + name));
        adam.v.push_back(box.tensor("adam.v." + name));
    }
    return adam;
}

void quantize_state(Model& model, AdamState& adam) {
    for (auto& [name, t] : model.params.entries()) quantize_to_f32(t);
    for (auto& t : adam.m) quantize_to_f32(t);
    for (auto& t : adam.v) quantize_to_f32(t);
}

struct TaskGrad {
    double loss = 0.0;
    std::vector<Tensor> grads;  // parallel to param entries
};

}  // namespace

PretrainResult pretrain(const ModelConfig& model_config, const PriorConfig& prior_config,
                        const TrainConfig& train_config) {
    model_config.validate();
    prior_config.validate();
    train_config.validate();
    if (prior_config.max_classes > model_config.max_classes) {
        throw ConfigError("pretrain: prior can emit more classes than the model supports");
    }

    namespace fs = std::filesystem;
    const bool snapshots = !train_config.checkpoint_dir.empty();
    const fs::path state_path = fs::path(train_config.checkpoint_dir) / "train_state.tpfn";

    Model model = Model::init(model_config, train_config.seed);
    AdamState adam = AdamState::zeros(model);
    if (snapshots) {
        fs::create_directories(train_config.checkpoint_dir);
        if (fs::exists(state_path)) {
            const CheckpointContainer box = load_checkpoint(state_path.string());
            if (box.header_or("object", "") != "train_state") {
                throw DataError("train_state: wrong object kind in " + state_path.string());
            }
            CheckpointContainer as_model = box;
            as_model.set_header("object", "model");
            Model resumed = Model::from_checkpoint(as_model);
            if (resumed.config.depth != model_config.depth || resumed.config.dim != model_config.dim ||
                resumed.config.heads != model_config.heads ||
                resumed.config.n_bins != model_config.n_bins ||
                resumed.config.max_classes != model_config.max_classes) {
                throw DataError("train_state: checkpoint does not match requested model config");
            }
            adam = state_from_container(box, resumed);
            model = std::move(resumed);
        }
    }

    PretrainResult result;
    result.start_step = adam.step;

    const uint64_t task_seed = Rng::splitmix(train_config.seed ^ kTaskSalt);
    const size_t n_params = model.params.entries().size();
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    CheckpointContainer last_good = state_to_container(model, adam);
    ThreadPool pool(train_config.workers);

    for (int step = adam.step; step < train_config.steps; ++step) {
        std::vector<TaskGrad> slots(static_cast<size_t>(train_config.batch_tasks));
        pool.parallel_for(train_config.batch_tasks, [&](int b) {
            const uint64_t index =
                static_cast<uint64_t>(step) * train_config.batch_tasks + static_cast<uint64_t>(b);
            const SyntheticTask task = make_prior_task(prior_config, task_seed, index);
            const SplitTask split = assemble_prior_task(
                task, model_config, train_config.ctx_frac_min, train_config.ctx_frac_max,
                Rng::splitmix(task_seed ^ (index * 0x9e3779b97f4a7c15ULL + 1)));

            Graph g;
            BoundParams p = bind_params(g, model, true);
            const ForwardResult r = forward_train(g, model, p, split.ctx, split.queries, split.targets);
            g.backward(r.loss);

            TaskGrad& out = slots[static_cast<size_t>(b)];
            out.loss = g.val(r.loss)[0];
            out.grads.reserve(n_params);
            for (const auto& [name, t] : model.params.entries()) out.grads.push_back(g.grad(p[name]));
        });

        // deterministic slot-order reduction
        double loss = 0.0;
        std::vector<Tensor> grad;
        grad.reserve(n_params);
        for (const auto& [name, t] : model.params.entries()) grad.push_back(Tensor::zeros_like(t));
        const double inv_b = 1.0 / train_config.batch_tasks;
        for (const TaskGrad& s : slots) {
            loss += s.loss * inv_b;
            for (size_t i = 0; i < n_params; ++i) {
                axpy(inv_b, s.grads[i].data(), grad[i].data(), static_cast<int>(grad[i].numel()));
            }
        }

        double sq = 0.0;
        for (const Tensor& t : grad) sq += dot(t.data(), t.data(), static_cast<int>(t.numel()));
        const double grad_norm = std::sqrt(sq);
        if (!std::isfinite(loss) || !std::isfinite(grad_norm)) {
            throw TrainingDiverged("pretrain: non-finite loss or gradient at step " +
                                       std::to_string(step),
                                   last_good);
        }
        const double clip = grad_norm > train_config.grad_clip ? train_config.grad_clip / grad_norm : 1.0;

        const double lr = learning_rate_at(train_config, step);
        const int t = step + 1;
        const double bc1 = 1.0 - std::pow(beta1, t);
        const double bc2 = 1.0 - std::pow(beta2, t);
        auto& entries = model.params.entries();
        for (size_t i = 0; i < n_params; ++i) {
            Tensor& theta = entries[i].second;
            Tensor& m = adam.m[i];
            Tensor& v = adam.v[i];
            const double* gr = grad[i].data();
            for (size_t k = 0; k < theta.numel(); ++k) {
                const double gk = gr[k] * clip;
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                theta[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps);
            }
        }
        adam.step = step + 1;
        result.stats.push_back({step, loss, lr, grad_norm});

        const bool cadence = train_config.checkpoint_every > 0 &&
                             adam.step % train_config.checkpoint_every == 0;
        if (cadence || adam.step == train_config.steps) {
            // snapshot in f32 and keep training from the rounded state, so a
            // resume from disk replays this run exactly
            quantize_state(model, adam);
            last_good = state_to_container(model, adam);
            if (snapshots) save_checkpoint(last_good, state_path.string());
        }
    }

    result.model = std::move(model);
    return result;
}

}  // namespace picotab
