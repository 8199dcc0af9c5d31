#include "picotab/prior.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "picotab/errors.hpp"
#include "picotab/mathx.hpp"

namespace picotab {
namespace {

constexpr int kMinRows = 12;
constexpr int kMaxRetries = 10;

double activate(Scm::Activation kind, double v, int step_levels) {
    switch (kind) {
        case Scm::Activation::tanh_like:
            return std::tanh(v);
        case Scm::Activation::monotone:
            // Rank-preserving: strictly increasing, roughly identity far out.
            return v + 2.0 * std::tanh(v);
        case Scm::Activation::step: {
            const double squashed = std::tanh(v);  // (-1, 1)
            const double lv = std::floor((squashed + 1.0) * 0.5 * step_levels);
            return std::min(lv, static_cast<double>(step_levels - 1));
        }
    }
    return v;
}

// Column-wise z-scoring keeps node magnitudes bounded as depth grows.
void standardize(std::vector<double>& col) {
    const double m = mean(col);
    double var = 0.0;
    for (double v : col) var += (v - m) * (v - m);
    var /= static_cast<double>(col.size());
    const double sd = std::sqrt(var);
    if (sd < 1e-12) {
        for (auto& v : col) v = 0.0;
        return;
    }
    for (auto& v : col) v = (v - m) / sd;
}

// Ranks with ties broken by row index, so every rank is distinct.
std::vector<int> stable_ranks(const std::vector<double>& v) {
    std::vector<int> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] < v[b]; });
    std::vector<int> rank(v.size());
    for (size_t r = 0; r < idx.size(); ++r) rank[static_cast<size_t>(idx[r])] = static_cast<int>(r);
    return rank;
}

// Class boundaries on ranks from Dirichlet widths, each bin nonempty.
std::vector<int> rank_bin(const std::vector<double>& values, int k, Rng& rng) {
    const int n = static_cast<int>(values.size());
    const std::vector<double> widths = rng.dirichlet(k, 1.0);
    std::vector<int> counts(k, 1);  // every class present at least once
    const int remaining = n - k;
    for (int c = 0; c < k; ++c) {
        counts[static_cast<size_t>(c)] += static_cast<int>(std::floor(widths[static_cast<size_t>(c)] * remaining));
    }
    int assigned = std::accumulate(counts.begin(), counts.end(), 0);
    for (int c = 0; assigned < n; c = (c + 1) % k, ++assigned) counts[static_cast<size_t>(c)] += 1;

    std::vector<int> boundary(static_cast<size_t>(k) + 1, 0);
    for (int c = 0; c < k; ++c) boundary[static_cast<size_t>(c) + 1] = boundary[static_cast<size_t>(c)] + counts[static_cast<size_t>(c)];

    const std::vector<int> ranks = stable_ranks(values);
    std::vector<int> labels(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int r = ranks[static_cast<size_t>(i)];
        int c = 0;
        while (c + 1 < k && r >= boundary[static_cast<size_t>(c) + 1]) ++c;
        labels[static_cast<size_t>(i)] = c;
    }
    return labels;
}

// All node columns for n rows, in topological (index) order.
std::vector<std::vector<double>> sample_columns(const Scm& scm, int n, Rng& rng) {
    std::vector<std::vector<double>> cols(static_cast<size_t>(scm.n_nodes()));
    for (int j = 0; j < scm.n_nodes(); ++j) {
        const Scm::Node& node = scm.nodes[static_cast<size_t>(j)];
        std::vector<double>& col = cols[static_cast<size_t>(j)];
        col.resize(static_cast<size_t>(n));
        if (node.parents.empty()) {
            for (int i = 0; i < n; ++i) col[static_cast<size_t>(i)] = rng.normal(0.0, node.root_scale);
        } else {
            const int np = static_cast<int>(node.parents.size());
            for (int i = 0; i < n; ++i) {
                double out = 0.0;
                for (int h = 0; h < node.hidden; ++h) {
                    double pre = node.b_in[static_cast<size_t>(h)];
                    for (int p = 0; p < np; ++p) {
                        pre += node.w_in[static_cast<size_t>(h) * np + p] *
                               cols[static_cast<size_t>(node.parents[static_cast<size_t>(p)])][static_cast<size_t>(i)];
                    }
                    out += node.w_out[static_cast<size_t>(h)] * activate(node.activation, pre, node.step_levels);
                }
                col[static_cast<size_t>(i)] = out + node.noise_scale * rng.normal();
            }
            standardize(col);
        }
    }
    return cols;
}

}  // namespace

void PriorConfig::validate() const {
    auto in01 = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (max_rows < kMinRows) throw ConfigError("prior: max_rows too small");
    if (max_features < 1) throw ConfigError("prior: max_features must be >= 1");
    if (max_classes < 2) throw ConfigError("prior: max_classes must be >= 2");
    if (dag_nodes_min < 1 || dag_nodes_max < dag_nodes_min) {
        throw ConfigError("prior: dag_nodes_range empty");
    }
    if (!in01(edge_density)) throw ConfigError("prior: edge_density outside [0,1]");
    if (noise_scale_max < noise_scale_min || noise_scale_min < 0.0) {
        throw ConfigError("prior: noise_scale_range empty");
    }
    if (std::abs(task_mix_classification + task_mix_regression - 1.0) > 1e-9) {
        throw ConfigError("prior: task_mix must sum to 1");
    }
    if (!in01(task_mix_classification) || !in01(task_mix_regression)) {
        throw ConfigError("prior: task_mix fractions outside [0,1]");
    }
    if (!in01(corruption_missing) || !in01(corruption_outlier) || !in01(corruption_categorize)) {
        throw ConfigError("prior: corruption rates outside [0,1]");
    }
}

int Scm::n_edges() const {
    int e = 0;
    for (const auto& node : nodes) e += static_cast<int>(node.parents.size());
    return e;
}

bool Scm::operator==(const Scm& other) const {
    if (nodes.size() != other.nodes.size()) return false;
    for (size_t i = 0; i < nodes.size(); ++i) {
        const Node& a = nodes[i];
        const Node& b = other.nodes[i];
        if (a.parents != b.parents || a.activation != b.activation ||
            a.step_levels != b.step_levels || a.hidden != b.hidden || a.w_in != b.w_in ||
            a.b_in != b.b_in || a.w_out != b.w_out || a.noise_scale != b.noise_scale ||
            a.root_scale != b.root_scale) {
            return false;
        }
    }
    return true;
}

Scm sample_scm(const PriorConfig& config, uint64_t seed) {
    Rng rng(Rng::splitmix(seed ^ 0x5ca1ab1edeadbeefULL));
    Scm scm;
    scm.seed = seed;
    const int n_nodes = static_cast<int>(rng.uniform_int(config.dag_nodes_min, config.dag_nodes_max));
    scm.nodes.resize(static_cast<size_t>(n_nodes));
    for (int j = 0; j < n_nodes; ++j) {
        Scm::Node& node = scm.nodes[static_cast<size_t>(j)];
        for (int i = 0; i < j; ++i) {
            if (rng.bernoulli(config.edge_density)) node.parents.push_back(i);
        }
        node.root_scale = rng.uniform(0.5, 2.0);
        node.noise_scale = rng.uniform(config.noise_scale_min, config.noise_scale_max);
        if (node.parents.empty()) continue;

        const int menu = static_cast<int>(rng.uniform_int(0, 2));
        node.activation = static_cast<Scm::Activation>(menu);
        node.step_levels = static_cast<int>(rng.uniform_int(2, 6));
        node.hidden = static_cast<int>(rng.uniform_int(2, 8));
        const int np = static_cast<int>(node.parents.size());
        node.w_in.resize(static_cast<size_t>(node.hidden) * np);
        node.b_in.resize(static_cast<size_t>(node.hidden));
        node.w_out.resize(static_cast<size_t>(node.hidden));
        const double in_scale = 1.5 / std::sqrt(static_cast<double>(np));
        const double out_scale = 1.0 / std::sqrt(static_cast<double>(node.hidden));
        for (auto& w : node.w_in) w = rng.normal(0.0, in_scale);
        for (auto& b : node.b_in) b = rng.normal(0.0, 0.5);
        for (auto& w : node.w_out) w = rng.normal(0.0, out_scale);
    }
    return scm;
}

Tensor sample_scm_covariates(const Scm& scm, int n_rows, int n_cols, uint64_t seed) {
    if (n_rows < 1) throw ConfigError("prior: covariate sample needs n_rows >= 1");
    if (n_cols < 1) throw ConfigError("prior: covariate sample needs n_cols >= 1");
    Rng base(Rng::splitmix(seed ^ 0xc04a81a7e5eedULL));
    const int n_nodes = scm.n_nodes();
    const int c = std::min(n_cols, n_nodes);

    for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
        Rng rng = base.child(static_cast<uint64_t>(attempt));
        const auto cols = sample_columns(scm, n_rows, rng);
        std::vector<int> order = rng.permutation(n_nodes);

        Tensor x({n_rows, c});
        bool finite = true;
        for (int j = 0; j < c && finite; ++j) {
            const auto& col = cols[static_cast<size_t>(order[static_cast<size_t>(j)])];
            for (int i = 0; i < n_rows; ++i) {
                x.at(i, j) = col[static_cast<size_t>(i)];
                finite = finite && std::isfinite(x.at(i, j));
            }
        }
        if (finite) return x;
    }
    throw RuntimeFailure("degenerate-prior: non-finite covariate draw after " +
                         std::to_string(kMaxRetries) + " retries (scm seed " +
                         std::to_string(scm.seed) + ")");
}

SyntheticTask materialize_task(const Scm& scm, const PriorConfig& config, uint64_t seed) {
    Rng base(Rng::splitmix(seed ^ 0x7a51c0debeefULL));
    const bool classify = base.bernoulli(config.task_mix_classification);

    for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
        Rng rng = base.child(static_cast<uint64_t>(attempt));
        const int n = static_cast<int>(rng.uniform_int(kMinRows, config.max_rows));
        const auto cols = sample_columns(scm, n, rng);

        const int n_nodes = scm.n_nodes();
        const int max_feats = std::min(config.max_features, std::max(1, n_nodes - 1));
        const int c = static_cast<int>(rng.uniform_int(1, max_feats));
        std::vector<int> order = rng.permutation(n_nodes);
        const int target_node = order[0];
        std::vector<int> feature_nodes(order.begin() + 1, order.begin() + 1 + c);

        const std::vector<double>& target_col = cols[static_cast<size_t>(target_node)];
        double sd = sample_std(target_col);
        bool finite = true;
        for (double v : target_col) finite = finite && std::isfinite(v);
        if (!finite || sd < 1e-9) continue;  // degenerate draw, retry

        SyntheticTask task;
        task.seed = seed;
        task.x = Tensor({n, c});
        task.missing.assign(static_cast<size_t>(n) * c, 0);
        for (int j = 0; j < c; ++j) {
            const auto& col = cols[static_cast<size_t>(feature_nodes[static_cast<size_t>(j)])];
            for (int i = 0; i < n; ++i) task.x.at(i, j) = col[static_cast<size_t>(i)];
        }

        if (classify) {
            task.kind = TaskKind::classification;
            task.n_classes = static_cast<int>(rng.uniform_int(2, config.max_classes));
            const std::vector<int> labels = rank_bin(target_col, task.n_classes, rng);
            task.y.assign(labels.begin(), labels.end());
        } else {
            task.kind = TaskKind::regression;
            task.y = target_col;
        }
        return task;
    }
    throw RuntimeFailure("degenerate-prior: constant target after " +
                         std::to_string(kMaxRetries) + " retries (scm seed " +
                         std::to_string(scm.seed) + ")");
}

SyntheticTask apply_corruptions(const SyntheticTask& task, const PriorConfig& config,
                                uint64_t seed) {
    SyntheticTask out = task;
    const int n = task.n_rows();
    const int c = task.n_cols();
    Rng rng(Rng::splitmix(seed ^ 0xc044a7edULL));

    if (config.corruption_missing > 0.0) {
        for (size_t i = 0; i < out.missing.size(); ++i) {
            if (rng.bernoulli(config.corruption_missing)) out.missing[i] = 1;
        }
    }
    if (config.corruption_outlier > 0.0) {
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < c; ++j) {
                if (rng.bernoulli(config.corruption_outlier)) {
                    out.x.at(i, j) *= std::exp(2.0 * std::abs(rng.normal()));
                }
            }
        }
    }
    if (config.corruption_categorize > 0.0) {
        for (int j = 0; j < c; ++j) {
            if (!rng.bernoulli(config.corruption_categorize)) continue;
            const int levels = static_cast<int>(rng.uniform_int(2, 6));
            std::vector<double> col(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) col[static_cast<size_t>(i)] = out.x.at(i, j);
            const std::vector<int> codes = rank_bin(col, levels, rng);
            for (int i = 0; i < n; ++i) out.x.at(i, j) = static_cast<double>(codes[static_cast<size_t>(i)]);
        }
    }
    return out;
}

SyntheticTask make_prior_task(const PriorConfig& config, uint64_t master_seed, uint64_t index) {
    // Disjoint child streams per task index; tasks are independent and can
    // be produced by parallel workers.
    const Rng keyed(master_seed);
    Rng stream = keyed.child(index);
    const uint64_t scm_seed = stream.next_u64();
    const uint64_t mat_seed = stream.next_u64();
    const uint64_t corr_seed = stream.next_u64();

    const Scm scm = sample_scm(config, scm_seed);
    SyntheticTask task = materialize_task(scm, config, mat_seed);
    task = apply_corruptions(task, config, corr_seed);
    task.seed = index;
    return task;
}

Dataset task_to_dataset(const SyntheticTask& task) {
    Dataset data;
    data.x = task.x;
    data.missing = task.missing;
    data.schema.resize(static_cast<size_t>(task.n_cols()));
    for (int j = 0; j < task.n_cols(); ++j) {
        data.schema[static_cast<size_t>(j)].name = "f" + std::to_string(j);
        data.schema[static_cast<size_t>(j)].kind = ColumnKind::numeric;
    }
    data.has_target = true;
    data.y = task.y;
    if (task.kind == TaskKind::classification) {
        data.target_kind = TaskKind::classification;
        for (int k = 0; k < task.n_classes; ++k) data.target_categories.push_back(std::to_string(k));
    } else {
        data.target_kind = TaskKind::regression;
    }
    data.target_name = "y";
    return data;
}

void save_task(const SyntheticTask& task, const std::string& path) {
    CheckpointContainer box;
    box.set_header("object", "synthetic_task");
    box.set_header("kind", task.kind == TaskKind::classification ? "classification" : "regression");
    box.set_header("n_classes", std::to_string(task.n_classes));
    box.set_header("seed", std::to_string(task.seed));
    box.set_tensor("x", task.x);
    Tensor miss({task.n_rows(), task.n_cols()});
    for (size_t i = 0; i < miss.numel(); ++i) miss[i] = task.missing[i] ? 1.0 : 0.0;
    box.set_tensor("missing", miss);
    Tensor y({task.n_rows()});
    for (int i = 0; i < task.n_rows(); ++i) y[static_cast<size_t>(i)] = task.y[static_cast<size_t>(i)];
    box.set_tensor("y", y);
    save_checkpoint(box, path);
}

SyntheticTask load_task(const std::string& path) {
    const CheckpointContainer box = load_checkpoint(path);
    if (box.header_or("object", "") != "synthetic_task") {
        throw DataError("not a task file: " + path);
    }
    SyntheticTask task;
    task.kind = box.header_value("kind") == "classification" ? TaskKind::classification
                                                             : TaskKind::regression;
    task.n_classes = std::stoi(box.header_value("n_classes"));
    task.seed = std::stoull(box.header_value("seed"));
    task.x = box.tensor("x");
    const Tensor& miss = box.tensor("missing");
    task.missing.resize(miss.numel());
    for (size_t i = 0; i < miss.numel(); ++i) task.missing[i] = miss[i] != 0.0 ? 1 : 0;
    const Tensor& y = box.tensor("y");
    task.y.assign(y.data(), y.data() + y.numel());
    return task;
}

}  // namespace picotab
