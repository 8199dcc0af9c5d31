#pragma once

#include <cstdint>
#include <vector>

#include "picotab/checkpoint.hpp"
#include "picotab/dataset.hpp"
#include "picotab/rng.hpp"
#include "picotab/tensor.hpp"

namespace picotab {

// Knobs of the synthetic task distribution used for pretraining.
struct PriorConfig {
    int max_rows = 64;
    int max_features = 6;
    int max_classes = 4;
    int dag_nodes_min = 4;
    int dag_nodes_max = 12;
    double edge_density = 0.3;
    double noise_scale_min = 0.02;
    double noise_scale_max = 0.3;
    double task_mix_classification = 0.7;
    double task_mix_regression = 0.3;
    double corruption_missing = 0.02;
    double corruption_outlier = 0.01;
    double corruption_categorize = 0.05;

    void validate() const;  // throws ConfigError on bad ranges
};

// Random structural causal model: a DAG over nodes 0..n-1 (edges only from
// lower to higher index) where each non-root node is a small random
// 1-hidden-layer function of its parents plus Gaussian noise.
struct Scm {
    enum class Activation { tanh_like, monotone, step };

    struct Node {
        std::vector<int> parents;
        Activation activation = Activation::tanh_like;
        int step_levels = 4;         // step activation only
        int hidden = 4;
        std::vector<double> w_in;    // [hidden * parents]
        std::vector<double> b_in;    // [hidden]
        std::vector<double> w_out;   // [hidden]
        double noise_scale = 0.1;
        double root_scale = 1.0;     // root nodes draw noise at this scale
    };

    std::vector<Node> nodes;
    uint64_t seed = 0;

    int n_nodes() const { return static_cast<int>(nodes.size()); }
    int n_edges() const;
    bool operator==(const Scm& other) const;
};

struct SyntheticTask {
    Tensor x;                      // [n, c]
    std::vector<uint8_t> missing;  // n * c
    std::vector<double> y;
    TaskKind kind = TaskKind::classification;
    int n_classes = 0;  // classification only
    uint64_t seed = 0;

    int n_rows() const { return x.dim(0); }
    int n_cols() const { return x.dim(1); }
};

Scm sample_scm(const PriorConfig& config, uint64_t seed);

// Covariate block for downstream synthetic tasks: one ancestral SCM sample,
// a seeded node subset as columns (at most n_nodes of them). Retries a few
// times if a draw comes out non-finite.
Tensor sample_scm_covariates(const Scm& scm, int n_rows, int n_cols, uint64_t seed);

// Ancestral sampling plus feature/target selection. Throws RuntimeFailure
// ("degenerate-prior") if 10 attempts in a row produce a constant target.
SyntheticTask materialize_task(const Scm& scm, const PriorConfig& config, uint64_t seed);

SyntheticTask apply_corruptions(const SyntheticTask& task, const PriorConfig& config,
                                uint64_t seed);

// Full pipeline for task #index of the stream keyed by master_seed. Streams
// for different indices are disjoint, so tasks can be generated in parallel.
SyntheticTask make_prior_task(const PriorConfig& config, uint64_t master_seed, uint64_t index);

// All-numeric Dataset view of a task (for the estimator-facing API).
Dataset task_to_dataset(const SyntheticTask& task);

// One task per file in the checkpoint container format.
void save_task(const SyntheticTask& task, const std::string& path);
SyntheticTask load_task(const std::string& path);

}  // namespace picotab
