#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "picotab/engine.hpp"
#include "picotab/errors.hpp"

namespace picotab {

// Teacher-labeled training material for a student: the original rows exactly
// once plus r_aug augmented copies per row, each cell resampled from a random
// other training row with probability 0.5 (marginal-preserving).
struct TransferSet {
    Dataset x;                       // features only, (1 + r_aug) * n rows
    Tensor soft_targets;             // [rows, n_out], teacher distributions
    std::vector<uint8_t> augmented;  // provenance per row: 0 original, 1 augmented

    // frozen context copied from the teacher so students need nothing else
    TaskKind kind = TaskKind::classification;
    int n_out = 0;
    std::vector<std::string> class_names;
    BinSpec bins;
    double y_mean = 0.0;
    double y_std = 1.0;
    FittedRecipe frozen;  // teacher recipe 0 statistics

    int n_rows() const { return x.n_rows(); }
};

TransferSet generate_transfer_set(const FittedModel& teacher, const Dataset& dataset, int r_aug,
                                  uint64_t seed);

struct DistillConfig {
    // mlp student: two hidden layers of `hidden` units, Adam on KL to the
    // teacher's soft targets, early stopping on a holdout slice
    int hidden = 256;
    int epochs = 60;
    int batch = 64;
    double lr = 1e-3;
    int patience = 8;
    double holdout_frac = 0.1;
    // tree student: one gradient-boosted series per class over log-probs
    int tree_rounds = 80;
    int tree_depth = 3;
    double tree_lr = 0.1;
    int min_leaf = 8;
    uint64_t seed = 0;

    void validate() const;  // throws ConfigError
};

enum class StudentKind { mlp, tree_ensemble };

// Axis-aligned regression tree stored as flat node arrays; feature < 0 marks
// a leaf. Split sends x[feature] < threshold to `left`.
struct RegressionTree {
    std::vector<int> feature;
    std::vector<double> threshold;
    std::vector<double> value;
    std::vector<int> left;
    std::vector<int> right;

    double operator()(const double* x) const;
};

struct StudentModel {
    StudentKind kind = StudentKind::mlp;
    TaskKind task = TaskKind::classification;
    int n_out = 0;
    std::vector<std::string> class_names;
    std::vector<ColumnSchema> schema;
    FittedRecipe frozen;  // teacher recipe 0 statistics
    BinSpec bins;         // regression decode
    double y_mean = 0.0;
    double y_std = 1.0;

    // mlp parameters (input = [values, missing flags])
    Tensor w1, b1, w2, b2, w3, b3;

    // tree ensemble: logits[c] = base_score[c] + tree_lr * sum_t trees[c][t](x)
    double tree_lr = 0.1;
    std::vector<double> base_score;
    std::vector<std::vector<RegressionTree>> trees;
};

// Thrown when student training hits a non-finite loss; `best` carries the
// best-so-far student (initial parameters if nothing improved).
struct DistillDiverged : RuntimeFailure {
    DistillDiverged(const std::string& what, StudentModel best_so_far)
        : RuntimeFailure(what), best(std::move(best_so_far)) {}
    StudentModel best;
};

StudentModel distill_mlp(const TransferSet& transfer, const DistillConfig& config);

// Classification only: boosted regression trees on per-class log-probs,
// softmax-renormalized at predict.
StudentModel distill_trees(const TransferSet& transfer, const DistillConfig& config);

// Frozen preprocessing + one student forward pass per row. Prediction cost
// does not depend on the teacher's training-set size.
std::vector<PredictiveDistribution> student_predict(const StudentModel& student,
                                                    const Dataset& data);

// Checkpoint container with object=student and a kind tag.
void save_student(const StudentModel& student, const std::string& path);
StudentModel load_student(const std::string& path);

}  // namespace picotab
