#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "picotab/errors.hpp"
#include "picotab/model.hpp"
#include "picotab/prior.hpp"

namespace picotab {

struct TrainConfig {
    int steps = 200;
    int batch_tasks = 4;
    double lr = 3e-4;
    int warmup = 20;
    double grad_clip = 1.0;
    double lr_floor_frac = 0.1;  // cosine decays to lr * this
    double ctx_frac_min = 0.3;   // per-task context fraction range
    double ctx_frac_max = 0.8;
    int checkpoint_every = 0;         // steps between snapshots; 0 = final only
    std::string checkpoint_dir;      // empty = keep everything in memory
    uint64_t seed = 0;
    int workers = 1;

    void validate() const;  // throws ConfigError
};

struct StepStat {
    int step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double grad_norm = 0.0;
};

struct PretrainResult {
    Model model;
    std::vector<StepStat> stats;  // one entry per step executed in this call
    int start_step = 0;           // first step this call ran (>0 after resume)
};

// Raised when a step produces a non-finite loss or gradient. Carries the most
// recent healthy snapshot so callers can restart from it.
class TrainingDiverged : public RuntimeFailure {
  public:
    TrainingDiverged(const std::string& what, CheckpointContainer last_good_state)
        : RuntimeFailure(what), last_good(std::move(last_good_state)) {}
    CheckpointContainer last_good;
};

// One prior task split into a training-objective pair: context rows (with
// targets visible to the model) and query rows (targets become the labels of
// the cross-entropy loss). Canonical preprocessing is robust-scale +
// soft-clip fitted on the context rows only.
struct SplitTask {
    TaskContext ctx;
    TaskQueries queries;
    std::vector<int> targets;  // class ids, or bin ids for regression
};

SplitTask assemble_prior_task(const SyntheticTask& task, const ModelConfig& config,
                              double ctx_frac_min, double ctx_frac_max, uint64_t seed);

// Pure schedule: linear warmup then cosine decay to lr * lr_floor_frac.
double learning_rate_at(const TrainConfig& config, int step);

// Runs (or resumes) prior-fitting. If checkpoint_dir holds a train_state file
// the run continues from its recorded step; snapshots round parameters and
// optimizer state to f32 so a resumed run replays the exact same trajectory.
PretrainResult pretrain(const ModelConfig& model_config, const PriorConfig& prior_config,
                        const TrainConfig& train_config);

}  // namespace picotab
