#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "picotab/autodiff.hpp"
#include "picotab/checkpoint.hpp"
#include "picotab/dataset.hpp"
#include "picotab/tensor.hpp"

namespace picotab {

// Desk-scale defaults. The paper-scale model is far larger: 18 layers for
// regression / 24 for classification, 64 thinking rows — kept in
// paper_scale() for reference, not for training here.
struct ModelConfig {
    int depth = 3;        // paper: 18 (regression) / 24 (classification)
    int dim = 64;
    int heads = 4;
    int group_size = 3;   // paper: 3
    int n_thinking = 8;   // paper: 64
    int max_classes = 4;
    int n_bins = 32;      // regression head resolution
    int feature_cap = 500;  // paper: 500
    int ffn_mult = 2;
    int encoder_hidden = 32;

    void validate() const;  // throws ConfigError
    int groups_for(int n_features) const {
        return (n_features + group_size - 1) / group_size;
    }
    int encoder_inputs() const { return 2 * group_size + 1; }  // values, flags, pad marker

    static ModelConfig paper_scale();
};

// Regression head support: K equal-probability bins of the standard normal
// in the z-space of the training target. Outer borders sit at the tail
// medians +-phi^-1(1 - 1/(2K)), which double as the tail centers.
struct BinSpec {
    std::vector<double> borders;  // K+1, strictly increasing, borders[0] = -borders[K]

    static BinSpec equal_probability(int k);

    int n_bins() const { return static_cast<int>(borders.size()) - 1; }
    int bin_of(double z) const;       // tails clamp to first/last bin
    double center(int bin) const;     // tail centers = outer borders
    double point_from(const double* probs) const;  // sum p * center
};

// bin index per z-scored target; throws DataError on non-finite input.
std::vector<int> bin_targets(const std::vector<double>& z, const BinSpec& spec);

class ParamStore {
  public:
    Tensor& add(const std::string& name, std::vector<int> shape);
    bool has(const std::string& name) const { return index_.count(name) > 0; }
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
    size_t total_params() const;

  private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::unordered_map<std::string, size_t> index_;
};

struct Model {
    ModelConfig config;
    ParamStore params;

    static Model init(const ModelConfig& config, uint64_t seed);
    CheckpointContainer to_checkpoint() const;
    static Model from_checkpoint(const CheckpointContainer& container);
};

// --- assembled task halves -------------------------------------------------

// Train-side tokens and target encoding for one estimator's view of a task.
struct TaskContext {
    int n_train = 0;
    int n_features = 0;
    int G = 0;
    Tensor enc_in;     // [n_train, G, 2g+1]
    Tensor group_pos;  // [G, dim], per-estimator random positional embeddings
    TaskKind kind = TaskKind::classification;
    int n_classes = 0;             // classification: observed class count
    std::vector<int> train_labels; // classification targets
    std::vector<double> train_z;   // regression targets, z-scored
    double y_mean = 0.0, y_std = 1.0;
    BinSpec bins;  // regression only
};

struct TaskQueries {
    int n_test = 0;
    Tensor enc_in;  // [n_test, G, 2g+1]
};

// Groups preprocessed features into encoder inputs. flags are per-cell
// missing indicators; the pad slot marks groups past the true column count.
Tensor make_encoder_input(const Tensor& values, const std::vector<uint8_t>& flags,
                          const ModelConfig& config);

TaskContext assemble_context(const Tensor& values, const std::vector<uint8_t>& flags,
                             const std::vector<double>& y, TaskKind kind, int n_classes,
                             const ModelConfig& config, uint64_t pos_seed);
TaskQueries assemble_queries(const Tensor& values, const std::vector<uint8_t>& flags,
                             const TaskContext& ctx, const ModelConfig& config);

// --- training path (tape) ---------------------------------------------------

// Parameters registered as graph leaves, addressable by name.
struct BoundParams {
    std::unordered_map<std::string, Var> vars;
    Var operator[](const std::string& name) const;
};

BoundParams bind_params(Graph& graph, const Model& model, bool needs_grad = true);

struct ForwardResult {
    Var loss;
    Var logits;
};

// Full training-path forward: grid assembly, depth dual-attention blocks,
// head, masked cross-entropy on the query targets.
ForwardResult forward_train(Graph& graph, const Model& model, const BoundParams& params,
                            const TaskContext& ctx, const TaskQueries& queries,
                            const std::vector<int>& targets);

// --- inference path (no tape, blocked attention, row-axis KV cache) ---------

struct ContextCache {
    int n_ctx_rows = 0;  // thinking + train
    int cols = 0;
    std::vector<Tensor> k;  // per layer, [cols, n_ctx_rows, dim]
    std::vector<Tensor> v;
};

ContextCache fit_context(const Model& model, const TaskContext& ctx);

// Probabilities over observed classes (classification) or bins (regression),
// [n_test, n_out]. Query rows are processed in blocks; each row's output is
// independent of the others by construction.
Tensor predict_probs(const Model& model, const TaskContext& ctx, const ContextCache& cache,
                     const TaskQueries& queries, int block_rows = 1024);

// Convenience: logits from the inference path (pre-softmax), same shape.
Tensor infer_logits(const Model& model, const TaskContext& ctx, const ContextCache& cache,
                    const TaskQueries& queries, int block_rows = 1024);

}  // namespace picotab
