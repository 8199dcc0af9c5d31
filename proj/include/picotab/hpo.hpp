#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "picotab/config_file.hpp"
#include "picotab/engine.hpp"

namespace picotab {

struct HpoDimension {
    enum class Kind { real, integer, categorical };

    std::string name;
    Kind kind = Kind::real;
    double lo = 0.0, hi = 1.0;         // real / integer bounds, inclusive
    bool log_scale = false;            // real only
    std::vector<std::string> choices;  // categorical only

    int encoded_width() const;  // 1, or one-hot width for categoricals
};

struct HpoSpace {
    std::vector<HpoDimension> dims;

    int n_dims() const { return static_cast<int>(dims.size()); }
    int encoded_width() const;
    void validate() const;  // throws ConfigError

    // raw point: one entry per dim (real value, integer value, choice index)
    bool contains(const std::vector<double>& point) const;
    std::vector<double> encode(const std::vector<double>& point) const;  // one-hot
};

// Space file in the cli config format:
//   dim.0.name = lr
//   dim.0.kind = real        (real | int | categorical)
//   dim.0.lo = 1e-4
//   dim.0.hi = 1e-1
//   dim.0.log = true
//   dim.1.name = act
//   dim.1.kind = categorical
//   dim.1.choices = relu,gelu,tanh
HpoSpace parse_space(const ConfigMap& config);
HpoSpace load_space(const std::string& path);

struct HpoObservation {
    std::vector<double> point;          // raw per-dimension values
    std::vector<double> config_vector;  // one-hot encoding fed to the surrogate
    double score = 0.0;                 // higher is better
    bool failed = false;                // objective threw; score = worst success
};

using HpoObjective = std::function<double(const std::vector<double>& point)>;

// Latin hypercube latents in [0, 1): each dimension has exactly one sample
// per stratum [j/n, (j+1)/n).
Tensor lhs_sample(int n, int dims, uint64_t seed);

// Maps LHS latents through the space and runs the objective on each config.
// Throwing evaluations are kept as flagged worst-score observations; if every
// evaluation throws, signals objective-broken.
std::vector<HpoObservation> evaluate_seed_grid(const HpoSpace& space, int n_seed,
                                               const HpoObjective& objective, uint64_t seed);

using SurrogateFitPredict = FitPredictFn;

struct HpoRanking {
    std::vector<std::vector<double>> configs;  // raw points, best predicted first
    std::vector<double> predicted;             // surrogate scores, same order
    bool constant_scores = false;  // observations carried no signal; random pick
};

// Fits the surrogate on the observations, scores n_candidates fresh LHS
// configs, returns the top_m by predicted score (ties broken by a hash of the
// encoded config, so the order is deterministic).
HpoRanking surrogate_rank(const HpoSpace& space, const std::vector<HpoObservation>& observations,
                          int n_candidates, int top_m, const SurrogateFitPredict& surrogate,
                          uint64_t seed);

}  // namespace picotab
