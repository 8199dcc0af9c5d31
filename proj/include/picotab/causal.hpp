#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "picotab/engine.hpp"
#include "picotab/prior.hpp"

namespace picotab {

// Observational dataset; the binary treatment lives next to x, not inside it.
struct CausalDataset {
    Tensor x;                       // [n, c] covariates
    std::vector<int> t;             // 0 = control, 1 = treated
    std::vector<double> y;          // observed outcome
    std::vector<double> true_cate;  // synthetic tasks only, else empty

    int n_rows() const { return x.rank() > 0 ? x.dim(0) : 0; }
    int n_cols() const { return x.rank() > 1 ? x.dim(1) : 0; }
    void validate() const;  // sizes agree, t binary, both arms nonempty
};

// Base predictor: fit on (x_train, y_train), predict for every x_eval row.
// Binary-outcome bases must return the probability of y = 1.
using BaseFitPredict = FitPredictFn;

// tau(x) = mu1(x) - mu0(x) with one base model per arm.
std::vector<double> t_learner(const CausalDataset& data, const BaseFitPredict& base);

// One base model over [x, t]; tau(x) = f(x, 1) - f(x, 0).
std::vector<double> s_learner(const CausalDataset& data, const BaseFitPredict& base);

struct XLearnerResult {
    std::vector<double> cate;
    // a raw propensity estimate fell outside (0, 1) and was clamped
    bool propensity_clamped = false;
};

// Kunzel-style construction: per-arm imputed effects regressed on x, blended
// by the estimated propensity g(x) as g * tau0 + (1 - g) * tau1. Propensities
// are clamped to [0.01, 0.99]; the result notes whether clamping fired.
XLearnerResult x_learner(const CausalDataset& data, const BaseFitPredict& base,
                         const BaseFitPredict& propensity_base);

// sqrt(mean((pred - truth)^2)); throws DataError on size mismatch or empty.
double pehe(const std::vector<double>& pred, const std::vector<double>& truth);

// --- base-model adapters -------------------------------------------------

// Training-mean everywhere; the T-learner over it is the constant-ATE
// baseline.
BaseFitPredict constant_base();

// Mean outcome of the k nearest training rows (Euclidean, ties broken toward
// the lower row index).
BaseFitPredict knn_base(int k = 1);

// In-context engine as the base model. kind picks the head: regression bases
// return point predictions, classification bases the probability of class
// "1" (training labels must be 0/1).
inline BaseFitPredict engine_base(std::shared_ptr<const Model> net, FitOptions options,
                                  TaskKind kind) {
    return engine_fit_predict(std::move(net), std::move(options), kind);
}

// --- synthetic confounded generator ----------------------------------------

// One-hidden-layer tanh surface over z-scored covariates, stored with the
// task so true effects stay recomputable.
struct OutcomeHead {
    std::vector<double> mean, std;  // covariate z-scoring, size c (std 0 => drop)
    int hidden = 0;
    std::vector<double> w_in;   // [hidden * c]
    std::vector<double> b_in;   // [hidden]
    std::vector<double> w_out;  // [hidden]
    double b_out = 0.0;

    double operator()(const double* x, int c) const;
};

struct ConfoundedTaskConfig {
    int n_rows = 200;
    int n_covariates = 4;
    double confounding_strength = 1.0;  // scales the covariate term of the logit
    double propensity_intercept = 0.0;  // shifts the marginal treated fraction
    double noise0 = 0.1;                // outcome noise by arm
    double noise1 = 0.1;
    uint64_t seed = 0;

    void validate() const;  // throws ConfigError
};

struct ConfoundedTask {
    CausalDataset data;  // true_cate filled in, noise-free
    // mu1 extends mu0 with a low-amplitude unit block: effects are smoother
    // and smaller than the outcome surfaces, as in typical applications
    OutcomeHead mu0, mu1;
    std::vector<double> propensity;     // per-row P(t=1 | x) used to assign
    std::vector<double> logit_weights;  // unit vector over z-scored covariates
};

// Covariates drawn from the SCM, treatment by a logistic function of them
// (all confounding observable), outcomes from the stored heads plus per-arm
// Gaussian noise. Both arms are guaranteed nonempty. The treatment and noise
// streams do not depend on confounding_strength, so sweeps over it reuse the
// same randomness.
ConfoundedTask make_confounded_task(const Scm& scm, const ConfoundedTaskConfig& config);

}  // namespace picotab
