#include "picotab/causal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "picotab/errors.hpp"
#include "picotab/mathx.hpp"
#include "picotab/rng.hpp"

namespace picotab {
namespace {

constexpr uint64_t kCausalSalt = 0xca05a11feed5eedULL;
constexpr double kPropensityLo = 0.01;
constexpr double kPropensityHi = 0.99;

std::vector<int> arm_rows(const CausalDataset& data, int arm) {
    std::vector<int> rows;
    for (int i = 0; i < data.n_rows(); ++i) {
        if (data.t[static_cast<size_t>(i)] == arm) rows.push_back(i);
    }
    return rows;
}

void require_learner_arms(const CausalDataset& data) {
    data.validate();
    int treated = 0;
    for (int v : data.t) treated += v;
    if (treated < 2 || data.n_rows() - treated < 2) {
        throw DataError("causal: degenerate-arm (each treatment arm needs >= 2 rows)");
    }
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
    const int c = x.dim(1);
    Tensor out({static_cast<int>(rows.size()), c});
    for (size_t i = 0; i < rows.size(); ++i) {
        for (int j = 0; j < c; ++j) out.at(static_cast<int>(i), j) = x.at(rows[i], j);
    }
    return out;
}

std::vector<double> gather(const std::vector<double>& v, const std::vector<int>& rows) {
    std::vector<double> out(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) out[i] = v[static_cast<size_t>(rows[i])];
    return out;
}

std::vector<double> run_base(const BaseFitPredict& base, const Tensor& x_train,
                             const std::vector<double>& y_train, const Tensor& x_eval,
                             const char* stage) {
    if (!base) throw ConfigError("causal: base model is empty");
    std::vector<double> pred = base(x_train, y_train, x_eval);
    if (static_cast<int>(pred.size()) != x_eval.dim(0)) {
        throw DataError(std::string("causal: base model returned ") +
                        std::to_string(pred.size()) + " predictions for " +
                        std::to_string(x_eval.dim(0)) + " rows (" + stage + ")");
    }
    for (double p : pred) {
        if (!std::isfinite(p)) {
            throw RuntimeFailure(std::string("causal: non-finite base prediction (") + stage +
                                 ")");
        }
    }
    return pred;
}

OutcomeHead random_head(Rng rng, const std::vector<double>& mean, const std::vector<double>& std,
                        int hidden) {
    const int c = static_cast<int>(mean.size());
    OutcomeHead head;
    head.mean = mean;
    head.std = std;
    head.hidden = hidden;
    head.w_in.resize(static_cast<size_t>(hidden) * c);
    head.b_in.resize(static_cast<size_t>(hidden));
    head.w_out.resize(static_cast<size_t>(hidden));
    const double in_scale = 1.0 / std::sqrt(static_cast<double>(c));
    const double out_scale = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (auto& w : head.w_in) w = rng.normal(0.0, in_scale);
    for (auto& b : head.b_in) b = rng.normal(0.0, 0.5);
    for (auto& w : head.w_out) w = rng.normal(0.0, out_scale);
    head.b_out = rng.normal(0.0, 0.3);
    return head;
}

// mu1 shares mu0's units and adds a low-amplitude block, so the treatment
// effect mu1 - mu0 is smoother and smaller than either outcome surface.
OutcomeHead extend_head(const OutcomeHead& base, Rng rng, int extra, double amp) {
    OutcomeHead head = base;
    const int c = static_cast<int>(base.mean.size());
    head.hidden = base.hidden + extra;
    const double in_scale = 1.0 / std::sqrt(static_cast<double>(c));
    const double out_scale = amp / std::sqrt(static_cast<double>(extra));
    for (int h = 0; h < extra; ++h) {
        for (int j = 0; j < c; ++j) head.w_in.push_back(rng.normal(0.0, in_scale));
        head.b_in.push_back(rng.normal(0.0, 0.5));
        head.w_out.push_back(rng.normal(0.0, out_scale));
    }
    head.b_out = base.b_out + rng.normal(0.0, 0.2 * amp);
    return head;
}

}  // namespace

void CausalDataset::validate() const {
    const int n = n_rows();
    if (n < 2) throw DataError("causal: dataset needs at least 2 rows");
    if (x.rank() != 2) throw DataError("causal: covariates must be a [n, c] matrix");
    if (static_cast<int>(t.size()) != n || static_cast<int>(y.size()) != n) {
        throw DataError("causal: treatment/outcome length does not match covariate rows");
    }
    if (!true_cate.empty() && static_cast<int>(true_cate.size()) != n) {
        throw DataError("causal: true_cate length does not match covariate rows");
    }
    int treated = 0;
    for (int v : t) {
        if (v != 0 && v != 1) throw DataError("causal: treatment must be binary 0/1");
        treated += v;
    }
    if (treated == 0 || treated == n) {
        throw DataError("causal: degenerate-arm (all rows in one treatment arm)");
    }
}

std::vector<double> t_learner(const CausalDataset& data, const BaseFitPredict& base) {
    require_learner_arms(data);
    const auto rows0 = arm_rows(data, 0);
    const auto rows1 = arm_rows(data, 1);
    const auto mu0 =
        run_base(base, gather_rows(data.x, rows0), gather(data.y, rows0), data.x, "t-learner mu0");
    const auto mu1 =
        run_base(base, gather_rows(data.x, rows1), gather(data.y, rows1), data.x, "t-learner mu1");
    std::vector<double> cate(mu0.size());
    for (size_t i = 0; i < cate.size(); ++i) cate[i] = mu1[i] - mu0[i];
    return cate;
}

std::vector<double> s_learner(const CausalDataset& data, const BaseFitPredict& base) {
    require_learner_arms(data);
    const int n = data.n_rows();
    const int c = data.n_cols();
    Tensor xt({n, c + 1});
    Tensor eval({2 * n, c + 1});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < c; ++j) {
            xt.at(i, j) = data.x.at(i, j);
            eval.at(i, j) = data.x.at(i, j);
            eval.at(n + i, j) = data.x.at(i, j);
        }
        xt.at(i, c) = static_cast<double>(data.t[static_cast<size_t>(i)]);
        eval.at(i, c) = 1.0;      // first block: everyone treated
        eval.at(n + i, c) = 0.0;  // second block: everyone control
    }
    const auto f = run_base(base, xt, data.y, eval, "s-learner");
    std::vector<double> cate(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        cate[static_cast<size_t>(i)] = f[static_cast<size_t>(i)] - f[static_cast<size_t>(n + i)];
    }
    return cate;
}

XLearnerResult x_learner(const CausalDataset& data, const BaseFitPredict& base,
                         const BaseFitPredict& propensity_base) {
    require_learner_arms(data);
    const int n = data.n_rows();
    const auto rows0 = arm_rows(data, 0);
    const auto rows1 = arm_rows(data, 1);
    const Tensor x0 = gather_rows(data.x, rows0);
    const Tensor x1 = gather_rows(data.x, rows1);
    const auto y0 = gather(data.y, rows0);
    const auto y1 = gather(data.y, rows1);

    // stage 1: per-arm outcome models, evaluated on the opposite arm
    const auto mu0_on_treated = run_base(base, x0, y0, x1, "x-learner mu0");
    const auto mu1_on_control = run_base(base, x1, y1, x0, "x-learner mu1");

    // stage 2: imputed individual effects, regressed back on covariates
    std::vector<double> d1(rows1.size());
    for (size_t i = 0; i < rows1.size(); ++i) d1[i] = y1[i] - mu0_on_treated[i];
    std::vector<double> d0(rows0.size());
    for (size_t i = 0; i < rows0.size(); ++i) d0[i] = mu1_on_control[i] - y0[i];
    const auto tau1 = run_base(base, x1, d1, data.x, "x-learner tau1");
    const auto tau0 = run_base(base, x0, d0, data.x, "x-learner tau0");

    // stage 3: propensity blend
    std::vector<double> t_real(data.t.begin(), data.t.end());
    auto g = run_base(propensity_base, data.x, t_real, data.x, "x-learner propensity");
    XLearnerResult result;
    for (double& gi : g) {
        if (gi <= 0.0 || gi >= 1.0) result.propensity_clamped = true;
        gi = std::clamp(gi, kPropensityLo, kPropensityHi);
    }
    result.cate.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const size_t s = static_cast<size_t>(i);
        result.cate[s] = g[s] * tau0[s] + (1.0 - g[s]) * tau1[s];
    }
    return result;
}

double pehe(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.empty()) throw DataError("causal: pehe over empty vectors");
    if (pred.size() != truth.size()) {
        throw DataError("causal: pehe length mismatch (" + std::to_string(pred.size()) + " vs " +
                        std::to_string(truth.size()) + ")");
    }
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(pred.size()));
}

BaseFitPredict constant_base() {
    return [](const Tensor& x_train, const std::vector<double>& y_train, const Tensor& x_eval) {
        (void)x_train;
        if (y_train.empty()) throw DataError("causal: constant base got an empty training set");
        return std::vector<double>(static_cast<size_t>(x_eval.dim(0)), mean(y_train));
    };
}

BaseFitPredict knn_base(int k) {
    if (k < 1) throw ConfigError("causal: knn base needs k >= 1");
    return [k](const Tensor& x_train, const std::vector<double>& y_train, const Tensor& x_eval) {
        const int n = x_train.dim(0);
        const int c = x_train.dim(1);
        if (n < 1) throw DataError("causal: knn base got an empty training set");
        if (x_eval.dim(1) != c) throw DataError("causal: base model column mismatch");
        const int kk = std::min(k, n);
        std::vector<std::pair<double, int>> dist(static_cast<size_t>(n));
        std::vector<double> out(static_cast<size_t>(x_eval.dim(0)));
        for (int i = 0; i < x_eval.dim(0); ++i) {
            for (int r = 0; r < n; ++r) {
                double s = 0.0;
                for (int j = 0; j < c; ++j) {
                    const double d = x_eval.at(i, j) - x_train.at(r, j);
                    s += d * d;
                }
                dist[static_cast<size_t>(r)] = {s, r};
            }
            std::partial_sort(dist.begin(), dist.begin() + kk, dist.end());
            double acc = 0.0;
            for (int r = 0; r < kk; ++r) acc += y_train[static_cast<size_t>(dist[r].second)];
            out[static_cast<size_t>(i)] = acc / kk;
        }
        return out;
    };
}

double OutcomeHead::operator()(const double* x, int c) const {
    if (static_cast<int>(mean.size()) != c) {
        throw DataError("causal: outcome head width mismatch");
    }
    double out = b_out;
    for (int h = 0; h < hidden; ++h) {
        double pre = b_in[static_cast<size_t>(h)];
        for (int j = 0; j < c; ++j) {
            const double sd = std[static_cast<size_t>(j)];
            const double z = sd > 0.0 ? (x[j] - mean[static_cast<size_t>(j)]) / sd : 0.0;
            pre += w_in[static_cast<size_t>(h) * c + j] * z;
        }
        out += w_out[static_cast<size_t>(h)] * std::tanh(pre);
    }
    return out;
}

void ConfoundedTaskConfig::validate() const {
    if (n_rows < 4) throw ConfigError("causal: confounded task needs n_rows >= 4");
    if (n_covariates < 1) throw ConfigError("causal: confounded task needs n_covariates >= 1");
    if (confounding_strength < 0.0) throw ConfigError("causal: confounding_strength must be >= 0");
    if (noise0 < 0.0 || noise1 < 0.0) throw ConfigError("causal: noise scales must be >= 0");
}

ConfoundedTask make_confounded_task(const Scm& scm, const ConfoundedTaskConfig& config) {
    config.validate();
    const Rng root(Rng::splitmix(config.seed ^ kCausalSalt));
    const Tensor x =
        sample_scm_covariates(scm, config.n_rows, config.n_covariates, config.seed ^ kCausalSalt);
    const int n = x.dim(0);
    const int c = x.dim(1);

    std::vector<double> col_mean(static_cast<size_t>(c)), col_std(static_cast<size_t>(c));
    std::vector<double> col(static_cast<size_t>(n));
    for (int j = 0; j < c; ++j) {
        for (int i = 0; i < n; ++i) col[static_cast<size_t>(i)] = x.at(i, j);
        col_mean[static_cast<size_t>(j)] = mean(col);
        const double sd = sample_std(col);
        col_std[static_cast<size_t>(j)] = sd > 1e-12 ? sd : 0.0;
    }

    ConfoundedTask task;
    Rng wrng = root.child(1);
    task.logit_weights.resize(static_cast<size_t>(c));
    double norm = 0.0;
    for (auto& w : task.logit_weights) {
        w = wrng.normal();
        norm += w * w;
    }
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
        std::fill(task.logit_weights.begin(), task.logit_weights.end(), 0.0);
        task.logit_weights[0] = 1.0;
    } else {
        for (auto& w : task.logit_weights) w /= norm;
    }
    task.mu0 = random_head(root.child(2), col_mean, col_std, 8);
    task.mu1 = extend_head(task.mu0, root.child(3), 8, 0.5);

    // treatment: logistic in the standardized covariates; one bernoulli draw
    // per row no matter the strength, so sweeps share the noise stream
    task.propensity.resize(static_cast<size_t>(n));
    std::vector<int> t(static_cast<size_t>(n));
    Rng trng = root.child(4);
    std::vector<double> row(static_cast<size_t>(c));
    for (int i = 0; i < n; ++i) {
        double score = config.propensity_intercept;
        for (int j = 0; j < c; ++j) {
            const double sd = col_std[static_cast<size_t>(j)];
            const double z = sd > 0.0 ? (x.at(i, j) - col_mean[static_cast<size_t>(j)]) / sd : 0.0;
            score += config.confounding_strength * task.logit_weights[static_cast<size_t>(j)] * z;
        }
        const double p = 1.0 / (1.0 + std::exp(-score));
        task.propensity[static_cast<size_t>(i)] = p;
        t[static_cast<size_t>(i)] = trng.bernoulli(p) ? 1 : 0;
    }
    const int treated = std::accumulate(t.begin(), t.end(), 0);
    if (treated == 0) {
        const auto it = std::max_element(task.propensity.begin(), task.propensity.end());
        t[static_cast<size_t>(it - task.propensity.begin())] = 1;
    } else if (treated == n) {
        const auto it = std::min_element(task.propensity.begin(), task.propensity.end());
        t[static_cast<size_t>(it - task.propensity.begin())] = 0;
    }

    Rng yrng = root.child(5);
    std::vector<double> y(static_cast<size_t>(n)), cate(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < c; ++j) row[static_cast<size_t>(j)] = x.at(i, j);
        const double m0 = task.mu0(row.data(), c);
        const double m1 = task.mu1(row.data(), c);
        cate[static_cast<size_t>(i)] = m1 - m0;
        const double eps = yrng.normal();  // consumed for every row
        const bool is_treated = t[static_cast<size_t>(i)] == 1;
        y[static_cast<size_t>(i)] =
            (is_treated ? m1 : m0) + (is_treated ? config.noise1 : config.noise0) * eps;
    }

    task.data.x = x;
    task.data.t = std::move(t);
    task.data.y = std::move(y);
    task.data.true_cate = std::move(cate);
    task.data.validate();
    return task;
}

}  // namespace picotab
