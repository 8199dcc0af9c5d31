#include "picotab/preproc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "picotab/errors.hpp"
#include "picotab/mathx.hpp"
#include "picotab/rng.hpp"

namespace picotab {

std::vector<EstimatorRecipe> build_ensemble_configs(int n_estimators, const EnsembleSpec& spec,
                                                    uint64_t master_seed) {
    if (n_estimators < 1) throw ConfigError("ensemble: n_estimators must be >= 1");
    if (spec.n_columns < 1) throw ConfigError("ensemble: dataset has no feature columns");

    static const NumericTransform kMenu[] = {
        NumericTransform::robust_softclip,
        NumericTransform::quantile,
        NumericTransform::standard,
        NumericTransform::robust_softclip_svd,
    };

    const Rng master(master_seed);
    const int subset_size = std::min(spec.n_columns, spec.feature_cap);
    std::vector<EstimatorRecipe> recipes(static_cast<size_t>(n_estimators));
    for (int e = 0; e < n_estimators; ++e) {
        EstimatorRecipe& r = recipes[static_cast<size_t>(e)];
        Rng rng = master.child(static_cast<uint64_t>(e));
        r.seed = rng.next_u64();
        r.numeric_transform = kMenu[e % 4];
        if (subset_size < spec.n_columns) {
            r.feature_subset = rng.sample_without_replacement(spec.n_columns, subset_size);
            std::sort(r.feature_subset.begin(), r.feature_subset.end());
        } else {
            r.feature_subset.resize(static_cast<size_t>(subset_size));
            std::iota(r.feature_subset.begin(), r.feature_subset.end(), 0);
        }
        r.feature_permutation = rng.permutation(subset_size);
        if (spec.n_classes > 0) r.class_label_permutation = rng.permutation(spec.n_classes);
        r.svd_k = r.numeric_transform == NumericTransform::robust_softclip_svd ? 8 : 0;
    }
    return recipes;
}

RobustScale fit_robust_scale(const std::vector<double>& observed) {
    if (observed.empty()) throw DataError("robust_scale: empty column");
    RobustScale fit;
    fit.center = median(observed);
    const double iqr = quantile_linear(observed, 0.75) - quantile_linear(observed, 0.25);
    if (iqr >= 1e-12) {
        fit.scale = iqr;
        return fit;
    }
    const double sd = observed.size() > 1 ? sample_std(observed) : 0.0;
    if (sd >= 1e-12) {
        fit.scale = sd;
        return fit;
    }
    fit.zeros = true;
    return fit;
}

std::vector<double> robust_scale(const std::vector<double>& column,
                                 const std::vector<uint8_t>& missing) {
    std::vector<double> observed;
    for (size_t i = 0; i < column.size(); ++i) {
        if (missing.empty() || !missing[i]) observed.push_back(column[i]);
    }
    const RobustScale fit = fit_robust_scale(observed);
    std::vector<double> out = column;
    for (size_t i = 0; i < out.size(); ++i) {
        if (missing.empty() || !missing[i]) out[i] = fit(out[i]);
    }
    return out;
}

QuantileTransform QuantileTransform::fit(const std::vector<double>& observed) {
    QuantileTransform qt;
    std::vector<double> sorted = observed;
    std::sort(sorted.begin(), sorted.end());
    qt.n_ = static_cast<int>(sorted.size());
    // unique values with mid-rank positions; ties share the average rank
    size_t i = 0;
    while (i < sorted.size()) {
        size_t j = i;
        while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
        qt.unique_.push_back(sorted[i]);
        const double mid_rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j));
        qt.cdf_.push_back((mid_rank + 0.5) / static_cast<double>(qt.n_));
        i = j + 1;
    }
    qt.degenerate_ = qt.unique_.size() < 2;
    if (!qt.degenerate_) {
        qt.p_lo_ = 0.5 / static_cast<double>(qt.n_);
        qt.p_hi_ = (static_cast<double>(qt.n_) - 0.5) / static_cast<double>(qt.n_);
    }
    return qt;
}

double QuantileTransform::operator()(double v) const {
    if (degenerate_) return 0.0;
    double p;
    if (v <= unique_.front()) {
        p = v < unique_.front() ? p_lo_ : cdf_.front();
    } else if (v >= unique_.back()) {
        p = v > unique_.back() ? p_hi_ : cdf_.back();
    } else {
        const auto it = std::upper_bound(unique_.begin(), unique_.end(), v);
        const size_t hi = static_cast<size_t>(it - unique_.begin());
        const size_t lo = hi - 1;
        const double t = (v - unique_[lo]) / (unique_[hi] - unique_[lo]);
        p = cdf_[lo] + t * (cdf_[hi] - cdf_[lo]);
    }
    p = std::min(std::max(p, p_lo_), p_hi_);
    return inv_normal_cdf(p);
}

std::vector<double> quantile_transform(const std::vector<double>& train_column,
                                       const std::vector<double>& test_column,
                                       bool* degenerate) {
    const QuantileTransform qt = QuantileTransform::fit(train_column);
    if (degenerate) *degenerate = qt.degenerate();
    std::vector<double> out(test_column.size());
    for (size_t i = 0; i < test_column.size(); ++i) out[i] = qt(test_column[i]);
    return out;
}

StandardScale fit_standard_scale(const std::vector<double>& observed) {
    if (observed.empty()) throw DataError("standard_scale: empty column");
    StandardScale fit;
    fit.mean = mean(observed);
    const double sd = observed.size() > 1 ? sample_std(observed) : 0.0;
    if (sd < 1e-12) {
        fit.zeros = true;
        return fit;
    }
    fit.stddev = sd;
    return fit;
}

SvdResult svd_features(const Tensor& x_std, int k) {
    const int n = x_std.dim(0);
    const int c = x_std.dim(1);
    if (k < 1 || k > std::min(n, c)) throw ConfigError("svd_features: k outside [1, min(n,c)]");

    // One-sided Jacobi: rotate column pairs of A until mutually orthogonal;
    // then A = U*S with S the column norms, and V collects the rotations.
    std::vector<std::vector<double>> a(static_cast<size_t>(c), std::vector<double>(static_cast<size_t>(n)));
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < n; ++i) a[static_cast<size_t>(j)][static_cast<size_t>(i)] = x_std.at(i, j);
    std::vector<std::vector<double>> v(static_cast<size_t>(c), std::vector<double>(static_cast<size_t>(c), 0.0));
    for (int j = 0; j < c; ++j) v[static_cast<size_t>(j)][static_cast<size_t>(j)] = 1.0;

    const double tol = 1e-14;
    for (int sweep = 0; sweep < 60; ++sweep) {
        bool rotated = false;
        for (int p = 0; p < c - 1; ++p) {
            for (int q = p + 1; q < c; ++q) {
                double app = 0, aqq = 0, apq = 0;
                const double* cp = a[static_cast<size_t>(p)].data();
                const double* cq = a[static_cast<size_t>(q)].data();
                for (int i = 0; i < n; ++i) {
                    app += cp[i] * cp[i];
                    aqq += cq[i] * cq[i];
                    apq += cp[i] * cq[i];
                }
                if (std::abs(apq) <= tol * std::sqrt(app * aqq) || apq == 0.0) continue;
                rotated = true;
                const double zeta = (aqq - app) / (2.0 * apq);
                const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                double* mp = a[static_cast<size_t>(p)].data();
                double* mq = a[static_cast<size_t>(q)].data();
                for (int i = 0; i < n; ++i) {
                    const double xp = mp[i];
                    mp[i] = cs * xp - sn * mq[i];
                    mq[i] = sn * xp + cs * mq[i];
                }
                double* vp = v[static_cast<size_t>(p)].data();
                double* vq = v[static_cast<size_t>(q)].data();
                for (int i = 0; i < c; ++i) {
                    const double xp = vp[i];
                    vp[i] = cs * xp - sn * vq[i];
                    vq[i] = sn * xp + cs * vq[i];
                }
            }
        }
        if (!rotated) break;
    }

    std::vector<double> sigma(static_cast<size_t>(c));
    for (int j = 0; j < c; ++j) {
        sigma[static_cast<size_t>(j)] = std::sqrt(dot(a[static_cast<size_t>(j)].data(), a[static_cast<size_t>(j)].data(), n));
    }
    std::vector<int> order(static_cast<size_t>(c));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int i, int j) { return sigma[static_cast<size_t>(i)] > sigma[static_cast<size_t>(j)]; });

    const double sigma_max = sigma[static_cast<size_t>(order[0])];
    const double rank_tol = sigma_max * static_cast<double>(std::max(n, c)) * 2.3e-16;
    int rank = 0;
    for (int j = 0; j < c; ++j) {
        if (sigma[static_cast<size_t>(order[static_cast<size_t>(j)])] > rank_tol) ++rank;
    }

    SvdResult out;
    out.k_requested = k;
    out.truncated = rank < k;
    const int k_eff = std::min(k, std::max(rank, 1));
    out.projections = Tensor({n, k_eff});
    out.basis = Tensor({c, k_eff});
    out.col_scale.resize(static_cast<size_t>(k_eff));
    out.singular_values.resize(static_cast<size_t>(c));
    for (int j = 0; j < c; ++j) out.singular_values[static_cast<size_t>(j)] = sigma[static_cast<size_t>(order[static_cast<size_t>(j)])];

    for (int j = 0; j < k_eff; ++j) {
        const int src = order[static_cast<size_t>(j)];
        // deterministic sign: largest-|.| basis entry points up
        double flip = 1.0;
        double best = 0.0;
        for (int i = 0; i < c; ++i) {
            const double e = v[static_cast<size_t>(src)][static_cast<size_t>(i)];
            if (std::abs(e) > std::abs(best)) best = e;
        }
        if (best < 0) flip = -1.0;

        double var = 0.0;
        for (int i = 0; i < n; ++i) {
            const double e = a[static_cast<size_t>(src)][static_cast<size_t>(i)];
            var += e * e;
        }
        const double scale = n > 1 ? std::sqrt(var / static_cast<double>(n - 1)) : 1.0;
        out.col_scale[static_cast<size_t>(j)] = scale > 1e-300 ? scale : 1.0;
        for (int i = 0; i < n; ++i) {
            out.projections.at(i, j) = flip * a[static_cast<size_t>(src)][static_cast<size_t>(i)] / out.col_scale[static_cast<size_t>(j)];
        }
        for (int i = 0; i < c; ++i) {
            out.basis.at(i, j) = flip * v[static_cast<size_t>(src)][static_cast<size_t>(i)];
        }
    }
    return out;
}

namespace {

std::vector<double> observed_values(const Dataset& data, int col) {
    std::vector<double> vals;
    for (int i = 0; i < data.n_rows(); ++i) {
        if (!data.is_missing(i, col)) vals.push_back(data.x.at(i, col));
    }
    return vals;
}

}  // namespace

double FittedRecipe::transform_value(const Column& col, double raw) const {
    switch (recipe_.numeric_transform) {
        case NumericTransform::robust_softclip:
        case NumericTransform::robust_softclip_svd:
            return soft_clip(col.robust(raw));
        case NumericTransform::quantile:
            return col.quantile(raw);
        case NumericTransform::standard:
            return col.standard(raw);
    }
    return raw;
}

FittedRecipe FittedRecipe::fit(const Dataset& train, const EstimatorRecipe& recipe) {
    FittedRecipe fitted;
    fitted.recipe_ = recipe;
    const int m = static_cast<int>(recipe.feature_subset.size());
    if (m == 0) throw ConfigError("recipe: empty feature subset");
    if (static_cast<int>(recipe.feature_permutation.size()) != m) {
        throw ConfigError("recipe: permutation size mismatch");
    }
    fitted.n_base_ = m;
    fitted.columns_.resize(static_cast<size_t>(m));

    const Rng recipe_rng(recipe.seed);
    for (int j = 0; j < m; ++j) {
        Column& col = fitted.columns_[static_cast<size_t>(j)];
        col.source = recipe.feature_subset[static_cast<size_t>(j)];
        if (col.source < 0 || col.source >= train.n_cols()) {
            throw DataError("recipe: feature subset out of range");
        }
        const ColumnSchema& schema = train.schema[static_cast<size_t>(col.source)];
        col.categorical = schema.kind == ColumnKind::categorical;

        std::vector<double> observed;
        if (col.categorical) {
            // canonical (sorted) category index -> per-recipe shuffled code
            const int n_cats = static_cast<int>(schema.categories.size());
            Rng shuffle_rng = recipe_rng.child(0x9c0de000ULL + static_cast<uint64_t>(col.source));
            col.code_of = shuffle_rng.permutation(std::max(n_cats, 1));
            col.unseen_code = n_cats;
            for (int i = 0; i < train.n_rows(); ++i) {
                if (train.is_missing(i, col.source)) continue;
                const int idx = static_cast<int>(train.x.at(i, col.source));
                observed.push_back(static_cast<double>(col.code_of[static_cast<size_t>(idx)]));
            }
        } else {
            observed = observed_values(train, col.source);
        }

        if (observed.empty()) {
            col.all_missing = true;
            continue;
        }
        col.impute = median(observed);
        switch (recipe.numeric_transform) {
            case NumericTransform::robust_softclip:
            case NumericTransform::robust_softclip_svd:
                col.robust = fit_robust_scale(observed);
                break;
            case NumericTransform::quantile:
                col.quantile = QuantileTransform::fit(observed);
                col.quantile_degenerate = col.quantile.degenerate();
                break;
            case NumericTransform::standard:
                col.standard = fit_standard_scale(observed);
                break;
        }
    }

    if (recipe.numeric_transform == NumericTransform::robust_softclip_svd && recipe.svd_k > 0) {
        // base-transformed train block, standardized, feeds the SVD
        Tensor base({train.n_rows(), m});
        std::vector<uint8_t> flags;
        fitted.n_svd_ = 0;
        fitted.transform(train, &base, &flags);

        fitted.svd_mean_.resize(static_cast<size_t>(m));
        fitted.svd_std_.resize(static_cast<size_t>(m));
        Tensor std_block({train.n_rows(), m});
        for (int j = 0; j < m; ++j) {
            std::vector<double> colv(static_cast<size_t>(train.n_rows()));
            for (int i = 0; i < train.n_rows(); ++i) colv[static_cast<size_t>(i)] = base.at(i, j);
            const double mu = mean(colv);
            double sd = colv.size() > 1 ? sample_std(colv) : 0.0;
            if (sd < 1e-12) sd = 1.0;
            fitted.svd_mean_[static_cast<size_t>(j)] = mu;
            fitted.svd_std_[static_cast<size_t>(j)] = sd;
            for (int i = 0; i < train.n_rows(); ++i) std_block.at(i, j) = (base.at(i, j) - mu) / sd;
        }
        const int k = std::min(recipe.svd_k, std::min(train.n_rows(), m));
        if (k >= 1) {
            const SvdResult svd = svd_features(std_block, k);
            fitted.svd_basis_ = svd.basis;
            fitted.svd_col_scale_ = svd.col_scale;
            fitted.n_svd_ = svd.basis.dim(1);
        }
    }
    return fitted;
}

void FittedRecipe::transform(const Dataset& data, Tensor* values, std::vector<uint8_t>* flags) const {
    const int n = data.n_rows();
    const int m = n_base_;
    *values = Tensor({n, m + n_svd_});
    flags->assign(static_cast<size_t>(n) * (m + n_svd_), 0);

    // base columns land at their permuted positions
    for (int j = 0; j < m; ++j) {
        const Column& col = columns_[static_cast<size_t>(j)];
        if (col.source >= data.n_cols()) throw DataError("recipe: dataset narrower than recipe");
        const int out_j = recipe_.feature_permutation[static_cast<size_t>(j)];
        for (int i = 0; i < n; ++i) {
            double raw;
            bool miss = data.is_missing(i, col.source);
            if (col.all_missing) {
                values->at(i, out_j) = 0.0;
                (*flags)[static_cast<size_t>(i) * (m + n_svd_) + out_j] = 1;
                continue;
            }
            if (miss) {
                raw = col.impute;
            } else if (col.categorical) {
                const int idx = static_cast<int>(data.x.at(i, col.source));
                if (idx < 0 || idx >= static_cast<int>(col.code_of.size())) {
                    raw = static_cast<double>(col.unseen_code);
                    miss = true;  // unseen category: reserved code, flagged
                } else {
                    raw = static_cast<double>(col.code_of[static_cast<size_t>(idx)]);
                }
            } else {
                raw = data.x.at(i, col.source);
            }
            values->at(i, out_j) = transform_value(col, raw);
            if (col.quantile_degenerate && recipe_.numeric_transform == NumericTransform::quantile) {
                (*flags)[static_cast<size_t>(i) * (m + n_svd_) + out_j] = 1;
            }
            if (miss) (*flags)[static_cast<size_t>(i) * (m + n_svd_) + out_j] = 1;
        }
    }

    if (n_svd_ > 0) {
        // un-permute into subset order, standardize with train stats, project
        std::vector<double> row(static_cast<size_t>(m));
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < m; ++j) {
                const int out_j = recipe_.feature_permutation[static_cast<size_t>(j)];
                row[static_cast<size_t>(j)] =
                    (values->at(i, out_j) - svd_mean_[static_cast<size_t>(j)]) / svd_std_[static_cast<size_t>(j)];
            }
            for (int k = 0; k < n_svd_; ++k) {
                double acc = 0.0;
                for (int j = 0; j < m; ++j) acc += row[static_cast<size_t>(j)] * svd_basis_.at(j, k);
                values->at(i, m + k) = acc / svd_col_scale_[static_cast<size_t>(k)];
            }
        }
    }
}

namespace {

Tensor pack_doubles(const std::vector<double>& v) {
    Tensor t({static_cast<int>(v.size())});
    std::copy(v.begin(), v.end(), t.data());
    return t;
}

Tensor pack_ints(const std::vector<int>& v) {
    Tensor t({static_cast<int>(v.size())});
    for (size_t i = 0; i < v.size(); ++i) t[i] = static_cast<double>(v[i]);
    return t;
}

std::vector<double> unpack_doubles(const Tensor& t) {
    return {t.data(), t.data() + t.numel()};
}

std::vector<int> unpack_ints(const Tensor& t) {
    std::vector<int> v(t.numel());
    for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<int>(std::llround(t[i]));
    return v;
}

constexpr const char* kTransformNames[] = {"robust_softclip", "quantile", "standard",
                                           "robust_softclip_svd"};

}  // namespace

void FittedRecipe::to_container(CheckpointContainer& out, const std::string& prefix) const {
    out.set_header(prefix + "transform",
                   kTransformNames[static_cast<int>(recipe_.numeric_transform)]);
    out.set_header(prefix + "seed", std::to_string(recipe_.seed));
    out.set_header(prefix + "svd_k", std::to_string(recipe_.svd_k));
    out.set_header(prefix + "n_base", std::to_string(n_base_));
    out.set_header(prefix + "n_svd", std::to_string(n_svd_));
    out.set_tensor(prefix + "subset", pack_ints(recipe_.feature_subset));
    out.set_tensor(prefix + "perm", pack_ints(recipe_.feature_permutation));
    if (!recipe_.class_label_permutation.empty())
        out.set_tensor(prefix + "class_perm", pack_ints(recipe_.class_label_permutation));
    for (size_t i = 0; i < columns_.size(); ++i) {
        const Column& c = columns_[i];
        const std::string p = prefix + "col" + std::to_string(i) + ".";
        out.set_tensor(p + "meta",
                       pack_doubles({static_cast<double>(c.source), c.categorical ? 1.0 : 0.0,
                                     c.all_missing ? 1.0 : 0.0, static_cast<double>(c.unseen_code),
                                     c.impute, c.robust.center, c.robust.scale,
                                     c.robust.zeros ? 1.0 : 0.0, c.standard.mean,
                                     c.standard.stddev, c.standard.zeros ? 1.0 : 0.0,
                                     c.quantile_degenerate ? 1.0 : 0.0, c.quantile.p_lo_,
                                     c.quantile.p_hi_, static_cast<double>(c.quantile.n_),
                                     c.quantile.degenerate_ ? 1.0 : 0.0}));
        if (!c.code_of.empty()) out.set_tensor(p + "codes", pack_ints(c.code_of));
        if (!c.quantile.unique_.empty()) {
            out.set_tensor(p + "q_unique", pack_doubles(c.quantile.unique_));
            out.set_tensor(p + "q_cdf", pack_doubles(c.quantile.cdf_));
        }
    }
    if (n_svd_ > 0) {
        out.set_tensor(prefix + "svd_mean", pack_doubles(svd_mean_));
        out.set_tensor(prefix + "svd_std", pack_doubles(svd_std_));
        out.set_tensor(prefix + "svd_basis", svd_basis_);
        out.set_tensor(prefix + "svd_col_scale", pack_doubles(svd_col_scale_));
    }
}

FittedRecipe FittedRecipe::from_container(const CheckpointContainer& in,
                                          const std::string& prefix) {
    FittedRecipe r;
    const std::string name = in.header_value(prefix + "transform");
    bool known = false;
    for (int k = 0; k < 4; ++k) {
        if (name == kTransformNames[k]) {
            r.recipe_.numeric_transform = static_cast<NumericTransform>(k);
            known = true;
        }
    }
    if (!known) throw DataError("fitted recipe: unknown transform '" + name + "'");
    r.recipe_.seed = std::stoull(in.header_value(prefix + "seed"));
    r.recipe_.svd_k = std::stoi(in.header_value(prefix + "svd_k"));
    r.n_base_ = std::stoi(in.header_value(prefix + "n_base"));
    r.n_svd_ = std::stoi(in.header_value(prefix + "n_svd"));
    r.recipe_.feature_subset = unpack_ints(in.tensor(prefix + "subset"));
    r.recipe_.feature_permutation = unpack_ints(in.tensor(prefix + "perm"));
    if (in.has_tensor(prefix + "class_perm"))
        r.recipe_.class_label_permutation = unpack_ints(in.tensor(prefix + "class_perm"));
    r.columns_.resize(static_cast<size_t>(r.n_base_));
    for (size_t i = 0; i < r.columns_.size(); ++i) {
        Column& c = r.columns_[i];
        const std::string p = prefix + "col" + std::to_string(i) + ".";
        const std::vector<double> m = unpack_doubles(in.tensor(p + "meta"));
        if (m.size() != 16) throw DataError("fitted recipe: bad column metadata");
        c.source = static_cast<int>(std::llround(m[0]));
        c.categorical = m[1] != 0.0;
        c.all_missing = m[2] != 0.0;
        c.unseen_code = static_cast<int>(std::llround(m[3]));
        c.impute = m[4];
        c.robust.center = m[5];
        c.robust.scale = m[6];
        c.robust.zeros = m[7] != 0.0;
        c.standard.mean = m[8];
        c.standard.stddev = m[9];
        c.standard.zeros = m[10] != 0.0;
        c.quantile_degenerate = m[11] != 0.0;
        c.quantile.p_lo_ = m[12];
        c.quantile.p_hi_ = m[13];
        c.quantile.n_ = static_cast<int>(std::llround(m[14]));
        c.quantile.degenerate_ = m[15] != 0.0;
        if (in.has_tensor(p + "codes")) c.code_of = unpack_ints(in.tensor(p + "codes"));
        if (in.has_tensor(p + "q_unique")) {
            c.quantile.unique_ = unpack_doubles(in.tensor(p + "q_unique"));
            c.quantile.cdf_ = unpack_doubles(in.tensor(p + "q_cdf"));
        }
    }
    if (r.n_svd_ > 0) {
        r.svd_mean_ = unpack_doubles(in.tensor(prefix + "svd_mean"));
        r.svd_std_ = unpack_doubles(in.tensor(prefix + "svd_std"));
        r.svd_basis_ = in.tensor(prefix + "svd_basis");
        r.svd_col_scale_ = unpack_doubles(in.tensor(prefix + "svd_col_scale"));
    }
    return r;
}

void apply_recipe(const Dataset& data, const EstimatorRecipe& recipe, Tensor* values,
                  std::vector<uint8_t>* flags) {
    FittedRecipe::fit(data, recipe).transform(data, values, flags);
}

}  // namespace picotab
