#include "picotab/distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <utility>

#include "picotab/checkpoint.hpp"
#include "picotab/errors.hpp"
#include "picotab/mathx.hpp"
#include "picotab/rng.hpp"
#include "picotab/thread_pool.hpp"

namespace picotab {

namespace {

constexpr uint64_t kAugSalt = 0xd15711aa960c0deULL;
constexpr uint64_t kMlpSalt = 0xd15711a15317bULL;

// Student input row = transformed values followed by their missing flags.
Tensor student_inputs(const FittedRecipe& frozen, const Dataset& data) {
    Tensor vals;
    std::vector<uint8_t> flags;
    frozen.transform(data, &vals, &flags);
    const int n = vals.dim(0);
    const int w = vals.dim(1);
    Tensor x({n, 2 * w});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < w; ++j) {
            x.at(i, j) = vals.at(i, j);
            x.at(i, w + j) = flags[static_cast<size_t>(i) * w + j] ? 1.0 : 0.0;
        }
    }
    return x;
}

StudentModel student_shell(const TransferSet& ts, StudentKind kind) {
    StudentModel s;
    s.kind = kind;
    s.task = ts.kind;
    s.n_out = ts.n_out;
    s.class_names = ts.class_names;
    s.schema = ts.x.schema;
    s.frozen = ts.frozen;
    s.bins = ts.bins;
    s.y_mean = ts.y_mean;
    s.y_std = ts.y_std;
    return s;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865476)); }

inline double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x * 0.7071067811865476)) +
           x * 0.3989422804014327 * std::exp(-0.5 * x * x);
}

// y[B,O] = x[B,I] * w[I,O] + b[O]
void affine(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y) {
    const int rows = x.dim(0), in = x.dim(1), out = w.dim(1);
    for (int i = 0; i < rows; ++i) {
        double* yr = y.row(i);
        std::copy(b.data(), b.data() + out, yr);
        const double* xr = x.row(i);
        for (int k = 0; k < in; ++k) {
            const double xv = xr[k];
            if (xv == 0.0) continue;
            const double* wr = w.row(k);
            for (int o = 0; o < out; ++o) yr[o] += xv * wr[o];
        }
    }
}

struct MlpAct {
    Tensor z1, a1, z2, a2, z3, q;
};

// Forward a gathered batch; returns mean soft cross-entropy -sum p log q.
double mlp_forward(const StudentModel& s, const Tensor& x, const Tensor& p, MlpAct& act) {
    const int rows = x.dim(0), h = s.b1.dim(0), o = s.b3.dim(0);
    act.z1 = Tensor({rows, h});
    affine(x, s.w1, s.b1, act.z1);
    act.a1 = Tensor({rows, h});
    for (size_t i = 0; i < act.z1.numel(); ++i) act.a1[i] = gelu(act.z1[i]);
    act.z2 = Tensor({rows, h});
    affine(act.a1, s.w2, s.b2, act.z2);
    act.a2 = Tensor({rows, h});
    for (size_t i = 0; i < act.z2.numel(); ++i) act.a2[i] = gelu(act.z2[i]);
    act.z3 = Tensor({rows, o});
    affine(act.a2, s.w3, s.b3, act.z3);
    act.q = act.z3;
    double ce = 0.0;
    for (int i = 0; i < rows; ++i) {
        double* qr = act.q.row(i);
        const double lse = log_sum_exp(qr, o);
        for (int k = 0; k < o; ++k) ce -= p.at(i, k) * (qr[k] - lse);
        softmax_inplace(qr, o);
    }
    return ce / rows;
}

struct MlpGrads {
    Tensor w1, b1, w2, b2, w3, b3;
};

// gw[I,O] += x[B,I]^T d[B,O]; gb[O] += column sums of d.
void accumulate_affine(const Tensor& x, const Tensor& d, Tensor& gw, Tensor& gb) {
    const int rows = x.dim(0), in = x.dim(1), out = d.dim(1);
    for (int i = 0; i < rows; ++i) {
        const double* xr = x.row(i);
        const double* dr = d.row(i);
        for (int k = 0; k < in; ++k) {
            const double xv = xr[k];
            if (xv == 0.0) continue;
            double* gr = gw.row(k);
            for (int o = 0; o < out; ++o) gr[o] += xv * dr[o];
        }
        for (int o = 0; o < out; ++o) gb[static_cast<size_t>(o)] += dr[o];
    }
}

void mlp_backward(const StudentModel& s, const Tensor& x, const Tensor& p, const MlpAct& act,
                  MlpGrads& g) {
    const int rows = x.dim(0), h = s.b1.dim(0), o = s.b3.dim(0);
    const double inv = 1.0 / rows;
    Tensor dz3({rows, o});
    for (int i = 0; i < rows; ++i)
        for (int k = 0; k < o; ++k) dz3.at(i, k) = (act.q.at(i, k) - p.at(i, k)) * inv;
    accumulate_affine(act.a2, dz3, g.w3, g.b3);
    Tensor dz2({rows, h});
    for (int i = 0; i < rows; ++i) {
        const double* dr = dz3.row(i);
        double* out2 = dz2.row(i);
        for (int k = 0; k < h; ++k) {
            double acc = 0.0;
            const double* wr = s.w3.row(k);
            for (int j = 0; j < o; ++j) acc += dr[j] * wr[j];
            out2[k] = acc * gelu_grad(act.z2.at(i, k));
        }
    }
    accumulate_affine(act.a1, dz2, g.w2, g.b2);
    Tensor dz1({rows, h});
    for (int i = 0; i < rows; ++i) {
        const double* dr = dz2.row(i);
        double* out1 = dz1.row(i);
        for (int k = 0; k < h; ++k) {
            double acc = 0.0;
            const double* wr = s.w2.row(k);
            for (int j = 0; j < h; ++j) acc += dr[j] * wr[j];
            out1[k] = acc * gelu_grad(act.z1.at(i, k));
        }
    }
    accumulate_affine(x, dz1, g.w1, g.b1);
}

Tensor gather_batch(const Tensor& src, const std::vector<int>& rows, int lo, int hi) {
    Tensor out({hi - lo, src.dim(1)});
    for (int i = lo; i < hi; ++i)
        std::copy(src.row(rows[static_cast<size_t>(i)]),
                  src.row(rows[static_cast<size_t>(i)]) + src.dim(1), out.row(i - lo));
    return out;
}

struct Adam {
    Tensor m, v;
    explicit Adam(const Tensor& p) : m(Tensor::zeros_like(p)), v(Tensor::zeros_like(p)) {}

    void update(Tensor& p, const Tensor& g, double lr, int t) {
        const double bc1 = 1.0 - std::pow(0.9, t);
        const double bc2 = 1.0 - std::pow(0.999, t);
        for (size_t i = 0; i < p.numel(); ++i) {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + 1e-8);
        }
    }
};

double holdout_ce(const StudentModel& s, const Tensor& x, const Tensor& p,
                  const std::vector<int>& rows, int lo, int hi) {
    MlpAct act;
    return mlp_forward(s, gather_batch(x, rows, lo, hi), gather_batch(p, rows, lo, hi), act);
}

// --- gradient-boosted regression trees ------------------------------------

int build_node(RegressionTree& t, const Tensor& x, const std::vector<double>& resid,
               std::vector<int>& idx, int lo, int hi, int depth, const DistillConfig& cfg) {
    const int node = static_cast<int>(t.feature.size());
    const int n = hi - lo;
    double sum = 0.0;
    for (int i = lo; i < hi; ++i) sum += resid[static_cast<size_t>(idx[static_cast<size_t>(i)])];
    t.feature.push_back(-1);
    t.threshold.push_back(0.0);
    t.value.push_back(sum / n);
    t.left.push_back(-1);
    t.right.push_back(-1);
    if (depth >= cfg.tree_depth || n < 2 * cfg.min_leaf) return node;

    int best_f = -1;
    double best_gain = 1e-12, best_thr = 0.0;
    std::vector<std::pair<double, double>> xv;
    xv.reserve(static_cast<size_t>(n));
    for (int f = 0; f < x.dim(1); ++f) {
        xv.clear();
        for (int i = lo; i < hi; ++i) {
            const int row = idx[static_cast<size_t>(i)];
            xv.emplace_back(x.at(row, f), resid[static_cast<size_t>(row)]);
        }
        std::sort(xv.begin(), xv.end());
        double sum_l = 0.0;
        for (int s = 1; s < n; ++s) {
            sum_l += xv[static_cast<size_t>(s - 1)].second;
            if (s < cfg.min_leaf || n - s < cfg.min_leaf) continue;
            if (!(xv[static_cast<size_t>(s - 1)].first < xv[static_cast<size_t>(s)].first))
                continue;
            const double sum_r = sum - sum_l;
            const double gain =
                sum_l * sum_l / s + sum_r * sum_r / (n - s) - sum * sum / n;
            if (gain > best_gain) {
                best_gain = gain;
                best_f = f;
                best_thr = 0.5 * (xv[static_cast<size_t>(s - 1)].first +
                                  xv[static_cast<size_t>(s)].first);
            }
        }
    }
    if (best_f < 0) return node;

    std::vector<int> left_rows, right_rows;
    for (int i = lo; i < hi; ++i) {
        const int row = idx[static_cast<size_t>(i)];
        (x.at(row, best_f) < best_thr ? left_rows : right_rows).push_back(row);
    }
    if (left_rows.empty() || right_rows.empty()) return node;
    std::copy(left_rows.begin(), left_rows.end(), idx.begin() + lo);
    std::copy(right_rows.begin(), right_rows.end(),
              idx.begin() + lo + static_cast<long>(left_rows.size()));
    const int mid = lo + static_cast<int>(left_rows.size());
    t.feature[static_cast<size_t>(node)] = best_f;
    t.threshold[static_cast<size_t>(node)] = best_thr;
    const int l = build_node(t, x, resid, idx, lo, mid, depth + 1, cfg);
    const int r = build_node(t, x, resid, idx, mid, hi, depth + 1, cfg);
    t.left[static_cast<size_t>(node)] = l;
    t.right[static_cast<size_t>(node)] = r;
    return node;
}

RegressionTree grow_tree(const Tensor& x, const std::vector<double>& resid,
                         const DistillConfig& cfg) {
    RegressionTree t;
    std::vector<int> idx(static_cast<size_t>(x.dim(0)));
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    build_node(t, x, resid, idx, 0, x.dim(0), 0, cfg);
    return t;
}

// --- header string encoding ------------------------------------------------

std::string escape(const std::string& s) {
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(s.size());
    for (const char ch : s) {
        const auto u = static_cast<unsigned char>(ch);
        if (ch == '%' || ch == ',' || ch == '\n' || ch == '\r') {
            out += '%';
            out += hex[u >> 4];
            out += hex[u & 15];
        } else {
            out += ch;
        }
    }
    return out;
}

std::string unescape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '%') {
            if (i + 2 >= s.size()) throw DataError("student checkpoint: bad escape");
            out += static_cast<char>(std::stoi(s.substr(i + 1, 2), nullptr, 16));
            i += 2;
        } else {
            out += s[i];
        }
    }
    return out;
}

std::string join_escaped(const std::vector<std::string>& parts) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += ',';
        out += escape(parts[i]);
    }
    return out;
}

std::vector<std::string> split_escaped(const std::string& s, size_t expect) {
    std::vector<std::string> out;
    if (expect == 0) return out;
    size_t start = 0;
    while (true) {
        const size_t comma = s.find(',', start);
        out.push_back(unescape(s.substr(start, comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (out.size() != expect) throw DataError("student checkpoint: bad string list");
    return out;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

double parse_double(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

}  // namespace

void DistillConfig::validate() const {
    if (hidden < 1) throw ConfigError("distill: hidden must be >= 1");
    if (epochs < 1) throw ConfigError("distill: epochs must be >= 1");
    if (batch < 1) throw ConfigError("distill: batch must be >= 1");
    if (!(lr > 0)) throw ConfigError("distill: lr must be > 0");
    if (patience < 1) throw ConfigError("distill: patience must be >= 1");
    if (!(holdout_frac >= 0.0 && holdout_frac <= 0.5))
        throw ConfigError("distill: holdout_frac must be in [0, 0.5]");
    if (tree_rounds < 1) throw ConfigError("distill: tree_rounds must be >= 1");
    if (tree_depth < 1) throw ConfigError("distill: tree_depth must be >= 1");
    if (!(tree_lr > 0)) throw ConfigError("distill: tree_lr must be > 0");
    if (min_leaf < 1) throw ConfigError("distill: min_leaf must be >= 1");
}

double RegressionTree::operator()(const double* x) const {
    int node = 0;
    while (feature[static_cast<size_t>(node)] >= 0) {
        node = x[feature[static_cast<size_t>(node)]] < threshold[static_cast<size_t>(node)]
                   ? left[static_cast<size_t>(node)]
                   : right[static_cast<size_t>(node)];
    }
    return value[static_cast<size_t>(node)];
}

TransferSet generate_transfer_set(const FittedModel& teacher, const Dataset& dataset, int r_aug,
                                  uint64_t seed) {
    if (!teacher.net) throw ConfigError("generate_transfer_set: teacher is not fitted");
    if (r_aug < 0) throw ConfigError("generate_transfer_set: r_aug must be >= 0");
    check_schema_compatible(teacher.schema, dataset);
    const int n = dataset.n_rows();
    const int c = dataset.n_cols();
    if (n < 1) throw DataError("generate_transfer_set: empty dataset");

    TransferSet out;
    out.x.schema = dataset.schema;
    const int rows = (1 + r_aug) * n;
    out.x.x = Tensor({rows, c});
    out.x.missing.assign(static_cast<size_t>(rows) * c, 0);
    out.augmented.assign(static_cast<size_t>(rows), 0);

    auto copy_cell = [&](int dst, int src, int col) {
        out.x.x.at(dst, col) = dataset.x.at(src, col);
        out.x.missing[static_cast<size_t>(dst) * c + col] =
            dataset.missing[static_cast<size_t>(src) * c + col];
    };
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) copy_cell(i, i, j);

    const Rng root(Rng::splitmix(seed ^ kAugSalt));
    ThreadPool pool(teacher.options.device_workers);
    pool.parallel_for(r_aug * n, [&](int j) {
        const int dst = n + j;
        const int base = j % n;
        out.augmented[static_cast<size_t>(dst)] = 1;
        Rng rng = root.child(static_cast<uint64_t>(j));
        for (int col = 0; col < c; ++col) {
            int src = base;
            if (n > 1 && rng.bernoulli(0.5)) {
                auto other = rng.uniform_int(0, n - 2);
                if (other >= base) ++other;
                src = static_cast<int>(other);
            }
            copy_cell(dst, src, col);
        }
    });

    const std::vector<PredictiveDistribution> dists = predict_distribution(teacher, out.x);
    out.kind = teacher.kind;
    out.n_out = static_cast<int>(dists[0].probs.size());
    out.class_names = teacher.class_names;
    out.bins = teacher.bins;
    out.y_mean = teacher.y_mean;
    out.y_std = teacher.y_std;
    out.frozen = teacher.preproc.at(0);
    out.soft_targets = Tensor({rows, out.n_out});
    for (int i = 0; i < rows; ++i)
        std::copy(dists[static_cast<size_t>(i)].probs.begin(),
                  dists[static_cast<size_t>(i)].probs.end(), out.soft_targets.row(i));
    return out;
}

StudentModel distill_mlp(const TransferSet& transfer, const DistillConfig& config) {
    config.validate();
    const int rows = transfer.n_rows();
    if (rows < 1) throw DataError("distill: empty transfer set");
    if (transfer.n_out < 1 || transfer.soft_targets.dim(0) != rows)
        throw DataError("distill: malformed transfer set");

    const Tensor x = student_inputs(transfer.frozen, transfer.x);
    const Tensor& p = transfer.soft_targets;
    const int in_dim = x.dim(1), h = config.hidden, o = transfer.n_out;

    Rng rng(Rng::splitmix(config.seed ^ kMlpSalt));
    StudentModel s = student_shell(transfer, StudentKind::mlp);
    auto init = [&](int a, int b) {
        Tensor w({a, b});
        const double scale = 1.0 / std::sqrt(static_cast<double>(a));
        for (size_t i = 0; i < w.numel(); ++i) w[i] = rng.normal(0.0, scale);
        return w;
    };
    s.w1 = init(in_dim, h);
    s.b1 = Tensor({h});
    s.w2 = init(h, h);
    s.b2 = Tensor({h});
    s.w3 = init(h, o);
    s.b3 = Tensor({o});

    std::vector<int> order = rng.permutation(rows);
    int n_hold = static_cast<int>(std::lround(config.holdout_frac * rows));
    if (rows > 1 && config.holdout_frac > 0 && n_hold < 1) n_hold = 1;
    if (n_hold > rows - 1) n_hold = rows - 1;
    std::vector<int> train(order.begin() + n_hold, order.end());
    const int n_train = static_cast<int>(train.size());
    // evaluate on the holdout when there is one, else on the training slice
    const std::vector<int>& eval_rows = n_hold > 0 ? order : train;
    const int eval_hi = n_hold > 0 ? n_hold : n_train;

    Adam aw1(s.w1), ab1(s.b1), aw2(s.w2), ab2(s.b2), aw3(s.w3), ab3(s.b3);
    StudentModel best = s;
    double best_ce = holdout_ce(s, x, p, eval_rows, 0, eval_hi);
    int t = 0, bad = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const std::vector<int> shuffle = rng.permutation(n_train);
        for (int lo = 0; lo < n_train; lo += config.batch) {
            const int hi = std::min(n_train, lo + config.batch);
            std::vector<int> batch;
            batch.reserve(static_cast<size_t>(hi - lo));
            for (int i = lo; i < hi; ++i)
                batch.push_back(train[static_cast<size_t>(shuffle[static_cast<size_t>(i)])]);
            const Tensor xb = gather_batch(x, batch, 0, static_cast<int>(batch.size()));
            const Tensor pb = gather_batch(p, batch, 0, static_cast<int>(batch.size()));
            MlpAct act;
            const double loss = mlp_forward(s, xb, pb, act);
            if (!std::isfinite(loss))
                throw DistillDiverged("distill: non-finite training loss", std::move(best));
            MlpGrads g{Tensor::zeros_like(s.w1), Tensor::zeros_like(s.b1),
                       Tensor::zeros_like(s.w2), Tensor::zeros_like(s.b2),
                       Tensor::zeros_like(s.w3), Tensor::zeros_like(s.b3)};
            mlp_backward(s, xb, pb, act, g);
            ++t;
            aw1.update(s.w1, g.w1, config.lr, t);
            ab1.update(s.b1, g.b1, config.lr, t);
            aw2.update(s.w2, g.w2, config.lr, t);
            ab2.update(s.b2, g.b2, config.lr, t);
            aw3.update(s.w3, g.w3, config.lr, t);
            ab3.update(s.b3, g.b3, config.lr, t);
        }
        const double ce = holdout_ce(s, x, p, eval_rows, 0, eval_hi);
        if (!std::isfinite(ce))
            throw DistillDiverged("distill: non-finite holdout loss", std::move(best));
        if (ce < best_ce - 1e-9) {
            best_ce = ce;
            best = s;
            bad = 0;
        } else if (++bad >= config.patience) {
            break;
        }
    }
    return best;
}

StudentModel distill_trees(const TransferSet& transfer, const DistillConfig& config) {
    config.validate();
    if (transfer.kind != TaskKind::classification)
        throw ConfigError("distill_trees: classification teachers only");
    const int rows = transfer.n_rows();
    if (rows < 1) throw DataError("distill: empty transfer set");
    if (transfer.n_out < 1 || transfer.soft_targets.dim(0) != rows)
        throw DataError("distill: malformed transfer set");

    const Tensor x = student_inputs(transfer.frozen, transfer.x);
    StudentModel s = student_shell(transfer, StudentKind::tree_ensemble);
    s.tree_lr = config.tree_lr;
    s.base_score.assign(static_cast<size_t>(transfer.n_out), 0.0);
    s.trees.assign(static_cast<size_t>(transfer.n_out), {});

    std::vector<double> target(static_cast<size_t>(rows));
    std::vector<double> score(static_cast<size_t>(rows));
    std::vector<double> resid(static_cast<size_t>(rows));
    for (int cls = 0; cls < transfer.n_out; ++cls) {
        double base = 0.0;
        for (int i = 0; i < rows; ++i) {
            target[static_cast<size_t>(i)] =
                std::log(std::max(transfer.soft_targets.at(i, cls), 1e-12));
            base += target[static_cast<size_t>(i)];
        }
        base /= rows;
        s.base_score[static_cast<size_t>(cls)] = base;
        std::fill(score.begin(), score.end(), base);
        for (int round = 0; round < config.tree_rounds; ++round) {
            double peak = 0.0;
            for (int i = 0; i < rows; ++i) {
                resid[static_cast<size_t>(i)] =
                    target[static_cast<size_t>(i)] - score[static_cast<size_t>(i)];
                peak = std::max(peak, std::abs(resid[static_cast<size_t>(i)]));
            }
            if (peak < 1e-12) break;
            RegressionTree tree = grow_tree(x, resid, config);
            for (int i = 0; i < rows; ++i)
                score[static_cast<size_t>(i)] += config.tree_lr * tree(x.row(i));
            s.trees[static_cast<size_t>(cls)].push_back(std::move(tree));
        }
    }
    return s;
}

std::vector<PredictiveDistribution> student_predict(const StudentModel& student,
                                                    const Dataset& data) {
    check_schema_compatible(student.schema, data);
    const int n = data.n_rows();
    if (n < 1) throw DataError("predict: no test rows");
    const Tensor x = student_inputs(student.frozen, data);

    std::vector<PredictiveDistribution> out(static_cast<size_t>(n));
    Tensor logits;
    if (student.kind == StudentKind::mlp) {
        MlpAct act;
        Tensor dummy({n, student.n_out});
        mlp_forward(student, x, dummy, act);
        logits = act.q;  // already softmaxed
    } else {
        logits = Tensor({n, student.n_out});
        for (int i = 0; i < n; ++i) {
            for (int cls = 0; cls < student.n_out; ++cls) {
                double z = student.base_score[static_cast<size_t>(cls)];
                for (const RegressionTree& tree : student.trees[static_cast<size_t>(cls)])
                    z += student.tree_lr * tree(x.row(i));
                logits.at(i, cls) = z;
            }
            softmax_inplace(logits.row(i), student.n_out);
        }
    }
    for (int i = 0; i < n; ++i) {
        PredictiveDistribution& d = out[static_cast<size_t>(i)];
        d.kind = student.task;
        d.probs.assign(logits.row(i), logits.row(i) + student.n_out);
        if (student.task == TaskKind::regression) {
            d.bins = student.bins;
            d.y_mean = student.y_mean;
            d.y_std = student.y_std;
        }
    }
    return out;
}

void save_student(const StudentModel& student, const std::string& path) {
    CheckpointContainer c;
    c.set_header("object", "student");
    c.set_header("kind", student.kind == StudentKind::mlp ? "mlp" : "tree_ensemble");
    c.set_header("task",
                 student.task == TaskKind::classification ? "classification" : "regression");
    c.set_header("n_out", std::to_string(student.n_out));
    c.set_header("n_class_names", std::to_string(student.class_names.size()));
    if (!student.class_names.empty()) c.set_header("class_names", join_escaped(student.class_names));
    c.set_header("n_columns", std::to_string(student.schema.size()));
    for (size_t j = 0; j < student.schema.size(); ++j) {
        const ColumnSchema& col = student.schema[j];
        const std::string p = "col." + std::to_string(j) + ".";
        c.set_header(p + "name", escape(col.name));
        c.set_header(p + "kind", col.kind == ColumnKind::numeric ? "numeric" : "categorical");
        c.set_header(p + "n_categories", std::to_string(col.categories.size()));
        if (!col.categories.empty()) c.set_header(p + "categories", join_escaped(col.categories));
    }
    if (student.task == TaskKind::regression) {
        c.set_header("n_bins", std::to_string(student.bins.n_bins()));
        c.set_header("y_mean", format_double(student.y_mean));
        c.set_header("y_std", format_double(student.y_std));
    }
    student.frozen.to_container(c, "pp.");
    if (student.kind == StudentKind::mlp) {
        c.set_tensor("mlp.w1", student.w1);
        c.set_tensor("mlp.b1", student.b1);
        c.set_tensor("mlp.w2", student.w2);
        c.set_tensor("mlp.b2", student.b2);
        c.set_tensor("mlp.w3", student.w3);
        c.set_tensor("mlp.b3", student.b3);
    } else {
        c.set_header("tree_lr", format_double(student.tree_lr));
        Tensor base({static_cast<int>(student.base_score.size())});
        std::copy(student.base_score.begin(), student.base_score.end(), base.data());
        c.set_tensor("base", base);
        for (size_t cls = 0; cls < student.trees.size(); ++cls) {
            c.set_header("rounds." + std::to_string(cls),
                         std::to_string(student.trees[cls].size()));
            for (size_t r = 0; r < student.trees[cls].size(); ++r) {
                const RegressionTree& tr = student.trees[cls][r];
                Tensor nodes({static_cast<int>(tr.feature.size()), 5});
                for (size_t k = 0; k < tr.feature.size(); ++k) {
                    nodes.at(static_cast<int>(k), 0) = tr.feature[k];
                    nodes.at(static_cast<int>(k), 1) = tr.threshold[k];
                    nodes.at(static_cast<int>(k), 2) = tr.left[k];
                    nodes.at(static_cast<int>(k), 3) = tr.right[k];
                    nodes.at(static_cast<int>(k), 4) = tr.value[k];
                }
                c.set_tensor("tree." + std::to_string(cls) + "." + std::to_string(r),
                             std::move(nodes));
            }
        }
    }
    save_checkpoint(c, path);
}

StudentModel load_student(const std::string& path) {
    const CheckpointContainer c = load_checkpoint(path);
    if (c.header_or("object", "") != "student")
        throw DataError("not a student checkpoint: " + path);
    StudentModel s;
    const std::string kind = c.header_value("kind");
    if (kind == "mlp")
        s.kind = StudentKind::mlp;
    else if (kind == "tree_ensemble")
        s.kind = StudentKind::tree_ensemble;
    else
        throw DataError("student checkpoint: unknown kind '" + kind + "'");
    s.task = c.header_value("task") == "regression" ? TaskKind::regression
                                                    : TaskKind::classification;
    s.n_out = std::stoi(c.header_value("n_out"));
    const size_t n_names = std::stoul(c.header_value("n_class_names"));
    if (n_names > 0) s.class_names = split_escaped(c.header_value("class_names"), n_names);
    const size_t n_cols = std::stoul(c.header_value("n_columns"));
    s.schema.resize(n_cols);
    for (size_t j = 0; j < n_cols; ++j) {
        const std::string p = "col." + std::to_string(j) + ".";
        s.schema[j].name = unescape(c.header_value(p + "name"));
        s.schema[j].kind = c.header_value(p + "kind") == "categorical" ? ColumnKind::categorical
                                                                       : ColumnKind::numeric;
        const size_t n_cats = std::stoul(c.header_value(p + "n_categories"));
        if (n_cats > 0)
            s.schema[j].categories = split_escaped(c.header_value(p + "categories"), n_cats);
    }
    if (s.task == TaskKind::regression) {
        s.bins = BinSpec::equal_probability(std::stoi(c.header_value("n_bins")));
        s.y_mean = parse_double(c.header_value("y_mean"));
        s.y_std = parse_double(c.header_value("y_std"));
    }
    s.frozen = FittedRecipe::from_container(c, "pp.");
    if (s.kind == StudentKind::mlp) {
        s.w1 = c.tensor("mlp.w1");
        s.b1 = c.tensor("mlp.b1");
        s.w2 = c.tensor("mlp.w2");
        s.b2 = c.tensor("mlp.b2");
        s.w3 = c.tensor("mlp.w3");
        s.b3 = c.tensor("mlp.b3");
    } else {
        s.tree_lr = parse_double(c.header_value("tree_lr"));
        const Tensor& base = c.tensor("base");
        s.base_score.assign(base.data(), base.data() + base.numel());
        s.trees.assign(static_cast<size_t>(s.n_out), {});
        for (int cls = 0; cls < s.n_out; ++cls) {
            const size_t rounds = std::stoul(c.header_value("rounds." + std::to_string(cls)));
            for (size_t r = 0; r < rounds; ++r) {
                const Tensor& nodes =
                    c.tensor("tree." + std::to_string(cls) + "." + std::to_string(r));
                RegressionTree tr;
                for (int k = 0; k < nodes.dim(0); ++k) {
                    tr.feature.push_back(static_cast<int>(std::llround(nodes.at(k, 0))));
                    tr.threshold.push_back(nodes.at(k, 1));
                    tr.left.push_back(static_cast<int>(std::llround(nodes.at(k, 2))));
                    tr.right.push_back(static_cast<int>(std::llround(nodes.at(k, 3))));
                    tr.value.push_back(nodes.at(k, 4));
                }
                s.trees[static_cast<size_t>(cls)].push_back(std::move(tr));
            }
        }
    }
    return s;
}

}  // namespace picotab
