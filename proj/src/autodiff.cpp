#include "picotab/autodiff.hpp"

#include <cmath>
#include <memory>

#include "picotab/errors.hpp"
#include "picotab/mathx.hpp"

namespace picotab {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865476;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

int flat_rows(const Tensor& t) {
    size_t m = 1;
    for (int i = 0; i + 1 < t.rank(); ++i) m *= static_cast<size_t>(t.dim(i));
    return static_cast<int>(m);
}
}  // namespace

Var Graph::push(Tensor value, bool needs_grad, std::function<void(Graph&)> backprop) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    if (needs_grad) {
        node.grad = Tensor(node.value.shape());
        node.backprop = std::move(backprop);
    }
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::leaf(const Tensor& value, bool needs_grad) {
    return push(value, needs_grad, {});
}

Var Graph::linear(Var x, Var w) { return linear(x, w, Var{}); }

Var Graph::linear(Var x, Var w, Var b) {
    const Tensor& xv = val(x);
    const Tensor& wv = val(w);
    const int din = xv.dim(xv.rank() - 1);
    const int dout = wv.dim(1);
    if (wv.dim(0) != din) throw RuntimeFailure("linear: shape mismatch");
    const int m = flat_rows(xv);

    std::vector<int> out_shape(xv.shape().begin(), xv.shape().end());
    out_shape.back() = dout;
    Tensor y(out_shape);
    matmul_acc(xv.data(), wv.data(), y.data(), m, din, dout);
    if (b.valid()) {
        const Tensor& bv = val(b);
        for (int i = 0; i < m; ++i) axpy(1.0, bv.data(), y.data() + static_cast<size_t>(i) * dout, dout);
    }

    const bool needs = wants(x) || wants(w) || (b.valid() && wants(b));
    Var out{-1};
    out = push(std::move(y), needs, [x, w, b, m, din, dout, out_id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& dy = g.nodes_[static_cast<size_t>(out_id)].grad;
        if (g.wants(x)) {
            matmul_bt_acc(dy.data(), g.val(w).data(), g.grad_ref(x).data(), m, dout, din);
        }
        if (g.wants(w)) {
            matmul_at_acc(g.val(x).data(), dy.data(), g.grad_ref(w).data(), m, din, dout);
        }
        if (b.valid() && g.wants(b)) {
            double* db = g.grad_ref(b).data();
            for (int i = 0; i < m; ++i) axpy(1.0, dy.data() + static_cast<size_t>(i) * dout, db, dout);
        }
    });
    return out;
}

Var Graph::add(Var a, Var b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    if (!av.same_shape(bv)) throw RuntimeFailure("add: shape mismatch");
    Tensor y = av;
    axpy(1.0, bv.data(), y.data(), static_cast<int>(y.numel()));
    const bool needs = wants(a) || wants(b);
    return push(std::move(y), needs, [a, b, out_id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& dy = g.nodes_[static_cast<size_t>(out_id)].grad;
        const int n = static_cast<int>(dy.numel());
        if (g.wants(a)) axpy(1.0, dy.data(), g.grad_ref(a).data(), n);
        if (g.wants(b)) axpy(1.0, dy.data(), g.grad_ref(b).data(), n);
    });
}

Var Graph::add_broadcast(Var x, Var t) {
    const Tensor& xv = val(x);
    const Tensor& tv = val(t);
    if (xv.rank() != 3 || tv.rank() != 2 || xv.dim(1) != tv.dim(0) || xv.dim(2) != tv.dim(1)) {
        throw RuntimeFailure("add_broadcast: shape mismatch");
    }
    const int a = xv.dim(0);
    const int bd = static_cast<int>(tv.numel());
    Tensor y = xv;
    for (int i = 0; i < a; ++i) axpy(1.0, tv.data(), y.data() + static_cast<size_t>(i) * bd, bd);
    const bool needs = wants(x) || wants(t);
    return push(std::move(y), needs, [x, t, a, bd, out_id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& dy = g.nodes_[static_cast<size_t>(out_id)].grad;
        if (g.wants(x)) axpy(1.0, dy.data(), g.grad_ref(x).data(), static_cast<int>(dy.numel()));
        if (g.wants(t)) {
            double* dt = g.grad_ref(t).data();
            for (int i = 0; i < a; ++i) axpy(1.0, dy.data() + static_cast<size_t>(i) * bd, dt, bd);
        }
    });
}

Var Graph::gelu(Var x) {
    const Tensor& xv = val(x);
    Tensor y(xv.shape());
    for (size_t i = 0; i < xv.numel(); ++i) {
        y[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * kInvSqrt2));
    }
    return push(std::move(y), wants(x), [x, out_id = static_cast<int>(nodes_.size())](Graph& g) {
        if (!g.wants(x)) return;
        const Tensor& dy = g.nodes_[static_cast<size_t>(out_id)].grad;
        const Tensor& xv = g.val(x);
        Tensor& dx = g.grad_ref(x);
        for (size_t i = 0; i < xv.numel(); ++i) {
            const double cdf = 0.5 * (1.0 + std::erf(xv[i] * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xv[i] * xv[i]);
            dx[i] += dy[i] * (cdf + xv[i] * pdf);
        }
    });
}

Var Graph::layer_norm(Var x, Var gain, Var bias, double eps) {
    const Tensor& xv = val(x);
    const int d = xv.dim(xv.rank() - 1);
    const int m = flat_rows(xv);
    const Tensor& gv = val(gain);
    const Tensor& bv = val(bias);
    if (static_cast<int>(gv.numel()) != d || static_cast<int>(bv.numel()) != d) {
        throw RuntimeFailure("layer_norm: gain/bias width mismatch");
    }

    auto saved = std::make_shared<std::vector<double>>(static_cast<size_t>(m) * 2);
    Tensor y(xv.shape());
    for (int i = 0; i < m; ++i) {
        const double* row = xv.data() + static_cast<size_t>(i) * d;
        double mu = 0;
        for (int j = 0; j < d; ++j) mu += row[j];
        mu /= d;
        double var = 0;
        for (int j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= d;
        const double inv_s = 1.0 / std::sqrt(var + eps);
        (*saved)[static_cast<size_t>(i) * 2] = mu;
        (*saved)[static_cast<size_t>(i) * 2 + 1] = inv_s;
        double* out = y.data() + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) out[j] = (row[j] - mu) * inv_s * gv[static_cast<size_t>(j)] + bv[static_cast<size_t>(j)];
    }

    const bool needs = wants(x) || wants(gain) || wants(bias);
    return push(std::move(y), needs, [x, gain, bias, m, d, saved, out_id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& dy = g.nodes_[static_cast<size_t>(out_id)].grad;
        const Tensor& xv = g.val(x);
        const Tensor& gv = g.val(gain);
        std::vector<double> dxhat(static_cast<size_t>(d)), xhat(static_cast<size_t>(d));
        for (int i = 0; i < m; ++i) {
            const double mu = (*saved)[static_cast<size_t>(i) * 2];
            const double inv_s = (*saved)[static_cast<size_t>(i) * 2 + 1];
            const double* xrow = xv.data() + static_cast<size_t>(i) * d;
            const double* dyrow = dy.data() + static_cast<size_t>(i) * d;
            double m1 = 0, m2 = 0;
            for (int j = 0; j < d; ++j) {
                xhat[static_cast<size_t>(j)] = (xrow[j] - mu) * inv_s;
                dxhat[static_cast<size_t>(j)] = dyrow[j] * gv[static_cast<size_t>(j)];
                m1 += dxhat[static_cast<size_t>(j)];
                m2 += dxhat[static_cast<size_t>(j)] * xhat[static_cast<size_t>(j)];
            }
            m1 /= d;
            m2 /= d;
            if (g.wants(x)) {
                double* dx = g.grad_ref(x).data() + static_cast<size_t>(i) * d;
                for (int j = 0; j < d; ++j) {
                    dx[j] += inv_s * (dxhat[static_cast<size_t>(j)] - m1 - xhat[static_cast<size_t>(j)] * m2);
                }
            }
            if (g.wants(gain)) {
                double* dg = g.grad_ref(gain).data();
                for (int j = 0; j < d; ++j) dg[j] += dyrow[j] * xhat[static_cast<size_t>(j)];
            }
            if (g.wants(bias)) {
                double* db = g.grad_ref(bias).data();
                for (int j = 0; j < d; ++j) db[j] += dyrow[j];
            }
        }
    });
}

Var Graph::transpose01(Var x) {
    const Tensor& xv = val(x);
    if (xv.rank() != 3) throw RuntimeFailure("transpose01: rank-3 input required");
    const int a = xv.dim(0), b = xv.dim(1), d = xv.dim(2);
    Tensor y({b, a, d});
    for (int i = 0; i < a; ++i)
        for (int j = 0; j < b; ++j)
            for (int k = 0; k < d; ++k) y.at(j, i, k) = xv.at(i, j, k);
    return push(std::move(y), wants(x), [x, a, b, d, out_id = static_cast<int>(nodes_.size())](Graph& g) {
        if (!g.wants(x)) return;
        const Tensor& dy = g.nodes_[static_cast<size_t>(out_id)].grad;
        Tensor& dx = g.grad_ref(x);
        for (int j = 0; j < b; ++j)
            for (int i = 0; i < a; ++i)
                for (int k = 0; k < d; ++k) dx.at(i, j, k) += dy.at(j, i, k);
    });
}

namespace {
struct AttnSaved {
    std::vector<Tensor> q, k, v, ctx;  // per batch, [S, D]
    std::vector<Tensor> p;             // per (batch*heads), [S, S]
};

inline bool pfn_allows(int i, int j, int n_ctx) { return j < n_ctx || j == i; }
}  // namespace

Var Graph::attention(Var x, int heads, Mask mask, int n_ctx, Var wq, Var wk, Var wv, Var wo, Var bo) {
    const Tensor& xv = val(x);
    if (xv.rank() != 3) throw RuntimeFailure("attention: rank-3 input required");
    const int nb = xv.dim(0), s = xv.dim(1), d = xv.dim(2);
    if (d % heads != 0) throw RuntimeFailure("attention: dim not divisible by heads");
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    if (mask == Mask::pfn && (n_ctx < 1 || n_ctx > s)) throw RuntimeFailure("attention: bad n_ctx");

    auto saved = std::make_shared<AttnSaved>();
    saved->q.reserve(static_cast<size_t>(nb));
    Tensor y(xv.shape());

    Tensor qh({s, dh}), kh({s, dh}), vh({s, dh}), ch({s, dh});
    for (int b = 0; b < nb; ++b) {
        const double* xb = xv.row(b, 0);
        Tensor q({s, d}), k({s, d}), v({s, d}), ctx({s, d});
        matmul_acc(xb, val(wq).data(), q.data(), s, d, d);
        matmul_acc(xb, val(wk).data(), k.data(), s, d, d);
        matmul_acc(xb, val(wv).data(), v.data(), s, d, d);

        for (int h = 0; h < heads; ++h) {
            for (int i = 0; i < s; ++i) {
                const size_t off = static_cast<size_t>(i) * d + static_cast<size_t>(h) * dh;
                std::copy(q.data() + off, q.data() + off + dh, qh.data() + static_cast<size_t>(i) * dh);
                std::copy(k.data() + off, k.data() + off + dh, kh.data() + static_cast<size_t>(i) * dh);
                std::copy(v.data() + off, v.data() + off + dh, vh.data() + static_cast<size_t>(i) * dh);
            }
            Tensor p({s, s});
            matmul_bt_acc(qh.data(), kh.data(), p.data(), s, dh, s);
            for (size_t i = 0; i < p.numel(); ++i) p[i] *= scale;
            for (int i = 0; i < s; ++i) {
                double* prow = p.data() + static_cast<size_t>(i) * s;
                if (mask == Mask::pfn) {
                    for (int j = 0; j < s; ++j) {
                        if (!pfn_allows(i, j, n_ctx)) prow[j] = -1e300;
                    }
                }
                softmax_inplace(prow, s);
            }
            ch.fill(0.0);
            matmul_acc(p.data(), vh.data(), ch.data(), s, s, dh);
            for (int i = 0; i < s; ++i) {
                const size_t off = static_cast<size_t>(i) * d + static_cast<size_t>(h) * dh;
                std::copy(ch.data() + static_cast<size_t>(i) * dh, ch.data() + static_cast<size_t>(i + 1) * dh,
                          ctx.data() + off);
            }
            saved->p.push_back(std::move(p));
        }

        double* yb = y.row(b, 0);
        matmul_acc(ctx.data(), val(wo).data(), yb, s, d, d);
        if (bo.valid()) {
            for (int i = 0; i < s; ++i) axpy(1.0, val(bo).data(), yb + static_cast<size_t>(i) * d, d);
        }
        saved->q.push_back(std::move(q));
        saved->k.push_back(std::move(k));
        saved->v.push_back(std::move(v));
        saved->ctx.push_back(std::move(ctx));
    }

    const bool needs = wants(x) || wants(wq) || wants(wk) || wants(wv) || wants(wo) || (bo.valid() && wants(bo));
    return push(std::move(y), needs,
                [x, heads, wq, wk, wv, wo, bo, nb, s, d, dh, scale, saved,
                 out_id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& dy = g.nodes_[static_cast<size_t>(out_id)].grad;
        const Tensor& xv = g.val(x);
        Tensor qh({s, dh}), kh({s, dh}), vh({s, dh});
        Tensor dqh({s, dh}), dkh({s, dh}), dvh({s, dh}), dch({s, dh});
        Tensor dp({s, s});
        for (int b = 0; b < nb; ++b) {
            const double* dyb = dy.row(b, 0);
            const Tensor& q = saved->q[static_cast<size_t>(b)];
            const Tensor& k = saved->k[static_cast<size_t>(b)];
            const Tensor& v = saved->v[static_cast<size_t>(b)];
            const Tensor& ctx = saved->ctx[static_cast<size_t>(b)];

            // out = ctx @ wo + bo
            Tensor dctx({s, d});
            matmul_bt_acc(dyb, g.val(wo).data(), dctx.data(), s, d, d);
            if (g.wants(wo)) matmul_at_acc(ctx.data(), dyb, g.grad_ref(wo).data(), s, d, d);
            if (bo.valid() && g.wants(bo)) {
                double* dbo = g.grad_ref(bo).data();
                for (int i = 0; i < s; ++i) axpy(1.0, dyb + static_cast<size_t>(i) * d, dbo, d);
            }

            Tensor dq({s, d}), dk({s, d}), dv({s, d});
            for (int h = 0; h < heads; ++h) {
                const Tensor& p = saved->p[static_cast<size_t>(b) * heads + h];
                for (int i = 0; i < s; ++i) {
                    const size_t off = static_cast<size_t>(i) * d + static_cast<size_t>(h) * dh;
                    std::copy(q.data() + off, q.data() + off + dh, qh.data() + static_cast<size_t>(i) * dh);
                    std::copy(k.data() + off, k.data() + off + dh, kh.data() + static_cast<size_t>(i) * dh);
                    std::copy(v.data() + off, v.data() + off + dh, vh.data() + static_cast<size_t>(i) * dh);
                    std::copy(dctx.data() + off, dctx.data() + off + dh, dch.data() + static_cast<size_t>(i) * dh);
                }
                dp.fill(0.0);
                matmul_bt_acc(dch.data(), vh.data(), dp.data(), s, dh, s);
                dvh.fill(0.0);
                matmul_at_acc(p.data(), dch.data(), dvh.data(), s, s, dh);

                // softmax backward rowwise, then undo the 1/sqrt(dh) scale
                for (int i = 0; i < s; ++i) {
                    const double* prow = p.data() + static_cast<size_t>(i) * s;
                    double* dprow = dp.data() + static_cast<size_t>(i) * s;
                    double acc = 0;
                    for (int j = 0; j < s; ++j) acc += dprow[j] * prow[j];
                    for (int j = 0; j < s; ++j) dprow[j] = prow[j] * (dprow[j] - acc) * scale;
                }

                dqh.fill(0.0);
                matmul_acc(dp.data(), kh.data(), dqh.data(), s, s, dh);
                dkh.fill(0.0);
                matmul_at_acc(dp.data(), qh.data(), dkh.data(), s, s, dh);

                for (int i = 0; i < s; ++i) {
                    const size_t off = static_cast<size_t>(i) * d + static_cast<size_t>(h) * dh;
                    axpy(1.0, dqh.data() + static_cast<size_t>(i) * dh, dq.data() + off, dh);
                    axpy(1.0, dkh.data() + static_cast<size_t>(i) * dh, dk.data() + off, dh);
                    axpy(1.0, dvh.data() + static_cast<size_t>(i) * dh, dv.data() + off, dh);
                }
            }

            const double* xb = xv.row(b, 0);
            if (g.wants(x)) {
                double* dxb = g.grad_ref(x).row(b, 0);
                matmul_bt_acc(dq.data(), g.val(wq).data(), dxb, s, d, d);
                matmul_bt_acc(dk.data(), g.val(wk).data(), dxb, s, d, d);
                matmul_bt_acc(dv.data(), g.val(wv).data(), dxb, s, d, d);
            }
            if (g.wants(wq)) matmul_at_acc(xb, dq.data(), g.grad_ref(wq).data(), s, d, d);
            if (g.wants(wk)) matmul_at_acc(xb, dk.data(), g.grad_ref(wk).data(), s, d, d);
            if (g.wants(wv)) matmul_at_acc(xb, dv.data(), g.grad_ref(wv).data(), s, d, d);
        }
    });
}

Var Graph::build_grid(Var feat, Var train_targets, Var unknown, Var think, int n_train) {
    const Tensor& fv = val(feat);
    if (fv.rank() != 3) throw RuntimeFailure("build_grid: feat must be [n, G, d]");
    const int n = fv.dim(0), gcols = fv.dim(1), d = fv.dim(2);
    const Tensor& tv = val(train_targets);
    const Tensor& uv = val(unknown);
    const Tensor& kv = val(think);
    const int r = kv.rank() == 2 ? kv.dim(0) : 0;
    if (n_train > n || tv.dim(0) != n_train) throw RuntimeFailure("build_grid: bad n_train");

    Tensor y({r + n, gcols + 1, d});
    for (int i = 0; i < r; ++i)
        for (int c = 0; c <= gcols; ++c)
            std::copy(kv.row(i), kv.row(i) + d, y.row(i, c));
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < gcols; ++c) std::copy(fv.row(i, c), fv.row(i, c) + d, y.row(r + i, c));
        const double* tok = i < n_train ? tv.row(i) : uv.data();
        std::copy(tok, tok + d, y.row(r + i, gcols));
    }

    const bool needs = wants(feat) || wants(train_targets) || wants(unknown) || wants(think);
    return push(std::move(y), needs,
                [feat, train_targets, unknown, think, n, gcols, d, r, n_train,
                 out_id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& dy = g.nodes_[static_cast<size_t>(out_id)].grad;
        if (g.wants(think)) {
            Tensor& dk = g.grad_ref(think);
            for (int i = 0; i < r; ++i)
                for (int c = 0; c <= gcols; ++c) axpy(1.0, dy.row(i, c), dk.row(i), d);
        }
        if (g.wants(feat)) {
            Tensor& df = g.grad_ref(feat);
            for (int i = 0; i < n; ++i)
                for (int c = 0; c < gcols; ++c) axpy(1.0, dy.row(r + i, c), df.row(i, c), d);
        }
        if (g.wants(train_targets)) {
            Tensor& dt = g.grad_ref(train_targets);
            for (int i = 0; i < n_train; ++i) axpy(1.0, dy.row(r + i, gcols), dt.row(i), d);
        }
        if (g.wants(unknown)) {
            double* du = g.grad_ref(unknown).data();
            for (int i = n_train; i < n; ++i) axpy(1.0, dy.row(r + i, gcols), du, d);
        }
    });
}

Var Graph::take_col(Var x, int col) {
    const Tensor& xv = val(x);
    if (xv.rank() != 3 || col < 0 || col >= xv.dim(1)) throw RuntimeFailure("take_col: bad column");
    const int a = xv.dim(0), d = xv.dim(2);
    Tensor y({a, d});
    for (int i = 0; i < a; ++i) std::copy(xv.row(i, col), xv.row(i, col) + d, y.row(i));
    return push(std::move(y), wants(x), [x, col, a, d, out_id = static_cast<int>(nodes_.size())](Graph& g) {
        if (!g.wants(x)) return;
        const Tensor& dy = g.nodes_[static_cast<size_t>(out_id)].grad;
        Tensor& dx = g.grad_ref(x);
        for (int i = 0; i < a; ++i) axpy(1.0, dy.row(i), dx.row(i, col), d);
    });
}

Var Graph::take_rows(Var x, int begin, int count) {
    const Tensor& xv = val(x);
    if (xv.rank() != 2 || begin < 0 || begin + count > xv.dim(0)) throw RuntimeFailure("take_rows: bad range");
    const int d = xv.dim(1);
    Tensor y({count, d});
    std::copy(xv.row(begin), xv.row(begin) + static_cast<size_t>(count) * d, y.data());
    return push(std::move(y), wants(x), [x, begin, count, d, out_id = static_cast<int>(nodes_.size())](Graph& g) {
        if (!g.wants(x)) return;
        const Tensor& dy = g.nodes_[static_cast<size_t>(out_id)].grad;
        axpy(1.0, dy.data(), g.grad_ref(x).row(begin), count * d);
    });
}

Var Graph::gather_rows(Var table, std::vector<int> indices) {
    const Tensor& tv = val(table);
    if (tv.rank() != 2) throw RuntimeFailure("gather_rows: table must be 2d");
    const int d = tv.dim(1);
    const int n = static_cast<int>(indices.size());
    Tensor y({n, d});
    for (int i = 0; i < n; ++i) {
        const int r = indices[static_cast<size_t>(i)];
        if (r < 0 || r >= tv.dim(0)) throw RuntimeFailure("gather_rows: index out of range");
        std::copy(tv.row(r), tv.row(r) + d, y.row(i));
    }
    return push(std::move(y), wants(table),
                [table, idx = std::move(indices), d, out_id = static_cast<int>(nodes_.size())](Graph& g) {
        if (!g.wants(table)) return;
        const Tensor& dy = g.nodes_[static_cast<size_t>(out_id)].grad;
        Tensor& dt = g.grad_ref(table);
        for (size_t i = 0; i < idx.size(); ++i) axpy(1.0, dy.row(static_cast<int>(i)), dt.row(idx[i]), d);
    });
}

Var Graph::ce_loss(Var logits, std::vector<int> targets, int n_valid) {
    const Tensor& lv = val(logits);
    if (lv.rank() != 2) throw RuntimeFailure("ce_loss: logits must be 2d");
    const int n = lv.dim(0), c = lv.dim(1);
    if (n_valid < 1 || n_valid > c) throw RuntimeFailure("ce_loss: bad class count");
    if (static_cast<int>(targets.size()) != n) throw RuntimeFailure("ce_loss: target count mismatch");

    auto probs = std::make_shared<Tensor>(Tensor({n, c}));
    double total = 0;
    for (int i = 0; i < n; ++i) {
        const int t = targets[static_cast<size_t>(i)];
        if (t < 0 || t >= n_valid) throw RuntimeFailure("ce_loss: target outside valid classes");
        const double* row = lv.row(i);
        const double lse = log_sum_exp(row, n_valid);
        total += lse - row[t];
        double* prow = probs->row(i);
        for (int j = 0; j < n_valid; ++j) prow[j] = std::exp(row[j] - lse);
    }
    Tensor y({1});
    y[0] = total / n;
    return push(std::move(y), wants(logits),
                [logits, tg = std::move(targets), n, n_valid, probs,
                 out_id = static_cast<int>(nodes_.size())](Graph& g) {
        if (!g.wants(logits)) return;
        const double go = g.nodes_[static_cast<size_t>(out_id)].grad[0];
        Tensor& dl = g.grad_ref(logits);
        const double inv_n = 1.0 / n;
        for (int i = 0; i < n; ++i) {
            double* drow = dl.row(i);
            const double* prow = probs->row(i);
            for (int j = 0; j < n_valid; ++j) drow[j] += go * inv_n * prow[j];
            drow[tg[static_cast<size_t>(i)]] -= go * inv_n;
        }
    });
}

void Graph::backward(Var loss) {
    Node& last = nodes_[static_cast<size_t>(loss.id)];
    if (!last.needs_grad) throw RuntimeFailure("backward: loss does not require grad");
    if (last.value.numel() != 1) throw RuntimeFailure("backward: loss must be scalar");
    last.grad[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        Node& node = nodes_[static_cast<size_t>(i)];
        if (node.needs_grad && node.backprop) node.backprop(*this);
    }
}

}  // namespace picotab
