#include "picotab/model.hpp"

#include <algorithm>
#include <cmath>

#include "picotab/errors.hpp"
#include "picotab/mathx.hpp"
#include "picotab/rng.hpp"

namespace picotab {

void ModelConfig::validate() const {
    if (depth < 1) throw ConfigError("model: depth must be >= 1");
    if (dim < 2 || heads < 1 || dim % heads != 0) {
        throw ConfigError("model: dim must be positive and divisible by heads");
    }
    if (group_size < 1) throw ConfigError("model: group_size must be >= 1");
    if (n_thinking < 0) throw ConfigError("model: n_thinking must be >= 0");
    if (max_classes < 2) throw ConfigError("model: max_classes must be >= 2");
    if (n_bins < 2) throw ConfigError("model: n_bins must be >= 2");
    if (feature_cap < 1) throw ConfigError("model: feature_cap must be >= 1");
    if (ffn_mult < 1 || encoder_hidden < 1) throw ConfigError("model: hidden sizes must be >= 1");
}

ModelConfig ModelConfig::paper_scale() {
    // Published scale (classification variant); far beyond desk budgets.
    ModelConfig cfg;
    cfg.depth = 24;  // 18 for the regression variant
    cfg.dim = 512;
    cfg.heads = 8;
    cfg.group_size = 3;
    cfg.n_thinking = 64;
    cfg.max_classes = 10;
    cfg.feature_cap = 500;
    cfg.ffn_mult = 4;
    cfg.encoder_hidden = 512;
    return cfg;
}

BinSpec BinSpec::equal_probability(int k) {
    if (k < 2) throw ConfigError("bins: need at least 2");
    BinSpec spec;
    spec.borders.resize(static_cast<size_t>(k) + 1);
    for (int i = 1; i < k; ++i) {
        spec.borders[static_cast<size_t>(i)] = inv_normal_cdf(static_cast<double>(i) / k);
    }
    // tail medians of the standard normal; serve as the tail centers
    spec.borders[0] = inv_normal_cdf(0.5 / k);
    spec.borders[static_cast<size_t>(k)] = inv_normal_cdf(1.0 - 0.5 / k);
    return spec;
}

int BinSpec::bin_of(double z) const {
    const int k = n_bins();
    int idx = 0;
    for (int i = 1; i < k; ++i) {
        if (z >= borders[static_cast<size_t>(i)]) ++idx;
    }
    return idx;
}

double BinSpec::center(int bin) const {
    const int k = n_bins();
    if (bin <= 0) return borders.front();
    if (bin >= k - 1) return borders.back();
    return 0.5 * (borders[static_cast<size_t>(bin)] + borders[static_cast<size_t>(bin) + 1]);
}

double BinSpec::point_from(const double* probs) const {
    double acc = 0;
    for (int b = 0; b < n_bins(); ++b) acc += probs[b] * center(b);
    return acc;
}

std::vector<int> bin_targets(const std::vector<double>& z, const BinSpec& spec) {
    std::vector<int> out(z.size());
    for (size_t i = 0; i < z.size(); ++i) {
        if (!std::isfinite(z[i])) throw DataError("bin_targets: invalid-target (non-finite)");
        out[i] = spec.bin_of(z[i]);
    }
    return out;
}

Tensor& ParamStore::add(const std::string& name, std::vector<int> shape) {
    if (has(name)) throw ConfigError("params: duplicate name " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, Tensor(std::move(shape)));
    return entries_.back().second;
}

Tensor& ParamStore::get(const std::string& name) {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("params: unknown name " + name);
    return entries_[it->second].second;
}

const Tensor& ParamStore::get(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("params: unknown name " + name);
    return entries_[it->second].second;
}

size_t ParamStore::total_params() const {
    size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.numel();
    return n;
}

namespace {

void layout_params(ParamStore& p, const ModelConfig& cfg) {
    const int d = cfg.dim;
    const int he = cfg.encoder_hidden;
    const int f = cfg.dim * cfg.ffn_mult;
    p.add("enc.w1", {cfg.encoder_inputs(), he});
    p.add("enc.b1", {he});
    p.add("enc.w2", {he, d});
    p.add("enc.b2", {d});
    p.add("ytok.w1", {1, he});
    p.add("ytok.b1", {he});
    p.add("ytok.w2", {he, d});
    p.add("ytok.b2", {d});
    p.add("class_emb", {cfg.max_classes, d});
    p.add("unknown", {d});
    p.add("think", {cfg.n_thinking, d});
    for (int l = 0; l < cfg.depth; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        for (const char* axis : {"row", "col"}) {
            const std::string ln = pre + (axis[0] == 'r' ? "ln1." : "ln2.");
            p.add(ln + "g", {d});
            p.add(ln + "b", {d});
            p.add(pre + axis + ".wq", {d, d});
            p.add(pre + axis + ".wk", {d, d});
            p.add(pre + axis + ".wv", {d, d});
            p.add(pre + axis + ".wo", {d, d});
            p.add(pre + axis + ".bo", {d});
        }
        p.add(pre + "ln3.g", {d});
        p.add(pre + "ln3.b", {d});
        p.add(pre + "ffn.w1", {d, f});
        p.add(pre + "ffn.b1", {f});
        p.add(pre + "ffn.w2", {f, d});
        p.add(pre + "ffn.b2", {d});
    }
    p.add("out_ln.g", {d});
    p.add("out_ln.b", {d});
    p.add("head_cls.w", {d, cfg.max_classes});
    p.add("head_cls.b", {cfg.max_classes});
    p.add("head_reg.w", {d, cfg.n_bins});
    p.add("head_reg.b", {cfg.n_bins});
}

bool ends_with(const std::string& s, const std::string& tail) {
    return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
}

}  // namespace

Model Model::init(const ModelConfig& config, uint64_t seed) {
    config.validate();
    Model m;
    m.config = config;
    layout_params(m.params, config);

    Rng rng(Rng::splitmix(seed ^ 0x90de1a11c0ffeeULL));
    const double resid_shrink = 1.0 / std::sqrt(3.0 * config.depth);
    for (auto& [name, t] : m.params.entries()) {
        if (ends_with(name, ".g")) {
            t.fill(1.0);
        } else if (ends_with(name, ".b") || ends_with(name, ".bo") || name.find(".b1") != std::string::npos ||
                   name.find(".b2") != std::string::npos) {
            t.fill(0.0);
        } else if (name == "class_emb" || name == "unknown" || name == "think") {
            for (size_t i = 0; i < t.numel(); ++i) t[i] = 0.5 * rng.normal();
        } else {
            const int fan_in = t.dim(0);
            double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
            if (ends_with(name, ".wo") || ends_with(name, "ffn.w2")) scale *= resid_shrink;
            for (size_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
        }
    }
    return m;
}

CheckpointContainer Model::to_checkpoint() const {
    CheckpointContainer box;
    box.set_header("object", "model");
    box.set_header("depth", std::to_string(config.depth));
    box.set_header("dim", std::to_string(config.dim));
    box.set_header("heads", std::to_string(config.heads));
    box.set_header("group_size", std::to_string(config.group_size));
    box.set_header("n_thinking", std::to_string(config.n_thinking));
    box.set_header("max_classes", std::to_string(config.max_classes));
    box.set_header("n_bins", std::to_string(config.n_bins));
    box.set_header("feature_cap", std::to_string(config.feature_cap));
    box.set_header("ffn_mult", std::to_string(config.ffn_mult));
    box.set_header("encoder_hidden", std::to_string(config.encoder_hidden));
    for (const auto& [name, t] : params.entries()) box.set_tensor(name, t);
    return box;
}

Model Model::from_checkpoint(const CheckpointContainer& box) {
    if (box.header_or("object", "") != "model") throw DataError("checkpoint: not a model file");
    ModelConfig cfg;
    auto geti = [&](const char* key) {
        try {
            return std::stoi(box.header_value(key));
        } catch (const std::exception&) {
            throw DataError(std::string("checkpoint: bad or missing header ") + key);
        }
    };
    cfg.depth = geti("depth");
    cfg.dim = geti("dim");
    cfg.heads = geti("heads");
    cfg.group_size = geti("group_size");
    cfg.n_thinking = geti("n_thinking");
    cfg.max_classes = geti("max_classes");
    cfg.n_bins = geti("n_bins");
    cfg.feature_cap = geti("feature_cap");
    cfg.ffn_mult = geti("ffn_mult");
    cfg.encoder_hidden = geti("encoder_hidden");
    cfg.validate();

    Model m;
    m.config = cfg;
    layout_params(m.params, cfg);
    for (auto& [name, t] : m.params.entries()) {
        if (!box.has_tensor(name)) throw DataError("checkpoint: missing parameter " + name);
        const Tensor& src = box.tensor(name);
        if (!src.same_shape(t)) throw DataError("checkpoint: shape mismatch for " + name);
        t = src;
    }
    return m;
}

// --- assembly ---------------------------------------------------------------

Tensor make_encoder_input(const Tensor& values, const std::vector<uint8_t>& flags,
                          const ModelConfig& config) {
    const int n = values.dim(0);
    const int m = values.dim(1);
    if (m < 1) throw DataError("embed: empty-input (no feature columns)");
    const int g = config.group_size;
    const int gcols = config.groups_for(m);
    const int width = config.encoder_inputs();
    Tensor out({n, gcols, width});
    for (int i = 0; i < n; ++i) {
        for (int q = 0; q < gcols; ++q) {
            double* tok = out.row(i, q);
            const bool padded = (q + 1) * g > m;
            for (int t = 0; t < g; ++t) {
                const int src = q * g + t;
                if (src < m) {
                    tok[t] = values.at(i, src);
                    tok[g + t] = flags[static_cast<size_t>(i) * m + src] ? 1.0 : 0.0;
                } else {
                    tok[t] = 0.0;
                    tok[g + t] = 1.0;
                }
            }
            tok[2 * g] = padded ? 1.0 : 0.0;
        }
    }
    return out;
}

TaskContext assemble_context(const Tensor& values, const std::vector<uint8_t>& flags,
                             const std::vector<double>& y, TaskKind kind, int n_classes,
                             const ModelConfig& config, uint64_t pos_seed) {
    TaskContext ctx;
    ctx.n_train = values.dim(0);
    ctx.n_features = values.dim(1);
    if (ctx.n_train < 1) throw DataError("context: no training rows");
    if (static_cast<int>(y.size()) != ctx.n_train) throw DataError("context: target size mismatch");
    ctx.enc_in = make_encoder_input(values, flags, config);
    ctx.G = ctx.enc_in.dim(1);
    ctx.kind = kind;

    Rng rng(Rng::splitmix(pos_seed ^ 0x9051710e5ULL));
    ctx.group_pos = Tensor({ctx.G, config.dim});
    for (size_t i = 0; i < ctx.group_pos.numel(); ++i) ctx.group_pos[i] = 0.5 * rng.normal();

    if (kind == TaskKind::classification) {
        if (n_classes < 2) throw DataError("context: classification needs >= 2 classes");
        if (n_classes > config.max_classes) {
            throw DataError("context: " + std::to_string(n_classes) + " classes exceed model capacity " +
                            std::to_string(config.max_classes));
        }
        ctx.n_classes = n_classes;
        ctx.train_labels.resize(static_cast<size_t>(ctx.n_train));
        for (int i = 0; i < ctx.n_train; ++i) {
            const int label = static_cast<int>(y[static_cast<size_t>(i)]);
            if (label < 0 || label >= n_classes) throw DataError("context: label outside [0, n_classes)");
            ctx.train_labels[static_cast<size_t>(i)] = label;
        }
    } else {
        ctx.y_mean = mean(y);
        const double sd = y.size() > 1 ? sample_std(y) : 0.0;
        if (sd < 1e-12) throw DataError("context: degenerate regression target");
        ctx.y_std = sd;
        ctx.train_z.resize(y.size());
        for (size_t i = 0; i < y.size(); ++i) ctx.train_z[i] = (y[i] - ctx.y_mean) / ctx.y_std;
        ctx.bins = BinSpec::equal_probability(config.n_bins);
    }
    return ctx;
}

TaskQueries assemble_queries(const Tensor& values, const std::vector<uint8_t>& flags,
                             const TaskContext& ctx, const ModelConfig& config) {
    if (values.dim(1) != ctx.n_features) throw DataError("queries: feature count mismatch");
    TaskQueries q;
    q.n_test = values.dim(0);
    if (q.n_test < 1) throw DataError("queries: no rows");
    q.enc_in = make_encoder_input(values, flags, config);
    return q;
}

// --- training path -----------------------------------------------------------

Var BoundParams::operator[](const std::string& name) const {
    const auto it = vars.find(name);
    if (it == vars.end()) throw ConfigError("bound params: unknown name " + name);
    return it->second;
}

BoundParams bind_params(Graph& graph, const Model& model, bool needs_grad) {
    BoundParams bound;
    for (const auto& [name, t] : model.params.entries()) {
        bound.vars[name] = graph.leaf(t, needs_grad);
    }
    return bound;
}

ForwardResult forward_train(Graph& g, const Model& model, const BoundParams& p,
                            const TaskContext& ctx, const TaskQueries& queries,
                            const std::vector<int>& targets) {
    const ModelConfig& cfg = model.config;
    const int n_train = ctx.n_train;
    const int n_test = queries.n_test;
    const int n_rows = n_train + n_test;
    if (queries.enc_in.dim(1) != ctx.G) throw RuntimeFailure("forward: group mismatch");
    if (static_cast<int>(targets.size()) != n_test) throw RuntimeFailure("forward: target count mismatch");

    // all-row encoder input, train rows first
    Tensor enc_all({n_rows, ctx.G, cfg.encoder_inputs()});
    std::copy(ctx.enc_in.data(), ctx.enc_in.data() + ctx.enc_in.numel(), enc_all.data());
    std::copy(queries.enc_in.data(), queries.enc_in.data() + queries.enc_in.numel(),
              enc_all.data() + ctx.enc_in.numel());

    Var enc = g.leaf(enc_all, false);
    Var h = g.linear(enc, p["enc.w1"], p["enc.b1"]);
    h = g.gelu(h);
    Var feat = g.linear(h, p["enc.w2"], p["enc.b2"]);   // [n_rows, G, dim]
    feat = g.add_broadcast(feat, g.leaf(ctx.group_pos, false));

    Var ttok;  // [n_train, dim]
    if (ctx.kind == TaskKind::classification) {
        ttok = g.gather_rows(p["class_emb"], ctx.train_labels);
    } else {
        Tensor z({n_train, 1});
        for (int i = 0; i < n_train; ++i) z.at(i, 0) = ctx.train_z[static_cast<size_t>(i)];
        Var zv = g.leaf(z, false);
        Var yh = g.linear(zv, p["ytok.w1"], p["ytok.b1"]);
        yh = g.gelu(yh);
        ttok = g.linear(yh, p["ytok.w2"], p["ytok.b2"]);
    }

    Var grid = g.build_grid(feat, ttok, p["unknown"], p["think"], n_train);
    const int n_ctx_rows = cfg.n_thinking + n_train;

    for (int l = 0; l < cfg.depth; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        // rows talk within each column, under the PFN mask
        Var hn = g.layer_norm(grid, p[pre + "ln1.g"], p[pre + "ln1.b"]);
        Var ht = g.transpose01(hn);  // [cols, rows, dim]
        Var attn = g.attention(ht, cfg.heads, Graph::Mask::pfn, n_ctx_rows, p[pre + "row.wq"],
                               p[pre + "row.wk"], p[pre + "row.wv"], p[pre + "row.wo"], p[pre + "row.bo"]);
        grid = g.add(grid, g.transpose01(attn));

        // columns talk within each row, unmasked
        Var hc = g.layer_norm(grid, p[pre + "ln2.g"], p[pre + "ln2.b"]);
        Var cattn = g.attention(hc, cfg.heads, Graph::Mask::none, 0, p[pre + "col.wq"],
                                p[pre + "col.wk"], p[pre + "col.wv"], p[pre + "col.wo"], p[pre + "col.bo"]);
        grid = g.add(grid, cattn);

        Var hf = g.layer_norm(grid, p[pre + "ln3.g"], p[pre + "ln3.b"]);
        Var f = g.linear(hf, p[pre + "ffn.w1"], p[pre + "ffn.b1"]);
        f = g.gelu(f);
        f = g.linear(f, p[pre + "ffn.w2"], p[pre + "ffn.b2"]);
        grid = g.add(grid, f);
    }

    Var fin = g.layer_norm(grid, p["out_ln.g"], p["out_ln.b"]);
    Var target_col = g.take_col(fin, ctx.G);  // [R + n_rows, dim]
    Var test_tok = g.take_rows(target_col, cfg.n_thinking + n_train, n_test);

    ForwardResult out;
    if (ctx.kind == TaskKind::classification) {
        out.logits = g.linear(test_tok, p["head_cls.w"], p["head_cls.b"]);
        out.loss = g.ce_loss(out.logits, targets, ctx.n_classes);
    } else {
        out.logits = g.linear(test_tok, p["head_reg.w"], p["head_reg.b"]);
        out.loss = g.ce_loss(out.logits, targets, cfg.n_bins);
    }
    return out;
}

// --- inference path ----------------------------------------------------------

namespace {

// y[M, dout] = gelu(x w1 + b1) w2 + b2 applied to flattened rows
Tensor mlp2(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
            const Tensor& b2) {
    size_t m = 1;
    for (int i = 0; i + 1 < x.rank(); ++i) m *= static_cast<size_t>(x.dim(i));
    const int rows = static_cast<int>(m);
    const int h = w1.dim(1), dout = w2.dim(1);
    Tensor hidden({rows, h});
    matmul_acc(x.data(), w1.data(), hidden.data(), rows, w1.dim(0), h);
    for (int i = 0; i < rows; ++i) axpy(1.0, b1.data(), hidden.row(i), h);
    for (size_t i = 0; i < hidden.numel(); ++i) {
        hidden[i] = 0.5 * hidden[i] * (1.0 + std::erf(hidden[i] * 0.7071067811865476));
    }
    std::vector<int> shape(x.shape().begin(), x.shape().end());
    shape.back() = dout;
    Tensor y(shape);
    matmul_acc(hidden.data(), w2.data(), y.data(), rows, h, dout);
    for (int i = 0; i < rows; ++i) axpy(1.0, b2.data(), y.data() + static_cast<size_t>(i) * dout, dout);
    return y;
}

Tensor apply_ln(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
    const int d = x.dim(x.rank() - 1);
    size_t m = x.numel() / static_cast<size_t>(d);
    Tensor y(x.shape());
    for (size_t i = 0; i < m; ++i) {
        const double* row = x.data() + i * static_cast<size_t>(d);
        double* out = y.data() + i * static_cast<size_t>(d);
        double mu = 0;
        for (int j = 0; j < d; ++j) mu += row[j];
        mu /= d;
        double var = 0;
        for (int j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= d;
        const double inv_s = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < d; ++j) out[j] = (row[j] - mu) * inv_s * gain[static_cast<size_t>(j)] + bias[static_cast<size_t>(j)];
    }
    return y;
}

// Full attention over a single short sequence (the feature axis).
void attn_sequence(const Tensor& xn, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                   const Tensor& wo, const Tensor& bo, int heads, double* out_acc) {
    const int s = xn.dim(0), d = xn.dim(1);
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor q({s, d}), k({s, d}), v({s, d}), ctx({s, d});
    matmul_acc(xn.data(), wq.data(), q.data(), s, d, d);
    matmul_acc(xn.data(), wk.data(), k.data(), s, d, d);
    matmul_acc(xn.data(), wv.data(), v.data(), s, d, d);
    Tensor qh({s, dh}), kh({s, dh}), vh({s, dh}), p({s, s}), ch({s, dh});
    for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < s; ++i) {
            const size_t off = static_cast<size_t>(i) * d + static_cast<size_t>(h) * dh;
            std::copy(q.data() + off, q.data() + off + dh, qh.data() + static_cast<size_t>(i) * dh);
            std::copy(k.data() + off, k.data() + off + dh, kh.data() + static_cast<size_t>(i) * dh);
            std::copy(v.data() + off, v.data() + off + dh, vh.data() + static_cast<size_t>(i) * dh);
        }
        p.fill(0.0);
        matmul_bt_acc(qh.data(), kh.data(), p.data(), s, dh, s);
        for (size_t i = 0; i < p.numel(); ++i) p[i] *= scale;
        for (int i = 0; i < s; ++i) softmax_inplace(p.row(i), s);
        ch.fill(0.0);
        matmul_acc(p.data(), vh.data(), ch.data(), s, s, dh);
        for (int i = 0; i < s; ++i) {
            std::copy(ch.data() + static_cast<size_t>(i) * dh, ch.data() + static_cast<size_t>(i + 1) * dh,
                      ctx.data() + static_cast<size_t>(i) * d + static_cast<size_t>(h) * dh);
        }
    }
    Tensor o({s, d});
    matmul_acc(ctx.data(), wo.data(), o.data(), s, d, d);
    for (int i = 0; i < s; ++i) {
        axpy(1.0, bo.data(), o.row(i), d);
        axpy(1.0, o.row(i), out_acc + static_cast<size_t>(i) * d, d);
    }
}

// Context token tensor [R + n_train, G+1, dim] (the training-path grid minus
// the query rows).
Tensor build_context_tokens(const Model& model, const TaskContext& ctx) {
    const ModelConfig& cfg = model.config;
    const Tensor feat0 = mlp2(ctx.enc_in, model.params.get("enc.w1"), model.params.get("enc.b1"),
                              model.params.get("enc.w2"), model.params.get("enc.b2"));
    const int r = cfg.n_thinking;
    const int cols = ctx.G + 1;
    Tensor x({r + ctx.n_train, cols, cfg.dim});
    const Tensor& think = model.params.get("think");
    for (int i = 0; i < r; ++i)
        for (int c = 0; c < cols; ++c) std::copy(think.row(i), think.row(i) + cfg.dim, x.row(i, c));

    for (int i = 0; i < ctx.n_train; ++i) {
        for (int c = 0; c < ctx.G; ++c) {
            double* dst = x.row(r + i, c);
            const double* src = feat0.row(i, c);
            const double* pos = ctx.group_pos.row(c);
            for (int j = 0; j < cfg.dim; ++j) dst[j] = src[j] + pos[j];
        }
    }
    if (ctx.kind == TaskKind::classification) {
        const Tensor& emb = model.params.get("class_emb");
        for (int i = 0; i < ctx.n_train; ++i) {
            const int label = ctx.train_labels[static_cast<size_t>(i)];
            std::copy(emb.row(label), emb.row(label) + cfg.dim, x.row(r + i, ctx.G));
        }
    } else {
        Tensor z({ctx.n_train, 1});
        for (int i = 0; i < ctx.n_train; ++i) z.at(i, 0) = ctx.train_z[static_cast<size_t>(i)];
        const Tensor ytok = mlp2(z, model.params.get("ytok.w1"), model.params.get("ytok.b1"),
                                 model.params.get("ytok.w2"), model.params.get("ytok.b2"));
        for (int i = 0; i < ctx.n_train; ++i) {
            std::copy(ytok.row(i), ytok.row(i) + cfg.dim, x.row(r + i, ctx.G));
        }
    }
    return x;
}

// Query token block [nb, G+1, dim] for test rows [begin, begin+nb).
Tensor build_query_tokens(const Model& model, const TaskContext& ctx, const Tensor& feat,
                          int begin, int nb) {
    const ModelConfig& cfg = model.config;
    const int cols = ctx.G + 1;
    Tensor x({nb, cols, cfg.dim});
    const Tensor& unknown = model.params.get("unknown");
    for (int i = 0; i < nb; ++i) {
        for (int c = 0; c < ctx.G; ++c) {
            double* dst = x.row(i, c);
            const double* src = feat.row(begin + i, c);
            const double* pos = ctx.group_pos.row(c);
            for (int j = 0; j < cfg.dim; ++j) dst[j] = src[j] + pos[j];
        }
        std::copy(unknown.data(), unknown.data() + cfg.dim, x.row(i, ctx.G));
    }
    return x;
}

constexpr int kCtxQueryBlock = 512;

}  // namespace

ContextCache fit_context(const Model& model, const TaskContext& ctx) {
    const ModelConfig& cfg = model.config;
    const int rows = cfg.n_thinking + ctx.n_train;
    const int cols = ctx.G + 1;
    const int d = cfg.dim;
    const int heads = cfg.heads;
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor x = build_context_tokens(model, ctx);
    ContextCache cache;
    cache.n_ctx_rows = rows;
    cache.cols = cols;
    cache.k.reserve(static_cast<size_t>(cfg.depth));
    cache.v.reserve(static_cast<size_t>(cfg.depth));

    Tensor xc({rows, d});      // one column's tokens, contiguous
    Tensor qh({rows, dh}), kh({rows, dh}), vh({rows, dh});
    for (int l = 0; l < cfg.depth; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        const Tensor hn = apply_ln(x, model.params.get(pre + "ln1.g"), model.params.get(pre + "ln1.b"));
        Tensor kcache({cols, rows, d}), vcache({cols, rows, d});
        const Tensor& wq = model.params.get(pre + "row.wq");
        const Tensor& wk = model.params.get(pre + "row.wk");
        const Tensor& wv = model.params.get(pre + "row.wv");
        const Tensor& wo = model.params.get(pre + "row.wo");
        const Tensor& bo = model.params.get(pre + "row.bo");

        for (int c = 0; c < cols; ++c) {
            for (int i = 0; i < rows; ++i) std::copy(hn.row(i, c), hn.row(i, c) + d, xc.row(i));
            Tensor q({rows, d});
            double* kc = kcache.row(c, 0);
            double* vc = vcache.row(c, 0);
            matmul_acc(xc.data(), wq.data(), q.data(), rows, d, d);
            matmul_acc(xc.data(), wk.data(), kc, rows, d, d);
            matmul_acc(xc.data(), wv.data(), vc, rows, d, d);

            Tensor ctx_out({rows, d});
            for (int h = 0; h < heads; ++h) {
                for (int i = 0; i < rows; ++i) {
                    const size_t off = static_cast<size_t>(i) * d + static_cast<size_t>(h) * dh;
                    std::copy(q.data() + off, q.data() + off + dh, qh.data() + static_cast<size_t>(i) * dh);
                    std::copy(kc + off, kc + off + dh, kh.data() + static_cast<size_t>(i) * dh);
                    std::copy(vc + off, vc + off + dh, vh.data() + static_cast<size_t>(i) * dh);
                }
                // blocked over query rows to bound the score buffer
                for (int qb = 0; qb < rows; qb += kCtxQueryBlock) {
                    const int nb = std::min(kCtxQueryBlock, rows - qb);
                    Tensor scores({nb, rows});
                    matmul_bt_acc(qh.data() + static_cast<size_t>(qb) * dh, kh.data(), scores.data(), nb, dh, rows);
                    for (size_t i = 0; i < scores.numel(); ++i) scores[i] *= scale;
                    for (int i = 0; i < nb; ++i) softmax_inplace(scores.row(i), rows);
                    Tensor blk({nb, dh});
                    matmul_acc(scores.data(), vh.data(), blk.data(), nb, rows, dh);
                    for (int i = 0; i < nb; ++i) {
                        std::copy(blk.row(i), blk.row(i) + dh,
                                  ctx_out.data() + static_cast<size_t>(qb + i) * d + static_cast<size_t>(h) * dh);
                    }
                }
            }
            // residual add of the projected attention output
            Tensor o({rows, d});
            matmul_acc(ctx_out.data(), wo.data(), o.data(), rows, d, d);
            for (int i = 0; i < rows; ++i) {
                axpy(1.0, bo.data(), o.row(i), d);
                axpy(1.0, o.row(i), x.row(i, c), d);
            }
        }
        cache.k.push_back(std::move(kcache));
        cache.v.push_back(std::move(vcache));

        const Tensor hc = apply_ln(x, model.params.get(pre + "ln2.g"), model.params.get(pre + "ln2.b"));
        for (int i = 0; i < rows; ++i) {
            Tensor seq({cols, d});
            std::copy(hc.row(i, 0), hc.row(i, 0) + static_cast<size_t>(cols) * d, seq.data());
            attn_sequence(seq, model.params.get(pre + "col.wq"), model.params.get(pre + "col.wk"),
                          model.params.get(pre + "col.wv"), model.params.get(pre + "col.wo"),
                          model.params.get(pre + "col.bo"), heads, x.row(i, 0));
        }

        const Tensor hf = apply_ln(x, model.params.get(pre + "ln3.g"), model.params.get(pre + "ln3.b"));
        const Tensor f = mlp2(hf, model.params.get(pre + "ffn.w1"), model.params.get(pre + "ffn.b1"),
                              model.params.get(pre + "ffn.w2"), model.params.get(pre + "ffn.b2"));
        axpy(1.0, f.data(), x.data(), static_cast<int>(x.numel()));
    }
    return cache;
}

Tensor infer_logits(const Model& model, const TaskContext& ctx, const ContextCache& cache,
                    const TaskQueries& queries, int block_rows) {
    const ModelConfig& cfg = model.config;
    const int cols = ctx.G + 1;
    const int d = cfg.dim;
    const int heads = cfg.heads;
    const int dh = d / heads;
    const int rows = cache.n_ctx_rows;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    if (cache.cols != cols || static_cast<int>(cache.k.size()) != cfg.depth) {
        throw RuntimeFailure("predict: cache does not match context");
    }
    const int n_out = ctx.kind == TaskKind::classification ? ctx.n_classes : cfg.n_bins;
    Tensor logits({queries.n_test, n_out});

    const Tensor feat = mlp2(queries.enc_in, model.params.get("enc.w1"), model.params.get("enc.b1"),
                             model.params.get("enc.w2"), model.params.get("enc.b2"));

    Tensor kh_ctx({rows, dh}), vh_ctx({rows, dh});
    for (int begin = 0; begin < queries.n_test; begin += block_rows) {
        const int nb = std::min(block_rows, queries.n_test - begin);
        Tensor x = build_query_tokens(model, ctx, feat, begin, nb);

        for (int l = 0; l < cfg.depth; ++l) {
            const std::string pre = "layer" + std::to_string(l) + ".";
            const Tensor hn = apply_ln(x, model.params.get(pre + "ln1.g"), model.params.get(pre + "ln1.b"));
            const Tensor& wq = model.params.get(pre + "row.wq");
            const Tensor& wk = model.params.get(pre + "row.wk");
            const Tensor& wv = model.params.get(pre + "row.wv");
            const Tensor& wo = model.params.get(pre + "row.wo");
            const Tensor& bo = model.params.get(pre + "row.bo");

            Tensor xc({nb, d});
            for (int c = 0; c < cols; ++c) {
                for (int i = 0; i < nb; ++i) std::copy(hn.row(i, c), hn.row(i, c) + d, xc.row(i));
                // each query row attends the cached context plus itself
                Tensor q({nb, d}), k_own({nb, d}), v_own({nb, d});
                matmul_acc(xc.data(), wq.data(), q.data(), nb, d, d);
                matmul_acc(xc.data(), wk.data(), k_own.data(), nb, d, d);
                matmul_acc(xc.data(), wv.data(), v_own.data(), nb, d, d);
                const double* kc = cache.k[static_cast<size_t>(l)].row(c, 0);
                const double* vc = cache.v[static_cast<size_t>(l)].row(c, 0);

                Tensor ctx_out({nb, d});
                for (int h = 0; h < heads; ++h) {
                    for (int i = 0; i < rows; ++i) {
                        const size_t off = static_cast<size_t>(i) * d + static_cast<size_t>(h) * dh;
                        std::copy(kc + off, kc + off + dh, kh_ctx.data() + static_cast<size_t>(i) * dh);
                        std::copy(vc + off, vc + off + dh, vh_ctx.data() + static_cast<size_t>(i) * dh);
                    }
                    Tensor qh({nb, dh});
                    for (int i = 0; i < nb; ++i) {
                        const size_t off = static_cast<size_t>(i) * d + static_cast<size_t>(h) * dh;
                        std::copy(q.data() + off, q.data() + off + dh, qh.data() + static_cast<size_t>(i) * dh);
                    }
                    Tensor scores({nb, rows});
                    matmul_bt_acc(qh.data(), kh_ctx.data(), scores.data(), nb, dh, rows);

                    for (int i = 0; i < nb; ++i) {
                        double* srow = scores.row(i);
                        const size_t off = static_cast<size_t>(i) * d + static_cast<size_t>(h) * dh;
                        double self_score = dot(qh.row(i), k_own.data() + off, dh) * scale;
                        double mx = self_score;
                        for (int j = 0; j < rows; ++j) {
                            srow[j] *= scale;
                            mx = std::max(mx, srow[j]);
                        }
                        double total = std::exp(self_score - mx);
                        const double p_self_raw = total;
                        for (int j = 0; j < rows; ++j) {
                            srow[j] = std::exp(srow[j] - mx);
                            total += srow[j];
                        }
                        const double inv = 1.0 / total;
                        for (int j = 0; j < rows; ++j) srow[j] *= inv;
                        double* out = ctx_out.data() + off;
                        const double p_self = p_self_raw * inv;
                        const double* vo = v_own.data() + off;
                        for (int t = 0; t < dh; ++t) out[t] = p_self * vo[t];
                    }
                    Tensor blk({nb, dh});
                    matmul_acc(scores.data(), vh_ctx.data(), blk.data(), nb, rows, dh);
                    for (int i = 0; i < nb; ++i) {
                        axpy(1.0, blk.row(i), ctx_out.data() + static_cast<size_t>(i) * d + static_cast<size_t>(h) * dh, dh);
                    }
                }
                Tensor o({nb, d});
                matmul_acc(ctx_out.data(), wo.data(), o.data(), nb, d, d);
                for (int i = 0; i < nb; ++i) {
                    axpy(1.0, bo.data(), o.row(i), d);
                    axpy(1.0, o.row(i), x.row(i, c), d);
                }
            }

            const Tensor hc = apply_ln(x, model.params.get(pre + "ln2.g"), model.params.get(pre + "ln2.b"));
            for (int i = 0; i < nb; ++i) {
                Tensor seq({cols, d});
                std::copy(hc.row(i, 0), hc.row(i, 0) + static_cast<size_t>(cols) * d, seq.data());
                attn_sequence(seq, model.params.get(pre + "col.wq"), model.params.get(pre + "col.wk"),
                              model.params.get(pre + "col.wv"), model.params.get(pre + "col.wo"),
                              model.params.get(pre + "col.bo"), heads, x.row(i, 0));
            }

            const Tensor hf = apply_ln(x, model.params.get(pre + "ln3.g"), model.params.get(pre + "ln3.b"));
            const Tensor f = mlp2(hf, model.params.get(pre + "ffn.w1"), model.params.get(pre + "ffn.b1"),
                                  model.params.get(pre + "ffn.w2"), model.params.get(pre + "ffn.b2"));
            axpy(1.0, f.data(), x.data(), static_cast<int>(x.numel()));
        }

        const Tensor fin = apply_ln(x, model.params.get("out_ln.g"), model.params.get("out_ln.b"));
        const Tensor& hw = ctx.kind == TaskKind::classification ? model.params.get("head_cls.w")
                                                                : model.params.get("head_reg.w");
        const Tensor& hb = ctx.kind == TaskKind::classification ? model.params.get("head_cls.b")
                                                                : model.params.get("head_reg.b");
        const int head_width = hw.dim(1);
        Tensor row_logits({1, head_width});
        for (int i = 0; i < nb; ++i) {
            row_logits.fill(0.0);
            matmul_acc(fin.row(i, ctx.G), hw.data(), row_logits.data(), 1, d, head_width);
            axpy(1.0, hb.data(), row_logits.data(), head_width);
            for (int j = 0; j < n_out; ++j) logits.at(begin + i, j) = row_logits[static_cast<size_t>(j)];
        }
    }
    return logits;
}

Tensor predict_probs(const Model& model, const TaskContext& ctx, const ContextCache& cache,
                     const TaskQueries& queries, int block_rows) {
    Tensor probs = infer_logits(model, ctx, cache, queries, block_rows);
    for (int i = 0; i < probs.dim(0); ++i) softmax_inplace(probs.row(i), probs.dim(1));
    return probs;
}

}  // namespace picotab
