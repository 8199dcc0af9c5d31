#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "picotab/checkpoint.hpp"
#include "picotab/errors.hpp"
#include "picotab/mathx.hpp"
#include "picotab/model.hpp"
#include "picotab/rng.hpp"

using namespace picotab;

namespace {

// independent inverse normal CDF via bisection on erfc
double inv_cdf_oracle(double p) {
    double lo = -12.0, hi = 12.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double cdf = 0.5 * std::erfc(-mid / std::sqrt(2.0));
        (cdf < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.depth = 1;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.group_size = 2;
    cfg.n_thinking = 2;
    cfg.max_classes = 3;
    cfg.n_bins = 4;
    cfg.ffn_mult = 2;
    cfg.encoder_hidden = 6;
    return cfg;
}

struct TinyTask {
    TaskContext ctx;
    TaskQueries queries;
    std::vector<int> targets;
};

TinyTask make_task(const ModelConfig& cfg, TaskKind kind, int n_train, int n_test, int m,
                   uint64_t seed) {
    Rng rng(seed);
    Tensor xtr({n_train, m}), xte({n_test, m});
    std::vector<uint8_t> ftr(static_cast<size_t>(n_train) * m, 0);
    std::vector<uint8_t> fte(static_cast<size_t>(n_test) * m, 0);
    for (size_t i = 0; i < xtr.numel(); ++i) {
        xtr[i] = rng.normal();
        if (i % 7 == 3) {
            ftr[i] = 1;
            xtr[i] = 0.0;
        }
    }
    for (size_t i = 0; i < xte.numel(); ++i) {
        xte[i] = rng.normal();
        if (i % 9 == 4) {
            fte[i] = 1;
            xte[i] = 0.0;
        }
    }

    TinyTask task;
    if (kind == TaskKind::classification) {
        const int n_classes = 2;
        std::vector<double> y(static_cast<size_t>(n_train));
        for (int i = 0; i < n_train; ++i) y[static_cast<size_t>(i)] = i % n_classes;
        task.ctx = assemble_context(xtr, ftr, y, kind, n_classes, cfg, seed ^ 0x705ULL);
        task.targets.resize(static_cast<size_t>(n_test));
        for (auto& t : task.targets) t = static_cast<int>(rng.uniform_int(0, n_classes - 1));
    } else {
        std::vector<double> y(static_cast<size_t>(n_train));
        for (auto& v : y) v = 1.5 + 2.0 * rng.normal();
        task.ctx = assemble_context(xtr, ftr, y, kind, 0, cfg, seed ^ 0x705ULL);
        task.targets.resize(static_cast<size_t>(n_test));
        for (auto& t : task.targets) {
            const double z = (1.5 + 2.0 * rng.normal() - task.ctx.y_mean) / task.ctx.y_std;
            t = task.ctx.bins.bin_of(z);
        }
    }
    task.queries = assemble_queries(xte, fte, task.ctx, cfg);
    return task;
}

double eval_loss(const Model& model, const TinyTask& task) {
    Graph g;
    BoundParams p = bind_params(g, model, false);
    const ForwardResult r = forward_train(g, model, p, task.ctx, task.queries, task.targets);
    return g.val(r.loss)[0];
}

void check_gradients(TaskKind kind) {
    const ModelConfig cfg = tiny_config();
    Model model = Model::init(cfg, 99);
    const TinyTask task = make_task(cfg, kind, 6, 3, 3, 2024);

    Graph g;
    BoundParams p = bind_params(g, model, true);
    const ForwardResult r = forward_train(g, model, p, task.ctx, task.queries, task.targets);
    g.backward(r.loss);

    const double h = 1e-5;
    size_t checked = 0;
    double worst = 0.0;
    for (auto& [name, tensor] : model.params.entries()) {
        const Tensor& ad = g.grad(p[name]);
        REQUIRE(ad.numel() == tensor.numel());
        for (size_t i = 0; i < tensor.numel(); ++i) {
            const double saved = tensor[i];
            tensor[i] = saved + h;
            const double up = eval_loss(model, task);
            tensor[i] = saved - h;
            const double dn = eval_loss(model, task);
            tensor[i] = saved;
            const double fd = (up - dn) / (2.0 * h);
            const double rel = std::abs(fd - ad[i]) / std::max({std::abs(fd), std::abs(ad[i]), 1e-6});
            worst = std::max(worst, rel);
            if (rel > 1e-4) {
                CAPTURE(name);
                CAPTURE(i);
                CAPTURE(fd);
                CAPTURE(ad[i]);
                CHECK(rel <= 1e-4);
            }
            ++checked;
        }
    }
    CHECK(checked > 1000);
    CHECK(worst <= 1e-4);
}

}  // namespace

TEST_CASE("bin spec matches a bisection oracle") {
    const int k = 32;
    const BinSpec spec = BinSpec::equal_probability(k);
    REQUIRE(spec.n_bins() == k);
    REQUIRE(spec.borders.size() == static_cast<size_t>(k) + 1);

    for (int i = 1; i < k; ++i) {
        CHECK(spec.borders[static_cast<size_t>(i)] ==
              doctest::Approx(inv_cdf_oracle(static_cast<double>(i) / k)).epsilon(1e-9));
    }
    CHECK(spec.borders[0] == doctest::Approx(inv_cdf_oracle(0.5 / k)).epsilon(1e-9));
    CHECK(spec.borders[static_cast<size_t>(k)] ==
          doctest::Approx(inv_cdf_oracle(1.0 - 0.5 / k)).epsilon(1e-9));
    CHECK(spec.borders[0] == doctest::Approx(-spec.borders[static_cast<size_t>(k)]).epsilon(1e-12));
    for (size_t i = 1; i < spec.borders.size(); ++i) CHECK(spec.borders[i] > spec.borders[i - 1]);

    // interior centers are midpoints; tail centers are the outer borders
    CHECK(spec.center(0) == spec.borders.front());
    CHECK(spec.center(k - 1) == spec.borders.back());
    CHECK(spec.center(5) ==
          doctest::Approx(0.5 * (spec.borders[5] + spec.borders[6])).epsilon(1e-12));
}

TEST_CASE("bin spec: median, one-hot, and uniform conventions") {
    const int k = 32;
    const BinSpec spec = BinSpec::equal_probability(k);

    // z = 0 sits exactly on the middle border and lands in bin k/2
    CHECK(spec.bin_of(0.0) == k / 2);
    CHECK(spec.bin_of(-1e300) == 0);
    CHECK(spec.bin_of(1e300) == k - 1);

    // one-hot distribution decodes to that bin's center
    std::vector<double> probs(static_cast<size_t>(k), 0.0);
    probs[7] = 1.0;
    CHECK(spec.point_from(probs.data()) == doctest::Approx(spec.center(7)).epsilon(1e-12));

    // uniform distribution decodes to 0 by symmetry
    std::fill(probs.begin(), probs.end(), 1.0 / k);
    CHECK(spec.point_from(probs.data()) == doctest::Approx(0.0).epsilon(1e-12));

    // bins are equal-probability under the normal CDF
    for (int i = 1; i + 1 < k; ++i) {
        const double lo = 0.5 * std::erfc(-spec.borders[static_cast<size_t>(i)] / std::sqrt(2.0));
        const double hi = 0.5 * std::erfc(-spec.borders[static_cast<size_t>(i) + 1] / std::sqrt(2.0));
        CHECK(hi - lo == doctest::Approx(1.0 / k).epsilon(1e-6));
    }

    CHECK(bin_targets({0.0, -5.0, 5.0}, spec) == std::vector<int>{k / 2, 0, k - 1});
    CHECK_THROWS_AS(bin_targets({0.0, std::nan("")}, spec), DataError);
    CHECK_THROWS_AS(BinSpec::equal_probability(1), ConfigError);
}

TEST_CASE("model config validation and paper scale reference") {
    ModelConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.groups_for(5) == 2);
    CHECK(cfg.groups_for(6) == 2);
    CHECK(cfg.groups_for(7) == 3);
    CHECK(cfg.encoder_inputs() == 7);

    ModelConfig bad = cfg;
    bad.dim = 30;  // not divisible by heads=4
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.depth = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.n_bins = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    const ModelConfig paper = ModelConfig::paper_scale();
    CHECK(paper.depth == 24);
    CHECK(paper.n_thinking == 64);
    CHECK(paper.group_size == 3);
    CHECK(paper.feature_cap == 500);
    CHECK_NOTHROW(paper.validate());
}

TEST_CASE("thinking rows cost exactly R * dim parameters") {
    ModelConfig cfg = tiny_config();
    cfg.n_thinking = 5;
    const Model with = Model::init(cfg, 1);
    cfg.n_thinking = 0;
    const Model without = Model::init(cfg, 1);
    CHECK(with.params.total_params() - without.params.total_params() ==
          static_cast<size_t>(5 * cfg.dim));
}

TEST_CASE("model init is deterministic with sane defaults") {
    const ModelConfig cfg = tiny_config();
    const Model a = Model::init(cfg, 7);
    const Model b = Model::init(cfg, 7);
    const Model c = Model::init(cfg, 8);

    REQUIRE(a.params.entries().size() == b.params.entries().size());
    bool any_diff_c = false;
    for (size_t e = 0; e < a.params.entries().size(); ++e) {
        const auto& [name, ta] = a.params.entries()[e];
        const Tensor& tb = b.params.entries()[e].second;
        const Tensor& tc = c.params.entries()[e].second;
        REQUIRE(ta.same_shape(tb));
        for (size_t i = 0; i < ta.numel(); ++i) {
            CHECK(ta[i] == tb[i]);
            if (ta[i] != tc[i]) any_diff_c = true;
        }
    }
    CHECK(any_diff_c);

    const Tensor& gain = a.params.get("layer0.ln1.g");
    const Tensor& bias = a.params.get("layer0.ln1.b");
    for (size_t i = 0; i < gain.numel(); ++i) {
        CHECK(gain[i] == 1.0);
        CHECK(bias[i] == 0.0);
    }
    for (size_t i = 0; i < a.params.get("head_cls.b").numel(); ++i) {
        CHECK(a.params.get("head_cls.b")[i] == 0.0);
    }
    // weights are random, not zero
    double sq = 0;
    const Tensor& w = a.params.get("layer0.row.wq");
    for (size_t i = 0; i < w.numel(); ++i) sq += w[i] * w[i];
    CHECK(sq > 0.0);
}

TEST_CASE("model checkpoint round trip") {
    const ModelConfig cfg = tiny_config();
    const Model m = Model::init(cfg, 31);
    CheckpointContainer box = m.to_checkpoint();
    CHECK(box.header_value("object") == "model");
    CHECK(box.header_value("dim") == "8");

    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "picotab_model_ckpt_test";
    fs::create_directories(dir);
    const std::string path = (dir / "model.tpfn").string();
    save_checkpoint(box, path);
    const CheckpointContainer loaded = load_checkpoint(path);
    const Model back = Model::from_checkpoint(loaded);
    CHECK(back.config.depth == cfg.depth);
    CHECK(back.config.n_bins == cfg.n_bins);

    // payload is f32; values come back as the f32 rounding of the originals
    for (size_t e = 0; e < m.params.entries().size(); ++e) {
        const auto& [name, orig] = m.params.entries()[e];
        const Tensor& got = back.params.get(name);
        REQUIRE(got.same_shape(orig));
        for (size_t i = 0; i < orig.numel(); ++i) {
            CHECK(got[i] == static_cast<double>(static_cast<float>(orig[i])));
        }
    }

    // second save of the loaded model is bitwise identical
    const std::string path2 = (dir / "model2.tpfn").string();
    save_checkpoint(back.to_checkpoint(), path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    fs::remove_all(dir);

    CheckpointContainer missing = m.to_checkpoint();
    CheckpointContainer partial;
    for (const auto& [k, v] : missing.header_entries()) partial.set_header(k, v);
    partial.set_tensor("enc.w1", m.params.get("enc.w1"));
    CHECK_THROWS_AS(Model::from_checkpoint(partial), DataError);

    CheckpointContainer wrong = m.to_checkpoint();
    wrong.set_header("object", "optimizer");
    CHECK_THROWS_AS(Model::from_checkpoint(wrong), DataError);
}

TEST_CASE("encoder input grouping, padding, and flags") {
    ModelConfig cfg;
    cfg.group_size = 3;
    const int n = 2, m = 5;
    Tensor values({n, m});
    std::vector<uint8_t> flags(static_cast<size_t>(n) * m, 0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) values.at(i, j) = 10.0 * i + j;
    flags[1] = 1;  // row 0, col 1 missing
    values.at(0, 1) = 0.0;

    const Tensor enc = make_encoder_input(values, flags, cfg);
    REQUIRE(enc.rank() == 3);
    CHECK(enc.dim(0) == n);
    CHECK(enc.dim(1) == 2);
    CHECK(enc.dim(2) == 7);

    // group 0 of row 0: values {0,.,2} with the missing flag set
    const double* t0 = enc.row(0, 0);
    CHECK(t0[0] == 0.0);
    CHECK(t0[1] == 0.0);
    CHECK(t0[2] == 2.0);
    CHECK(t0[3] == 0.0);
    CHECK(t0[4] == 1.0);
    CHECK(t0[5] == 0.0);
    CHECK(t0[6] == 0.0);  // not padded

    // group 1 of row 1: values {13,14,pad}; pad slot value 0, flag 1, marker 1
    const double* t1 = enc.row(1, 1);
    CHECK(t1[0] == 13.0);
    CHECK(t1[1] == 14.0);
    CHECK(t1[2] == 0.0);
    CHECK(t1[3] == 0.0);
    CHECK(t1[4] == 0.0);
    CHECK(t1[5] == 1.0);
    CHECK(t1[6] == 1.0);

    Tensor empty({n, 0});
    CHECK_THROWS_WITH_AS(make_encoder_input(empty, {}, cfg), doctest::Contains("empty-input"),
                         DataError);
}

TEST_CASE("assemble_context validation") {
    const ModelConfig cfg = tiny_config();
    Tensor x({4, 2});
    for (size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<double>(i);
    const std::vector<uint8_t> f(8, 0);

    CHECK_THROWS_AS(assemble_context(x, f, {0, 1, 0, 5}, TaskKind::classification, 2, cfg, 1),
                    DataError);  // label out of range
    CHECK_THROWS_AS(assemble_context(x, f, {0, 1, 2, 3}, TaskKind::classification, 4, cfg, 1),
                    DataError);  // exceeds max_classes = 3
    CHECK_THROWS_AS(assemble_context(x, f, {2.0, 2.0, 2.0, 2.0}, TaskKind::regression, 0, cfg, 1),
                    DataError);  // degenerate target
    CHECK_THROWS_AS(assemble_context(x, f, {0.0, 1.0}, TaskKind::regression, 0, cfg, 1),
                    DataError);  // size mismatch

    const TaskContext ctx =
        assemble_context(x, f, {1.0, 2.0, 3.0, 4.0}, TaskKind::regression, 0, cfg, 1);
    CHECK(ctx.y_mean == doctest::Approx(2.5));
    CHECK(ctx.y_std == doctest::Approx(std::sqrt(5.0 / 3.0)));
    CHECK(ctx.bins.n_bins() == cfg.n_bins);
    CHECK(ctx.train_z[0] == doctest::Approx((1.0 - 2.5) / std::sqrt(5.0 / 3.0)));

    // positional embeddings reproduce per seed
    const TaskContext ctx2 =
        assemble_context(x, f, {1.0, 2.0, 3.0, 4.0}, TaskKind::regression, 0, cfg, 1);
    const TaskContext ctx3 =
        assemble_context(x, f, {1.0, 2.0, 3.0, 4.0}, TaskKind::regression, 0, cfg, 2);
    bool same = true, all_same3 = true;
    for (size_t i = 0; i < ctx.group_pos.numel(); ++i) {
        same = same && ctx.group_pos[i] == ctx2.group_pos[i];
        all_same3 = all_same3 && ctx.group_pos[i] == ctx3.group_pos[i];
    }
    CHECK(same);
    CHECK_FALSE(all_same3);

    Tensor xq({2, 3});
    CHECK_THROWS_AS(assemble_queries(xq, std::vector<uint8_t>(6, 0), ctx, cfg), DataError);
}

TEST_CASE("gradients match central finite differences: classification") {
    check_gradients(TaskKind::classification);
}

TEST_CASE("gradients match central finite differences: regression") {
    check_gradients(TaskKind::regression);
}

TEST_CASE("training path: test rows are independent under the PFN mask") {
    const ModelConfig cfg = tiny_config();
    const Model model = Model::init(cfg, 5);
    TinyTask task = make_task(cfg, TaskKind::classification, 8, 3, 3, 77);

    Graph g1;
    BoundParams p1 = bind_params(g1, model, false);
    const ForwardResult r1 = forward_train(g1, model, p1, task.ctx, task.queries, task.targets);
    const Tensor logits1 = g1.val(r1.logits);

    // perturb test row 2's features; rows 0 and 1 must be bit-identical
    TinyTask mod = task;
    for (int c = 0; c < mod.queries.enc_in.dim(1); ++c) mod.queries.enc_in.row(2, c)[0] += 3.5;
    Graph g2;
    BoundParams p2 = bind_params(g2, model, false);
    const ForwardResult r2 = forward_train(g2, model, p2, mod.ctx, mod.queries, mod.targets);
    const Tensor logits2 = g2.val(r2.logits);

    bool row2_changed = false;
    for (int j = 0; j < logits1.dim(1); ++j) {
        CHECK(logits1.at(0, j) == logits2.at(0, j));
        CHECK(logits1.at(1, j) == logits2.at(1, j));
        if (logits1.at(2, j) != logits2.at(2, j)) row2_changed = true;
    }
    CHECK(row2_changed);
}

TEST_CASE("inference path agrees with the training path") {
    ModelConfig cfg;
    cfg.depth = 2;
    cfg.dim = 16;
    cfg.heads = 2;
    cfg.group_size = 3;
    cfg.n_thinking = 3;
    cfg.max_classes = 4;
    cfg.n_bins = 8;
    cfg.encoder_hidden = 12;
    const Model model = Model::init(cfg, 11);

    for (const TaskKind kind : {TaskKind::classification, TaskKind::regression}) {
        CAPTURE(static_cast<int>(kind));
        const TinyTask task = make_task(cfg, kind, 30, 7, 7, 4242);

        Graph g;
        BoundParams p = bind_params(g, model, false);
        const ForwardResult r = forward_train(g, model, p, task.ctx, task.queries, task.targets);
        const Tensor train_logits = g.val(r.logits);

        const ContextCache cache = fit_context(model, task.ctx);
        CHECK(cache.n_ctx_rows == cfg.n_thinking + task.ctx.n_train);
        CHECK(cache.cols == task.ctx.G + 1);
        const Tensor infer = infer_logits(model, task.ctx, cache, task.queries);

        const int n_valid = kind == TaskKind::classification ? task.ctx.n_classes : cfg.n_bins;
        REQUIRE(infer.dim(0) == task.queries.n_test);
        REQUIRE(infer.dim(1) == n_valid);
        for (int i = 0; i < infer.dim(0); ++i) {
            for (int j = 0; j < n_valid; ++j) {
                CHECK(infer.at(i, j) == doctest::Approx(train_logits.at(i, j)).epsilon(1e-8));
            }
        }
    }
}

TEST_CASE("inference: block size and other rows do not affect a row's output") {
    const ModelConfig cfg = tiny_config();
    const Model model = Model::init(cfg, 21);
    const TinyTask task = make_task(cfg, TaskKind::classification, 12, 6, 4, 900);
    const ContextCache cache = fit_context(model, task.ctx);

    const Tensor full = infer_logits(model, task.ctx, cache, task.queries, 1024);
    const Tensor one_by_one = infer_logits(model, task.ctx, cache, task.queries, 1);
    const Tensor blocks2 = infer_logits(model, task.ctx, cache, task.queries, 2);
    REQUIRE(full.same_shape(one_by_one));
    for (size_t i = 0; i < full.numel(); ++i) {
        CHECK(full[i] == one_by_one[i]);
        CHECK(full[i] == blocks2[i]);
    }

    // single-row query set reproduces the batched row exactly
    const int g_cols = task.queries.enc_in.dim(1);
    const int w = task.queries.enc_in.dim(2);
    for (const int row : {0, 3, 5}) {
        Tensor sub({1, g_cols, w});
        std::copy(task.queries.enc_in.row(row, 0), task.queries.enc_in.row(row, 0) + g_cols * w,
                  sub.data());
        TaskQueries q1;
        q1.n_test = 1;
        q1.enc_in = sub;
        const Tensor solo = infer_logits(model, task.ctx, cache, q1);
        for (int j = 0; j < full.dim(1); ++j) CHECK(solo.at(0, j) == full.at(row, j));
    }

    // cache fitting is deterministic
    const ContextCache cache2 = fit_context(model, task.ctx);
    for (size_t l = 0; l < cache.k.size(); ++l) {
        for (size_t i = 0; i < cache.k[l].numel(); ++i) {
            CHECK(cache.k[l][i] == cache2.k[l][i]);
            CHECK(cache.v[l][i] == cache2.v[l][i]);
        }
    }
}

TEST_CASE("train row permutation leaves predictions unchanged") {
    const ModelConfig cfg = tiny_config();
    const Model model = Model::init(cfg, 13);
    const int n_train = 16, m = 4;
    Rng rng(515);
    Tensor x({n_train, m});
    for (size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
    std::vector<uint8_t> f(x.numel(), 0);
    std::vector<double> y(static_cast<size_t>(n_train));
    for (int i = 0; i < n_train; ++i) y[static_cast<size_t>(i)] = i % 2;

    const std::vector<int> perm = rng.permutation(n_train);
    Tensor xp({n_train, m});
    std::vector<double> yp(static_cast<size_t>(n_train));
    for (int i = 0; i < n_train; ++i) {
        const int src = perm[static_cast<size_t>(i)];
        std::copy(x.row(src), x.row(src) + m, xp.row(i));
        yp[static_cast<size_t>(i)] = y[static_cast<size_t>(src)];
    }

    Tensor xq({3, m});
    for (size_t i = 0; i < xq.numel(); ++i) xq[i] = rng.normal();
    const std::vector<uint8_t> fq(xq.numel(), 0);

    // identical pos_seed so only the row order differs
    const TaskContext c1 = assemble_context(x, f, y, TaskKind::classification, 2, cfg, 333);
    const TaskContext c2 = assemble_context(xp, f, yp, TaskKind::classification, 2, cfg, 333);
    const TaskQueries q1 = assemble_queries(xq, fq, c1, cfg);
    const TaskQueries q2 = assemble_queries(xq, fq, c2, cfg);

    const Tensor p1 = predict_probs(model, c1, fit_context(model, c1), q1);
    const Tensor p2 = predict_probs(model, c2, fit_context(model, c2), q2);
    REQUIRE(p1.same_shape(p2));
    for (size_t i = 0; i < p1.numel(); ++i) CHECK(p1[i] == doctest::Approx(p2[i]).epsilon(1e-5));
}

TEST_CASE("predicted distributions are finite and normalized") {
    const ModelConfig cfg = tiny_config();
    const Model model = Model::init(cfg, 3);
    for (const TaskKind kind : {TaskKind::classification, TaskKind::regression}) {
        const TinyTask task = make_task(cfg, kind, 10, 5, 5, 31);
        const Tensor probs =
            predict_probs(model, task.ctx, fit_context(model, task.ctx), task.queries);
        for (int i = 0; i < probs.dim(0); ++i) {
            double total = 0;
            for (int j = 0; j < probs.dim(1); ++j) {
                CHECK(std::isfinite(probs.at(i, j)));
                CHECK(probs.at(i, j) >= 0.0);
                total += probs.at(i, j);
            }
            CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
        }
        // regression point estimates live in z-space and map back through y_std
        if (kind == TaskKind::regression) {
            const double z = task.ctx.bins.point_from(probs.row(0));
            const double yhat = task.ctx.y_mean + task.ctx.y_std * z;
            CHECK(std::isfinite(yhat));
        }
    }
}

// --- pretraining -------------------------------------------------------------

#include "picotab/pretrain.hpp"

namespace {

PriorConfig small_prior() {
    PriorConfig pc;
    pc.max_rows = 40;
    pc.max_features = 4;
    pc.max_classes = 3;
    return pc;
}

}  // namespace

TEST_CASE("learning rate schedule: warmup then cosine to the floor") {
    TrainConfig tc;
    tc.steps = 100;
    tc.warmup = 10;
    tc.lr = 1e-3;
    tc.lr_floor_frac = 0.1;

    CHECK(learning_rate_at(tc, 0) == doctest::Approx(1e-4));
    CHECK(learning_rate_at(tc, 4) == doctest::Approx(5e-4));
    CHECK(learning_rate_at(tc, 9) == doctest::Approx(1e-3));
    CHECK(learning_rate_at(tc, 10) == doctest::Approx(1e-3).epsilon(1e-6));
    CHECK(learning_rate_at(tc, 99) == doctest::Approx(1e-4).epsilon(1e-9));
    for (int s = 11; s < 100; ++s) {
        CHECK(learning_rate_at(tc, s) <= learning_rate_at(tc, s - 1) + 1e-15);
        CHECK(learning_rate_at(tc, s) >= 1e-4 - 1e-15);
    }

    TrainConfig bad = tc;
    bad.ctx_frac_min = 0.9;
    bad.ctx_frac_max = 0.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = tc;
    bad.lr = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = tc;
    bad.grad_clip = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("assemble_prior_task: deterministic split with class-covered context") {
    const ModelConfig cfg = tiny_config();
    const PriorConfig pc = small_prior();

    int checked_cls = 0;
    for (uint64_t idx = 0; idx < 30; ++idx) {
        const SyntheticTask task = make_prior_task(pc, 99, idx);
        const SplitTask a = assemble_prior_task(task, cfg, 0.3, 0.8, 1000 + idx);
        const SplitTask b = assemble_prior_task(task, cfg, 0.3, 0.8, 1000 + idx);

        CHECK(a.ctx.n_train == b.ctx.n_train);
        CHECK(a.queries.n_test == b.queries.n_test);
        CHECK(a.targets == b.targets);
        for (size_t i = 0; i < a.ctx.enc_in.numel(); ++i) CHECK(a.ctx.enc_in[i] == b.ctx.enc_in[i]);

        CHECK(a.ctx.n_train + a.queries.n_test == task.n_rows());
        CHECK(a.ctx.n_train >= 2);
        CHECK(a.queries.n_test >= 1);

        if (task.kind == TaskKind::classification) {
            ++checked_cls;
            // every class of the task appears among the context labels
            std::vector<bool> seen(static_cast<size_t>(task.n_classes), false);
            for (const int lab : a.ctx.train_labels) {
                REQUIRE(lab >= 0);
                REQUIRE(lab < task.n_classes);
                seen[static_cast<size_t>(lab)] = true;
            }
            for (const bool s : seen) CHECK(s);
            for (const int t : a.targets) {
                CHECK(t >= 0);
                CHECK(t < task.n_classes);
            }
        } else {
            for (const int t : a.targets) {
                CHECK(t >= 0);
                CHECK(t < cfg.n_bins);
            }
        }

        // canonical preprocessing soft-clips values into (-4, 4)
        const int g = cfg.group_size;
        for (int i = 0; i < a.ctx.enc_in.dim(0); ++i) {
            for (int q = 0; q < a.ctx.enc_in.dim(1); ++q) {
                for (int s = 0; s < g; ++s) CHECK(std::abs(a.ctx.enc_in.at(i, q, s)) <= 4.0);
            }
        }
    }
    CHECK(checked_cls > 5);

    // fixed fraction pins the context size
    const SyntheticTask task = make_prior_task(pc, 99, 0);
    const SplitTask half = assemble_prior_task(task, cfg, 0.5, 0.5, 7);
    CHECK(half.ctx.n_train == std::clamp(static_cast<int>(std::lround(0.5 * task.n_rows())), 2,
                                         task.n_rows() - 1));
}

TEST_CASE("pretrain: loss decreases on a tiny classification-only prior") {
    ModelConfig cfg = tiny_config();
    PriorConfig pc = small_prior();
    pc.task_mix_classification = 1.0;
    pc.task_mix_regression = 0.0;

    TrainConfig tc;
    tc.steps = 16;
    tc.batch_tasks = 3;
    tc.lr = 5e-3;
    tc.warmup = 2;
    tc.seed = 11;

    const PretrainResult r = pretrain(cfg, pc, tc);
    REQUIRE(static_cast<int>(r.stats.size()) == tc.steps);
    CHECK(r.start_step == 0);
    double head = 0, tail = 0;
    for (int i = 0; i < 4; ++i) {
        head += r.stats[static_cast<size_t>(i)].loss / 4;
        tail += r.stats[r.stats.size() - 1 - static_cast<size_t>(i)].loss / 4;
    }
    CHECK(tail < head);
    for (const StepStat& s : r.stats) {
        CHECK(std::isfinite(s.loss));
        CHECK(s.grad_norm > 0.0);
    }

    // same config, same seed: identical trajectory
    const PretrainResult r2 = pretrain(cfg, pc, tc);
    for (size_t i = 0; i < r.stats.size(); ++i) CHECK(r.stats[i].loss == r2.stats[i].loss);
}

TEST_CASE("pretrain: resume from a snapshot replays the same trajectory") {
    namespace fs = std::filesystem;
    ModelConfig cfg = tiny_config();
    PriorConfig pc = small_prior();
    pc.task_mix_classification = 1.0;
    pc.task_mix_regression = 0.0;

    const fs::path dir_a = fs::temp_directory_path() / "picotab_pretrain_a";
    const fs::path dir_b = fs::temp_directory_path() / "picotab_pretrain_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);

    TrainConfig tc;
    tc.steps = 6;
    tc.batch_tasks = 2;
    tc.lr = 2e-3;
    tc.warmup = 1;
    tc.checkpoint_every = 2;
    tc.seed = 21;

    tc.checkpoint_dir = dir_a.string();
    const PretrainResult full = pretrain(cfg, pc, tc);
    REQUIRE(full.stats.size() == 6);

    tc.checkpoint_dir = dir_b.string();
    tc.steps = 2;
    const PretrainResult part1 = pretrain(cfg, pc, tc);
    REQUIRE(part1.stats.size() == 2);
    tc.steps = 6;
    const PretrainResult part2 = pretrain(cfg, pc, tc);
    CHECK(part2.start_step == 2);
    REQUIRE(part2.stats.size() == 4);

    for (size_t i = 0; i < 2; ++i) CHECK(full.stats[i].loss == part1.stats[i].loss);
    for (size_t i = 0; i < 4; ++i) {
        CHECK(full.stats[i + 2].step == part2.stats[i].step);
        CHECK(full.stats[i + 2].loss == part2.stats[i].loss);
        CHECK(full.stats[i + 2].grad_norm == part2.stats[i].grad_norm);
    }

    // final parameters agree bitwise between the two paths
    for (size_t e = 0; e < full.model.params.entries().size(); ++e) {
        const Tensor& ta = full.model.params.entries()[e].second;
        const Tensor& tb = part2.model.params.entries()[e].second;
        for (size_t i = 0; i < ta.numel(); ++i) CHECK(ta[i] == tb[i]);
    }

    // a fully-trained directory resumes into a no-op
    const PretrainResult noop = pretrain(cfg, pc, tc);
    CHECK(noop.start_step == 6);
    CHECK(noop.stats.empty());

    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

TEST_CASE("pretrain: divergence raises with the last good snapshot attached") {
    ModelConfig cfg = tiny_config();
    PriorConfig pc = small_prior();
    pc.task_mix_classification = 1.0;
    pc.task_mix_regression = 0.0;

    TrainConfig tc;
    tc.steps = 8;
    tc.batch_tasks = 2;
    // after one step weights sit near +-lr, so two chained matmuls overflow
    // double range and the next loss is non-finite
    tc.lr = 1e160;
    tc.warmup = 0;
    tc.grad_clip = 1e30;
    tc.seed = 3;

    try {
        pretrain(cfg, pc, tc);
        FAIL("expected TrainingDiverged");
    } catch (const TrainingDiverged& e) {
        CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
        CHECK(e.last_good.header_or("object", "") == "train_state");
        CHECK(e.last_good.header_or("step", "") == "0");
        const Model fallback = [&] {
            CheckpointContainer as_model = e.last_good;
            as_model.set_header("object", "model");
            return Model::from_checkpoint(as_model);
        }();
        CHECK(fallback.config.dim == cfg.dim);
    }

    // prior emitting more classes than the model supports is rejected up front
    PriorConfig wide = pc;
    wide.max_classes = cfg.max_classes + 1;
    TrainConfig ok;
    ok.steps = 1;
    CHECK_THROWS_AS(pretrain(cfg, wide, ok), ConfigError);
}
