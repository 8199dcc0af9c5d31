#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <vector>

#include "picotab/causal.hpp"
#include "picotab/errors.hpp"
#include "picotab/model.hpp"
#include "picotab/rng.hpp"

using namespace picotab;

namespace {

Scm small_scm(uint64_t seed = 11) {
    PriorConfig pc;
    pc.dag_nodes_min = 6;
    pc.dag_nodes_max = 8;
    return sample_scm(pc, seed);
}

std::shared_ptr<const Model> small_net(uint64_t seed = 77) {
    ModelConfig cfg;
    cfg.depth = 1;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.group_size = 2;
    cfg.n_thinking = 2;
    cfg.max_classes = 4;
    cfg.n_bins = 4;
    cfg.encoder_hidden = 6;
    return std::make_shared<const Model>(Model::init(cfg, seed));
}

// y depends on x only; any effect estimate is pure noise
CausalDataset null_effect_task(uint64_t seed, int n = 200) {
    Rng rng(Rng::splitmix(seed ^ 0x999));
    CausalDataset d;
    d.x = Tensor({n, 2});
    d.t.resize(static_cast<size_t>(n));
    d.y.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        d.x.at(i, 0) = rng.normal();
        d.x.at(i, 1) = rng.normal();
        d.t[static_cast<size_t>(i)] = rng.bernoulli(0.5) ? 1 : 0;
        d.y[static_cast<size_t>(i)] = 0.7 * d.x.at(i, 0) + 0.3 * rng.normal();
    }
    return d;
}

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sem_of(const std::vector<double>& v) {
    const double m = mean_of(v);
    double s2 = 0.0;
    for (double x : v) s2 += (x - m) * (x - m);
    const double n = static_cast<double>(v.size());
    return std::sqrt(s2 / (n - 1.0) / n);
}

std::vector<int> arm_index(const CausalDataset& d, int arm) {
    std::vector<int> rows;
    for (int i = 0; i < d.n_rows(); ++i) {
        if (d.t[static_cast<size_t>(i)] == arm) rows.push_back(i);
    }
    return rows;
}

Tensor take_rows(const Tensor& x, const std::vector<int>& rows) {
    Tensor out({static_cast<int>(rows.size()), x.dim(1)});
    for (size_t i = 0; i < rows.size(); ++i) {
        for (int j = 0; j < x.dim(1); ++j) out.at(static_cast<int>(i), j) = x.at(rows[i], j);
    }
    return out;
}

std::vector<double> take(const std::vector<double>& v, const std::vector<int>& rows) {
    std::vector<double> out(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) out[i] = v[static_cast<size_t>(rows[i])];
    return out;
}

}  // namespace

TEST_CASE("dataset validation rejects malformed inputs") {
    CausalDataset d;
    d.x = Tensor({4, 1});
    for (int i = 0; i < 4; ++i) d.x.at(i, 0) = i;
    d.t = {0, 1, 0, 1};
    d.y = {0.0, 1.0, 0.0, 1.0};
    CHECK_NOTHROW(d.validate());

    CausalDataset bad = d;
    bad.t = {0, 1, 0};
    CHECK_THROWS_AS(bad.validate(), DataError);

    bad = d;
    bad.t = {0, 2, 0, 1};
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("binary"), DataError);

    bad = d;
    bad.t = {1, 1, 1, 1};
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("degenerate-arm"), DataError);

    bad = d;
    bad.true_cate = {0.0, 1.0};
    CHECK_THROWS_AS(bad.validate(), DataError);

    // learners need two rows per arm, not just one
    CausalDataset thin;
    thin.x = Tensor({4, 1});
    for (int i = 0; i < 4; ++i) thin.x.at(i, 0) = i;
    thin.t = {0, 0, 0, 1};
    thin.y = {0.0, 0.0, 0.0, 1.0};
    CHECK_NOTHROW(thin.validate());
    CHECK_THROWS_WITH_AS(t_learner(thin, constant_base()), doctest::Contains("degenerate-arm"),
                         DataError);
    CHECK_THROWS_WITH_AS(s_learner(thin, constant_base()), doctest::Contains("degenerate-arm"),
                         DataError);
    CHECK_THROWS_WITH_AS(x_learner(thin, constant_base(), constant_base()),
                         doctest::Contains("degenerate-arm"), DataError);
}

TEST_CASE("pehe matches the formula and its edge cases") {
    CHECK(pehe({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}) == 0.0);

    // constant offset delta -> |delta|
    CHECK(pehe({1.5, 2.5, -0.5}, {1.0, 2.0, -1.0}) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(pehe({-0.25, 0.75}, {0.0, 1.0}) == doctest::Approx(0.25).epsilon(1e-12));

    // random vectors against a direct recomputation
    Rng rng(123);
    std::vector<double> a(57), b(57);
    for (size_t i = 0; i < a.size(); ++i) {
        a[i] = rng.normal(0.0, 2.0);
        b[i] = rng.normal(0.5, 1.5);
    }
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    const double direct = std::sqrt(acc / static_cast<double>(a.size()));
    CHECK(pehe(a, b) == doctest::Approx(direct).epsilon(1e-12));

    // shift invariance, exact on dyadic values
    const std::vector<double> p = {1.25, -0.75, 3.5, 0.25};
    const std::vector<double> q = {1.0, 0.5, -2.25, 0.75};
    const double c = 2.5;
    std::vector<double> ps = p, qs = q;
    for (double& v : ps) v += c;
    for (double& v : qs) v += c;
    CHECK(pehe(ps, qs) == pehe(p, q));

    CHECK_THROWS_WITH_AS(pehe({1.0, 2.0}, {1.0}), doctest::Contains("mismatch"), DataError);
    CHECK_THROWS_AS(pehe({}, {}), DataError);
}

TEST_CASE("t-learner recovers y = t exactly with clean bases") {
    const int n = 40;
    CausalDataset d;
    d.x = Tensor({n, 2});
    d.t.resize(n);
    d.y.resize(n);
    Rng rng(7);
    for (int i = 0; i < n; ++i) {
        d.x.at(i, 0) = rng.normal();
        d.x.at(i, 1) = rng.normal();
        d.t[static_cast<size_t>(i)] = i % 2;
        d.y[static_cast<size_t>(i)] = static_cast<double>(d.t[static_cast<size_t>(i)]);
    }
    for (const auto& base : {knn_base(1), constant_base()}) {
        const auto tau = t_learner(d, base);
        REQUIRE(tau.size() == static_cast<size_t>(n));
        for (double v : tau) CHECK(v == 1.0);
    }
    // s-learner sees t as a feature. Keep x inside a tiny box so the nearest
    // row at the queried t value always comes from the matching arm.
    CausalDataset s = d;
    for (int i = 0; i < n; ++i) {
        s.x.at(i, 0) = 0.001 * i;
        s.x.at(i, 1) = 0.0005 * i;
    }
    const auto tau_s = s_learner(s, knn_base(1));
    for (double v : tau_s) CHECK(v == 1.0);
}

TEST_CASE("null effect stays within two standard errors") {
    const CausalDataset d = null_effect_task(7);
    const auto tau_t = t_learner(d, knn_base(3));
    CHECK(std::fabs(mean_of(tau_t)) <= 2.0 * sem_of(tau_t));

    const CausalDataset d2 = null_effect_task(4);
    const auto tau_s = s_learner(d2, knn_base(3));
    CHECK(std::fabs(mean_of(tau_s)) <= 2.0 * sem_of(tau_s));

    // x-learner on zero-effect data also centers near zero
    const auto res = x_learner(d, knn_base(3), knn_base(25));
    CHECK(std::fabs(mean_of(res.cate)) <= 0.08);
}

TEST_CASE("linear effect: learners beat the constant-ATE baseline") {
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        Rng rng(Rng::splitmix(seed ^ 0xabc));
        const int n = 240;
        CausalDataset d;
        d.x = Tensor({n, 3});
        d.t.resize(n);
        d.y.resize(n);
        d.true_cate.resize(n);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < 3; ++j) d.x.at(i, j) = rng.normal();
            d.t[static_cast<size_t>(i)] = rng.bernoulli(0.5) ? 1 : 0;
            d.true_cate[static_cast<size_t>(i)] = d.x.at(i, 1);
            d.y[static_cast<size_t>(i)] = d.x.at(i, 0) +
                                          d.x.at(i, 1) * d.t[static_cast<size_t>(i)] +
                                          0.05 * rng.normal();
        }
        const double base_pehe = pehe(t_learner(d, constant_base()), d.true_cate);
        CHECK(pehe(t_learner(d, knn_base(5)), d.true_cate) < base_pehe);
        CHECK(pehe(s_learner(d, knn_base(5)), d.true_cate) < base_pehe);
    }
}

TEST_CASE("x-learner with g = 0.5 averages the two effect estimates exactly") {
    const int n = 60;
    CausalDataset d;
    d.x = Tensor({n, 2});
    d.t.resize(n);
    d.y.resize(n);
    Rng rng(31);
    for (int i = 0; i < n; ++i) {
        d.x.at(i, 0) = rng.normal();
        d.x.at(i, 1) = rng.normal();
        d.t[static_cast<size_t>(i)] = i % 2;  // exactly balanced
        d.y[static_cast<size_t>(i)] = std::sin(d.x.at(i, 0)) +
                                      0.8 * d.t[static_cast<size_t>(i)] * d.x.at(i, 1) +
                                      0.1 * rng.normal();
    }
    const auto base = knn_base(2);
    const auto res = x_learner(d, base, constant_base());
    CHECK_FALSE(res.propensity_clamped);  // g = 0.5 sits inside (0, 1)

    // replay the construction by hand
    const auto rows0 = arm_index(d, 0);
    const auto rows1 = arm_index(d, 1);
    const Tensor x0 = take_rows(d.x, rows0);
    const Tensor x1 = take_rows(d.x, rows1);
    const auto y0 = take(d.y, rows0);
    const auto y1 = take(d.y, rows1);
    const auto mu0_t = base(x0, y0, x1);
    const auto mu1_c = base(x1, y1, x0);
    std::vector<double> d1(rows1.size()), d0(rows0.size());
    for (size_t i = 0; i < d1.size(); ++i) d1[i] = y1[i] - mu0_t[i];
    for (size_t i = 0; i < d0.size(); ++i) d0[i] = mu1_c[i] - y0[i];
    const auto tau1 = base(x1, d1, d.x);
    const auto tau0 = base(x0, d0, d.x);
    REQUIRE(res.cate.size() == tau0.size());
    for (size_t i = 0; i < res.cate.size(); ++i) {
        CHECK(res.cate[i] == (tau0[i] + tau1[i]) / 2.0);
    }
}

TEST_CASE("x-learner flags degenerate propensity estimates") {
    const CausalDataset d = null_effect_task(2, 80);
    // 1-NN propensity answers exactly 0 or 1 -> outside (0,1) -> clamped
    const auto res = x_learner(d, knn_base(3), knn_base(1));
    CHECK(res.propensity_clamped);
    for (double v : res.cate) CHECK(std::isfinite(v));

    const auto smooth = x_learner(d, knn_base(3), knn_base(25));
    CHECK_FALSE(smooth.propensity_clamped);
}

TEST_CASE("x-learner beats t-learner on imbalanced heteroskedastic tasks") {
    const Scm scm = small_scm();
    double sum_t = 0.0, sum_x = 0.0;
    for (uint64_t seed : {1ull, 2ull, 3ull, 5ull}) {
        ConfoundedTaskConfig cfg;
        cfg.n_rows = 300;
        cfg.n_covariates = 4;
        cfg.confounding_strength = 0.8;
        cfg.propensity_intercept = -1.4;  // ~20% treated
        cfg.noise0 = 0.1;
        cfg.noise1 = 1.5;  // treated arm much noisier
        cfg.seed = seed;
        const ConfoundedTask task = make_confounded_task(scm, cfg);
        const auto base = knn_base(5);
        const double pehe_t = pehe(t_learner(task.data, base), task.data.true_cate);
        const double pehe_x =
            pehe(x_learner(task.data, base, knn_base(25)).cate, task.data.true_cate);
        CHECK(pehe_x <= pehe_t);
        sum_t += pehe_t;
        sum_x += pehe_x;
    }
    CHECK(sum_x <= sum_t - 0.1);  // the advantage is material, not a tie
}

TEST_CASE("confounded task generator obeys its contracts") {
    const Scm scm = small_scm();

    SUBCASE("strength zero randomizes treatment") {
        for (uint64_t seed : {1ull, 5ull, 9ull}) {
            ConfoundedTaskConfig cfg;
            cfg.n_rows = 600;
            cfg.confounding_strength = 0.0;
            cfg.seed = seed;
            const ConfoundedTask task = make_confounded_task(scm, cfg);
            int treated = std::accumulate(task.data.t.begin(), task.data.t.end(), 0);
            const double frac = treated / 600.0;
            const double sigma = std::sqrt(0.25 / 600.0);
            CHECK(std::fabs(frac - 0.5) <= 3.0 * sigma);
            // randomized limit: propensity is exactly one half everywhere
            for (double p : task.propensity) CHECK(p == 0.5);
        }
    }

    SUBCASE("true cate is recomputable from the stored heads") {
        ConfoundedTaskConfig cfg;
        cfg.n_rows = 120;
        cfg.seed = 3;
        const ConfoundedTask task = make_confounded_task(scm, cfg);
        const int c = task.data.n_cols();
        std::vector<double> row(static_cast<size_t>(c));
        for (int i = 0; i < task.data.n_rows(); ++i) {
            for (int j = 0; j < c; ++j) row[static_cast<size_t>(j)] = task.data.x.at(i, j);
            // manual evaluation of both heads, independent of operator()
            double m[2] = {0.0, 0.0};
            const OutcomeHead* heads[2] = {&task.mu0, &task.mu1};
            for (int h = 0; h < 2; ++h) {
                const OutcomeHead& head = *heads[h];
                double out = head.b_out;
                for (int u = 0; u < head.hidden; ++u) {
                    double pre = head.b_in[static_cast<size_t>(u)];
                    for (int j = 0; j < c; ++j) {
                        const double sd = head.std[static_cast<size_t>(j)];
                        const double z =
                            sd > 0.0 ? (row[static_cast<size_t>(j)] -
                                        head.mean[static_cast<size_t>(j)]) /
                                           sd
                                     : 0.0;
                        pre += head.w_in[static_cast<size_t>(u) * c + j] * z;
                    }
                    out += head.w_out[static_cast<size_t>(u)] * std::tanh(pre);
                }
                m[h] = out;
            }
            CHECK(task.data.true_cate[static_cast<size_t>(i)] ==
                  doctest::Approx(m[1] - m[0]).epsilon(1e-12));
        }
    }

    SUBCASE("covariate gap between arms grows with confounding strength") {
        for (uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
            std::vector<double> gaps;
            for (double strength : {0.0, 1.0, 2.5}) {
                ConfoundedTaskConfig cfg;
                cfg.n_rows = 600;
                cfg.n_covariates = 4;
                cfg.confounding_strength = strength;
                cfg.seed = seed;
                const ConfoundedTask task = make_confounded_task(scm, cfg);
                const int n = task.data.n_rows();
                const int c = task.data.n_cols();
                double m1 = 0.0, m0 = 0.0;
                int c1 = 0, c0 = 0;
                for (int i = 0; i < n; ++i) {
                    double proj = 0.0;
                    for (int j = 0; j < c; ++j) {
                        const double sd = task.mu0.std[static_cast<size_t>(j)];
                        const double z =
                            sd > 0.0
                                ? (task.data.x.at(i, j) - task.mu0.mean[static_cast<size_t>(j)]) /
                                      sd
                                : 0.0;
                        proj += task.logit_weights[static_cast<size_t>(j)] * z;
                    }
                    if (task.data.t[static_cast<size_t>(i)] == 1) {
                        m1 += proj;
                        ++c1;
                    } else {
                        m0 += proj;
                        ++c0;
                    }
                }
                gaps.push_back(std::fabs(m1 / c1 - m0 / c0));
            }
            CHECK(gaps[0] < gaps[1]);
            CHECK(gaps[1] < gaps[2]);
        }
    }

    SUBCASE("same seed reproduces the task, different seed does not") {
        ConfoundedTaskConfig cfg;
        cfg.n_rows = 80;
        cfg.seed = 12;
        const ConfoundedTask a = make_confounded_task(scm, cfg);
        const ConfoundedTask b = make_confounded_task(scm, cfg);
        CHECK(a.data.t == b.data.t);
        CHECK(a.data.y == b.data.y);
        bool same_x = true;
        for (int i = 0; i < a.data.n_rows(); ++i) {
            for (int j = 0; j < a.data.n_cols(); ++j) {
                same_x = same_x && a.data.x.at(i, j) == b.data.x.at(i, j);
            }
        }
        CHECK(same_x);

        cfg.seed = 13;
        const ConfoundedTask other = make_confounded_task(scm, cfg);
        CHECK(a.data.y != other.data.y);
    }

    SUBCASE("config validation") {
        ConfoundedTaskConfig cfg;
        cfg.n_rows = 3;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
        cfg = ConfoundedTaskConfig{};
        cfg.confounding_strength = -0.5;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
        cfg = ConfoundedTaskConfig{};
        cfg.noise1 = -0.1;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
        cfg = ConfoundedTaskConfig{};
        cfg.n_covariates = 0;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
}

TEST_CASE("meta-learners are invariant to row order") {
    const Scm scm = small_scm();
    ConfoundedTaskConfig cfg;
    cfg.n_rows = 90;
    cfg.seed = 21;
    const ConfoundedTask task = make_confounded_task(scm, cfg);
    const CausalDataset& d = task.data;
    const int n = d.n_rows();

    Rng rng(99);
    const std::vector<int> perm = rng.permutation(n);
    CausalDataset shuffled;
    shuffled.x = Tensor({n, d.n_cols()});
    shuffled.t.resize(n);
    shuffled.y.resize(n);
    for (int i = 0; i < n; ++i) {
        const int src = perm[static_cast<size_t>(i)];
        for (int j = 0; j < d.n_cols(); ++j) shuffled.x.at(i, j) = d.x.at(src, j);
        shuffled.t[static_cast<size_t>(i)] = d.t[static_cast<size_t>(src)];
        shuffled.y[static_cast<size_t>(i)] = d.y[static_cast<size_t>(src)];
    }

    const auto base = knn_base(4);
    const auto tau_t = t_learner(d, base);
    const auto tau_t_shuffled = t_learner(shuffled, base);
    const auto tau_s = s_learner(d, base);
    const auto tau_s_shuffled = s_learner(shuffled, base);
    const auto tau_x = x_learner(d, base, knn_base(20)).cate;
    const auto tau_x_shuffled = x_learner(shuffled, base, knn_base(20)).cate;
    for (int i = 0; i < n; ++i) {
        const int src = perm[static_cast<size_t>(i)];
        CHECK(tau_t_shuffled[static_cast<size_t>(i)] ==
              doctest::Approx(tau_t[static_cast<size_t>(src)]).epsilon(1e-5));
        CHECK(tau_s_shuffled[static_cast<size_t>(i)] ==
              doctest::Approx(tau_s[static_cast<size_t>(src)]).epsilon(1e-5));
        CHECK(tau_x_shuffled[static_cast<size_t>(i)] ==
              doctest::Approx(tau_x[static_cast<size_t>(src)]).epsilon(1e-5));
    }
}

TEST_CASE("engine base beats a 1-nn base across the synthetic suite") {
    const Scm scm = small_scm();
    const auto net = small_net();
    FitOptions fo;
    fo.n_estimators = 2;
    fo.seed = 3;
    const auto engine = engine_base(net, fo, TaskKind::regression);
    const auto nn = knn_base(1);
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        ConfoundedTaskConfig cfg;
        cfg.n_rows = 120;
        cfg.n_covariates = 3;
        cfg.confounding_strength = 0.6;
        cfg.noise0 = cfg.noise1 = 0.8;
        cfg.seed = seed;
        const ConfoundedTask task = make_confounded_task(scm, cfg);
        const double pehe_engine = pehe(t_learner(task.data, engine), task.data.true_cate);
        const double pehe_nn = pehe(t_learner(task.data, nn), task.data.true_cate);
        CHECK(pehe_engine <= pehe_nn);
    }
}

TEST_CASE("engine propensity head yields probabilities inside the open interval") {
    const Scm scm = small_scm();
    ConfoundedTaskConfig cfg;
    cfg.n_rows = 70;
    cfg.confounding_strength = 1.0;
    cfg.seed = 8;
    const ConfoundedTask task = make_confounded_task(scm, cfg);
    const auto net = small_net();
    FitOptions fo;
    fo.n_estimators = 1;
    fo.seed = 5;
    const auto res =
        x_learner(task.data, knn_base(4), engine_base(net, fo, TaskKind::classification));
    CHECK_FALSE(res.propensity_clamped);  // softmax output never hits 0 or 1
    CHECK(res.cate.size() == static_cast<size_t>(task.data.n_rows()));

    // classification base rejects non-binary labels
    const auto bad = engine_base(net, fo, TaskKind::classification);
    Tensor x({4, 1});
    for (int i = 0; i < 4; ++i) x.at(i, 0) = i;
    CHECK_THROWS_WITH_AS(bad(x, {0.0, 1.0, 2.0, 0.0}, x), doctest::Contains("0/1"), DataError);
}

TEST_CASE("base adapter edge cases") {
    CHECK_THROWS_AS(knn_base(0), ConfigError);
    CHECK_THROWS_AS(engine_base(nullptr, FitOptions{}, TaskKind::regression), ConfigError);

    Tensor x({3, 2});
    Rng rng(5);
    for (int i = 0; i < 3; ++i) {
        x.at(i, 0) = rng.normal();
        x.at(i, 1) = rng.normal();
    }
    Tensor wrong({2, 3});
    CHECK_THROWS_WITH_AS(knn_base(1)(x, {1.0, 2.0, 3.0}, wrong),
                         doctest::Contains("column mismatch"), DataError);
    CHECK_THROWS_AS(constant_base()(x, {}, x), DataError);

    // k larger than the training set degrades to the constant base
    const auto wide = knn_base(10)(x, {1.0, 2.0, 4.0}, x);
    for (double v : wide) CHECK(v == doctest::Approx((1.0 + 2.0 + 4.0) / 3.0).epsilon(1e-12));
}
