#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "picotab/mathx.hpp"
#include "picotab/rng.hpp"
#include "picotab/tensor.hpp"
#include "picotab/thread_pool.hpp"

using namespace picotab;

TEST_CASE("splitmix64 matches the reference test vector") {
    // First outputs of the reference splitmix64 for state 0.
    CHECK(Rng::splitmix(0) == 0xE220A8397B1DCDAFULL);
}

TEST_CASE("rng streams are reproducible and child streams are disjoint") {
    Rng a(42), b(42);
    for (int i = 0; i < 64; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng master(7);
    Rng c0 = master.child(0);
    Rng c1 = master.child(1);
    Rng c0_again = master.child(0);
    int same01 = 0;
    for (int i = 0; i < 32; ++i) {
        const uint64_t x = c0.next_u64();
        CHECK(x == c0_again.next_u64());
        if (x == c1.next_u64()) ++same01;
    }
    CHECK(same01 == 0);

    // child() must not disturb the parent stream
    Rng m1(7), m2(7);
    (void)m1.child(3);
    CHECK(m1.next_u64() == m2.next_u64());
}

TEST_CASE("uniform and normal moments") {
    Rng rng(1234);
    const int n = 20000;
    double su = 0, sn = 0, sn2 = 0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        su += u;
        const double z = rng.normal();
        sn += z;
        sn2 += z * z;
    }
    CHECK(std::abs(su / n - 0.5) < 0.01);
    CHECK(std::abs(sn / n) < 0.03);
    CHECK(std::abs(sn2 / n - 1.0) < 0.05);
}

TEST_CASE("uniform_int covers its inclusive range") {
    Rng rng(5);
    std::set<int64_t> seen;
    for (int i = 0; i < 2000; ++i) {
        const int64_t v = rng.uniform_int(3, 7);
        CHECK(v >= 3);
        CHECK(v <= 7);
        seen.insert(v);
    }
    CHECK(seen.size() == 5);
}

TEST_CASE("gamma and dirichlet sanity") {
    Rng rng(99);
    double s = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) s += rng.gamma(2.5);
    CHECK(std::abs(s / n - 2.5) < 0.1);

    auto w = rng.dirichlet(5, 1.0);
    REQUIRE(w.size() == 5);
    double total = 0;
    for (double v : w) {
        CHECK(v > 0.0);
        total += v;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("permutation and sampling without replacement") {
    Rng rng(11);
    auto p = rng.permutation(50);
    std::vector<int> sorted = p;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) CHECK(sorted[static_cast<size_t>(i)] == i);

    auto s = rng.sample_without_replacement(100, 10);
    REQUIRE(s.size() == 10);
    std::set<int> uniq(s.begin(), s.end());
    CHECK(uniq.size() == 10);
    for (int v : s) CHECK((v >= 0 && v < 100));
}

namespace {
// Independent oracle: invert normal_cdf by bisection on erfc.
double inv_cdf_oracle(double p) {
    double lo = -20.0, hi = 20.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi);
}
}  // namespace

TEST_CASE("inv_normal_cdf agrees with a bisection oracle") {
    const double ps[] = {1e-6, 0.001, 0.02, 1.0 / 6.0, 0.25, 0.5, 0.75, 5.0 / 6.0, 0.98, 0.999, 1 - 1e-6};
    for (double p : ps) {
        const double got = inv_normal_cdf(p);
        const double want = inv_cdf_oracle(p);
        CHECK(got == doctest::Approx(want).epsilon(1e-8));
        CHECK(normal_cdf(got) == doctest::Approx(p).epsilon(1e-8));
    }
    CHECK(inv_normal_cdf(0.5) == doctest::Approx(0.0).epsilon(1e-12));
    // quantile-transform endpoints for n = 3 distinct values
    CHECK(inv_normal_cdf(5.0 / 6.0) == doctest::Approx(0.9674).epsilon(1e-4));
    CHECK(inv_normal_cdf(1.0 / 6.0) == doctest::Approx(-0.9674).epsilon(1e-4));
    // monotone
    double prev = -1e30;
    for (double p = 0.01; p < 1.0; p += 0.01) {
        const double z = inv_normal_cdf(p);
        CHECK(z > prev);
        prev = z;
    }
}

TEST_CASE("softmax and log_sum_exp are shift-stable") {
    double v[3] = {1000.0, 1000.0, 1000.0};
    softmax_inplace(v, 3);
    for (double x : v) CHECK(x == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    double w[2] = {0.0, 0.0};
    CHECK(log_sum_exp(w, 2) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    double a[4] = {0.1, -0.3, 2.0, 0.7};
    double b[4] = {100.1, 99.7, 102.0, 100.7};
    const double la = log_sum_exp(a, 4);
    const double lb = log_sum_exp(b, 4);
    CHECK(lb - la == doctest::Approx(100.0).epsilon(1e-12));
    softmax_inplace(a, 4);
    softmax_inplace(b, 4);
    double sum = 0;
    for (int i = 0; i < 4; ++i) {
        CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
        sum += a[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("quantile conventions (linear interpolation, type 7)") {
    std::vector<double> v = {1, 2, 3, 4, 5};
    CHECK(median(v) == 3.0);
    CHECK(quantile_linear(v, 0.25) == 2.0);
    CHECK(quantile_linear(v, 0.75) == 4.0);

    std::vector<double> e = {1, 2, 3, 4};
    CHECK(median(e) == 2.5);
    CHECK(quantile_linear(e, 0.25) == doctest::Approx(1.75).epsilon(1e-15));
    CHECK(quantile_linear(e, 0.75) == doctest::Approx(3.25).epsilon(1e-15));
    CHECK(quantile_linear(e, 0.0) == 1.0);
    CHECK(quantile_linear(e, 1.0) == 4.0);

    CHECK(mean({1, 2, 3, 4}) == 2.5);
    CHECK(sample_std({1, 2, 3, 4}) == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-15));
}

namespace {
void naive_matmul(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0;
            for (int p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
            c[i * n + j] += s;
        }
}
}  // namespace

TEST_CASE("matmul kernels match a naive reference") {
    Rng rng(3);
    const int m = 7, k = 5, n = 9;
    std::vector<double> a(m * k), b(k * n), bt(n * k);
    for (auto& x : a) x = rng.normal();
    for (int p = 0; p < k; ++p)
        for (int j = 0; j < n; ++j) {
            b[static_cast<size_t>(p) * n + j] = rng.normal();
            bt[static_cast<size_t>(j) * k + p] = b[static_cast<size_t>(p) * n + j];
        }

    std::vector<double> want(m * n, 0.0), got(m * n, 0.0);
    naive_matmul(a.data(), b.data(), want.data(), m, k, n);

    matmul_acc(a.data(), b.data(), got.data(), m, k, n);
    for (int i = 0; i < m * n; ++i) CHECK(got[static_cast<size_t>(i)] == doctest::Approx(want[static_cast<size_t>(i)]).epsilon(1e-12));

    std::fill(got.begin(), got.end(), 0.0);
    matmul_bt_acc(a.data(), bt.data(), got.data(), m, k, n);
    for (int i = 0; i < m * n; ++i) CHECK(got[static_cast<size_t>(i)] == doctest::Approx(want[static_cast<size_t>(i)]).epsilon(1e-12));

    // C[k,n] += A[m,k]^T B[m,n]  with A = ones picks out column sums of B
    std::vector<double> ones(static_cast<size_t>(3) * k, 1.0), bb(static_cast<size_t>(3) * n);
    for (auto& x : bb) x = rng.normal();
    std::vector<double> acc(static_cast<size_t>(k) * n, 0.0);
    matmul_at_acc(ones.data(), bb.data(), acc.data(), 3, k, n);
    for (int j = 0; j < n; ++j) {
        const double colsum = bb[static_cast<size_t>(0) * n + j] + bb[static_cast<size_t>(1) * n + j] + bb[static_cast<size_t>(2) * n + j];
        for (int p = 0; p < k; ++p) CHECK(acc[static_cast<size_t>(p) * n + j] == doctest::Approx(colsum).epsilon(1e-12));
    }

    double x3[3] = {1, 2, 3}, y3[3] = {4, 5, 6};
    CHECK(dot(x3, y3, 3) == 32.0);
    axpy(2.0, x3, y3, 3);
    CHECK(y3[0] == 6.0);
    CHECK(y3[1] == 9.0);
    CHECK(y3[2] == 12.0);
}

TEST_CASE("tensor shape and indexing") {
    Tensor t({2, 3, 4});
    CHECK(t.rank() == 3);
    CHECK(t.numel() == 24);
    t.at(1, 2, 3) = 5.0;
    CHECK(t[23] == 5.0);
    CHECK(t.row(1, 2)[3] == 5.0);
    Tensor z = Tensor::zeros_like(t);
    CHECK(z.same_shape(t));
    CHECK(z[23] == 0.0);
    t.fill(2.5);
    CHECK(t.at(0, 0, 0) == 2.5);
}

TEST_CASE("thread pool runs every index exactly once and rethrows") {
    for (int workers : {1, 4}) {
        ThreadPool pool(workers);
        std::vector<int> hits(500, 0);
        pool.parallel_for(500, [&](int i) { hits[static_cast<size_t>(i)] += 1; });
        for (int h : hits) CHECK(h == 1);

        CHECK_THROWS_AS(
            pool.parallel_for(16, [](int i) { if (i == 7) throw std::runtime_error("boom"); }),
            std::runtime_error);
        // pool still usable after an exception
        std::vector<int> again(8, 0);
        pool.parallel_for(8, [&](int i) { again[static_cast<size_t>(i)] = i; });
        CHECK(again[7] == 7);
    }
}
