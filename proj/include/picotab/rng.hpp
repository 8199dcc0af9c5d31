#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace picotab {

// Deterministic RNG with hand-rolled distributions so that streams are
// bit-stable across standard library versions. Core generator is
// xoshiro256++ seeded via splitmix64.
class Rng {
  public:
    explicit Rng(uint64_t seed) { reseed(seed); }

    // Derives an independent child stream keyed by (this seed, index).
    // Used to give every task / estimator / fold its own stream.
    Rng child(uint64_t index) const {
        return Rng(splitmix(seed_ ^ (0x9e3779b97f4a7c15ULL * (index + 1))));
    }

    void reseed(uint64_t seed) {
        seed_ = seed;
        uint64_t x = seed;
        for (auto& s : state_) s = splitmix_step(x);
        cached_normal_valid_ = false;
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(next_u64() % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller with a cached spare.
    double normal() {
        if (cached_normal_valid_) {
            cached_normal_valid_ = false;
            return cached_normal_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586 * u2;
        cached_normal_ = r * std::sin(a);
        cached_normal_valid_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Dirichlet(alpha, ..., alpha) via gamma sampling (Marsaglia-Tsang).
    std::vector<double> dirichlet(int k, double alpha) {
        std::vector<double> w(k);
        double total = 0.0;
        for (int i = 0; i < k; ++i) {
            w[i] = gamma(alpha);
            total += w[i];
        }
        for (auto& v : w) v /= total;
        return w;
    }

    double gamma(double shape) {
        if (shape < 1.0) {
            const double u = uniform();
            return gamma(shape + 1.0) * std::pow(u > 0 ? u : 1e-300, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    // Fisher-Yates in-place shuffle.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Random permutation of [0, n).
    std::vector<int> permutation(int n) {
        std::vector<int> p(n);
        for (int i = 0; i < n; ++i) p[i] = i;
        shuffle(p);
        return p;
    }

    // k indices sampled without replacement from [0, n).
    std::vector<int> sample_without_replacement(int n, int k) {
        std::vector<int> p = permutation(n);
        p.resize(k);
        return p;
    }

    static uint64_t splitmix(uint64_t x) {
        return splitmix_step(x);
    }

  private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    static uint64_t splitmix_step(uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static uint64_t splitmix_step(uint64_t&& x) {
        uint64_t y = x;
        return splitmix_step(y);
    }

    uint64_t seed_ = 0;
    uint64_t state_[4] = {};
    double cached_normal_ = 0.0;
    bool cached_normal_valid_ = false;
};

}  // namespace picotab
