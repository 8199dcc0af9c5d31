#include "picotab/hpo.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include "picotab/errors.hpp"
#include "picotab/rng.hpp"

namespace picotab {
namespace {

constexpr uint64_t kSeedGridSalt = 0x5eed941d1a77ceULL;
constexpr uint64_t kCandidateSalt = 0xca4d1da7e5b00ULL;

uint64_t fnv1a(const std::vector<double>& v) {
    uint64_t h = 1469598103934665603ULL;
    for (double x : v) {
        uint64_t bits = 0;
        std::memcpy(&bits, &x, sizeof(bits));
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffULL;
            h *= 1099511628211ULL;
        }
    }
    return h;
}

double latent_to_value(const HpoDimension& dim, double u) {
    switch (dim.kind) {
        case HpoDimension::Kind::real:
            if (dim.log_scale) {
                return std::exp(std::log(dim.lo) + u * (std::log(dim.hi) - std::log(dim.lo)));
            }
            return dim.lo + u * (dim.hi - dim.lo);
        case HpoDimension::Kind::integer: {
            const double v = std::floor(dim.lo + u * (dim.hi - dim.lo + 1.0));
            return std::clamp(v, dim.lo, dim.hi);
        }
        case HpoDimension::Kind::categorical: {
            const double k = static_cast<double>(dim.choices.size());
            return std::clamp(std::floor(u * k), 0.0, k - 1.0);
        }
    }
    throw RuntimeFailure("hpo: unreachable dimension kind");
}

std::vector<double> latent_row_to_point(const HpoSpace& space, const Tensor& latents, int row) {
    std::vector<double> point(static_cast<size_t>(space.n_dims()));
    for (int d = 0; d < space.n_dims(); ++d) {
        point[static_cast<size_t>(d)] =
            latent_to_value(space.dims[static_cast<size_t>(d)], latents.at(row, d));
    }
    return point;
}

bool is_integral(double v) { return std::isfinite(v) && v == std::floor(v); }

}  // namespace

int HpoDimension::encoded_width() const {
    return kind == Kind::categorical ? static_cast<int>(choices.size()) : 1;
}

int HpoSpace::encoded_width() const {
    int w = 0;
    for (const auto& dim : dims) w += dim.encoded_width();
    return w;
}

void HpoSpace::validate() const {
    if (dims.empty()) throw ConfigError("hpo: space has no dimensions");
    std::set<std::string> names;
    for (const auto& dim : dims) {
        if (dim.name.empty()) throw ConfigError("hpo: dimension with empty name");
        if (!names.insert(dim.name).second) {
            throw ConfigError("hpo: duplicate dimension name '" + dim.name + "'");
        }
        switch (dim.kind) {
            case HpoDimension::Kind::real:
                if (!(dim.lo < dim.hi)) {
                    throw ConfigError("hpo: real dimension '" + dim.name + "' needs lo < hi");
                }
                if (dim.log_scale && dim.lo <= 0.0) {
                    throw ConfigError("hpo: log dimension '" + dim.name + "' needs lo > 0");
                }
                break;
            case HpoDimension::Kind::integer:
                if (!is_integral(dim.lo) || !is_integral(dim.hi) || dim.lo > dim.hi) {
                    throw ConfigError("hpo: integer dimension '" + dim.name +
                                      "' needs integral lo <= hi");
                }
                break;
            case HpoDimension::Kind::categorical: {
                if (dim.choices.empty()) {
                    throw ConfigError("hpo: categorical dimension '" + dim.name +
                                      "' has no choices");
                }
                std::set<std::string> uniq(dim.choices.begin(), dim.choices.end());
                if (uniq.size() != dim.choices.size()) {
                    throw ConfigError("hpo: categorical dimension '" + dim.name +
                                      "' has duplicate choices");
                }
                break;
            }
        }
    }
}

bool HpoSpace::contains(const std::vector<double>& point) const {
    if (point.size() != dims.size()) return false;
    for (size_t d = 0; d < dims.size(); ++d) {
        const HpoDimension& dim = dims[d];
        const double v = point[d];
        switch (dim.kind) {
            case HpoDimension::Kind::real:
                if (!(v >= dim.lo && v <= dim.hi)) return false;
                break;
            case HpoDimension::Kind::integer:
                if (!is_integral(v) || v < dim.lo || v > dim.hi) return false;
                break;
            case HpoDimension::Kind::categorical:
                if (!is_integral(v) || v < 0.0 ||
                    v >= static_cast<double>(dim.choices.size())) {
                    return false;
                }
                break;
        }
    }
    return true;
}

std::vector<double> HpoSpace::encode(const std::vector<double>& point) const {
    if (!contains(point)) throw DataError("hpo: point outside the declared space");
    std::vector<double> out;
    out.reserve(static_cast<size_t>(encoded_width()));
    for (size_t d = 0; d < dims.size(); ++d) {
        const HpoDimension& dim = dims[d];
        if (dim.kind == HpoDimension::Kind::categorical) {
            for (size_t c = 0; c < dim.choices.size(); ++c) {
                out.push_back(c == static_cast<size_t>(point[d]) ? 1.0 : 0.0);
            }
        } else {
            out.push_back(point[d]);
        }
    }
    return out;
}

HpoSpace parse_space(const ConfigMap& config) {
    int n = 0;
    for (const auto& [k, v] : config.entries) {
        if (k.rfind("dim.", 0) != 0) continue;
        const size_t dot = k.find('.', 4);
        if (dot == std::string::npos) throw DataError("hpo: malformed space key '" + k + "'");
        const std::string idx = k.substr(4, dot - 4);
        try {
            n = std::max(n, std::stoi(idx) + 1);
        } catch (const std::exception&) {
            throw DataError("hpo: malformed space key '" + k + "'");
        }
    }
    if (n == 0) throw DataError("hpo: space file declares no dimensions");

    HpoSpace space;
    for (int i = 0; i < n; ++i) {
        const std::string p = "dim." + std::to_string(i) + ".";
        HpoDimension dim;
        dim.name = config.get(p + "name");
        const std::string kind = config.get(p + "kind");
        if (kind == "real") {
            dim.kind = HpoDimension::Kind::real;
            dim.lo = config.get_real(p + "lo");
            dim.hi = config.get_real(p + "hi");
            if (config.has(p + "log")) dim.log_scale = config.get_bool(p + "log");
        } else if (kind == "int" || kind == "integer") {
            dim.kind = HpoDimension::Kind::integer;
            dim.lo = static_cast<double>(config.get_int(p + "lo"));
            dim.hi = static_cast<double>(config.get_int(p + "hi"));
        } else if (kind == "categorical") {
            dim.kind = HpoDimension::Kind::categorical;
            std::string raw = config.get(p + "choices");
            size_t start = 0;
            while (start <= raw.size()) {
                const size_t comma = raw.find(',', start);
                const std::string item =
                    raw.substr(start, comma == std::string::npos ? std::string::npos
                                                                 : comma - start);
                if (!item.empty()) dim.choices.push_back(item);
                if (comma == std::string::npos) break;
                start = comma + 1;
            }
        } else {
            throw DataError("hpo: unknown dimension kind '" + kind + "' for " + dim.name);
        }
        space.dims.push_back(std::move(dim));
    }
    space.validate();
    return space;
}

HpoSpace load_space(const std::string& path) { return parse_space(load_config(path)); }

Tensor lhs_sample(int n, int dims, uint64_t seed) {
    if (n < 1) throw ConfigError("hpo: lhs needs n >= 1");
    if (dims < 1) throw ConfigError("hpo: lhs needs dims >= 1");
    Rng rng(Rng::splitmix(seed ^ kSeedGridSalt));
    Tensor latents({n, dims});
    for (int d = 0; d < dims; ++d) {
        const std::vector<int> strata = rng.permutation(n);
        for (int i = 0; i < n; ++i) {
            const double u = rng.uniform(0.0, 1.0);
            latents.at(i, d) =
                (static_cast<double>(strata[static_cast<size_t>(i)]) + u) / static_cast<double>(n);
        }
    }
    return latents;
}

std::vector<HpoObservation> evaluate_seed_grid(const HpoSpace& space, int n_seed,
                                               const HpoObjective& objective, uint64_t seed) {
    space.validate();
    if (n_seed < 2) throw ConfigError("hpo: n_seed must be >= 2");
    if (!objective) throw ConfigError("hpo: objective is empty");

    const Tensor latents = lhs_sample(n_seed, space.n_dims(), seed);
    std::vector<HpoObservation> observations(static_cast<size_t>(n_seed));
    int n_failed = 0;
    double worst = 0.0;
    bool have_success = false;
    for (int i = 0; i < n_seed; ++i) {
        HpoObservation& obs = observations[static_cast<size_t>(i)];
        obs.point = latent_row_to_point(space, latents, i);
        obs.config_vector = space.encode(obs.point);
        try {
            obs.score = objective(obs.point);
            if (!std::isfinite(obs.score)) throw DataError("non-finite score");
        } catch (const std::exception&) {
            obs.failed = true;
            ++n_failed;
            continue;
        }
        worst = have_success ? std::min(worst, obs.score) : obs.score;
        have_success = true;
    }
    if (!have_success) {
        throw RuntimeFailure("hpo: objective-broken (all " + std::to_string(n_seed) +
                             " evaluations failed)");
    }
    for (auto& obs : observations) {
        if (obs.failed) obs.score = worst;
    }
    return observations;
}

HpoRanking surrogate_rank(const HpoSpace& space, const std::vector<HpoObservation>& observations,
                          int n_candidates, int top_m, const SurrogateFitPredict& surrogate,
                          uint64_t seed) {
    space.validate();
    if (observations.size() < 2) {
        throw DataError("hpo: surrogate ranking needs at least 2 observations");
    }
    if (top_m < 1) throw ConfigError("hpo: top_m must be >= 1");
    if (n_candidates < top_m) throw ConfigError("hpo: n_candidates must be >= top_m");
    if (!surrogate) throw ConfigError("hpo: surrogate is empty");

    const int width = space.encoded_width();
    Tensor x_train({static_cast<int>(observations.size()), width});
    std::vector<double> y_train(observations.size());
    for (size_t i = 0; i < observations.size(); ++i) {
        const auto& obs = observations[i];
        if (static_cast<int>(obs.config_vector.size()) != width) {
            throw DataError("hpo: observation " + std::to_string(i) +
                            " does not match the space encoding");
        }
        for (int j = 0; j < width; ++j) {
            x_train.at(static_cast<int>(i), j) = obs.config_vector[static_cast<size_t>(j)];
        }
        y_train[i] = obs.score;
        if (!std::isfinite(y_train[i])) throw DataError("hpo: non-finite observation score");
    }

    const Tensor latents = lhs_sample(n_candidates, space.n_dims(), seed ^ kCandidateSalt);
    std::vector<std::vector<double>> points(static_cast<size_t>(n_candidates));
    Tensor x_eval({n_candidates, width});
    for (int i = 0; i < n_candidates; ++i) {
        points[static_cast<size_t>(i)] = latent_row_to_point(space, latents, i);
        const auto enc = space.encode(points[static_cast<size_t>(i)]);
        for (int j = 0; j < width; ++j) x_eval.at(i, j) = enc[static_cast<size_t>(j)];
    }

    HpoRanking ranking;
    const bool constant =
        std::all_of(y_train.begin(), y_train.end(), [&](double v) { return v == y_train[0]; });
    std::vector<int> order(static_cast<size_t>(n_candidates));
    if (constant) {
        // no signal to rank on: uniform-random picks, flagged
        ranking.constant_scores = true;
        Rng rng(Rng::splitmix(seed ^ kCandidateSalt ^ 0xf1a99edULL));
        const std::vector<int> perm = rng.permutation(n_candidates);
        order.assign(perm.begin(), perm.end());
        for (int i = 0; i < top_m; ++i) {
            ranking.configs.push_back(points[static_cast<size_t>(order[static_cast<size_t>(i)])]);
            ranking.predicted.push_back(y_train[0]);
        }
        return ranking;
    }

    std::vector<double> pred = surrogate(x_train, y_train, x_eval);
    if (static_cast<int>(pred.size()) != n_candidates) {
        throw DataError("hpo: surrogate returned " + std::to_string(pred.size()) +
                        " predictions for " + std::to_string(n_candidates) + " candidates");
    }
    for (double p : pred) {
        if (!std::isfinite(p)) throw RuntimeFailure("hpo: non-finite surrogate prediction");
    }

    std::vector<uint64_t> hashes(static_cast<size_t>(n_candidates));
    for (int i = 0; i < n_candidates; ++i) {
        std::vector<double> enc(width);
        for (int j = 0; j < width; ++j) enc[static_cast<size_t>(j)] = x_eval.at(i, j);
        hashes[static_cast<size_t>(i)] = fnv1a(enc);
    }
    for (int i = 0; i < n_candidates; ++i) order[static_cast<size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double pa = pred[static_cast<size_t>(a)];
        const double pb = pred[static_cast<size_t>(b)];
        if (pa != pb) return pa > pb;
        return hashes[static_cast<size_t>(a)] < hashes[static_cast<size_t>(b)];
    });
    for (int i = 0; i < top_m; ++i) {
        const int idx = order[static_cast<size_t>(i)];
        ranking.configs.push_back(points[static_cast<size_t>(idx)]);
        ranking.predicted.push_back(pred[static_cast<size_t>(idx)]);
    }
    return ranking;
}

}  // namespace picotab
