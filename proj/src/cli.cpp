#include "picotab/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "picotab/bench.hpp"
#include "picotab/causal.hpp"
#include "picotab/config_file.hpp"
#include "picotab/distill.hpp"
#include "picotab/engine.hpp"
#include "picotab/errors.hpp"
#include "picotab/hpo.hpp"
#include "picotab/pretrain.hpp"
#include "picotab/table_io.hpp"

namespace picotab {
namespace {

namespace fs = std::filesystem;

std::string format_value(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string quoted = "\"";
    for (char c : s) {
        if (c == '"') quoted += '"';
        quoted += c;
    }
    quoted += '"';
    return quoted;
}

void ensure_dir(const std::string& path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) throw DataError("cli: cannot create output directory '" + path + "'");
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cli: cannot write '" + path + "'");
    return out;
}

// flag > config key > environment PICOTAB_SEED > 0
uint64_t resolve_seed(const CLI::Option* opt, long long flag_value, const ConfigMap& cfg) {
    if (opt != nullptr && opt->count() > 0) return static_cast<uint64_t>(flag_value);
    if (cfg.has("seed")) return static_cast<uint64_t>(cfg.get_int("seed"));
    if (const char* env = std::getenv("PICOTAB_SEED")) {
        const std::string s(env);
        long long v = 0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
            throw DataError("cli: PICOTAB_SEED is not an integer: '" + s + "'");
        }
        return static_cast<uint64_t>(v);
    }
    return 0;
}

ConfigMap maybe_config(const std::string& path) {
    return path.empty() ? ConfigMap{} : load_config(path);
}

int cfg_int(const ConfigMap& cfg, const std::string& key, int fallback) {
    return cfg.has(key) ? static_cast<int>(cfg.get_int(key)) : fallback;
}

double cfg_real(const ConfigMap& cfg, const std::string& key, double fallback) {
    return cfg.has(key) ? cfg.get_real(key) : fallback;
}

ModelConfig model_config_from(const ConfigMap& cfg) {
    ModelConfig mc;
    mc.depth = cfg_int(cfg, "model.depth", mc.depth);
    mc.dim = cfg_int(cfg, "model.dim", mc.dim);
    mc.heads = cfg_int(cfg, "model.heads", mc.heads);
    mc.group_size = cfg_int(cfg, "model.group_size", mc.group_size);
    mc.n_thinking = cfg_int(cfg, "model.n_thinking", mc.n_thinking);
    mc.max_classes = cfg_int(cfg, "model.max_classes", mc.max_classes);
    mc.n_bins = cfg_int(cfg, "model.n_bins", mc.n_bins);
    mc.feature_cap = cfg_int(cfg, "model.feature_cap", mc.feature_cap);
    mc.ffn_mult = cfg_int(cfg, "model.ffn_mult", mc.ffn_mult);
    mc.encoder_hidden = cfg_int(cfg, "model.encoder_hidden", mc.encoder_hidden);
    return mc;
}

Model load_model_file(const std::string& path) {
    return Model::from_checkpoint(load_checkpoint(path));
}

Dataset drop_column(const Dataset& d, const std::string& name) {
    const int drop = [&] {
        for (size_t j = 0; j < d.schema.size(); ++j) {
            if (d.schema[j].name == name) return static_cast<int>(j);
        }
        return -1;
    }();
    if (drop < 0) return d;
    Dataset out;
    out.schema = d.schema;
    out.schema.erase(out.schema.begin() + drop);
    const int n = d.n_rows();
    const int c = d.n_cols();
    out.x = Tensor({n, c - 1});
    out.missing.assign(static_cast<size_t>(n) * (c - 1), 0);
    for (int i = 0; i < n; ++i) {
        int jj = 0;
        for (int j = 0; j < c; ++j) {
            if (j == drop) continue;
            out.x.at(i, jj) = d.x.at(i, j);
            out.missing[static_cast<size_t>(i) * (c - 1) + jj] =
                d.missing[static_cast<size_t>(i) * c + j];
            ++jj;
        }
    }
    out.has_target = d.has_target;
    out.target_kind = d.target_kind;
    out.target_name = d.target_name;
    out.y = d.y;
    out.target_categories = d.target_categories;
    return out;
}

void write_predictions(const std::string& path, const FittedModel& model,
                       const std::vector<PredictiveDistribution>& dists) {
    auto out = open_out(path);
    if (model.kind == TaskKind::classification) {
        for (const auto& name : model.class_names) out << csv_field("p_" + name) << ',';
        out << "point\n";
        for (const auto& dist : dists) {
            for (double p : dist.probs) out << format_value(p) << ',';
            const size_t best = static_cast<size_t>(dist.point());
            out << csv_field(model.class_names[best]) << '\n';
        }
    } else {
        const int k = model.bins.n_bins();
        for (int b = 0; b < k; ++b) out << "p_bin_" << b << ',';
        out << "point\n";
        for (const auto& dist : dists) {
            for (double p : dist.probs) out << format_value(p) << ',';
            out << format_value(dist.point()) << '\n';
        }
    }
    if (!out) throw DataError("cli: failed writing '" + path + "'");
}

// --- pretrain ---------------------------------------------------------------

struct PretrainOpts {
    std::string config, out;
    long long seed = 0;
    int steps = -1;
    const CLI::Option* seed_opt = nullptr;
};

void run_pretrain(const PretrainOpts& o) {
    const ConfigMap cfg = maybe_config(o.config);
    ensure_dir(o.out);

    ModelConfig mc = model_config_from(cfg);
    PriorConfig pc;
    pc.max_rows = cfg_int(cfg, "prior.max_rows", pc.max_rows);
    pc.max_features = cfg_int(cfg, "prior.max_features", pc.max_features);
    pc.max_classes = cfg_int(cfg, "prior.max_classes", mc.max_classes);
    pc.task_mix_classification =
        cfg_real(cfg, "prior.task_mix_classification", pc.task_mix_classification);
    pc.task_mix_regression = 1.0 - pc.task_mix_classification;

    TrainConfig tc;
    tc.steps = o.steps > 0 ? o.steps : cfg_int(cfg, "train.steps", tc.steps);
    tc.batch_tasks = cfg_int(cfg, "train.batch_tasks", tc.batch_tasks);
    tc.lr = cfg_real(cfg, "train.lr", tc.lr);
    tc.warmup = cfg_int(cfg, "train.warmup", tc.warmup);
    tc.checkpoint_every = cfg_int(cfg, "train.checkpoint_every", tc.checkpoint_every);
    tc.checkpoint_dir = o.out;
    tc.seed = resolve_seed(o.seed_opt, o.seed, cfg);

    const PretrainResult result = pretrain(mc, pc, tc);
    save_checkpoint(result.model.to_checkpoint(), (fs::path(o.out) / "model.tpfn").string());

    auto log = open_out((fs::path(o.out) / "train_log.csv").string());
    log << "step,loss,lr,grad_norm\n";
    for (const auto& s : result.stats) {
        log << s.step << ',' << format_value(s.loss) << ',' << format_value(s.lr) << ','
            << format_value(s.grad_norm) << '\n';
    }
    if (!result.stats.empty()) {
        std::cout << "pretrain: " << result.stats.size() << " steps, final loss "
                  << format_value(result.stats.back().loss) << "\n";
    }
}

// --- fit-predict -------------------------------------------------------------

struct FitPredictOpts {
    std::string train, test, target, out, model, config;
    long long seed = 0;
    int estimators = -1;
    const CLI::Option* seed_opt = nullptr;
};

void run_fit_predict(const FitPredictOpts& o) {
    const ConfigMap cfg = maybe_config(o.config);
    LoadOptions load;
    load.target = o.target;
    const Dataset train = load_table(o.train, load);
    const Dataset test = drop_column(load_table(o.test), o.target);

    std::shared_ptr<const Model> net;
    if (!o.model.empty()) {
        net = std::make_shared<const Model>(load_model_file(o.model));
    } else {
        const ModelConfig mc = model_config_from(cfg);
        net = std::make_shared<const Model>(
            Model::init(mc, resolve_seed(o.seed_opt, o.seed, cfg)));
    }

    FitOptions fo;
    fo.n_estimators = o.estimators > 0 ? o.estimators : cfg_int(cfg, "fit.n_estimators", 4);
    fo.seed = resolve_seed(o.seed_opt, o.seed, cfg);
    const FittedModel fitted = fit(net, train, fo);
    for (const auto& w : fitted.warnings) std::cerr << "warning: " << w << "\n";
    write_predictions(o.out, fitted, predict_distribution(fitted, test));
    std::cout << "fit-predict: wrote " << test.n_rows() << " rows to " << o.out << "\n";
}

// --- distill ------------------------------------------------------------------

struct DistillOpts {
    std::string train, target, out, model, config, student = "mlp";
    long long seed = 0;
    int r_aug = 3;
    const CLI::Option* seed_opt = nullptr;
};

void run_distill(const DistillOpts& o) {
    const ConfigMap cfg = maybe_config(o.config);
    ensure_dir(o.out);
    LoadOptions load;
    load.target = o.target;
    const Dataset train = load_table(o.train, load);
    const uint64_t seed = resolve_seed(o.seed_opt, o.seed, cfg);

    std::shared_ptr<const Model> net;
    if (!o.model.empty()) {
        net = std::make_shared<const Model>(load_model_file(o.model));
    } else {
        net = std::make_shared<const Model>(Model::init(model_config_from(cfg), seed));
    }
    FitOptions fo;
    fo.n_estimators = cfg_int(cfg, "fit.n_estimators", 4);
    fo.seed = seed;
    const FittedModel teacher = fit(net, train, fo);

    const TransferSet transfer = generate_transfer_set(teacher, train, o.r_aug, seed);
    DistillConfig dc;
    dc.seed = seed;
    dc.epochs = cfg_int(cfg, "distill.epochs", dc.epochs);
    dc.hidden = cfg_int(cfg, "distill.hidden", dc.hidden);
    dc.tree_rounds = cfg_int(cfg, "distill.tree_rounds", dc.tree_rounds);
    dc.tree_depth = cfg_int(cfg, "distill.tree_depth", dc.tree_depth);

    StudentModel student;
    if (o.student == "mlp") {
        student = distill_mlp(transfer, dc);
    } else if (o.student == "trees") {
        student = distill_trees(transfer, dc);
    } else {
        throw ConfigError("cli: unknown student '" + o.student + "' (mlp or trees)");
    }
    const std::string path = (fs::path(o.out) / "student.tpfn").string();
    save_student(student, path);
    std::cout << "distill: wrote " << path << "\n";
}

// --- bench --------------------------------------------------------------------

struct BenchOpts {
    std::string results, out;
};

void run_bench(const BenchOpts& o) {
    ensure_dir(o.out);
    const ResultTable raw = read_results(o.results);
    const ResultTable normalized = normalize_table(raw);
    write_results(normalized, (fs::path(o.out) / "normalized.csv").string());

    auto agg = open_out((fs::path(o.out) / "aggregate.csv").string());
    agg << "model,mean,sem,n\n";
    for (const auto& row : aggregate(normalized)) {
        agg << csv_field(row.model) << ',' << format_value(row.mean) << ','
            << format_value(row.sem) << ',' << row.n << '\n';
    }

    const WinRateMatrix w = win_rate_matrix(raw);
    auto wins = open_out((fs::path(o.out) / "win_rates.csv").string());
    wins << "model_a,model_b,win_rate\n";
    for (size_t a = 0; a < w.models.size(); ++a) {
        for (size_t b = 0; b < w.models.size(); ++b) {
            const auto& cell = w.at(static_cast<int>(a), static_cast<int>(b));
            if (!cell.has_value()) continue;
            wins << csv_field(w.models[a]) << ',' << csv_field(w.models[b]) << ','
                 << format_value(*cell) << '\n';
        }
    }
    std::cout << "bench: wrote tables to " << o.out << "\n";
}

// --- cate ----------------------------------------------------------------------

struct CateOpts {
    std::string data, treatment, outcome, out, learner = "t", base = "knn", config;
    int knn = 5;
    int propensity_knn = 25;
    long long seed = 0;
    const CLI::Option* seed_opt = nullptr;
};

CausalDataset causal_from_table(const Dataset& table, const std::string& treatment,
                                const std::string& outcome) {
    int t_col = -1, y_col = -1;
    for (size_t j = 0; j < table.schema.size(); ++j) {
        if (table.schema[j].name == treatment) t_col = static_cast<int>(j);
        if (table.schema[j].name == outcome) y_col = static_cast<int>(j);
    }
    if (t_col < 0) throw DataError("cli: treatment column '" + treatment + "' not found");
    if (y_col < 0) throw DataError("cli: outcome column '" + outcome + "' not found");
    if (table.schema[static_cast<size_t>(y_col)].kind != ColumnKind::numeric) {
        throw DataError("cli: outcome column '" + outcome + "' must be numeric");
    }
    const auto& t_schema = table.schema[static_cast<size_t>(t_col)];
    const bool t_binary_cat =
        t_schema.kind == ColumnKind::categorical && t_schema.categories.size() == 2;

    CausalDataset d;
    const int n = table.n_rows();
    const int c = table.n_cols();
    d.x = Tensor({n, c - 2});
    d.t.resize(n);
    d.y.resize(n);
    for (int i = 0; i < n; ++i) {
        if (table.is_missing(i, t_col) || table.is_missing(i, y_col)) {
            throw DataError("cli: treatment/outcome missing at row " + std::to_string(i + 1));
        }
        const double tv = table.x.at(i, t_col);
        if (!t_binary_cat && tv != 0.0 && tv != 1.0) {
            throw DataError("cli: treatment column must be binary 0/1");
        }
        d.t[static_cast<size_t>(i)] = static_cast<int>(tv);
        d.y[static_cast<size_t>(i)] = table.x.at(i, y_col);
        int jj = 0;
        for (int j = 0; j < c; ++j) {
            if (j == t_col || j == y_col) continue;
            d.x.at(i, jj) = table.is_missing(i, j) ? 0.0 : table.x.at(i, j);
            ++jj;
        }
    }
    return d;
}

void run_cate(const CateOpts& o) {
    const ConfigMap cfg = maybe_config(o.config);
    const Dataset table = load_table(o.data);
    const CausalDataset d = causal_from_table(table, o.treatment, o.outcome);

    BaseFitPredict base;
    if (o.base == "knn") {
        base = knn_base(o.knn);
    } else if (o.base == "engine") {
        const auto net = std::make_shared<const Model>(
            Model::init(model_config_from(cfg), resolve_seed(o.seed_opt, o.seed, cfg)));
        FitOptions fo;
        fo.n_estimators = cfg_int(cfg, "fit.n_estimators", 2);
        fo.seed = resolve_seed(o.seed_opt, o.seed, cfg);
        base = engine_base(net, fo, TaskKind::regression);
    } else {
        throw ConfigError("cli: unknown base '" + o.base + "' (knn or engine)");
    }

    std::vector<double> cate;
    if (o.learner == "t") {
        cate = t_learner(d, base);
    } else if (o.learner == "s") {
        cate = s_learner(d, base);
    } else if (o.learner == "x") {
        const auto res = x_learner(d, base, knn_base(o.propensity_knn));
        if (res.propensity_clamped) {
            std::cerr << "warning: propensity estimates clamped to [0.01, 0.99]\n";
        }
        cate = res.cate;
    } else {
        throw ConfigError("cli: unknown learner '" + o.learner + "' (t, s, or x)");
    }

    auto out = open_out(o.out);
    out << "row,cate\n";
    for (size_t i = 0; i < cate.size(); ++i) {
        out << i << ',' << format_value(cate[i]) << '\n';
    }
    std::cout << "cate: wrote " << cate.size() << " rows to " << o.out << "\n";
}

// --- hpo -------------------------------------------------------------------------

struct HpoOpts {
    std::string space, train, target, out, config;
    int n_seed = 16;
    int candidates = 200;
    int top = 5;
    long long seed = 0;
    const CLI::Option* seed_opt = nullptr;
};

// recognized dimension names -> desk model / fit knobs
void apply_hpo_dim(ModelConfig& mc, FitOptions& fo, const HpoDimension& dim, double value) {
    const int iv = [&] {
        if (dim.kind == HpoDimension::Kind::categorical) {
            const std::string& choice = dim.choices[static_cast<size_t>(value)];
            int parsed = 0;
            const auto res =
                std::from_chars(choice.data(), choice.data() + choice.size(), parsed);
            if (res.ec != std::errc{} || res.ptr != choice.data() + choice.size()) {
                throw ConfigError("cli: hpo choice '" + choice + "' for dimension '" + dim.name +
                                  "' is not an integer");
            }
            return parsed;
        }
        return static_cast<int>(std::llround(value));
    }();
    if (dim.name == "depth") {
        mc.depth = iv;
    } else if (dim.name == "dim") {
        mc.dim = iv;
    } else if (dim.name == "heads") {
        mc.heads = iv;
    } else if (dim.name == "n_thinking") {
        mc.n_thinking = iv;
    } else if (dim.name == "n_bins") {
        mc.n_bins = iv;
    } else if (dim.name == "n_estimators") {
        fo.n_estimators = iv;
    } else {
        throw ConfigError("cli: unknown hpo dimension '" + dim.name +
                          "' (depth, dim, heads, n_thinking, n_bins, n_estimators)");
    }
}

void run_hpo(const HpoOpts& o) {
    const ConfigMap cfg = maybe_config(o.config);
    ensure_dir(o.out);
    const HpoSpace space = load_space(o.space);
    LoadOptions load;
    load.target = o.target;
    const Dataset full = load_table(o.train, load);
    const uint64_t seed = resolve_seed(o.seed_opt, o.seed, cfg);

    // deterministic 75/25 holdout for the objective
    const int n = full.n_rows();
    if (n < 8) throw DataError("cli: hpo needs at least 8 training rows");
    Rng rng(Rng::splitmix(seed ^ 0x4b0a0f5eedULL));
    const std::vector<int> perm = rng.permutation(n);
    const int n_val = std::max(2, n / 4);
    auto subset = [&](int lo, int hi) {
        Dataset part;
        part.schema = full.schema;
        part.has_target = full.has_target;
        part.target_kind = full.target_kind;
        part.target_name = full.target_name;
        part.target_categories = full.target_categories;
        const int c = full.n_cols();
        part.x = Tensor({hi - lo, c});
        part.missing.assign(static_cast<size_t>(hi - lo) * c, 0);
        part.y.resize(hi - lo);
        for (int i = lo; i < hi; ++i) {
            const int src = perm[static_cast<size_t>(i)];
            for (int j = 0; j < c; ++j) {
                part.x.at(i - lo, j) = full.x.at(src, j);
                part.missing[static_cast<size_t>(i - lo) * c + j] =
                    full.missing[static_cast<size_t>(src) * c + j];
            }
            part.y[static_cast<size_t>(i - lo)] = full.y[static_cast<size_t>(src)];
        }
        return part;
    };
    const Dataset val = subset(0, n_val);
    const Dataset tr = subset(n_val, n);

    const HpoObjective objective = [&](const std::vector<double>& point) {
        ModelConfig mc = model_config_from(cfg);
        FitOptions fo;
        fo.n_estimators = 2;
        fo.seed = seed;
        for (size_t d = 0; d < space.dims.size(); ++d) {
            apply_hpo_dim(mc, fo, space.dims[d], point[d]);
        }
        mc.validate();
        const auto net = std::make_shared<const Model>(Model::init(mc, seed));
        const FittedModel fitted = fit(net, tr, fo);
        const std::vector<double> pred = predict(fitted, val);
        if (full.target_kind == TaskKind::classification) {
            double hits = 0.0;
            for (size_t i = 0; i < pred.size(); ++i) {
                hits += pred[i] == val.y[i] ? 1.0 : 0.0;
            }
            return hits / static_cast<double>(pred.size());
        }
        double se = 0.0;
        for (size_t i = 0; i < pred.size(); ++i) {
            const double diff = pred[i] - val.y[i];
            se += diff * diff;
        }
        return -std::sqrt(se / static_cast<double>(pred.size()));  // negated rmse
    };

    const auto observations = evaluate_seed_grid(space, o.n_seed, objective, seed);

    auto obs_out = open_out((fs::path(o.out) / "observations.csv").string());
    for (const auto& dim : space.dims) obs_out << csv_field(dim.name) << ',';
    obs_out << "score,failed\n";
    auto write_point = [&](std::ofstream& out, const std::vector<double>& point) {
        for (size_t d = 0; d < space.dims.size(); ++d) {
            const auto& dim = space.dims[d];
            if (dim.kind == HpoDimension::Kind::categorical) {
                out << csv_field(dim.choices[static_cast<size_t>(point[d])]) << ',';
            } else {
                out << format_value(point[d]) << ',';
            }
        }
    };
    for (const auto& obs : observations) {
        write_point(obs_out, obs.point);
        obs_out << format_value(obs.score) << ',' << (obs.failed ? 1 : 0) << '\n';
    }

    // the engine ranks its own hyperparameters: a small in-context regressor
    // acts as the surrogate over the encoded configs
    ModelConfig smc;
    smc.depth = 1;
    smc.dim = 8;
    smc.heads = 2;
    smc.group_size = 2;
    smc.n_thinking = 2;
    smc.max_classes = 4;
    smc.n_bins = 8;
    smc.encoder_hidden = 6;
    const auto surrogate_net = std::make_shared<const Model>(Model::init(smc, seed ^ 0x5a));
    FitOptions sfo;
    sfo.n_estimators = 2;
    sfo.seed = seed;
    const auto ranking =
        surrogate_rank(space, observations, o.candidates, o.top,
                       engine_fit_predict(surrogate_net, sfo, TaskKind::regression), seed);
    if (ranking.constant_scores) {
        std::cerr << "warning: constant objective scores; ranking is a random pick\n";
    }

    auto top_out = open_out((fs::path(o.out) / "top_configs.csv").string());
    for (const auto& dim : space.dims) top_out << csv_field(dim.name) << ',';
    top_out << "predicted_score\n";
    for (size_t i = 0; i < ranking.configs.size(); ++i) {
        write_point(top_out, ranking.configs[i]);
        top_out << format_value(ranking.predicted[i]) << '\n';
    }
    std::cout << "hpo: " << observations.size() << " observations, top " << o.top
              << " configs written to " << o.out << "\n";
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"picotab: desk-scale in-context learning for tabular data"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    auto pre = std::make_shared<PretrainOpts>();
    auto* pre_cmd = app.add_subcommand("pretrain", "Fit the prior-trained model weights");
    pre_cmd->add_option("--config", pre->config, "key = value config file");
    pre_cmd->add_option("--out", pre->out, "output directory")->required();
    pre->seed_opt = pre_cmd->add_option("--seed", pre->seed, "rng seed");
    pre_cmd->add_option("--steps", pre->steps, "training steps");
    pre_cmd->callback([pre] { run_pretrain(*pre); });

    auto fitp = std::make_shared<FitPredictOpts>();
    auto* fit_cmd =
        app.add_subcommand("fit-predict", "Fit on a table, write predictive distributions");
    fit_cmd->add_option("--train", fitp->train, "training CSV")->required();
    fit_cmd->add_option("--test", fitp->test, "test CSV")->required();
    fit_cmd->add_option("--target", fitp->target, "target column name")->required();
    fit_cmd->add_option("--out", fitp->out, "predictions CSV path")->required();
    fit_cmd->add_option("--model", fitp->model, "model checkpoint (.tpfn)");
    fit_cmd->add_option("--config", fitp->config, "key = value config file");
    fitp->seed_opt = fit_cmd->add_option("--seed", fitp->seed, "rng seed");
    fit_cmd->add_option("--estimators", fitp->estimators, "ensemble size");
    fit_cmd->callback([fitp] { run_fit_predict(*fitp); });

    auto dis = std::make_shared<DistillOpts>();
    auto* dis_cmd = app.add_subcommand("distill", "Distill a fitted model into a student");
    dis_cmd->add_option("--train", dis->train, "training CSV")->required();
    dis_cmd->add_option("--target", dis->target, "target column name")->required();
    dis_cmd->add_option("--out", dis->out, "output directory")->required();
    dis_cmd->add_option("--student", dis->student, "student kind: mlp or trees");
    dis_cmd->add_option("--model", dis->model, "teacher checkpoint (.tpfn)");
    dis_cmd->add_option("--config", dis->config, "key = value config file");
    dis_cmd->add_option("--r-aug", dis->r_aug, "augmentation rounds");
    dis->seed_opt = dis_cmd->add_option("--seed", dis->seed, "rng seed");
    dis_cmd->callback([dis] { run_distill(*dis); });

    auto ben = std::make_shared<BenchOpts>();
    auto* ben_cmd = app.add_subcommand("bench", "Normalize, aggregate, and cross a results table");
    ben_cmd->add_option("--results", ben->results, "results CSV (model,dataset,metric,value)")
        ->required();
    ben_cmd->add_option("--out", ben->out, "output directory")->required();
    ben_cmd->callback([ben] { run_bench(*ben); });

    auto cat = std::make_shared<CateOpts>();
    auto* cat_cmd = app.add_subcommand("cate", "Estimate treatment effects with meta-learners");
    cat_cmd->add_option("--data", cat->data, "observational CSV")->required();
    cat_cmd->add_option("--treatment", cat->treatment, "binary treatment column")->required();
    cat_cmd->add_option("--outcome", cat->outcome, "outcome column")->required();
    cat_cmd->add_option("--out", cat->out, "output CSV path")->required();
    cat_cmd->add_option("--learner", cat->learner, "t, s, or x");
    cat_cmd->add_option("--base", cat->base, "base model: knn or engine");
    cat_cmd->add_option("--knn", cat->knn, "neighbors for the knn base");
    cat_cmd->add_option("--propensity-knn", cat->propensity_knn, "neighbors for propensity");
    cat_cmd->add_option("--config", cat->config, "key = value config file");
    cat->seed_opt = cat_cmd->add_option("--seed", cat->seed, "rng seed");
    cat_cmd->callback([cat] { run_cate(*cat); });

    auto hpo = std::make_shared<HpoOpts>();
    auto* hpo_cmd = app.add_subcommand("hpo", "Seed-grid evaluation plus surrogate ranking");
    hpo_cmd->add_option("--space", hpo->space, "space definition file")->required();
    hpo_cmd->add_option("--train", hpo->train, "training CSV")->required();
    hpo_cmd->add_option("--target", hpo->target, "target column name")->required();
    hpo_cmd->add_option("--out", hpo->out, "output directory")->required();
    hpo_cmd->add_option("--n-seed", hpo->n_seed, "seed grid size");
    hpo_cmd->add_option("--candidates", hpo->candidates, "dense candidate count");
    hpo_cmd->add_option("--top", hpo->top, "configs to keep");
    hpo_cmd->add_option("--config", hpo->config, "key = value config file");
    hpo->seed_opt = hpo_cmd->add_option("--seed", hpo->seed, "rng seed");
    hpo_cmd->callback([hpo] { run_hpo(*hpo); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const RuntimeFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}

}  // namespace picotab
