#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <memory>
#include <string>
#include <vector>

#include "picotab/bench.hpp"
#include "picotab/causal.hpp"
#include "picotab/checkpoint.hpp"
#include "picotab/distill.hpp"
#include "picotab/engine.hpp"
#include "picotab/errors.hpp"
#include "picotab/hpo.hpp"
#include "picotab/model.hpp"
#include "picotab/pretrain.hpp"

namespace py = pybind11;

namespace picotab {
namespace {

Tensor to_tensor(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw DataError("python: feature matrix is empty");
    const int c = static_cast<int>(rows[0].size());
    if (c == 0) throw DataError("python: feature matrix has no columns");
    Tensor x({static_cast<int>(rows.size()), c});
    for (size_t i = 0; i < rows.size(); ++i) {
        if (static_cast<int>(rows[i].size()) != c) {
            throw DataError("python: ragged feature matrix at row " + std::to_string(i));
        }
        for (int j = 0; j < c; ++j) x.at(static_cast<int>(i), j) = rows[i][j];
    }
    return x;
}

Dataset numeric_features(const Tensor& x) {
    Dataset d;
    const int c = x.dim(1);
    d.schema.resize(static_cast<size_t>(c));
    for (int j = 0; j < c; ++j) {
        d.schema[static_cast<size_t>(j)].name = "f" + std::to_string(j);
        d.schema[static_cast<size_t>(j)].kind = ColumnKind::numeric;
    }
    d.x = x;
    d.missing.assign(static_cast<size_t>(x.dim(0)) * c, 0);
    return d;
}

struct PyFitted {
    FittedModel model;
    Dataset train;  // retained so distillation can rebuild the transfer set
};

PyFitted fit_classifier(const Model& net, const std::vector<std::vector<double>>& x,
                        const std::vector<std::string>& y, int n_estimators, uint64_t seed) {
    Dataset d = numeric_features(to_tensor(x));
    if (y.size() != static_cast<size_t>(d.n_rows())) {
        throw DataError("python: X and y row counts differ");
    }
    d.has_target = true;
    d.target_kind = TaskKind::classification;
    d.target_name = "target";
    d.target_categories = y;
    std::sort(d.target_categories.begin(), d.target_categories.end());
    d.target_categories.erase(
        std::unique(d.target_categories.begin(), d.target_categories.end()),
        d.target_categories.end());
    d.y.resize(y.size());
    for (size_t i = 0; i < y.size(); ++i) {
        const auto it =
            std::lower_bound(d.target_categories.begin(), d.target_categories.end(), y[i]);
        d.y[i] = static_cast<double>(it - d.target_categories.begin());
    }
    FitOptions options;
    options.n_estimators = n_estimators;
    options.seed = seed;
    auto shared = std::make_shared<const Model>(net);
    PyFitted out{fit(shared, d, options), std::move(d)};
    return out;
}

PyFitted fit_regressor(const Model& net, const std::vector<std::vector<double>>& x,
                       const std::vector<double>& y, int n_estimators, uint64_t seed) {
    Dataset d = numeric_features(to_tensor(x));
    if (y.size() != static_cast<size_t>(d.n_rows())) {
        throw DataError("python: X and y row counts differ");
    }
    d.has_target = true;
    d.target_kind = TaskKind::regression;
    d.target_name = "target";
    d.y = y;
    FitOptions options;
    options.n_estimators = n_estimators;
    options.seed = seed;
    auto shared = std::make_shared<const Model>(net);
    PyFitted out{fit(shared, d, options), std::move(d)};
    return out;
}

std::vector<std::vector<double>> fitted_proba(const PyFitted& f,
                                              const std::vector<std::vector<double>>& x) {
    const Dataset d = numeric_features(to_tensor(x));
    std::vector<std::vector<double>> out;
    for (const auto& dist : predict_distribution(f.model, d)) out.push_back(dist.probs);
    return out;
}

py::object fitted_predict(const PyFitted& f, const std::vector<std::vector<double>>& x) {
    const Dataset d = numeric_features(to_tensor(x));
    const std::vector<double> raw = predict(f.model, d);
    if (f.model.kind == TaskKind::classification) {
        py::list labels;
        for (double v : raw) labels.append(f.model.class_names[static_cast<size_t>(v)]);
        return labels;
    }
    return py::cast(raw);
}

struct PyStudent {
    StudentModel student;
};

PyStudent distill_fitted(const PyFitted& f, const std::string& kind, int r_aug, uint64_t seed) {
    const TransferSet transfer = generate_transfer_set(f.model, f.train, r_aug, seed);
    DistillConfig config;
    config.seed = seed;
    if (kind == "mlp") return {distill_mlp(transfer, config)};
    if (kind == "trees") return {distill_trees(transfer, config)};
    throw ConfigError("python: student must be 'mlp' or 'trees'");
}

std::vector<std::vector<double>> student_proba(const PyStudent& s,
                                               const std::vector<std::vector<double>>& x) {
    Dataset d = numeric_features(to_tensor(x));
    std::vector<std::vector<double>> out;
    for (const auto& dist : student_predict(s.student, d)) out.push_back(dist.probs);
    return out;
}

std::vector<double> cate_estimate(const std::vector<std::vector<double>>& x,
                                  const std::vector<int>& t, const std::vector<double>& y,
                                  const std::string& learner, int knn, int propensity_knn) {
    CausalDataset d;
    d.x = to_tensor(x);
    d.t = t;
    d.y = y;
    if (learner == "t") return t_learner(d, knn_base(knn));
    if (learner == "s") return s_learner(d, knn_base(knn));
    if (learner == "x") return x_learner(d, knn_base(knn), knn_base(propensity_knn)).cate;
    throw ConfigError("python: learner must be 't', 's', or 'x'");
}

}  // namespace

void bind_core(py::module_& m) {
    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<RuntimeFailure>(m, "RuntimeFailure", PyExc_RuntimeError);

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("depth", &ModelConfig::depth)
        .def_readwrite("dim", &ModelConfig::dim)
        .def_readwrite("heads", &ModelConfig::heads)
        .def_readwrite("group_size", &ModelConfig::group_size)
        .def_readwrite("n_thinking", &ModelConfig::n_thinking)
        .def_readwrite("max_classes", &ModelConfig::max_classes)
        .def_readwrite("n_bins", &ModelConfig::n_bins)
        .def_readwrite("feature_cap", &ModelConfig::feature_cap)
        .def_readwrite("ffn_mult", &ModelConfig::ffn_mult)
        .def_readwrite("encoder_hidden", &ModelConfig::encoder_hidden)
        .def("validate", &ModelConfig::validate);

    py::class_<Model>(m, "Model")
        .def_static("init", &Model::init, py::arg("config"), py::arg("seed"))
        .def_static("load",
                    [](const std::string& path) {
                        return Model::from_checkpoint(load_checkpoint(path));
                    })
        .def("save",
             [](const Model& model, const std::string& path) {
                 save_checkpoint(model.to_checkpoint(), path);
             })
        .def_property_readonly("config", [](const Model& model) { return model.config; });

    m.def(
        "pretrain",
        [](const ModelConfig& config, int steps, int batch_tasks, double lr, uint64_t seed) {
            PriorConfig prior;
            TrainConfig train;
            train.steps = steps;
            train.batch_tasks = batch_tasks;
            train.lr = lr;
            train.warmup = std::max(1, steps / 10);
            train.seed = seed;
            const PretrainResult result = pretrain(config, prior, train);
            std::vector<double> losses;
            for (const auto& s : result.stats) losses.push_back(s.loss);
            return py::make_tuple(result.model, losses);
        },
        py::arg("config"), py::arg("steps") = 50, py::arg("batch_tasks") = 2,
        py::arg("lr") = 3e-4, py::arg("seed") = 0,
        "Prior-fit a model; returns (model, per-step losses).");

    py::class_<PyFitted>(m, "Fitted")
        .def("predict", &fitted_predict, py::arg("x"))
        .def("predict_proba", &fitted_proba, py::arg("x"))
        .def_property_readonly("classes",
                               [](const PyFitted& f) { return f.model.class_names; })
        .def_property_readonly("task", [](const PyFitted& f) {
            return f.model.kind == TaskKind::classification ? "classification" : "regression";
        });

    m.def("fit_classifier", &fit_classifier, py::arg("model"), py::arg("x"), py::arg("y"),
          py::arg("n_estimators") = 4, py::arg("seed") = 0);
    m.def("fit_regressor", &fit_regressor, py::arg("model"), py::arg("x"), py::arg("y"),
          py::arg("n_estimators") = 4, py::arg("seed") = 0);

    py::class_<PyStudent>(m, "Student")
        .def("predict_proba", &student_proba, py::arg("x"))
        .def_property_readonly("kind",
                               [](const PyStudent& s) {
                                   return s.student.kind == StudentKind::mlp ? "mlp" : "trees";
                               })
        .def("save", [](const PyStudent& s, const std::string& path) {
            save_student(s.student, path);
        })
        .def_static("load",
                    [](const std::string& path) { return PyStudent{load_student(path)}; });

    m.def("distill", &distill_fitted, py::arg("fitted"), py::arg("student") = "mlp",
          py::arg("r_aug") = 3, py::arg("seed") = 0);

    m.def("cate", &cate_estimate, py::arg("x"), py::arg("t"), py::arg("y"),
          py::arg("learner") = "t", py::arg("knn") = 5, py::arg("propensity_knn") = 25,
          "Per-row treatment effect estimates from a meta-learner over knn bases.");
    m.def("pehe", &pehe, py::arg("estimated"), py::arg("true_cate"));

    m.def(
        "lhs_sample",
        [](int n, int dims, uint64_t seed) {
            const Tensor t = lhs_sample(n, dims, seed);
            std::vector<std::vector<double>> out(static_cast<size_t>(n),
                                                 std::vector<double>(static_cast<size_t>(dims)));
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < dims; ++j) out[static_cast<size_t>(i)][static_cast<size_t>(j)] = t.at(i, j);
            }
            return out;
        },
        py::arg("n"), py::arg("dims"), py::arg("seed") = 0,
        "Latin hypercube latents in [0,1): one point per stratum per dimension.");

    m.def("normalize_scores", &normalize_scores, py::arg("scores"),
          "Affine map of oriented scores onto [0,1]; all-equal collapses to 0.5.");
}

}  // namespace picotab
