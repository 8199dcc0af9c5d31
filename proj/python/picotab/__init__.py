"""Desk-scale in-context learning for tabular data."""

try:
    from . import _core  # packaged install: extension lives inside the package
except ImportError:  # development tree: extension sits on PYTHONPATH (build dir)
    import _core

ModelConfig = _core.ModelConfig
Model = _core.Model
Fitted = _core.Fitted
Student = _core.Student
DataError = _core.DataError
ConfigError = _core.ConfigError
RuntimeFailure = _core.RuntimeFailure

pretrain = _core.pretrain
fit_classifier = _core.fit_classifier
fit_regressor = _core.fit_regressor
distill = _core.distill
cate = _core.cate
pehe = _core.pehe
lhs_sample = _core.lhs_sample
normalize_scores = _core.normalize_scores

__all__ = [
    "ModelConfig",
    "Model",
    "Fitted",
    "Student",
    "DataError",
    "ConfigError",
    "RuntimeFailure",
    "pretrain",
    "fit_classifier",
    "fit_regressor",
    "distill",
    "cate",
    "pehe",
    "lhs_sample",
    "normalize_scores",
]
