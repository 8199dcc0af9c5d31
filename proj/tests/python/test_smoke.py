import math
import random

import pytest

import picotab


def tiny_config():
    cfg = picotab.ModelConfig()
    cfg.depth = 1
    cfg.dim = 16
    cfg.heads = 2
    cfg.group_size = 2
    cfg.n_thinking = 2
    cfg.n_bins = 8
    cfg.encoder_hidden = 8
    cfg.validate()
    return cfg


def make_blobs(n, seed):
    rng = random.Random(seed)
    x, y = [], []
    for _ in range(n):
        label = rng.random() < 0.5
        cx = 2.0 if label else -2.0
        x.append([cx + rng.gauss(0, 0.5), -cx + rng.gauss(0, 0.5)])
        y.append("pos" if label else "neg")
    return x, y


def test_classifier_separates_blobs():
    model = picotab.Model.init(tiny_config(), seed=1)
    x, y = make_blobs(60, seed=7)
    fitted = picotab.fit_classifier(model, x, y, n_estimators=2, seed=3)
    assert fitted.task == "classification"
    assert fitted.classes == ["neg", "pos"]

    xt, yt = make_blobs(20, seed=8)
    preds = fitted.predict(xt)
    acc = sum(p == t for p, t in zip(preds, yt)) / len(yt)
    assert acc >= 0.9  # blobs are 4 sigma apart

    proba = fitted.predict_proba(xt)
    assert len(proba) == 20
    for row in proba:
        assert len(row) == 2
        assert math.isclose(sum(row), 1.0, abs_tol=1e-9)
        assert all(p >= 0 for p in row)


def test_regressor_tracks_a_linear_target():
    model = picotab.Model.init(tiny_config(), seed=2)
    rng = random.Random(11)
    x = [[rng.uniform(-1, 1), rng.uniform(-1, 1)] for _ in range(50)]
    y = [2.0 * a - b for a, b in x]
    fitted = picotab.fit_regressor(model, x, y, n_estimators=2, seed=5)
    assert fitted.task == "regression"
    preds = fitted.predict(x)
    assert len(preds) == 50
    assert all(math.isfinite(p) for p in preds)
    spread = max(preds) - min(preds)
    assert spread > 0.1  # the predictor is not constant


def test_model_checkpoint_roundtrip(tmp_path):
    model = picotab.Model.init(tiny_config(), seed=4)
    path = str(tmp_path / "model.tpfn")
    model.save(path)
    loaded = picotab.Model.load(path)
    assert loaded.config.dim == 16

    x, y = make_blobs(40, seed=9)
    a = picotab.fit_classifier(model, x, y, n_estimators=2, seed=6).predict_proba(x[:5])
    b = picotab.fit_classifier(loaded, x, y, n_estimators=2, seed=6).predict_proba(x[:5])
    assert a == b  # identical weights -> identical predictions


def test_pretrain_runs_and_returns_losses():
    model, losses = picotab.pretrain(tiny_config(), steps=4, batch_tasks=2, seed=1)
    assert len(losses) == 4
    assert all(l > 0 for l in losses)
    assert model.config.depth == 1


def test_distill_student_matches_teacher_shape(tmp_path):
    model = picotab.Model.init(tiny_config(), seed=3)
    x, y = make_blobs(40, seed=21)
    fitted = picotab.fit_classifier(model, x, y, n_estimators=2, seed=2)
    student = picotab.distill(fitted, student="trees", r_aug=2, seed=8)
    assert student.kind == "trees"

    proba = student.predict_proba(x[:6])
    assert len(proba) == 6
    for row in proba:
        assert math.isclose(sum(row), 1.0, abs_tol=1e-9)

    path = str(tmp_path / "student.tpfn")
    student.save(path)
    again = picotab.Student.load(path)
    assert again.predict_proba(x[:6]) == proba


def test_cate_recovers_a_constant_effect():
    rng = random.Random(33)
    x, t, y = [], [], []
    for _ in range(80):
        xi = [rng.uniform(-1, 1), rng.uniform(-1, 1)]
        ti = rng.random() < 0.5
        x.append(xi)
        t.append(1 if ti else 0)
        y.append(xi[0] + (1.0 if ti else 0.0) + 0.05 * rng.gauss(0, 1))
    est = picotab.cate(x, t, y, learner="t", knn=5)
    assert len(est) == 80
    mean = sum(est) / len(est)
    assert 0.7 < mean < 1.3
    assert picotab.pehe(est, [1.0] * 80) < 0.6


def test_hpo_helpers():
    pts = picotab.lhs_sample(16, 3, seed=5)
    assert len(pts) == 16
    for row in pts:
        assert len(row) == 3
        assert all(0.0 <= v < 1.0 for v in row)
    # one point per stratum per dimension
    for d in range(3):
        strata = sorted(int(16 * row[d]) for row in pts)
        assert strata == list(range(16))

    assert picotab.normalize_scores([0.5, 1.0, 0.75]) == [0.0, 1.0, 0.5]
    assert picotab.normalize_scores([2.0, 2.0]) == [0.5, 0.5]


def test_errors_surface_as_python_exceptions():
    model = picotab.Model.init(tiny_config(), seed=1)
    with pytest.raises(ValueError):
        picotab.fit_classifier(model, [[1.0], [2.0]], ["a"], seed=0)  # ragged X/y
    with pytest.raises(ValueError):
        picotab.cate([[1.0]] * 4, [0, 0, 1, 1], [1.0, 2.0], learner="t")
    with pytest.raises(ValueError):
        picotab.lhs_sample(0, 2)
