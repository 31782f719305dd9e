"""
Test the windowed linear model.
"""
import json

import numpy as np
import pytest

from degkit import degscore, pipeline
from degkit.degscore import (
    LinearModel,
    featurize_window,
    load_linear_model,
    load_linear_models,
    n_features,
    predict_linear,
    save_linear_model,
    save_linear_models,
    solve_ridge,
    train_ridge,
    window_matrix,
)
from degkit.exceptions import (
    ModelFormatError,
    PositionError,
    RankDeficientError,
    ValidationError,
)

from .degkit_tst_utils import make_construct, random_construct


def test_n_features():
    assert n_features(0) == 11
    assert n_features(12) == 251


def test_window_matrix_layout():
    c = make_construct("x", "GACU", "....")
    X = window_matrix(c, w=1)
    assert X.shape == (4, n_features(1))
    # offset -1 of position 0 falls outside the molecule
    assert X[0, :10].sum() == 0
    # offset 0 of position 0: G and E
    assert X[0, 10 + 2] == 1
    assert X[0, 10 + 4 + 1] == 1
    assert X[0, 10:20].sum() == 2
    # offset +1 of position 0 is position 1: A
    assert X[0, 20 + 0] == 1
    assert np.all(X[:, -1] == 1)
    assert featurize_window(c, 2, w=1).tolist() == X[2].tolist()


def test_window_folds_x_into_e():
    a = make_construct("a", "GCAUGCAAGAAC", "((..))..(..)")
    assert "X" in a.loop_string
    X = window_matrix(a, w=0)
    e_slot = 4 + degscore.STRUCTURE_LABELS.index("E")
    assert X[6, e_slot] == 1
    assert X[6, :10].sum() == 2


def test_featurize_window_out_of_range():
    c = make_construct("x", "GACU", "....")
    with pytest.raises(PositionError):
        featurize_window(c, 4, w=1)
    with pytest.raises(IndexError):
        featurize_window(c, -1, w=1)


def test_solve_ridge_recovers_planted(rng):
    X = np.hstack([rng.normal(size=(200, 10)), np.ones((200, 1))])
    beta = rng.normal(size=11)
    y = X @ beta
    fitted = solve_ridge(X.T @ X, X.T @ y, 0.0)
    assert np.max(np.abs(fitted - beta)) < 1e-8


def test_solve_ridge_huge_lambda_gives_mean(rng):
    X = np.hstack([rng.normal(size=(100, 5)), np.ones((100, 1))])
    y = rng.normal(size=100) + 3.0
    fitted = degscore.ridge_from_design(X, y, 1e12)
    assert np.max(np.abs(fitted[:-1])) < 1e-6
    assert fitted[-1] == pytest.approx(y.mean(), abs=1e-6)


def test_solve_ridge_negative_lambda():
    with pytest.raises(ValueError):
        solve_ridge(np.eye(2), np.ones(2), -1.0)


def test_train_ridge_rank_deficient_at_zero(rng):
    data = [random_construct(rng, f"c{i}", 20) for i in range(10)]
    # sequence and structure indicators at each offset sum to the same value
    with pytest.raises(RankDeficientError):
        train_ridge(data, "reactivity", w=1, lam=0.0)


def test_train_ridge_fits_planted_targets(rng):
    w = 2
    truth = rng.normal(size=n_features(w))
    data = []
    for i in range(60):
        c = random_construct(rng, f"c{i}", 25, seq_scored=20)
        y = window_matrix(c, w) @ truth
        data.append(
            make_construct(c.id, c.sequence, c.structure, profiles={"deg_Mg_pH10": y[:20]})
        )
    model = train_ridge(data, "deg_Mg_pH10", w=w, lam=1e-6)
    for c in data[:5]:
        pred = predict_linear(model, c)
        assert pred.shape == (25,)
        expected = window_matrix(c, w) @ truth
        assert np.max(np.abs(pred[:20] - expected[:20])) < 1e-3


def test_train_ridge_ignores_unscored_positions(rng):
    data = []
    for i in range(20):
        c = random_construct(rng, f"c{i}", 20, seq_scored=10, columns=["reactivity"])
        data.append(c)
    a = train_ridge(data, "reactivity", w=1, lam=0.5)
    # change sequence beyond the window of every scored position
    changed = [
        make_construct(
            c.id,
            c.sequence[:12] + "A" * 8,
            c.structure,
            profiles={"reactivity": c.profiles["reactivity"]},
        )
        for c in data
    ]
    b = train_ridge(changed, "reactivity", w=1, lam=0.5)
    assert np.allclose(a.beta, b.beta)


def test_train_ridge_missing_target(rng):
    data = [random_construct(rng, "c0", 10, columns=["reactivity"])]
    with pytest.raises(ValidationError) as exc:
        train_ridge(data, "deg_50C")
    assert "deg_50C" in str(exc.value)


def test_linear_model_checks_length():
    with pytest.raises(ModelFormatError):
        LinearModel(w=1, beta=np.zeros(5), target="reactivity")


def test_save_and_load_models(runtmp, rng):
    data = [random_construct(rng, f"c{i}", 15) for i in range(8)]
    models = [train_ridge(data, t, w=2, lam=0.1) for t in ("reactivity", "deg_Mg_pH10")]
    path = runtmp.output("model.json")
    save_linear_models(models, path)

    with open(path) as fp:
        doc = json.load(fp)
    assert doc["model"] == "degscore"
    assert [m["target"] for m in doc["models"]] == ["reactivity", "deg_Mg_pH10"]
    assert all(m["w"] == 2 and len(m["beta"]) == n_features(2) for m in doc["models"])

    loaded = load_linear_models(path)
    assert [m.target for m in loaded] == ["reactivity", "deg_Mg_pH10"]
    assert np.allclose(loaded[0].beta, models[0].beta)

    one = load_linear_model(path, target="deg_Mg_pH10")
    assert np.allclose(predict_linear(one, data[0]), predict_linear(models[1], data[0]))

    with pytest.raises(ModelFormatError):
        load_linear_model(path)


def test_single_target_file_layout(runtmp, rng):
    data = [random_construct(rng, f"c{i}", 15) for i in range(8)]
    model = train_ridge(data, "reactivity", w=1, lam=0.1)
    path = runtmp.output("reactivity.json")
    save_linear_model(model, path)

    with open(path) as fp:
        doc = json.load(fp)
    assert {"w", "target", "beta", "label_order"} <= set(doc)
    assert doc["w"] == 1
    assert doc["target"] == "reactivity"
    assert len(doc["beta"]) == n_features(1)
    assert doc["label_order"] == degscore.label_order()


def test_load_plain_single_target_file(runtmp):
    # no "model" field: just the four self-describing keys
    beta = np.linspace(-1, 1, n_features(1))
    doc = {
        "w": 1,
        "target": "reactivity",
        "beta": beta.tolist(),
        "label_order": degscore.label_order(),
    }
    path = runtmp.output("plain.json")
    with open(path, "w") as fp:
        json.dump(doc, fp)

    m = load_linear_model(path)
    assert m.target == "reactivity"
    assert m.w == 1
    assert np.allclose(m.beta, beta)

    loaded = pipeline.load_model(path)
    assert [x.target for x in loaded] == ["reactivity"]

    del doc["beta"]
    with open(path, "w") as fp:
        json.dump(doc, fp)
    with pytest.raises(ModelFormatError):
        pipeline.load_model(path)


def test_load_rejects_other_label_order(runtmp):
    model = LinearModel(w=0, beta=np.zeros(11), target="reactivity")
    doc = degscore.models_to_doc([model])
    doc["label_order"]["structure"] = list("SHBIME")
    path = runtmp.output("model.json")
    with open(path, "w") as fp:
        json.dump(doc, fp)
    with pytest.raises(ModelFormatError):
        load_linear_models(path)


def test_models_with_different_windows_share_a_file(runtmp):
    a = LinearModel(w=0, beta=np.zeros(11), target="reactivity")
    b = LinearModel(w=1, beta=np.ones(31), target="deg_50C")
    path = runtmp.output("mixed.json")
    save_linear_models([a, b], path)
    loaded = load_linear_models(path)
    assert [(m.target, m.w) for m in loaded] == [("reactivity", 0), ("deg_50C", 1)]

    with pytest.raises(ModelFormatError):
        degscore.models_to_doc([a, a])
