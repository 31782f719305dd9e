"""
Test prediction blending and the genetic blend search.
"""
import json
import os

import numpy as np
import pytest

from degkit.core import PredictionSet, write_predictions
from degkit.ensemble import (
    EnsembleSpec,
    GAConfig,
    blend,
    ga_optimize,
    load_candidates,
    load_spec,
    save_spec,
    top_k_average,
)
from degkit.evaluation import mcrmse
from degkit.exceptions import CoverageMismatchError, DegkitError, ModelFormatError, ValidationError

from .degkit_tst_utils import make_construct

COLS = ("reactivity",)
SMALL_GA = GAConfig(population=16, generations=30, seed=3)


def _zero_truth(cid, n=2):
    return make_construct(cid, "A" * n, "." * n, profiles={"reactivity": [0.0] * n})


def _candidate(name, public, private):
    return PredictionSet(
        name,
        {"p": {"reactivity": np.array(public, dtype=float)},
         "q": {"reactivity": np.array(private, dtype=float)}},
    )


@pytest.fixture
def overfit_pool():
    return {
        "A": _candidate("A", [1, 0], [1, 0]),
        "B": _candidate("B", [0, 1], [0, 1]),
        "C": _candidate("C", [-1, -1], [5, 5]),
    }


def test_spec_validation():
    with pytest.raises(ValidationError):
        EnsembleSpec(())
    with pytest.raises(ValidationError):
        EnsembleSpec((("a", 0.5), ("b", 0.6)))
    with pytest.raises(ValidationError):
        EnsembleSpec((("a", 1.5), ("b", -0.5)))
    with pytest.raises(ValidationError):
        EnsembleSpec((("a", 0.5), ("a", 0.5)))
    with pytest.raises(ValidationError):
        EnsembleSpec.normalized([("a", 0.0)])

    spec = EnsembleSpec.normalized([("a", 1.0), ("b", 3.0)])
    assert spec.members == (("a", 0.25), ("b", 0.75))
    assert spec.names == ["a", "b"]


def test_blend_weighted_average():
    preds = {
        "a": PredictionSet("a", {"x": {"reactivity": [0.0, 4.0]}}),
        "b": PredictionSet("b", {"x": {"reactivity": [4.0, 0.0]}}),
    }
    out = blend(EnsembleSpec((("a", 0.25), ("b", 0.75))), preds)
    assert out.model_name == "ensemble"
    assert out.get("x", "reactivity").tolist() == [3.0, 1.0]


def test_blend_single_member_is_identity():
    p = PredictionSet("a", {"x": {"reactivity": [0.3, 0.7]}})
    out = blend(EnsembleSpec((("a", 1.0),)), {"a": p})
    assert out.get("x", "reactivity").tolist() == [0.3, 0.7]


def test_blend_coverage_mismatch():
    a = PredictionSet("a", {"x": {"reactivity": [0.0, 1.0]}})
    b = PredictionSet("b", {"y": {"reactivity": [0.0, 1.0]}})
    c = PredictionSet("c", {"x": {"reactivity": [0.0]}})
    spec = EnsembleSpec((("a", 0.5), ("b", 0.5)))
    with pytest.raises(CoverageMismatchError):
        blend(spec, {"a": a})
    with pytest.raises(CoverageMismatchError):
        blend(spec, {"a": a, "b": b})
    with pytest.raises(CoverageMismatchError):
        blend(EnsembleSpec((("a", 0.5), ("c", 0.5))), {"a": a, "c": c})


def test_top_k_average(overfit_pool):
    spec, preds = top_k_average(overfit_pool, [_zero_truth("p")], k=2, columns=COLS)
    assert spec.members == (("A", 0.5), ("B", 0.5))
    assert mcrmse(preds, [_zero_truth("p")], COLS).mcrmse == pytest.approx(0.5)
    assert mcrmse(preds, [_zero_truth("q")], COLS).mcrmse == pytest.approx(0.5)


def test_ga_beats_top_k_on_public_but_not_private(overfit_pool):
    public = [_zero_truth("p")]
    private = [_zero_truth("q")]
    result = ga_optimize(overfit_pool, public, SMALL_GA, truth_private=private, columns=COLS)

    # a third of each candidate cancels exactly on the public construct
    assert result.public_mcrmse < 1e-6
    assert sorted(result.spec.names) == ["A", "B", "C"]
    for _, w in result.spec.members:
        assert w == pytest.approx(1 / 3, abs=1e-6)
    # and lands on (2, 2) for the private one
    assert result.private_mcrmse == pytest.approx(2.0, abs=1e-6)

    _, top2 = top_k_average(overfit_pool, public, k=2, columns=COLS)
    assert result.public_mcrmse <= mcrmse(top2, public, COLS).mcrmse
    assert result.private_mcrmse > mcrmse(top2, private, COLS).mcrmse


def test_ga_blends_anticorrelated_candidates(rng):
    n = 20
    truth_values = rng.normal(size=n)
    noise = rng.normal(size=n)
    truth = [make_construct("t", "A" * n, "." * n, profiles={"reactivity": truth_values})]
    candidates = {
        "up": PredictionSet("up", {"t": {"reactivity": truth_values + noise}}),
        "down": PredictionSet("down", {"t": {"reactivity": truth_values - noise}}),
    }
    result = ga_optimize(candidates, truth, SMALL_GA, columns=COLS)
    assert result.public_mcrmse < 1e-6
    assert result.private_mcrmse is None
    assert len(result.history) == SMALL_GA.generations + 1


def test_ga_never_worse_than_best_single():
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        n = 8
        truth_values = rng.normal(size=n)
        truth = [make_construct("t", "A" * n, "." * n, profiles={"reactivity": truth_values})]
        candidates = {
            f"m{i}": PredictionSet(
                f"m{i}", {"t": {"reactivity": truth_values + rng.normal(scale=1 + i, size=n)}}
            )
            for i in range(6)
        }
        best_single = min(mcrmse(p, truth, COLS).mcrmse for p in candidates.values())
        config = GAConfig(population=3, generations=2, polish_top=1, seed=seed)
        result = ga_optimize(candidates, truth, config, columns=COLS)
        assert result.public_mcrmse <= best_single + 1e-12


def test_ga_history_is_monotone(overfit_pool):
    result = ga_optimize(overfit_pool, [_zero_truth("p")], SMALL_GA, columns=COLS)
    history = np.array(result.history)
    assert np.all(np.diff(history) <= 0)


def test_ga_respects_max_members(overfit_pool):
    config = GAConfig(max_members=1, population=8, generations=5, seed=1)
    result = ga_optimize(overfit_pool, [_zero_truth("p")], config, columns=COLS)
    assert len(result.spec.members) == 1


def test_ga_is_seeded(overfit_pool):
    a = ga_optimize(overfit_pool, [_zero_truth("p")], SMALL_GA, columns=COLS)
    b = ga_optimize(overfit_pool, [_zero_truth("p")], SMALL_GA, columns=COLS)
    assert a.spec == b.spec
    assert a.history == b.history


def test_ga_config_validation():
    with pytest.raises(ValidationError):
        GAConfig(max_members=0)
    with pytest.raises(ValidationError):
        GAConfig(population=1)


def test_save_and_load_spec(runtmp, overfit_pool):
    result = ga_optimize(
        overfit_pool, [_zero_truth("p")], SMALL_GA, truth_private=[_zero_truth("q")], columns=COLS
    )
    path = runtmp.output("ensemble.json")
    save_spec(result, path)
    with open(path) as fp:
        doc = json.load(fp)
    assert doc["public_mcrmse"] == result.public_mcrmse
    assert doc["private_mcrmse"] == result.private_mcrmse
    assert load_spec(path) == result.spec

    with open(path, "w") as fp:
        json.dump({"members": [{"name": "A"}]}, fp)
    with pytest.raises(ModelFormatError):
        load_spec(path)


def test_load_candidates(runtmp, overfit_pool):
    cand_dir = runtmp.output("candidates")
    os.mkdir(cand_dir)
    for name, preds in overfit_pool.items():
        write_predictions(preds, os.path.join(cand_dir, f"{name}.csv"))

    loaded = load_candidates(cand_dir)
    assert sorted(loaded) == ["A", "B", "C"]
    assert loaded["C"].model_name == "C"
    assert loaded["C"].get("q", "reactivity").tolist() == [5.0, 5.0]

    empty = runtmp.output("empty")
    os.mkdir(empty)
    with pytest.raises(DegkitError):
        load_candidates(empty)


def test_ga_spec_has_no_zero_weight_members():
    for seed in range(200):
        rng = np.random.default_rng(seed)
        n = 6
        truth_values = rng.normal(size=n)
        truth = [make_construct("t", "A" * n, "." * n, profiles={"reactivity": truth_values})]
        candidates = {
            f"m{i}": PredictionSet(f"m{i}", {"t": {"reactivity": truth_values + rng.normal(size=n)}})
            for i in range(5)
        }
        config = GAConfig(population=4, generations=5, polish_top=0, seed=seed)
        result = ga_optimize(candidates, truth, config, columns=COLS)
        assert min(w for _, w in result.spec.members) > 1e-12
        assert sum(w for _, w in result.spec.members) == pytest.approx(1.0, abs=1e-9)


def test_blend_of_identical_members_is_identity():
    rng = np.random.default_rng(11)
    for _ in range(50):
        k = int(rng.integers(1, 6))
        entries = {
            f"c{j}": {col: rng.normal(size=7) for col in ("reactivity", "deg_Mg_pH10", "deg_Mg_50C")}
            for j in range(3)
        }
        preds = {f"m{i}": PredictionSet(f"m{i}", entries) for i in range(k)}
        spec = EnsembleSpec.normalized((name, w) for name, w in zip(preds, rng.dirichlet(np.ones(k))))
        out = blend(spec, preds)
        for cid, cols in entries.items():
            for col, values in cols.items():
                assert np.allclose(out.get(cid, col), values, rtol=0, atol=1e-12)


def test_convex_blend_rmse_bounded_by_worst_member():
    rng = np.random.default_rng(12)
    columns = ("reactivity", "deg_Mg_pH10", "deg_Mg_50C")
    for _ in range(100):
        n = int(rng.integers(2, 12))
        profiles = {col: rng.normal(size=n) for col in columns}
        truth = [make_construct("t", "A" * n, "." * n, profiles=profiles)]
        k = int(rng.integers(2, 6))
        preds = {
            f"m{i}": PredictionSet(
                f"m{i}", {"t": {col: profiles[col] + rng.normal(scale=1 + i, size=n) for col in columns}}
            )
            for i in range(k)
        }
        spec = EnsembleSpec.normalized((name, w) for name, w in zip(preds, rng.dirichlet(np.ones(k))))
        blended = mcrmse(blend(spec, preds), truth, columns).per_column_rmse
        member_rmse = [mcrmse(p, truth, columns).per_column_rmse for p in preds.values()]
        for col in columns:
            assert blended[col] <= max(r[col] for r in member_rmse) + 1e-12
