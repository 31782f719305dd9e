"""
Test whole-molecule rate aggregation and rank evaluation on mRNAs.
"""
import math

import numpy as np
import pytest

from degkit import aggregate
from degkit.aggregate import (
    MrnaRecord,
    half_life,
    load_mrnas,
    noise_ceiling,
    rank_eval,
    remaining_fraction,
    sum_rates,
    window_sums,
)
from degkit.core import PredictionSet
from degkit.evaluation import spearman
from degkit.exceptions import (
    MissingPredictionError,
    ParseError,
    PositionError,
    UndefinedValueError,
    ValidationError,
)

from .degkit_tst_utils import get_test_data, random_sequence, random_structure


def _mrna(mid, n, start, end, rate, stderr=0.0):
    return MrnaRecord(
        id=mid,
        sequence="A" * n,
        structure="." * n,
        window_start=start,
        window_end=end,
        measured_rate=rate,
        rate_stderr=stderr,
    )


def test_sum_rates_window():
    per_nt = [0.1, 0.2, 0.3, 0.4]
    assert sum_rates(per_nt, 0, 4) == pytest.approx(1.0)
    assert sum_rates(per_nt, 1, 3) == pytest.approx(0.5)
    assert sum_rates(per_nt, 2, 2) == 0.0
    with pytest.raises(PositionError):
        sum_rates(per_nt, 2, 5)
    with pytest.raises(PositionError):
        sum_rates(per_nt, 3, 1)


def test_sum_rates_is_additive(rng):
    per_nt = rng.random(50)
    for _ in range(20):
        a, b, c = sorted(rng.integers(0, 51, size=3))
        assert sum_rates(per_nt, a, c) == pytest.approx(
            sum_rates(per_nt, a, b) + sum_rates(per_nt, b, c)
        )


def test_half_life():
    assert half_life(math.log(2)) == pytest.approx(1.0)
    assert half_life(0.6) == pytest.approx(1.15525, rel=1e-5)
    with pytest.raises(UndefinedValueError):
        half_life(0.0)
    with pytest.raises(UndefinedValueError):
        half_life(float("inf"))


def test_remaining_fraction():
    k = 0.25
    assert remaining_fraction(k, half_life(k)) == pytest.approx(0.5)
    assert remaining_fraction(k, 0.0) == 1.0


def test_mrna_record_validation():
    with pytest.raises(ValidationError):
        _mrna("bad", 10, 5, 11, 0.1)
    with pytest.raises(ValidationError):
        _mrna("bad", 10, 5, 5, 0.1)
    with pytest.raises(ValidationError):
        _mrna("bad", 10, 0, 10, 0.1, stderr=-1.0)


def test_to_construct_covers_whole_molecule():
    c = _mrna("m", 12, 2, 8, 0.1).to_construct()
    assert c.seq_scored == 12
    assert c.loop_string == "E" * 12
    assert not c.profiles


def test_load_mrnas_fixture():
    mrnas = load_mrnas(get_test_data("mrna/mrnas.csv"))
    assert [m.id for m in mrnas] == ["m0", "m1", "m2", "m3"]
    # T is read as U
    assert "T" not in mrnas[0].sequence
    assert mrnas[0].sequence.startswith("GGGAAACCCAUG")
    assert mrnas[0].structure == "(((...)))........."
    assert (mrnas[0].window_start, mrnas[0].window_end) == (2, 16)
    assert mrnas[1].bpp is not None
    assert mrnas[0].bpp is None
    assert mrnas[2].measured_rate == pytest.approx(0.0034)
    assert mrnas[3].rate_stderr == pytest.approx(0.0001)


def test_load_mrnas_missing_column(runtmp):
    path = runtmp.output("bad.csv")
    with open(path, "w") as fp:
        fp.write("id,sequence\nm0,AAAA\n")
    with pytest.raises(ParseError):
        load_mrnas(path)


def test_window_sums_and_missing_prediction():
    mrnas = [_mrna("a", 6, 1, 4, 0.1), _mrna("b", 4, 0, 4, 0.2)]
    preds = PredictionSet(
        "m",
        {
            "a": {"deg_Mg_pH10": np.arange(6, dtype=float)},
            "b": {"deg_Mg_pH10": np.ones(4)},
        },
    )
    assert window_sums(preds, mrnas).tolist() == [6.0, 4.0]
    assert window_sums(preds, mrnas, per_nucleotide=True).tolist() == [2.0, 1.0]

    short = PredictionSet("m", {"a": {"deg_Mg_pH10": np.ones(5)}, "b": {"deg_Mg_pH10": np.ones(4)}})
    with pytest.raises(MissingPredictionError) as exc:
        window_sums(short, mrnas)
    assert exc.value.construct_id == "a"

    with pytest.raises(MissingPredictionError):
        window_sums(preds, mrnas, column="deg_50C")


def test_noise_ceiling_zero_stderr():
    rates = np.linspace(0.001, 0.01, 20)
    assert noise_ceiling(rates, np.zeros(20), n_boot=50) == pytest.approx(1.0)


def test_noise_ceiling_is_seeded(rng):
    rates = rng.random(30)
    stderr = np.full(30, 0.2)
    a = noise_ceiling(rates, stderr, n_boot=64, seed=3)
    b = noise_ceiling(rates, stderr, n_boot=64, seed=3)
    assert a == b
    assert -1.0 <= a < 1.0


def test_rank_eval_recovers_ordering(rng):
    # 188 molecules whose measured rates follow the summed predictions
    mrnas = []
    entries = {}
    for i in range(188):
        n = int(rng.integers(30, 60))
        per_nt = rng.random(n) * (1 + i / 20)
        start, end = 2, n - 2
        k = per_nt[start:end].sum()
        rate = k * math.exp(rng.normal(scale=0.05))
        mid = f"mrna{i}"
        mrnas.append(
            MrnaRecord(
                id=mid,
                sequence=random_sequence(rng, n),
                structure=random_structure(rng, n),
                window_start=start,
                window_end=end,
                measured_rate=rate,
                rate_stderr=0.01 * rate,
            )
        )
        entries[mid] = {"deg_Mg_pH10": per_nt}
    result = rank_eval(PredictionSet("synthetic", entries), mrnas, n_boot=100)
    assert result.spearman > 0.9
    assert result.p_value < 1e-10
    assert result.noise_ceiling > 0.9
    assert len(result.table) == 188
    row = result.table[0]
    assert row["id"] == "mrna0"
    assert row["predicted_half_life"] == pytest.approx(math.log(2) / row["predicted_rate"])
    assert "n=188" in result.p_description


def test_rank_agreement_monte_carlo():
    # true rates r, summed predictions r + Normal(0, 0.1 sd(r)), 188 mRNAs
    passed = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        rates = rng.lognormal(mean=-6.0, sigma=0.5, size=188)
        noisy = rates + rng.normal(scale=0.1 * rates.std(), size=188)
        mrnas = [_mrna(f"m{i}", 10, 0, 10, r) for i, r in enumerate(rates)]
        preds = PredictionSet(
            "mc", {f"m{i}": {"deg_Mg_pH10": np.full(10, k / 10)} for i, k in enumerate(noisy)}
        )
        sums = window_sums(preds, mrnas)
        if spearman(sums, rates) > 0.9:
            passed += 1
    assert passed >= 95


def test_decay_consistency():
    # log-abundance after a fixed time tracks minus the summed rate exactly
    rng = np.random.default_rng(5)
    per_nt = rng.random((30, 40)) * 1e-3
    k = np.array([sum_rates(row, 0, 40) for row in per_nt])
    abundance = [remaining_fraction(x, 24.0) for x in k]
    assert spearman(np.log(abundance), -k) == pytest.approx(1.0)


def test_write_rank_table(runtmp):
    mrnas = [_mrna(f"m{i}", 5, 0, 5, 0.1 * (i + 1), 0.01) for i in range(4)]
    preds = PredictionSet(
        "m", {f"m{i}": {"deg_Mg_pH10": np.full(5, 0.1 * (i + 1))} for i in range(4)}
    )
    result = rank_eval(preds, mrnas, n_boot=20)
    assert result.spearman == pytest.approx(1.0)

    path = runtmp.output("rank.csv")
    aggregate.write_rank_table(result, path)
    with open(path) as fp:
        lines = fp.read().splitlines()
    assert lines[0].split(",")[:2] == ["id", "window_start"]
    assert len(lines) == 5
    assert lines[1].startswith("m0,0,5,0.5,")


def test_describe_p():
    assert aggregate.describe_p(0.5, float("nan"), 2) == "rho=0.500, p undefined (n=2)"
    assert aggregate.describe_p(1.0, 0.0, 10) == "rho=1.000, p<1e-300 (n=10)"
