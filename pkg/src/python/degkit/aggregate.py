"""Whole-molecule degradation from per-nucleotide predictions.

A molecule's overall rate is the sum of per-linkage rates over the probed
window, and its half-life is ln 2 over that sum. Predictions must come from
a pass over the full-length sequence; only the sum is windowed.
"""
import csv
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sourmash.logging import notify

from . import structfeat
from .core import BppMatrix, Construct, load_bpp
from .evaluation import spearman, spearman_pvalue
from .exceptions import (
    MissingPredictionError,
    ParseError,
    PositionError,
    UndefinedValueError,
    ValidationError,
)
from .utils import atomic_write, parallel_map

MRNA_COLUMNS = (
    "id",
    "sequence",
    "structure_file",
    "bpp_file",
    "window_start",
    "window_end",
    "measured_rate",
    "rate_stderr",
)
BOOTSTRAP_CHUNKS = 8


@dataclass(frozen=True, eq=False)
class MrnaRecord:
    id: str
    sequence: str
    structure: str
    window_start: int
    window_end: int
    measured_rate: float
    rate_stderr: float = 0.0
    bpp: Optional[BppMatrix] = None

    def __post_init__(self):
        n = len(self.sequence)
        if len(self.structure) != n:
            raise ValidationError(
                "structure", f"'{self.id}': length {len(self.structure)} != sequence length {n}"
            )
        if not 0 <= self.window_start < self.window_end <= n:
            raise ValidationError(
                "window", f"'{self.id}': [{self.window_start}, {self.window_end}) outside 0..{n}"
            )
        if not self.rate_stderr >= 0:
            raise ValidationError("rate_stderr", f"'{self.id}': must be >= 0")

    def to_construct(self):
        "A profile-free Construct for running a model over the whole molecule."
        pt = structfeat.pair_table(self.structure)
        return Construct(
            id=self.id,
            sequence=self.sequence,
            structure=self.structure,
            loop_string=structfeat.annotate_loops(pt),
            seq_scored=len(self.sequence),
            bpp=self.bpp,
        )


@dataclass(frozen=True)
class RankEval:
    spearman: float
    p_value: float
    p_description: str
    table: list
    noise_ceiling: float
    column: str


def sum_rates(per_nt, start, end):
    "Sum of per-nucleotide rates over [start, end)."
    per_nt = np.asarray(per_nt, dtype=float)
    if not 0 <= start <= end <= len(per_nt):
        raise PositionError(f"window [{start}, {end}) outside 0..{len(per_nt)}")
    return float(per_nt[start:end].sum())


def half_life(k):
    "ln 2 / k."
    if not (math.isfinite(k) and k > 0):
        raise UndefinedValueError(f"half-life undefined for rate {k}")
    return math.log(2) / k


def remaining_fraction(k, t):
    "Fraction of intact molecules after time t under first-order decay."
    return math.exp(-k * t)


def read_structure_file(path):
    """Dot-bracket from the last non-empty line of 'path'.

    Trailing fields such as a folding energy are dropped.
    """
    last = None
    with open(path, encoding="utf-8") as fp:
        for line in fp:
            if line.strip():
                last = line
    if last is None:
        raise ParseError(f"{path}: no structure found")
    return last.split()[0]


def load_mrnas(path):
    "Read the mRNA table; file paths are resolved relative to the table."
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    records = []
    with open(path, newline="", encoding="utf-8") as fp:
        r = csv.DictReader(fp)
        missing = [c for c in MRNA_COLUMNS if c not in (r.fieldnames or [])]
        if missing:
            raise ParseError(f"{path}: missing column '{missing[0]}'")
        for lineno, row in enumerate(r, start=2):
            try:
                sequence = row["sequence"].strip().upper().replace("T", "U")
                structure = read_structure_file(resolve(row["structure_file"]))
                bpp = None
                if row["bpp_file"].strip():
                    bpp = load_bpp(resolve(row["bpp_file"].strip()), len(sequence))
                records.append(
                    MrnaRecord(
                        id=row["id"],
                        sequence=sequence,
                        structure=structure,
                        window_start=int(row["window_start"]),
                        window_end=int(row["window_end"]),
                        measured_rate=float(row["measured_rate"]),
                        rate_stderr=float(row["rate_stderr"] or 0.0),
                        bpp=bpp,
                    )
                )
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno)
            except ValidationError as exc:
                raise ValidationError(exc.field, exc.detail, line=lineno)
    notify(f"loaded {len(records)} mRNAs from '{path}'")
    return records


def _full_length_prediction(preds, m, column):
    if m.id not in preds.entries or column not in preds.entries[m.id]:
        raise MissingPredictionError(m.id, 0, column)
    values = preds.get(m.id, column)
    if len(values) < len(m.sequence):
        raise MissingPredictionError(m.id, len(values), column)
    return values


def window_sums(preds, mrnas, column="deg_Mg_pH10", per_nucleotide=False):
    "Predicted overall rate of each mRNA over its probed window."
    sums = []
    for m in mrnas:
        k = sum_rates(_full_length_prediction(preds, m, column), m.window_start, m.window_end)
        if per_nucleotide:
            k /= m.window_end - m.window_start
        sums.append(k)
    return np.array(sums)


def _bootstrap_chunk(rates, stderr, n, seed_seq):
    rng = np.random.default_rng(seed_seq)
    out = []
    for _ in range(n):
        resampled = rng.normal(rates, stderr)
        try:
            out.append(spearman(resampled, rates))
        except UndefinedValueError:
            continue
    return out


def noise_ceiling(rates, stderr, n_boot=1000, seed=7):
    """Mean Spearman between resampled measurements and their means.

    Resamples are drawn from Normal(rate, stderr) in a fixed number of
    independently seeded chunks, so the result does not depend on the
    thread count.
    """
    rates = np.asarray(rates, dtype=float)
    stderr = np.asarray(stderr, dtype=float)
    chunk_sizes = [len(c) for c in np.array_split(np.arange(n_boot), BOOTSTRAP_CHUNKS)]
    seeds = np.random.SeedSequence(seed).spawn(BOOTSTRAP_CHUNKS)
    chunks = parallel_map(
        lambda args: _bootstrap_chunk(rates, stderr, *args), zip(chunk_sizes, seeds)
    )
    values = [v for chunk in chunks for v in chunk]
    if not values:
        raise UndefinedValueError("no bootstrap resample had a defined Spearman correlation")
    return float(np.mean(values))


def describe_p(r, p, n):
    if math.isnan(p):
        return f"rho={r:.3f}, p undefined (n={n})"
    if p < 1e-300:
        return f"rho={r:.3f}, p<1e-300 (n={n})"
    return f"rho={r:.3f}, p={p:.3g} (n={n})"


def rank_eval(preds, mrnas, column="deg_Mg_pH10", n_boot=1000, seed=7, per_nucleotide=False):
    "Rank agreement between predicted window sums and measured rates."
    mrnas = list(mrnas)
    sums = window_sums(preds, mrnas, column, per_nucleotide=per_nucleotide)
    measured = np.array([m.measured_rate for m in mrnas])
    stderr = np.array([m.rate_stderr for m in mrnas])

    r = spearman(sums, measured)
    p = spearman_pvalue(r, len(mrnas))
    table = []
    for m, k in zip(mrnas, sums):
        table.append(
            {
                "id": m.id,
                "window_start": m.window_start,
                "window_end": m.window_end,
                "predicted_rate": float(k),
                "predicted_half_life": half_life(k) if k > 0 else float("nan"),
                "measured_rate": m.measured_rate,
                "rate_stderr": m.rate_stderr,
            }
        )
    ceiling = noise_ceiling(measured, stderr, n_boot=n_boot, seed=seed)
    return RankEval(
        spearman=r,
        p_value=p,
        p_description=describe_p(r, p, len(mrnas)),
        table=table,
        noise_ceiling=ceiling,
        column=column,
    )


def write_rank_table(result, path):
    fields = list(result.table[0]) if result.table else ["id"]
    with atomic_write(path, newline="") as fp:
        w = csv.DictWriter(fp, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in result.table:
            w.writerow(
                {k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()}
            )
