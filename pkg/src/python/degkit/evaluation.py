"""Scoring and data-quality statistics.

MCRMSE pools every scored nucleotide of the truth set per column before
taking the root, then averages the column RMSEs.
"""
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats
from sourmash.logging import notify

from .core import DATA_TYPES, SCORED_COLUMNS
from .exceptions import MissingPredictionError, UndefinedValueError, ValidationError
from .utils import parallel_map


@dataclass(frozen=True)
class ScoreReport:
    mcrmse: float
    per_column_rmse: dict
    n_nucleotides: int
    per_construct_rmse: dict

    def as_dict(self):
        return {
            "mcrmse": self.mcrmse,
            "per_column_rmse": dict(self.per_column_rmse),
            "n_nucleotides": self.n_nucleotides,
            "per_construct_rmse": dict(self.per_construct_rmse),
        }


@dataclass(frozen=True)
class SNFilterThresholds:
    """Construct quality gates.

    The default min_value follows the written rule (> 0.5); the public data
    release uses -0.5, which keeps constructs whose minimum is near zero.
    """

    min_value: float = 0.5
    max_value: float = 20.0
    sn_min: float = 1.0
    columns: tuple = DATA_TYPES
    sn_columns: tuple = ("reactivity",)


def _check_columns(columns):
    columns = list(columns)
    if not columns:
        raise ValidationError("columns", "at least one column is required")
    for col in columns:
        if col not in DATA_TYPES:
            raise ValidationError(col, "unknown data type")
    return columns


def _scored_predictions(preds, c, column):
    positions = c.scored_positions
    if c.id not in preds.entries or column not in preds.entries[c.id]:
        raise MissingPredictionError(c.id, int(positions[0]), column)
    values = preds.get(c.id, column)
    if len(values) <= positions[-1]:
        missing = int(positions[positions >= len(values)][0])
        raise MissingPredictionError(c.id, missing, column)
    return values[positions]


def _construct_pairs(preds, c, columns):
    "(predicted, measured) values over the scored positions of one construct."
    out = {}
    for col in columns:
        if col not in c.profiles:
            raise ValidationError(col, f"construct '{c.id}' has no measured profile")
        out[col] = (_scored_predictions(preds, c, col), c.profiles[col])
    return out


def pooled_columns(preds, truth, columns=SCORED_COLUMNS):
    """Per column, the concatenated predicted and measured vectors over all
    scored nucleotides of 'truth', in dataset order."""
    columns = _check_columns(columns)
    truth = list(truth)
    if not truth:
        raise UndefinedValueError("cannot score an empty truth set")
    parts = parallel_map(lambda c: _construct_pairs(preds, c, columns), truth)
    return {
        col: (
            np.concatenate([p[col][0] for p in parts]),
            np.concatenate([p[col][1] for p in parts]),
        )
        for col in columns
    }


def _rmse(residual):
    return float(np.sqrt(np.mean(residual * residual)))


def mcrmse(preds, truth, columns=SCORED_COLUMNS):
    "Score 'preds' against the scored positions of 'truth'."
    columns = _check_columns(columns)
    truth = list(truth)
    if not truth:
        raise UndefinedValueError("cannot score an empty truth set")
    parts = parallel_map(lambda c: _construct_pairs(preds, c, columns), truth)

    per_column = {}
    for col in columns:
        residual = np.concatenate([p[col][0] - p[col][1] for p in parts])
        per_column[col] = _rmse(residual)

    per_construct = {}
    for c, part in zip(truth, parts):
        per_construct[c.id] = float(
            np.mean([_rmse(part[col][0] - part[col][1]) for col in columns])
        )

    return ScoreReport(
        mcrmse=float(np.mean(list(per_column.values()))),
        per_column_rmse=per_column,
        n_nucleotides=int(sum(c.seq_scored for c in truth)),
        per_construct_rmse=per_construct,
    )


def error_mcrmse(truth, columns=SCORED_COLUMNS):
    "MCRMSE implied by the reported measurement errors alone."
    columns = _check_columns(columns)
    truth = list(truth)
    if not truth:
        raise UndefinedValueError("cannot score an empty truth set")
    per_column = []
    for col in columns:
        errors = []
        for c in truth:
            if col not in c.profile_errors:
                raise ValidationError(col + "_error", f"construct '{c.id}' has no error array")
            errors.append(c.profile_errors[col])
        per_column.append(_rmse(np.concatenate(errors)))
    return float(np.mean(per_column))


def fraction_within_error(preds, truth, columns=SCORED_COLUMNS):
    "Per column, the fraction of scored nucleotides predicted within the measurement error."
    columns = _check_columns(columns)
    fractions = {}
    for col in columns:
        hits = 0
        total = 0
        for c in truth:
            if col not in c.profile_errors:
                raise ValidationError(col + "_error", f"construct '{c.id}' has no error array")
            pred, measured = _construct_pairs(preds, c, [col])[col]
            hits += int(np.sum(np.abs(pred - measured) <= c.profile_errors[col]))
            total += len(measured)
        if total == 0:
            raise UndefinedValueError("cannot score an empty truth set")
        fractions[col] = hits / total
    return fractions


def sn_ratio(c, columns=("reactivity",)):
    "Mean over data types of the mean value/error ratio over scored positions."
    per_type = []
    for col in _check_columns(columns):
        if col not in c.profiles:
            raise ValidationError(col, f"construct '{c.id}' has no measured profile")
        if col not in c.profile_errors:
            raise ValidationError(col + "_error", f"construct '{c.id}' has no error array")
        mu = c.profiles[col]
        sigma = c.profile_errors[col]
        keep = sigma > 0
        if not keep.any():
            raise UndefinedValueError(
                f"signal/noise undefined for '{c.id}': every {col} error is zero"
            )
        per_type.append(float(np.mean(mu[keep] / sigma[keep])))
    return float(np.mean(per_type))


def _passes(c, thresholds):
    if not c.profiles:
        return False
    for col in thresholds.columns:
        if col not in c.profiles:
            continue
        values = c.profiles[col]
        if values.min() <= thresholds.min_value or values.max() >= thresholds.max_value:
            return False

    if all(col in c.profile_errors for col in thresholds.sn_columns):
        try:
            sn = sn_ratio(c, thresholds.sn_columns)
        except (UndefinedValueError, ValidationError):
            return False
    else:
        sn = c.signal_to_noise
    return bool(np.isfinite(sn) and sn > thresholds.sn_min)


def sn_filter(dataset, thresholds=SNFilterThresholds()):
    "Partition constructs into (kept, rejected), setting sn_pass on each."
    if thresholds.min_value > 0:
        notify(
            f"warning: min_value threshold is {thresholds.min_value}; "
            "the public data release uses -0.5"
        )
    kept = []
    rejected = []
    for c in dataset:
        if _passes(c, thresholds):
            kept.append(replace(c, sn_pass=True))
        else:
            rejected.append(replace(c, sn_pass=False))
    notify(f"kept {len(kept)} constructs, rejected {len(rejected)}")
    return kept, rejected


def spearman(x, y):
    "Pearson correlation of average ranks."
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("values", f"length mismatch {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise UndefinedValueError("spearman correlation needs at least 2 values")
    rx = stats.rankdata(x) - (len(x) + 1) / 2
    ry = stats.rankdata(y) - (len(y) + 1) / 2
    sxx = rx @ rx
    syy = ry @ ry
    if sxx == 0 or syy == 0:
        raise UndefinedValueError("spearman correlation undefined: constant ranks")
    r = (rx @ ry) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def spearman_pvalue(r, n):
    "Two-sided p-value for a Spearman coefficient under no correlation."
    if n < 3:
        return float("nan")
    if abs(r) >= 1.0:
        return 0.0
    t = r * np.sqrt((n - 2) / (1 - r**2))
    return float(stats.t.sf(np.abs(t), n - 2) * 2)


def motif_aggregate(values, loop_strings):
    """Mean and count of 'values' per loop label.

    Accepts one aligned (values, loops) pair or parallel lists of them.
    """
    if isinstance(loop_strings, str):
        values = [values]
        loop_strings = [loop_strings]
    flat_values = []
    flat_labels = []
    for vals, loops in zip(values, loop_strings, strict=True):
        vals = np.asarray(vals, dtype=float)
        if len(vals) != len(loops):
            raise ValidationError(
                "values", f"{len(vals)} values for {len(loops)} loop labels"
            )
        flat_values.append(vals)
        flat_labels.append(np.array(list(loops), dtype="<U1"))
    if not flat_values:
        return {}
    vals = np.concatenate(flat_values)
    labels = np.concatenate(flat_labels)
    uniq, inverse = np.unique(labels, return_inverse=True)
    counts = np.bincount(inverse, minlength=len(uniq))
    sums = np.bincount(inverse, weights=vals, minlength=len(uniq))
    return {
        str(label): (float(s / n), int(n)) for label, s, n in zip(uniq, sums, counts)
    }


def truth_motifs(dataset, column):
    "motif_aggregate over the measured profile of every construct that has it."
    values = []
    loops = []
    for c in dataset:
        if column in c.profiles:
            values.append(c.profiles[column])
            loops.append("".join(c.loop_string[i] for i in c.scored_positions))
    return motif_aggregate(values, loops)


def prediction_motifs(preds, dataset, column):
    "motif_aggregate over predictions at the scored positions of 'dataset'."
    values = []
    loops = []
    for c in dataset:
        values.append(_scored_predictions(preds, c, column))
        loops.append("".join(c.loop_string[i] for i in c.scored_positions))
    return motif_aggregate(values, loops)
