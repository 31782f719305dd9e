"""Windowed linear degradation model.

Y_k is a linear function of one-hot nucleotide and loop-type indicators at
offsets -w..+w around k, plus an intercept. Offsets outside the molecule
contribute zero indicators. Loop type X shares the E indicator, giving six
structure indicators per offset.
"""
import json
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigh
from sourmash.logging import notify

from .exceptions import (
    DegkitError,
    ModelFormatError,
    PositionError,
    RankDeficientError,
    ValidationError,
)
from .utils import atomic_write, parallel_map

SEQUENCE_LABELS = "ACGU"
STRUCTURE_LABELS = "HEIMBS"
STRUCTURE_FOLD = {"X": "E"}
SLOTS = len(SEQUENCE_LABELS) + len(STRUCTURE_LABELS)

DEFAULT_WINDOW = 12
DEFAULT_LAMBDA = 0.1

_SEQ_INDEX = {c: i for i, c in enumerate(SEQUENCE_LABELS)}
_STRUCT_INDEX = {c: len(SEQUENCE_LABELS) + i for i, c in enumerate(STRUCTURE_LABELS)}
for _label, _target in STRUCTURE_FOLD.items():
    _STRUCT_INDEX[_label] = _STRUCT_INDEX[_target]


def n_features(w):
    return (2 * w + 1) * SLOTS + 1


def label_order():
    return {
        "sequence": list(SEQUENCE_LABELS),
        "structure": list(STRUCTURE_LABELS),
        "fold": dict(STRUCTURE_FOLD),
        "layout": "offset-major, offsets -w..+w, then intercept",
    }


@dataclass(frozen=True, eq=False)
class LinearModel:
    w: int
    beta: np.ndarray
    target: str

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float)
        if beta.shape != (n_features(self.w),):
            raise ModelFormatError(
                f"beta has length {beta.size}, expected {n_features(self.w)} for w={self.w}"
            )
        beta.flags.writeable = False
        object.__setattr__(self, "beta", beta)

    @property
    def intercept(self):
        return self.beta[-1]


def _indicator_rows(c):
    "n x 10 one-hot indicators (sequence then structure) per position."
    n = c.seq_length
    rows = np.zeros((n, SLOTS))
    idx = np.arange(n)
    rows[idx, [_SEQ_INDEX[ch] for ch in c.sequence]] = 1.0
    rows[idx, [_STRUCT_INDEX[ch] for ch in c.loop_string]] = 1.0
    return rows


def window_matrix(c, w=DEFAULT_WINDOW):
    "Design matrix with one row per position of 'c'."
    rows = _indicator_rows(c)
    padded = np.pad(rows, ((w, w), (0, 0)))
    windows = sliding_window_view(padded, (2 * w + 1, SLOTS))[:, 0]
    X = windows.reshape(c.seq_length, (2 * w + 1) * SLOTS)
    return np.hstack([X, np.ones((c.seq_length, 1))])


def featurize_window(c, k, w=DEFAULT_WINDOW):
    if not 0 <= k < c.seq_length:
        raise PositionError(f"position {k} outside 0..{c.seq_length - 1}")
    return window_matrix(c, w)[k]


def solve_ridge(xtx, xty, lam):
    """Solve (X'X + lam*D) beta = X'y by Cholesky, D = I with the
    intercept (last) entry unpenalized."""
    if lam < 0:
        raise ValueError("ridge weight must be >= 0")
    m = xtx.shape[0]
    penalty = np.full(m, float(lam))
    penalty[-1] = 0.0
    A = xtx + np.diag(penalty)
    eig = eigh(A, eigvals_only=True, check_finite=True)
    if eig[0] <= m * np.finfo(float).eps * max(eig[-1], 0.0):
        raise RankDeficientError(
            f"normal equations are rank deficient at lambda={lam}; use lambda > 0"
        )
    try:
        factor = cho_factor(A, lower=True)
    except LinAlgError:
        raise RankDeficientError(
            f"normal equations are rank deficient at lambda={lam}; use lambda > 0"
        )
    return cho_solve(factor, xty)


def ridge_from_design(X, y, lam):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    return solve_ridge(X.T @ X, X.T @ y, lam)


def _construct_normal_equations(c, target, w):
    X = window_matrix(c, w)[c.scored_mask]
    y = c.profiles[target]
    return X.T @ X, X.T @ y, len(y)


def train_ridge(data, target, w=DEFAULT_WINDOW, lam=DEFAULT_LAMBDA):
    "Fit one LinearModel on the scored positions of 'data'."
    data = list(data)
    if not data:
        raise DegkitError("cannot train on an empty dataset")
    for c in data:
        if target not in c.profiles:
            raise ValidationError(target, f"construct '{c.id}' has no such profile")

    parts = parallel_map(lambda c: _construct_normal_equations(c, target, w), data)
    m = n_features(w)
    xtx = np.zeros((m, m))
    xty = np.zeros(m)
    n_rows = 0
    for part_xtx, part_xty, count in parts:
        xtx += part_xtx
        xty += part_xty
        n_rows += count

    notify(
        f"fitting {target} with w={w}, lambda={lam} on {n_rows} positions from {len(data)} constructs"
    )
    beta = solve_ridge(xtx, xty, lam)
    return LinearModel(w=w, beta=beta, target=target)


def predict_linear(m, c):
    "Per-nucleotide predictions over the whole sequence."
    return window_matrix(c, m.w) @ m.beta


def model_to_doc(m):
    "The self-describing document for one target."
    return {
        "model": "degscore",
        "w": int(m.w),
        "target": m.target,
        "beta": [float(b) for b in m.beta],
        "label_order": label_order(),
    }


def models_to_doc(models):
    """A single model document for one target, or a 'models' list of them
    when several targets share a file."""
    models = list(models)
    if not models:
        raise ModelFormatError("no linear models to save")
    targets = [m.target for m in models]
    if len(set(targets)) != len(targets):
        raise ModelFormatError("duplicate targets in one model file")
    if len(models) == 1:
        return model_to_doc(models[0])
    return {"model": "degscore", "models": [model_to_doc(m) for m in models]}


def save_linear_models(models, path):
    doc = models_to_doc(models)
    with atomic_write(path) as fp:
        json.dump(doc, fp, indent=1)
        fp.write("\n")


def save_linear_model(m, path):
    save_linear_models([m], path)


def linear_model_from_doc(doc):
    if not isinstance(doc, dict):
        raise ModelFormatError("linear model entry is not a JSON object")
    if doc.get("model", "degscore") != "degscore":
        raise ModelFormatError("not a windowed linear model file")
    if doc.get("label_order") != label_order():
        raise ModelFormatError("model label_order does not match this featurization")
    try:
        return LinearModel(w=int(doc["w"]), beta=doc["beta"], target=doc["target"])
    except KeyError as exc:
        raise ModelFormatError(f"model file is missing {exc}")
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed linear model: {exc}")


def is_linear_doc(doc):
    return isinstance(doc, dict) and (
        doc.get("model") == "degscore" or ("beta" in doc and "target" in doc)
    )


def linear_models_from_doc(doc):
    if not is_linear_doc(doc):
        raise ModelFormatError("not a windowed linear model file")
    if "models" in doc:
        entries = doc["models"]
        if not isinstance(entries, list) or not entries:
            raise ModelFormatError("'models' must be a non-empty list")
        return [linear_model_from_doc(entry) for entry in entries]
    return [linear_model_from_doc(doc)]


def load_linear_models(path):
    with open(path, encoding="utf-8") as fp:
        return linear_models_from_doc(json.load(fp))


def load_linear_model(path, target=None):
    models = load_linear_models(path)
    if target is not None:
        models = [m for m in models if m.target == target]
    if len(models) != 1:
        raise ModelFormatError(
            f"expected exactly one linear model{'' if target is None else ' for ' + target}, found {len(models)}"
        )
    return models[0]
