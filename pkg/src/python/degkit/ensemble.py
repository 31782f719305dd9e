"""Prediction blending and genetic-algorithm blend search.

A genome is a nonnegative weight vector over a candidate pool together with
a support mask of at most max_members entries; weights are renormalized
over the support. Fitness is public MCRMSE. The initial population holds
every singleton, and the best genome seen is never lost, so the result is
never worse on the public split than the best single candidate.
"""
import glob
import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import lstsq
from sourmash.logging import notify

from .core import SCORED_COLUMNS, PredictionSet, read_predictions
from .evaluation import mcrmse, pooled_columns
from .exceptions import CoverageMismatchError, DegkitError, ModelFormatError, ValidationError
from .utils import atomic_write, parallel_map

WEIGHT_TOL = 1e-9
MIN_MEMBER_WEIGHT = 1e-12


@dataclass(frozen=True)
class EnsembleSpec:
    members: tuple

    def __post_init__(self):
        members = tuple((str(name), float(w)) for name, w in self.members)
        if not members:
            raise ValidationError("members", "an ensemble needs at least one member")
        names = [name for name, _ in members]
        if len(set(names)) != len(names):
            raise ValidationError("members", "duplicate member name")
        weights = np.array([w for _, w in members])
        if not np.all(np.isfinite(weights)) or weights.min() < 0:
            raise ValidationError("weights", "must be finite and >= 0")
        if abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise ValidationError("weights", f"sum to {weights.sum():.12g}, not 1")
        object.__setattr__(self, "members", members)

    @classmethod
    def normalized(cls, pairs):
        pairs = list(pairs)
        total = sum(w for _, w in pairs)
        if not total > 0:
            raise ValidationError("weights", "must have a positive sum")
        return cls(tuple((name, w / total) for name, w in pairs))

    @property
    def names(self):
        return [name for name, _ in self.members]

    def as_dict(self):
        return {"members": [{"model": name, "weight": w} for name, w in self.members]}


@dataclass(frozen=True)
class GAConfig:
    max_members: int = 10
    pool_limit: int = 100
    population: int = 64
    generations: int = 200
    mutation_sigma: float = 0.05
    crossover_rate: float = 0.7
    add_drop_rate: float = 0.1
    tournament_size: int = 3
    elite: int = 2
    polish_top: int = 5
    seed: int = 7

    def __post_init__(self):
        if self.max_members < 1:
            raise ValidationError("max_members", "must be >= 1")
        if self.pool_limit < 1:
            raise ValidationError("pool_limit", "must be >= 1")
        if self.population < 2:
            raise ValidationError("population", "must be >= 2")
        if self.generations < 0:
            raise ValidationError("generations", "must be >= 0")


@dataclass(frozen=True)
class GAResult:
    spec: EnsembleSpec
    public_mcrmse: float
    private_mcrmse: Optional[float]
    history: tuple


def _check_coverage(reference_name, reference, name, other):
    if set(reference.entries) != set(other.entries):
        raise CoverageMismatchError(
            f"'{name}' and '{reference_name}' cover different constructs"
        )
    for cid, cols in reference.entries.items():
        other_cols = other.entries[cid]
        if set(cols) != set(other_cols):
            raise CoverageMismatchError(
                f"'{name}' and '{reference_name}' predict different columns for '{cid}'"
            )
        for col, values in cols.items():
            if len(values) != len(other_cols[col]):
                raise CoverageMismatchError(
                    f"'{name}' and '{reference_name}' differ in length for '{cid}' {col}"
                )


def blend(spec, preds, model_name="ensemble"):
    "Positionwise weighted average of the member prediction sets."
    missing = [name for name in spec.names if name not in preds]
    if missing:
        raise CoverageMismatchError(f"no predictions for ensemble member '{missing[0]}'")
    first_name = spec.names[0]
    reference = preds[first_name]
    for name in spec.names[1:]:
        _check_coverage(first_name, reference, name, preds[name])

    entries = {}
    for cid, cols in reference.entries.items():
        entries[cid] = {}
        for col in cols:
            total = None
            for name, w in spec.members:
                term = w * preds[name].get(cid, col)
                total = term if total is None else total + term
            entries[cid][col] = total
    return PredictionSet(model_name, entries)


def top_k_average(candidates, truth, k=2, columns=SCORED_COLUMNS):
    "Equal-weight blend of the k best candidates by MCRMSE on 'truth'."
    if not candidates:
        raise DegkitError("no candidate prediction sets")
    scores = {name: mcrmse(p, truth, columns).mcrmse for name, p in candidates.items()}
    ranked = sorted(scores, key=lambda name: (scores[name], name))[:k]
    spec = EnsembleSpec.normalized((name, 1.0) for name in ranked)
    return spec, blend(spec, candidates)


#
# genetic search
#


class _Fitness:
    "Vectorized public MCRMSE of weight matrices over a fixed candidate pool."

    def __init__(self, names, candidates, truth, columns):
        self.names = names
        self.columns = list(columns)
        self.preds = {}
        self.truth = {}
        pooled = {name: pooled_columns(candidates[name], truth, columns) for name in names}
        for col in self.columns:
            self.preds[col] = np.vstack([pooled[name][col][0] for name in names])
            self.truth[col] = pooled[names[0]][col][1]

    def __call__(self, W):
        def column_rmse(col):
            resid = W @ self.preds[col] - self.truth[col]
            return np.sqrt(np.mean(resid * resid, axis=1))

        return np.mean(parallel_map(column_rmse, self.columns), axis=0)

    def constrained_least_squares(self, support):
        "Weights on 'support' minimizing the summed column MSE subject to sum(w) = 1."
        k = len(support)
        G = np.zeros((k, k))
        b = np.zeros(k)
        for col in self.columns:
            P = self.preds[col][support]
            n = P.shape[1]
            G += P @ P.T / n
            b += P @ self.truth[col] / n
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = 2 * G
        kkt[:k, k] = 1.0
        kkt[k, :k] = 1.0
        rhs = np.concatenate([2 * b, [1.0]])
        solution = lstsq(kkt, rhs)[0]
        return solution[:k]


def _effective_weights(weights, masks):
    w = np.where(masks, weights, 0.0)
    total = w.sum(axis=1, keepdims=True)
    uniform = masks / np.maximum(masks.sum(axis=1, keepdims=True), 1)
    return np.where(total > 0, w / np.where(total > 0, total, 1.0), uniform)


def _support(mask):
    return tuple(int(i) for i in np.flatnonzero(mask))


def _ranking(fitness, masks):
    "Indices sorted by fitness, ties going to the lexicographically smaller support."
    keys = [(float(f), _support(m)) for f, m in zip(fitness, masks)]
    return sorted(range(len(keys)), key=keys.__getitem__), keys


def _repair(weights, mask, cap, rng):
    if not mask.any():
        mask[rng.integers(len(mask))] = True
    on = np.flatnonzero(mask)
    if len(on) > cap:
        keep = on[np.lexsort((on, -weights[on]))[:cap]]
        mask[:] = False
        mask[keep] = True
    weights[~mask] = 0.0


def _initial_population(K, config, rng):
    size = max(config.population, K)
    cap = min(config.max_members, K)
    weights = np.zeros((size, K))
    masks = np.zeros((size, K), dtype=bool)
    weights[:K] = np.eye(K)
    masks[:K] = np.eye(K, dtype=bool)
    for row in range(K, size):
        support = rng.choice(K, size=rng.integers(1, cap + 1), replace=False)
        masks[row, support] = True
        weights[row, support] = rng.random(len(support))
    return weights, masks


def _next_generation(weights, masks, order, config, rng):
    size, K = weights.shape
    cap = min(config.max_members, K)
    position = np.empty(size, dtype=np.int64)
    position[order] = np.arange(size)

    def tournament():
        entrants = rng.choice(size, size=min(config.tournament_size, size), replace=False)
        return entrants[np.argmin(position[entrants])]

    n_elite = min(config.elite, size)
    new_w = [weights[i].copy() for i in order[:n_elite]]
    new_m = [masks[i].copy() for i in order[:n_elite]]
    while len(new_w) < size:
        p1 = tournament()
        p2 = tournament()
        if rng.random() < config.crossover_rate:
            pick = rng.random(K) < 0.5
            child_w = np.where(pick, weights[p1], weights[p2])
            child_m = np.where(pick, masks[p1], masks[p2])
        else:
            child_w = weights[p1].copy()
            child_m = masks[p1].copy()

        on = np.flatnonzero(child_m)
        child_w[on] = np.maximum(child_w[on] + rng.normal(0.0, config.mutation_sigma, len(on)), 0.0)
        if rng.random() < config.add_drop_rate and len(on) < cap:
            off = np.flatnonzero(~child_m)
            j = rng.choice(off)
            child_m[j] = True
            child_w[j] = rng.random()
        if rng.random() < config.add_drop_rate and child_m.sum() > 1:
            child_m[rng.choice(np.flatnonzero(child_m))] = False

        _repair(child_w, child_m, cap, rng)
        new_w.append(child_w)
        new_m.append(child_m)
    return np.array(new_w), np.array(new_m)


def _pool(candidates, truth, columns, limit):
    names = sorted(candidates)
    if len(names) <= limit:
        return names
    fitness = _Fitness(names, candidates, truth, columns)(np.eye(len(names)))
    ranked = sorted(range(len(names)), key=lambda i: (fitness[i], names[i]))[:limit]
    notify(f"pooling the best {limit} of {len(names)} candidates")
    return sorted(names[i] for i in ranked)


def ga_optimize(candidates, truth_public, config=GAConfig(), truth_private=None, columns=SCORED_COLUMNS):
    """Search blend subsets and weights minimizing public MCRMSE.

    The leading supports of the final population are refined by
    sum-to-one least squares; a refinement is kept only when its weights
    are nonnegative and it lowers the public MCRMSE.
    """
    if not candidates:
        raise DegkitError("no candidate prediction sets")
    truth_public = list(truth_public)
    names = _pool(candidates, truth_public, columns, config.pool_limit)
    fitness_fn = _Fitness(names, candidates, truth_public, columns)
    K = len(names)
    rng = np.random.default_rng(config.seed)

    weights, masks = _initial_population(K, config, rng)
    fitness = fitness_fn(_effective_weights(weights, masks))
    order, keys = _ranking(fitness, masks)
    best_key = keys[order[0]]
    best_w = weights[order[0]].copy()
    best_m = masks[order[0]].copy()
    history = [best_key[0]]

    for _ in range(config.generations):
        weights, masks = _next_generation(weights, masks, order, config, rng)
        fitness = fitness_fn(_effective_weights(weights, masks))
        order, keys = _ranking(fitness, masks)
        if keys[order[0]] < best_key:
            best_key = keys[order[0]]
            best_w = weights[order[0]].copy()
            best_m = masks[order[0]].copy()
        history.append(best_key[0])

    supports = []
    for i in order:
        support = keys[i][1]
        if support not in supports:
            supports.append(support)
        if len(supports) >= config.polish_top:
            break
    if best_key[1] not in supports:
        supports.append(best_key[1])
    for support in supports:
        if len(support) < 2:
            continue
        w = fitness_fn.constrained_least_squares(list(support))
        if not np.all(np.isfinite(w)) or w.min() < -1e-12:
            continue
        full = np.zeros(K)
        full[list(support)] = np.maximum(w, 0.0)
        if not full.sum() > 0:
            continue
        full /= full.sum()
        score = float(fitness_fn(full[None, :])[0])
        if (score, support) < best_key:
            best_key = (score, support)
            best_w = full
            best_m = full > 0
            if not best_m.any():
                best_m[list(support)] = True

    effective = _effective_weights(best_w[None, :], best_m[None, :])[0]
    # members switched on with a zero weight are dropped
    spec = EnsembleSpec.normalized(
        (names[i], effective[i])
        for i in np.flatnonzero(best_m)
        if effective[i] > MIN_MEMBER_WEIGHT
    )
    public = mcrmse(blend(spec, candidates), truth_public, columns).mcrmse
    private = None
    if truth_private is not None:
        private = mcrmse(blend(spec, candidates), truth_private, columns).mcrmse
    notify(
        f"GA blend of {len(spec.members)} members: public MCRMSE {public:.5f}"
        + (f", private MCRMSE {private:.5f}" if private is not None else "")
    )
    return GAResult(spec=spec, public_mcrmse=public, private_mcrmse=private, history=tuple(history))


#
# I/O
#


def load_candidates(directory):
    "Every '*.csv' prediction file in 'directory', keyed by file stem."
    paths = sorted(glob.glob(os.path.join(directory, "*.csv")))
    if not paths:
        raise DegkitError(f"no prediction CSVs found in '{directory}'")
    candidates = {}
    for path in paths:
        name = os.path.splitext(os.path.basename(path))[0]
        candidates[name] = read_predictions(path, model_name=name)
    notify(f"loaded {len(candidates)} candidate prediction sets from '{directory}'")
    return candidates


def save_spec(result_or_spec, path):
    if isinstance(result_or_spec, GAResult):
        doc = result_or_spec.spec.as_dict()
        doc["public_mcrmse"] = result_or_spec.public_mcrmse
        doc["private_mcrmse"] = result_or_spec.private_mcrmse
    else:
        doc = result_or_spec.as_dict()
    with atomic_write(path) as fp:
        json.dump(doc, fp, indent=1)
        fp.write("\n")


def load_spec(path):
    with open(path, encoding="utf-8") as fp:
        doc = json.load(fp)
    try:
        return EnsembleSpec(tuple((m["model"], m["weight"]) for m in doc["members"]))
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"{path}: malformed ensemble spec ({exc})")
