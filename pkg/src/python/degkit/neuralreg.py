"""Reference per-nucleotide neural regressor.

Architecture: linear embedding of 16 per-nucleotide features, L rounds of
message passing over the row-normalized structure adjacency and the BPP
matrix, R bidirectional GRU layers, and a linear head over the five data
types. Gradients are computed by hand in reverse mode and checked against
finite differences in the test suite.

The bidirectional layers split the hidden width h into ceil(h/2) forward and
floor(h/2) backward units, so every recurrent layer maps width h to width h
and the head is h x 5.
"""
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit
from sourmash.logging import notify

from . import structfeat
from .core import DATA_TYPES, LOOP_LABELS, NUCLEOTIDES
from .exceptions import (
    DegkitError,
    MissingBppError,
    ModelFormatError,
    TrainingDivergedError,
    ValidationError,
)
from .utils import atomic_write, parallel_map

FEATURE_DIM = 16
N_OUTPUTS = len(DATA_TYPES)


@dataclass(frozen=True)
class NeuralHyperparams:
    hidden: int = 32
    depth: int = 2
    recurrent_layers: int = 1
    seed: int = 7

    def __post_init__(self):
        if self.hidden < 1:
            raise ValidationError("hidden", "must be >= 1")
        if self.depth < 0:
            raise ValidationError("depth", "must be >= 0")
        if self.recurrent_layers < 1:
            raise ValidationError("recurrent_layers", "must be >= 1")

    @property
    def forward_units(self):
        return (self.hidden + 1) // 2

    @property
    def backward_units(self):
        return self.hidden // 2


@dataclass(frozen=True, eq=False)
class FeatureTensor:
    x: np.ndarray
    adj: np.ndarray
    bpp: np.ndarray

    @property
    def n(self):
        return self.x.shape[0]


@dataclass(frozen=True, eq=False)
class NeuralModel:
    hyperparams: NeuralHyperparams
    params: dict
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 1e-3
    batch_size: int = 8
    columns: tuple = DATA_TYPES
    reverse_augment: bool = False
    sn_weight_cap: float = None
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = None


def parameter_shapes(hp):
    "Ordered (name, shape, fan_in) for every parameter tensor."
    h = hp.hidden
    shapes = [("embed.W", (FEATURE_DIM, h), FEATURE_DIM), ("embed.b", (h,), FEATURE_DIM)]
    for layer in range(hp.depth):
        for name in ("W_self", "W_adj", "W_bpp"):
            shapes.append((f"mp{layer}.{name}", (h, h), h))
        shapes.append((f"mp{layer}.b", (h,), h))
    for layer in range(hp.recurrent_layers):
        for direction, units in (("fwd", hp.forward_units), ("bwd", hp.backward_units)):
            prefix = f"gru{layer}.{direction}"
            shapes.append((prefix + ".W_ih", (h, 3 * units), h))
            shapes.append((prefix + ".W_hh", (units, 3 * units), units))
            shapes.append((prefix + ".b_ih", (3 * units,), units))
            shapes.append((prefix + ".b_hh", (3 * units,), units))
    shapes.append(("head.W", (h, N_OUTPUTS), h))
    shapes.append(("head.b", (N_OUTPUTS,), h))
    return shapes


def init_model(hyperparams, seed=None):
    "Seeded uniform(+-1/sqrt(fan_in)) initialization."
    if seed is not None:
        hyperparams = replace(hyperparams, seed=seed)
    rng = np.random.default_rng(hyperparams.seed)
    params = {}
    for name, shape, fan_in in parameter_shapes(hyperparams):
        bound = 1.0 / np.sqrt(max(fan_in, 1))
        params[name] = rng.uniform(-bound, bound, size=shape)
    return NeuralModel(hyperparams=hyperparams, params=params)


#
# features
#


def build_features(c):
    "Assemble the per-nucleotide inputs and the two n x n operators."
    n = c.seq_length
    pt = structfeat.pair_table(c.structure)
    x = np.zeros((n, FEATURE_DIM))
    idx = np.arange(n)
    x[idx, [NUCLEOTIDES.index(b) for b in c.sequence]] = 1.0
    x[idx, [4 + LOOP_LABELS.index(s) for s in c.loop_string]] = 1.0
    x[:, 11] = pt.paired
    to_paired, to_unpaired = structfeat.nearest_pair_distances(pt)
    x[:, 12] = to_paired / n
    x[:, 13] = to_unpaired / n

    bpp = c.bpp.p if c.bpp is not None else structfeat.structure_bpp(pt)
    rowsum, zeros = structfeat.bpp_summary(bpp)
    x[:, 14] = rowsum
    x[:, 15] = zeros

    adj = np.zeros((n, n))
    adj[idx[:-1], idx[1:]] = 1.0
    adj[idx[1:], idx[:-1]] = 1.0
    for i, j in pt.pairs():
        adj[i, j] = adj[j, i] = 1.0
    degree = adj.sum(axis=1)
    isolated = degree == 0
    adj[isolated, isolated] = 1.0
    degree[isolated] = 1.0
    adj /= degree[:, None]

    return FeatureTensor(x=x, adj=adj, bpp=np.asarray(bpp, dtype=float))


#
# forward / backward
#


def _gru_forward(X, W_ih, W_hh, b_ih, b_hh):
    n = X.shape[0]
    units = W_hh.shape[0]
    gi = X @ W_ih + b_ih
    H = np.zeros((n + 1, units))
    r_all = np.zeros((n, units))
    z_all = np.zeros((n, units))
    cand_all = np.zeros((n, units))
    ghn_all = np.zeros((n, units))
    for t in range(n):
        h = H[t]
        gh = h @ W_hh + b_hh
        r = expit(gi[t, :units] + gh[:units])
        z = expit(gi[t, units : 2 * units] + gh[units : 2 * units])
        ghn = gh[2 * units :]
        cand = np.tanh(gi[t, 2 * units :] + r * ghn)
        H[t + 1] = (1 - z) * cand + z * h
        r_all[t], z_all[t], cand_all[t], ghn_all[t] = r, z, cand, ghn
    return H[1:], (X, H, r_all, z_all, cand_all, ghn_all)


def _gru_backward(d_out, cache, W_ih, W_hh):
    X, H, r_all, z_all, cand_all, ghn_all = cache
    n, units = r_all.shape
    d_gi = np.zeros((n, 3 * units))
    d_gh = np.zeros((n, 3 * units))
    dh_next = np.zeros(units)
    for t in range(n - 1, -1, -1):
        dh = d_out[t] + dh_next
        r, z, cand, ghn = r_all[t], z_all[t], cand_all[t], ghn_all[t]
        h_prev = H[t]
        d_cand = dh * (1 - z)
        d_z = dh * (h_prev - cand)
        da_n = d_cand * (1 - cand**2)
        da_r = da_n * ghn * r * (1 - r)
        da_z = d_z * z * (1 - z)
        d_gi[t] = np.concatenate([da_r, da_z, da_n])
        d_gh[t] = np.concatenate([da_r, da_z, da_n * r])
        dh_next = dh * z + d_gh[t] @ W_hh.T
    grads = {
        "W_ih": X.T @ d_gi,
        "W_hh": H[:-1].T @ d_gh,
        "b_ih": d_gi.sum(axis=0),
        "b_hh": d_gh.sum(axis=0),
    }
    return d_gi @ W_ih.T, grads


def _check_features(f):
    n = f.x.shape[0]
    if f.x.ndim != 2 or f.x.shape[1] != FEATURE_DIM:
        raise ValidationError("features", f"expected n x {FEATURE_DIM}, got {f.x.shape}")
    if f.adj.shape != (n, n) or f.bpp.shape != (n, n):
        raise ValidationError("features", f"operators must be {n} x {n}")


def _forward(params, hp, f):
    _check_features(f)
    caches = {"mp": [], "gru": []}
    H = f.x @ params["embed.W"] + params["embed.b"]
    for layer in range(hp.depth):
        p = f"mp{layer}."
        AH = f.adj @ H
        PH = f.bpp @ H
        pre = H @ params[p + "W_self"] + AH @ params[p + "W_adj"] + PH @ params[p + "W_bpp"] + params[p + "b"]
        caches["mp"].append((H, AH, PH, pre))
        H = np.maximum(pre, 0.0)
    for layer in range(hp.recurrent_layers):
        out = []
        layer_cache = []
        for direction in ("fwd", "bwd"):
            p = f"gru{layer}.{direction}."
            inputs = H if direction == "fwd" else H[::-1]
            seq_out, cache = _gru_forward(
                inputs, params[p + "W_ih"], params[p + "W_hh"], params[p + "b_ih"], params[p + "b_hh"]
            )
            out.append(seq_out if direction == "fwd" else seq_out[::-1])
            layer_cache.append(cache)
        caches["gru"].append(layer_cache)
        H = np.concatenate(out, axis=1)
    caches["head_in"] = H
    return H @ params["head.W"] + params["head.b"], caches


def _backward(params, hp, f, caches, d_pred):
    grads = {}
    G = caches["head_in"]
    grads["head.W"] = G.T @ d_pred
    grads["head.b"] = d_pred.sum(axis=0)
    dH = d_pred @ params["head.W"].T

    split = hp.forward_units
    for layer in range(hp.recurrent_layers - 1, -1, -1):
        fwd_cache, bwd_cache = caches["gru"][layer]
        p = f"gru{layer}.fwd."
        dX_fwd, g_fwd = _gru_backward(dH[:, :split], fwd_cache, params[p + "W_ih"], params[p + "W_hh"])
        for k, v in g_fwd.items():
            grads[p + k] = v
        p = f"gru{layer}.bwd."
        dX_bwd, g_bwd = _gru_backward(dH[:, split:][::-1], bwd_cache, params[p + "W_ih"], params[p + "W_hh"])
        for k, v in g_bwd.items():
            grads[p + k] = v
        dH = dX_fwd + dX_bwd[::-1]

    for layer in range(hp.depth - 1, -1, -1):
        H, AH, PH, pre = caches["mp"][layer]
        p = f"mp{layer}."
        d_pre = dH * (pre > 0)
        grads[p + "W_self"] = H.T @ d_pre
        grads[p + "W_adj"] = AH.T @ d_pre
        grads[p + "W_bpp"] = PH.T @ d_pre
        grads[p + "b"] = d_pre.sum(axis=0)
        dH = (
            d_pre @ params[p + "W_self"].T
            + f.adj.T @ (d_pre @ params[p + "W_adj"].T)
            + f.bpp.T @ (d_pre @ params[p + "W_bpp"].T)
        )

    grads["embed.W"] = f.x.T @ dH
    grads["embed.b"] = dH.sum(axis=0)
    return grads


def forward(m, f):
    "n x 5 predictions, columns in DATA_TYPES order."
    return _forward(m.params, m.hyperparams, f)[0]


def _column_indices(columns):
    if not columns:
        raise ValidationError("columns", "at least one column is required")
    return [DATA_TYPES.index(col) for col in columns]


def _loss_and_output_grad(pred, c, columns, weight=1.0):
    cols = _column_indices(columns)
    positions = c.scored_positions
    d_pred = np.zeros_like(pred)
    loss = 0.0
    scale = 1.0 / (len(cols) * len(positions))
    for name, j in zip(columns, cols):
        resid = pred[positions, j] - c.profiles[name]
        loss += float(resid @ resid) * scale
        d_pred[positions, j] = 2.0 * scale * weight * resid
    return weight * loss, d_pred


def loss_masked(pred, c, columns):
    "Mean over columns of the MSE over scored positions."
    return _loss_and_output_grad(pred, c, columns)[0]


def _loss_and_gradients(params, hp, f, c, columns, weight=1.0):
    pred, caches = _forward(params, hp, f)
    loss, d_pred = _loss_and_output_grad(pred, c, columns, weight)
    return loss, _backward(params, hp, f, caches, d_pred)


def loss_and_gradients(m, f, c, columns):
    return _loss_and_gradients(m.params, m.hyperparams, f, c, columns)


def gradients(m, f, c, columns):
    "Exact gradients of loss_masked with respect to every parameter."
    return loss_and_gradients(m, f, c, columns)[1]


#
# training
#


def sample_weight(c, cap):
    if cap is None:
        return 1.0
    sn = c.signal_to_noise
    if not np.isfinite(sn):
        return 1.0
    return float(np.clip(sn, 0.0, cap) / cap)


def _trainable_columns(c, columns):
    return [col for col in columns if col in c.profiles]


def _mean_loss(params, hp, features, samples, columns):
    losses = parallel_map(
        lambda i: loss_masked(_forward(params, hp, features[i])[0], samples[i], columns[i]),
        range(len(samples)),
    )
    return float(np.mean(losses)) if losses else float("nan")


def _prepare(samples, columns):
    cols = [_trainable_columns(c, columns) for c in samples]
    kept = [i for i, cc in enumerate(cols) if cc]
    if len(kept) < len(samples):
        notify(f"warning: {len(samples) - len(kept)} constructs have none of the training columns; skipping them")
    samples = [samples[i] for i in kept]
    cols = [cols[i] for i in kept]
    missing_bpp = sum(1 for c in samples if c.bpp is None)
    if missing_bpp:
        notify(f"warning: {missing_bpp} constructs have no BPP; using their MFE pairs instead")
    features = parallel_map(build_features, samples)
    return samples, cols, features


def train(m, dataset, config=TrainConfig(), validation=None):
    """Adam training with global-norm clipping.

    Returns the trained model and a per-epoch history of training and
    validation loss. Determined entirely by (seed, data, config).
    """
    dataset = list(dataset)
    if not dataset:
        raise DegkitError("cannot train on an empty dataset")
    hp = m.hyperparams
    seed = hp.seed if config.seed is None else config.seed
    rng = np.random.default_rng(seed)

    samples = list(dataset)
    if config.reverse_augment:
        samples += [structfeat.reverse_augment(c) for c in dataset]
    samples, cols, features = _prepare(samples, config.columns)
    if not samples:
        raise DegkitError("no construct carries any training column")
    weights = [sample_weight(c, config.sn_weight_cap) for c in samples]

    valid = None
    if validation:
        valid = _prepare(list(validation), config.columns)

    params = {k: v.copy() for k, v in m.params.items()}
    first = {k: m.first_moment.get(k, np.zeros_like(v)).copy() for k, v in params.items()}
    second = {k: m.second_moment.get(k, np.zeros_like(v)).copy() for k, v in params.items()}
    step = m.step

    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(samples))
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            results = parallel_map(
                lambda i: _loss_and_gradients(params, hp, features[i], samples[i], cols[i], weights[i]),
                batch,
            )
            grads = {k: np.zeros_like(v) for k, v in params.items()}
            for i, (loss, g) in zip(batch, results):
                if not np.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss on construct '{samples[i].id}' at epoch {epoch}, step {step + 1}"
                    )
                for k in grads:
                    grads[k] += g[k]
            for k in grads:
                grads[k] /= len(batch)

            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if not np.isfinite(norm):
                raise TrainingDivergedError(
                    f"non-finite gradient norm at epoch {epoch}, step {step + 1}"
                )
            if norm > config.clip_norm:
                for k in grads:
                    grads[k] *= config.clip_norm / norm

            step += 1
            bias1 = 1 - config.beta1**step
            bias2 = 1 - config.beta2**step
            for k, g in grads.items():
                first[k] = config.beta1 * first[k] + (1 - config.beta1) * g
                second[k] = config.beta2 * second[k] + (1 - config.beta2) * g * g
                update = (first[k] / bias1) / (np.sqrt(second[k] / bias2) + config.epsilon)
                params[k] = params[k] - config.learning_rate * update

        train_loss = _mean_loss(params, hp, features, samples, cols)
        if not np.isfinite(train_loss):
            raise TrainingDivergedError(f"non-finite training loss after epoch {epoch}")
        valid_loss = _mean_loss(params, hp, valid[2], valid[0], valid[1]) if valid else None
        history.append({"epoch": epoch, "train_loss": train_loss, "valid_loss": valid_loss})
        notify(
            f"epoch {epoch}/{config.epochs}: train loss {train_loss:.5f}"
            + (f" / valid loss {valid_loss:.5f}" if valid_loss is not None else "")
        )

    trained = NeuralModel(
        hyperparams=hp, params=params, step=step, first_moment=first, second_moment=second
    )
    return trained, history


def predict_neural(m, c):
    "n x 5 predictions for one construct."
    return forward(m, build_features(c))


#
# semi-supervised helpers
#


def pseudo_label_augment(m, unlabeled):
    "Attach the model's predictions as synthetic full-length profiles."
    labeled = []
    for c in unlabeled:
        if not c.structure:
            raise ValidationError("structure", f"construct '{c.id}' has no structure")
        if c.bpp is None:
            raise MissingBppError(f"construct '{c.id}' has no BPP matrix to pseudo-label with")
        pred = predict_neural(m, c)
        labeled.append(
            replace(
                c,
                seq_scored=c.seq_length,
                scored_mask=None,
                profiles={name: pred[:, j] for j, name in enumerate(DATA_TYPES)},
                profile_errors={},
                synthetic=True,
            )
        )
    return labeled


def random_sequences(count, length, seed):
    "i.i.d. uniform sequences over ACGU."
    if length < 1:
        raise DegkitError("sequence length must be >= 1")
    rng = np.random.default_rng(seed)
    letters = np.array(list(NUCLEOTIDES))
    draws = rng.integers(0, len(NUCLEOTIDES), size=(count, length))
    return ["".join(row) for row in letters[draws]]


def write_fasta(sequences, path, prefix="random"):
    with atomic_write(path) as fp:
        for i, seq in enumerate(sequences):
            fp.write(f">{prefix}_{i}\n{seq}\n")


#
# checkpoints
#


def _tensor_docs(tensors):
    return [
        {"name": k, "shape": list(v.shape), "values": [float(x) for x in v.ravel()]}
        for k, v in tensors.items()
    ]


def _tensors_from_docs(docs, expected):
    tensors = {}
    for doc in docs:
        name = doc["name"]
        if name not in expected:
            raise ModelFormatError(f"unexpected parameter '{name}'")
        shape = tuple(doc["shape"])
        if shape != expected[name]:
            raise ModelFormatError(f"parameter '{name}' has shape {shape}, expected {expected[name]}")
        tensors[name] = np.array(doc["values"], dtype=float).reshape(shape)
    return tensors


def save_neural_model(m, path):
    hp = m.hyperparams
    doc = {
        "model": "neuralreg",
        "hyperparams": {
            "hidden": hp.hidden,
            "depth": hp.depth,
            "recurrent_layers": hp.recurrent_layers,
        },
        "seed": hp.seed,
        "columns": list(DATA_TYPES),
        "feature_dim": FEATURE_DIM,
        "step": m.step,
        "parameters": _tensor_docs(m.params),
        "first_moment": _tensor_docs(m.first_moment),
        "second_moment": _tensor_docs(m.second_moment),
    }
    with atomic_write(path) as fp:
        json.dump(doc, fp)
        fp.write("\n")


def neural_model_from_doc(doc):
    try:
        hp = NeuralHyperparams(seed=int(doc["seed"]), **doc["hyperparams"])
        if doc.get("feature_dim", FEATURE_DIM) != FEATURE_DIM:
            raise ModelFormatError("checkpoint was built for a different feature width")
        expected = {name: shape for name, shape, _ in parameter_shapes(hp)}
        params = _tensors_from_docs(doc["parameters"], expected)
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"malformed checkpoint: {exc}")
    missing = set(expected) - set(params)
    if missing:
        raise ModelFormatError(f"checkpoint is missing parameter '{sorted(missing)[0]}'")
    return NeuralModel(
        hyperparams=hp,
        params=params,
        step=int(doc.get("step", 0)),
        first_moment=_tensors_from_docs(doc.get("first_moment", []), expected),
        second_moment=_tensors_from_docs(doc.get("second_moment", []), expected),
    )


def load_neural_model(path):
    with open(path, encoding="utf-8") as fp:
        return neural_model_from_doc(json.load(fp))
