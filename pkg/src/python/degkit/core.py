"""Domain types and file I/O: constructs (JSON Lines), BPP sidecar matrices,
and prediction CSVs.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Mapping, Optional

import numpy as np
from sourmash.logging import notify

from . import structfeat
from .exceptions import (
    BppFormatError,
    MissingBppError,
    ParseError,
    StructureError,
    ValidationError,
)
from .utils import atomic_write, parallel_map

DATA_TYPES = ("reactivity", "deg_Mg_pH10", "deg_pH10", "deg_Mg_50C", "deg_50C")
SCORED_COLUMNS = ("reactivity", "deg_Mg_pH10", "deg_Mg_50C")
NUCLEOTIDES = "ACGU"
LOOP_LABELS = "SHBIMEX"

BPP_SYMMETRY_TOL = 1e-6
BPP_ROWSUM_TOL = 1e-3


def _frozen_array(values, dtype=float):
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class BppMatrix:
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", _frozen_array(self.p))
        if self.p.ndim != 2 or self.p.shape[0] != self.p.shape[1]:
            raise BppFormatError(f"BPP matrix must be square, got shape {self.p.shape}")

    @property
    def n(self):
        return self.p.shape[0]


@dataclass(frozen=True, eq=False)
class Construct:
    """One RNA design with its measured profiles.

    Profile and error arrays have length seq_scored and align with the
    positions of 'scored_mask' in increasing order. The mask defaults to the
    first seq_scored positions.
    """

    id: str
    sequence: str
    structure: str
    loop_string: str
    seq_scored: int
    profiles: Mapping[str, np.ndarray] = field(default_factory=dict)
    profile_errors: Mapping[str, np.ndarray] = field(default_factory=dict)
    signal_to_noise: float = float("nan")
    sn_pass: bool = True
    scored_mask: Optional[np.ndarray] = None
    bpp: Optional[BppMatrix] = None
    synthetic: bool = False
    round: Optional[int] = None

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError("id", "must be a non-empty string")
        n = len(self.sequence)
        if n == 0:
            raise ValidationError("sequence", "empty sequence")
        bad = set(self.sequence) - set(NUCLEOTIDES)
        if bad:
            raise ValidationError(
                "sequence", f"illegal nucleotide(s) {''.join(sorted(bad))!r}"
            )
        if len(self.structure) != n:
            raise ValidationError(
                "structure", f"length {len(self.structure)} != sequence length {n}"
            )
        try:
            structfeat.pair_table(self.structure)
        except StructureError as exc:
            raise ValidationError("structure", exc.message)
        if len(self.loop_string) != n:
            raise ValidationError(
                "predicted_loop_type",
                f"length {len(self.loop_string)} != sequence length {n}",
            )
        bad = set(self.loop_string) - set(LOOP_LABELS)
        if bad:
            raise ValidationError(
                "predicted_loop_type", f"illegal label(s) {''.join(sorted(bad))!r}"
            )
        if not 0 < self.seq_scored <= n:
            raise ValidationError(
                "seq_scored", f"{self.seq_scored} outside 1..{n}"
            )

        if self.scored_mask is None:
            mask = np.zeros(n, dtype=bool)
            mask[: self.seq_scored] = True
        else:
            mask = np.array(self.scored_mask, dtype=bool)
            if mask.shape != (n,) or int(mask.sum()) != self.seq_scored:
                raise ValidationError(
                    "scored_positions",
                    f"mask must cover {self.seq_scored} of {n} positions",
                )
        mask.flags.writeable = False
        object.__setattr__(self, "scored_mask", mask)

        object.__setattr__(
            self, "profiles", self._check_arrays(self.profiles, suffix="")
        )
        errors = self._check_arrays(self.profile_errors, suffix="_error")
        for name, arr in errors.items():
            if np.any(arr < 0):
                raise ValidationError(name + "_error", "negative error value")
        object.__setattr__(self, "profile_errors", errors)

        if self.bpp is not None and self.bpp.n != n:
            raise ValidationError(
                "bpp", f"matrix is {self.bpp.n}x{self.bpp.n}, sequence length {n}"
            )

    def _check_arrays(self, arrays, suffix):
        checked = {}
        for name, values in arrays.items():
            if name not in DATA_TYPES:
                raise ValidationError(name + suffix, "unknown data type")
            arr = _frozen_array(values)
            if arr.shape != (self.seq_scored,):
                raise ValidationError(
                    name + suffix,
                    f"length {arr.size} != seq_scored {self.seq_scored}",
                )
            checked[name] = arr
        return MappingProxyType(checked)

    @property
    def seq_length(self):
        return len(self.sequence)

    @property
    def scored_positions(self):
        return np.flatnonzero(self.scored_mask)

    def full_profile(self, name):
        "Profile spread over the whole sequence, NaN outside the scored mask."
        out = np.full(self.seq_length, np.nan)
        out[self.scored_mask] = self.profiles[name]
        return out


@dataclass(frozen=True, eq=False)
class PredictionSet:
    "Per-construct, per-data-type predicted values from one model."

    model_name: str
    entries: Mapping[str, Mapping[str, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        frozen = {
            cid: MappingProxyType(
                {col: _frozen_array(vals) for col, vals in cols.items()}
            )
            for cid, cols in self.entries.items()
        }
        object.__setattr__(self, "entries", MappingProxyType(frozen))

    @property
    def ids(self):
        return list(self.entries)

    @property
    def columns(self):
        present = set()
        for cols in self.entries.values():
            present.update(cols)
        return [c for c in DATA_TYPES if c in present]

    def __len__(self):
        return len(self.entries)

    def get(self, construct_id, column):
        return self.entries[construct_id][column]

    def check_ids(self, dataset):
        known = {c.id for c in dataset}
        missing = [cid for cid in self.entries if cid not in known]
        if missing:
            raise ValidationError(
                "id", f"prediction for unknown construct '{missing[0]}'"
            )


#
# BPP matrices
#


def validate_bpp(p, source="<matrix>", n=None):
    p = np.asarray(p, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise BppFormatError(f"{source}: BPP matrix must be square, got {p.shape}")
    if n is not None and p.shape[0] != n:
        raise BppFormatError(
            f"{source}: expected {n}x{n} matrix, got {p.shape[0]}x{p.shape[1]}"
        )
    if not np.all(np.isfinite(p)) or p.min(initial=0.0) < 0 or p.max(initial=0.0) > 1:
        raise BppFormatError(f"{source}: entries must lie in [0, 1]")
    asym = np.abs(p - p.T).max(initial=0.0)
    if asym > BPP_SYMMETRY_TOL:
        raise BppFormatError(
            f"{source}: matrix is not symmetric (max asymmetry {asym:.3g})"
        )
    p = (p + p.T) / 2
    if np.abs(np.diag(p)).max(initial=0.0) > BPP_SYMMETRY_TOL:
        raise BppFormatError(f"{source}: diagonal must be zero")
    np.fill_diagonal(p, 0.0)
    rowsum = p.sum(axis=1).max(initial=0.0)
    if rowsum > 1 + BPP_ROWSUM_TOL:
        raise BppFormatError(f"{source}: row sum {rowsum:.4g} exceeds 1")
    return BppMatrix(p)


def load_bpp(path, n):
    "Load an n x n whitespace-separated BPP matrix (or a .npy array)."
    path = os.fspath(path)
    try:
        if path.endswith(".npy"):
            p = np.load(path)
        else:
            p = np.loadtxt(path, dtype=float, ndmin=2)
    except ValueError as exc:
        raise BppFormatError(f"{path}: {exc}")
    if n == 0 and p.size == 0:
        p = p.reshape(0, 0)
    return validate_bpp(p, source=path, n=n)


def find_bpp_file(bpp_dir, construct_id):
    for suffix in (".bpp", ".npy"):
        candidate = os.path.join(bpp_dir, construct_id + suffix)
        if os.path.exists(candidate):
            return candidate
    raise MissingBppError(
        f"no BPP file '{construct_id}.bpp' (or .npy) in '{bpp_dir}'"
    )


def save_bpp(bpp, path):
    with atomic_write(path) as fp:
        np.savetxt(fp, bpp.p, fmt="%.6g")


#
# datasets
#


def construct_from_record(record):
    "Build a Construct from one decoded JSON object; unknown keys are ignored."
    for key in ("id", "sequence", "structure"):
        if key not in record:
            raise ValidationError(key, "missing field")
    sequence = record["sequence"]
    structure = record["structure"]
    if not isinstance(sequence, str):
        raise ValidationError("sequence", "must be a string")
    if not isinstance(structure, str):
        raise ValidationError("structure", "must be a string")

    seq_length = record.get("seq_length", len(sequence))
    if seq_length != len(sequence):
        # blame the sequence when the structure agrees with seq_length
        name = "sequence" if len(structure) == seq_length else "seq_length"
        raise ValidationError(
            name, f"sequence length {len(sequence)} != seq_length {seq_length}"
        )
    seq_scored = record.get("seq_scored", seq_length)
    if not isinstance(seq_scored, int) or isinstance(seq_scored, bool):
        raise ValidationError("seq_scored", "must be an integer")

    loop_string = record.get("predicted_loop_type")
    if loop_string is None:
        if len(structure) != len(sequence):
            raise ValidationError(
                "structure",
                f"length {len(structure)} != sequence length {len(sequence)}",
            )
        try:
            loop_string = structfeat.annotate_loops(structfeat.pair_table(structure))
        except StructureError as exc:
            raise ValidationError("structure", exc.message)

    profiles = {}
    errors = {}
    for name in DATA_TYPES:
        if record.get(name) is not None:
            profiles[name] = _numeric_list(record[name], name)
        if record.get(name + "_error") is not None:
            errors[name] = _numeric_list(record[name + "_error"], name + "_error")

    scored_mask = None
    if record.get("scored_positions") is not None:
        scored_mask = np.zeros(len(sequence), dtype=bool)
        try:
            scored_mask[np.asarray(record["scored_positions"], dtype=int)] = True
        except (IndexError, ValueError, TypeError):
            raise ValidationError("scored_positions", "positions out of range")

    sn = record.get("signal_to_noise")
    return Construct(
        id=record["id"],
        sequence=sequence,
        structure=structure,
        loop_string=loop_string,
        seq_scored=seq_scored,
        profiles=profiles,
        profile_errors=errors,
        signal_to_noise=float("nan") if sn is None else float(sn),
        sn_pass=bool(record.get("SN_filter", 1)),
        scored_mask=scored_mask,
        synthetic=bool(record.get("synthetic", False)),
        round=record.get("round"),
    )


def _numeric_list(values, name):
    if not isinstance(values, list):
        raise ValidationError(name, "must be an array of numbers")
    try:
        return np.asarray(values, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError(name, "must be an array of numbers")


def parse_dataset(path, bpp_dir=None):
    """Read a JSON Lines dataset, one construct per line, in file order.

    If 'bpp_dir' is given, '<id>.bpp' is loaded and attached to each construct.
    """
    constructs = []
    with open(path, encoding="utf-8") as fp:
        for lineno, line in enumerate(fp, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON: {exc.msg}", line=lineno)
            if not isinstance(record, dict):
                raise ParseError("expected a JSON object", line=lineno)
            try:
                constructs.append(construct_from_record(record))
            except ValidationError as exc:
                raise ValidationError(exc.field, exc.detail, line=lineno)

    if bpp_dir is not None:
        constructs = attach_bpps(constructs, bpp_dir)
    return constructs


def attach_bpps(constructs, bpp_dir):
    def load_one(c):
        bpp = load_bpp(find_bpp_file(bpp_dir, c.id), c.seq_length)
        return _with_bpp(c, bpp)

    return parallel_map(load_one, constructs)


def _with_bpp(c, bpp):
    return replace(c, bpp=bpp)


def construct_to_record(c):
    record = {
        "id": c.id,
        "sequence": c.sequence,
        "structure": c.structure,
        "predicted_loop_type": c.loop_string,
        "seq_length": c.seq_length,
        "seq_scored": c.seq_scored,
    }
    if not np.isnan(c.signal_to_noise):
        record["signal_to_noise"] = float(c.signal_to_noise)
    record["SN_filter"] = int(bool(c.sn_pass))
    for name in DATA_TYPES:
        if name in c.profiles:
            record[name] = [float(v) for v in c.profiles[name]]
    for name in DATA_TYPES:
        if name in c.profile_errors:
            record[name + "_error"] = [float(v) for v in c.profile_errors[name]]
    if not c.scored_mask[: c.seq_scored].all():
        record["scored_positions"] = [int(i) for i in c.scored_positions]
    if c.synthetic:
        record["synthetic"] = True
    if c.round is not None:
        record["round"] = c.round
    return record


def write_dataset(constructs, path):
    with atomic_write(path) as fp:
        for c in constructs:
            fp.write(json.dumps(construct_to_record(c)))
            fp.write("\n")


#
# predictions
#


def _format_value(v):
    return f"{v:.6g}"


def write_predictions(preds, path, columns=None, all_columns=False):
    """Write 'id_seqpos,<columns...>' rows, one per construct position.

    Columns default to the scored columns, in scored order, that 'preds'
    carries. With 'all_columns', every data type present is written.
    """
    if columns is None:
        if all_columns:
            columns = preds.columns
        else:
            columns = [c for c in SCORED_COLUMNS if c in preds.columns]
        # unscored-only models still get their own columns
        columns = columns or preds.columns or list(SCORED_COLUMNS)
    columns = list(columns)

    with atomic_write(path, newline="") as fp:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(["id_seqpos"] + columns)
        for cid, cols in preds.entries.items():
            missing = [c for c in columns if c not in cols]
            if missing:
                raise ValidationError(
                    missing[0], f"construct '{cid}' has no predictions for this column"
                )
            lengths = {len(cols[c]) for c in columns}
            if len(lengths) != 1:
                raise ValidationError(
                    "predictions", f"construct '{cid}' has ragged columns"
                )
            length = lengths.pop()
            for pos in range(length):
                w.writerow(
                    [f"{cid}_{pos}"] + [_format_value(cols[c][pos]) for c in columns]
                )


def read_predictions(path, model_name=None):
    "Read a prediction CSV back into a PredictionSet."
    if model_name is None:
        model_name = os.path.splitext(os.path.basename(path))[0]

    rows_by_id = {}
    with open(path, newline="", encoding="utf-8") as fp:
        r = csv.DictReader(fp)
        if r.fieldnames is None or r.fieldnames[0] != "id_seqpos":
            raise ParseError(f"{path}: expected header starting with 'id_seqpos'")
        columns = r.fieldnames[1:]
        unknown = [c for c in columns if c not in DATA_TYPES]
        if unknown:
            raise ValidationError(unknown[0], "unknown data type column")
        for lineno, row in enumerate(r, start=2):
            cid, sep, pos = row["id_seqpos"].rpartition("_")
            if not sep or not pos.isdigit():
                raise ParseError(f"bad row key {row['id_seqpos']!r}", line=lineno)
            try:
                values = [float(row[c]) for c in columns]
            except (TypeError, ValueError):
                raise ParseError("non-numeric prediction value", line=lineno)
            rows_by_id.setdefault(cid, {})[int(pos)] = values

    entries = {}
    for cid, by_pos in rows_by_id.items():
        length = len(by_pos)
        if sorted(by_pos) != list(range(length)):
            raise ValidationError(
                "id_seqpos", f"construct '{cid}' positions are not 0..{length - 1}"
            )
        matrix = np.array([by_pos[pos] for pos in range(length)], dtype=float)
        entries[cid] = {c: matrix[:, j] for j, c in enumerate(columns)}

    return PredictionSet(model_name, entries)


def summarize_dataset(constructs):
    "Counts used by the ingest command."
    lengths = {}
    for c in constructs:
        lengths[c.seq_length] = lengths.get(c.seq_length, 0) + 1
    with_profiles = sum(1 for c in constructs if c.profiles)
    passing = sum(1 for c in constructs if c.sn_pass)
    notify(
        f"{len(constructs)} constructs; {with_profiles} with profiles; {passing} with SN_filter=1"
    )
    return {
        "n_constructs": len(constructs),
        "n_with_profiles": with_profiles,
        "n_sn_pass": passing,
        "lengths": {str(k): v for k, v in sorted(lengths.items())},
        "with_bpp": sum(1 for c in constructs if c.bpp is not None),
    }
