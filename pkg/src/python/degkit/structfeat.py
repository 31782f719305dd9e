"""Structure-derived features: pair tables, loop labels, graph distances,
nearest paired/unpaired distances, BPP summaries and reversal augmentation.

Loop labels follow the public data release: E marks an unpaired run that
touches either end of the molecule, X an unpaired run between two top-level
stems. Every maximal unpaired run receives a single label.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import shortest_path

from .exceptions import UnbalancedStructureError, UnsupportedNotationError

if TYPE_CHECKING:
    from .core import BppMatrix, Construct

UNPAIRED = -1
ZERO_BPP = 1e-12

_PSEUDOKNOT_BRACKETS = "[]{}<>"


@dataclass(frozen=True, eq=False)
class PairTable:
    "partner[i] is the index paired with i, or UNPAIRED."

    partner: np.ndarray

    @property
    def n(self):
        return len(self.partner)

    @property
    def paired(self):
        return self.partner != UNPAIRED

    def pairs(self):
        return [(i, int(j)) for i, j in enumerate(self.partner) if j > i]


@dataclass(frozen=True, eq=False)
class FeatureBundle:
    loop_string: str
    dist_to_paired: np.ndarray
    dist_to_unpaired: np.ndarray
    graph_dist: np.ndarray
    inv_dist: np.ndarray
    bpp_rowsum: np.ndarray
    bpp_zeros: np.ndarray

    @property
    def n(self):
        return len(self.loop_string)


def pair_table(structure):
    "Stack-match a nested dot-bracket string."
    partner = np.full(len(structure), UNPAIRED, dtype=np.int64)
    stack = []
    for i, c in enumerate(structure):
        if c == "(":
            stack.append(i)
        elif c == ")":
            if not stack:
                raise UnbalancedStructureError(
                    f"unmatched ')' at position {i}", position=i
                )
            j = stack.pop()
            partner[i] = j
            partner[j] = i
        elif c == ".":
            continue
        elif c in _PSEUDOKNOT_BRACKETS:
            raise UnsupportedNotationError(
                f"pseudoknot bracket '{c}' at position {i} is not supported",
                position=i,
            )
        else:
            raise UnsupportedNotationError(
                f"illegal character '{c}' at position {i}", position=i
            )

    if stack:
        raise UnbalancedStructureError(
            f"unmatched '(' at position {stack[-1]}", position=stack[-1]
        )

    partner.flags.writeable = False
    return PairTable(partner)


def unpaired_runs(pt):
    "Yield (start, end) of every maximal unpaired run, end exclusive."
    i = 0
    n = pt.n
    while i < n:
        if pt.partner[i] != UNPAIRED:
            i += 1
            continue
        start = i
        while i < n and pt.partner[i] == UNPAIRED:
            i += 1
        yield start, i


def _enclosing_pairs(pt):
    "For each position, the opening index of the innermost enclosing pair or -1."
    enclosing = np.full(pt.n, -1, dtype=np.int64)
    stack = []
    for i, j in enumerate(pt.partner):
        if j == UNPAIRED:
            enclosing[i] = stack[-1] if stack else -1
        elif j > i:
            enclosing[i] = stack[-1] if stack else -1
            stack.append(i)
        else:
            stack.pop()
            enclosing[i] = stack[-1] if stack else -1
    return enclosing


def _child_helices(pt, i):
    "Opening positions of the helices directly inside the pair closed by i."
    j = pt.partner[i]
    children = []
    k = i + 1
    while k < j:
        if pt.partner[k] != UNPAIRED:
            children.append(k)
            k = pt.partner[k] + 1
        else:
            k += 1
    return children


def annotate_loops(pt):
    "Label every position with one of S, H, B, I, M, E, X."
    n = pt.n
    labels = ["S" if p != UNPAIRED else "?" for p in pt.partner]
    enclosing = _enclosing_pairs(pt)

    for start, end in unpaired_runs(pt):
        closing = enclosing[start]
        if closing < 0:
            label = "E" if start == 0 or end == n else "X"
        else:
            children = _child_helices(pt, closing)
            if not children:
                label = "H"
            elif len(children) == 1:
                inner_open = children[0]
                inner_close = pt.partner[inner_open]
                left_run = inner_open - closing - 1
                right_run = pt.partner[closing] - inner_close - 1
                label = "I" if left_run and right_run else "B"
            else:
                label = "M"
        labels[start:end] = label * (end - start)

    return "".join(labels)


def _structure_graph(pt):
    n = pt.n
    backbone = np.arange(n - 1)
    pair_i = np.flatnonzero(pt.partner > np.arange(n))
    rows = np.concatenate([backbone, pair_i])
    cols = np.concatenate([backbone + 1, pt.partner[pair_i]])
    data = np.ones(len(rows))
    return coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def graph_distances(pt, max_distance=None):
    """Exact shortest-path lengths over backbone and pair edges.

    If 'max_distance' is given, distances are capped at that value.
    """
    n = pt.n
    if n == 0:
        return np.zeros((0, 0), dtype=np.int64)
    dist = shortest_path(
        _structure_graph(pt), method="D", directed=False, unweighted=True
    )
    dist = dist.astype(np.int64)
    if max_distance is not None:
        dist = np.minimum(dist, int(max_distance))
    return dist


def nearest_pair_distances(pt):
    """Sequence distance from each position to the nearest paired and the
    nearest unpaired position; n when no such position exists."""
    n = pt.n
    idx = np.arange(n)

    def nearest(targets):
        if len(targets) == 0:
            return np.full(n, n, dtype=np.int64)
        return np.abs(np.subtract.outer(idx, targets)).min(axis=1).astype(np.int64)

    paired = pt.paired
    return nearest(idx[paired]), nearest(idx[~paired])


def bpp_summary(bpp):
    "Per-position BPP row sums and the fraction of (near-)zero off-diagonal entries."
    p = np.asarray(getattr(bpp, "p", bpp), dtype=float)
    n = p.shape[0]
    rowsum = p.sum(axis=1)
    if n < 2:
        return rowsum, np.ones(n)
    off_diagonal = ~np.eye(n, dtype=bool)
    zeros = ((p < ZERO_BPP) & off_diagonal).sum(axis=1) / (n - 1)
    return rowsum, zeros


def inverse_distance_matrix(n):
    "1/|i-j| off the diagonal, 0 on it."
    idx = np.arange(n)
    gap = np.abs(np.subtract.outer(idx, idx)).astype(float)
    with np.errstate(divide="ignore"):
        inv = np.where(gap > 0, 1.0 / gap, 0.0)
    return inv


def structure_bpp(pt):
    "0/1 pairing matrix of a single structure, usable where no ensemble BPP exists."
    p = np.zeros((pt.n, pt.n))
    for i, j in pt.pairs():
        p[i, j] = p[j, i] = 1.0
    return p


def featurize(construct, max_distance=None):
    "Compute the full FeatureBundle for one construct."
    pt = pair_table(construct.structure)
    if construct.bpp is not None:
        p = construct.bpp.p
    else:
        p = structure_bpp(pt)
    rowsum, zeros = bpp_summary(p)
    to_paired, to_unpaired = nearest_pair_distances(pt)
    return FeatureBundle(
        loop_string=annotate_loops(pt),
        dist_to_paired=to_paired,
        dist_to_unpaired=to_unpaired,
        graph_dist=graph_distances(pt, max_distance=max_distance),
        inv_dist=inverse_distance_matrix(pt.n),
        bpp_rowsum=rowsum,
        bpp_zeros=zeros,
    )


_SWAP_BRACKETS = str.maketrans("()", ")(")


def reverse_structure(structure):
    return structure[::-1].translate(_SWAP_BRACKETS)


def reverse_augment(c: Construct) -> Construct:
    """Reverse a construct 5'<->3'.

    Profiles stay aligned with the scored positions: the scored mask is
    reversed together with the arrays, so seq_scored is preserved.
    """
    bpp = c.bpp
    if bpp is not None:
        bpp = dataclasses.replace(bpp, p=bpp.p[::-1, ::-1])
    return dataclasses.replace(
        c,
        id=c.id + "_rev",
        sequence=c.sequence[::-1],
        structure=reverse_structure(c.structure),
        loop_string=c.loop_string[::-1],
        profiles={k: v[::-1] for k, v in c.profiles.items()},
        profile_errors={k: v[::-1] for k, v in c.profile_errors.items()},
        scored_mask=c.scored_mask[::-1],
        bpp=bpp,
    )
