"""Blind-split curation.

Constructs are clustered on sequence, the dendrogram is cut at a cophenetic
threshold, and every cluster with at most three members is quarantined in
the private test set. The private set is topped up with one member from
each of several randomly chosen larger clusters; the remaining clusters are
divided whole between train and public test.
"""
import csv
from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import pdist
from sourmash.logging import notify

from .core import NUCLEOTIDES
from .exceptions import InfeasibleSplitError, ParseError, ValidationError
from .utils import atomic_write

SPLITS = ("train", "public_test", "private_test")
SMALL_CLUSTER = 3
LINKAGE_METHODS = ("ward", "average")


@dataclass(frozen=True)
class SplitSizes:
    train: int
    public: int
    private: int

    @classmethod
    def parse(cls, text):
        "Parse 'train,public,private'."
        try:
            train, public, private = (int(x) for x in text.split(","))
        except ValueError:
            raise ValidationError("sizes", f"expected 'train,public,private', got {text!r}")
        return cls(train, public, private)

    @property
    def total(self):
        return self.train + self.public + self.private


@dataclass(frozen=True)
class SplitAssignment:
    ids: tuple
    cluster_ids: tuple
    splits: tuple

    def __post_init__(self):
        if not len(self.ids) == len(self.cluster_ids) == len(self.splits):
            raise ValidationError("splits", "ids, clusters and splits differ in length")
        for s in self.splits:
            if s not in SPLITS:
                raise ValidationError("split", f"unknown split {s!r}")

    def __len__(self):
        return len(self.ids)

    def counts(self):
        return {s: sum(1 for x in self.splits if x == s) for s in SPLITS}

    def members(self, split):
        return [i for i, s in zip(self.ids, self.splits) if s == split]

    def rows(self):
        return zip(self.ids, self.cluster_ids, self.splits)


#
# distances and clustering
#


def sequence_distance(a, b):
    "Normalized Hamming distance between equal-length sequences."
    if len(a) != len(b):
        raise ValidationError(
            "sequence", f"cannot compare lengths {len(a)} and {len(b)}"
        )
    if not a:
        return 0.0
    return sum(1 for x, y in zip(a, b) if x != y) / len(a)


def _sequence_codes(seqs):
    seqs = list(seqs)
    lengths = {len(s) for s in seqs}
    if len(lengths) > 1:
        raise ValidationError(
            "sequence", f"all sequences must share one length, got {sorted(lengths)}"
        )
    return np.array([[ord(ch) for ch in s] for s in seqs], dtype=np.int32).reshape(
        len(seqs), -1
    )


def sequence_distances(seqs):
    "Condensed normalized-Hamming distance matrix."
    codes = _sequence_codes(seqs)
    if len(codes) < 2:
        return np.zeros(0)
    if codes.shape[1] == 0:
        return np.zeros(len(codes) * (len(codes) - 1) // 2)
    return pdist(codes, metric="hamming")


def one_hot_sequences(seqs):
    "N x (4L) one-hot encoding, the vector-mode input to clustering."
    codes = _sequence_codes(seqs)
    lookup = np.full(128, -1, dtype=np.int64)
    for i, ch in enumerate(NUCLEOTIDES):
        lookup[ord(ch)] = i
    idx = lookup[codes]
    if (idx < 0).any():
        raise ValidationError("sequence", "sequences must use A, C, G, U only")
    onehot = np.zeros(codes.shape + (len(NUCLEOTIDES),))
    np.put_along_axis(onehot, idx[..., None], 1.0, axis=-1)
    return onehot.reshape(len(codes), -1)


def _n_items(condensed):
    m = len(condensed)
    n = int(round((1 + np.sqrt(1 + 8 * m)) / 2))
    if n * (n - 1) // 2 != m:
        raise ValidationError("distances", f"{m} entries is not a condensed matrix")
    return n


def _relabel(labels):
    "0-based cluster ids in order of first appearance."
    mapping = {}
    return np.array([mapping.setdefault(x, len(mapping)) for x in labels], dtype=np.int64)


def _check_cut(threshold, method):
    if not threshold > 0:
        raise ValidationError("threshold", "must be > 0")
    if method not in LINKAGE_METHODS:
        raise ValidationError("linkage", f"expected one of {', '.join(LINKAGE_METHODS)}")


def cluster_and_cut(distances, threshold, method="ward"):
    """Agglomerate a condensed distance matrix and cut where merge height
    exceeds 'threshold'. Ward heights are used as computed."""
    _check_cut(threshold, method)
    distances = np.asarray(distances, dtype=float)
    if len(distances) == 0:
        return np.zeros(1, dtype=np.int64)
    _n_items(distances)
    if not np.all(np.isfinite(distances)) or distances.min() < 0:
        raise ValidationError("distances", "must be finite and nonnegative")
    Z = linkage(distances, method=method)
    labels = fcluster(Z, t=threshold, criterion="distance")
    return _relabel(labels)


def cluster_vectors(vectors, threshold, method="ward"):
    "Euclidean agglomerative clustering of row vectors."
    _check_cut(threshold, method)
    vectors = np.asarray(vectors, dtype=float)
    if len(vectors) < 2:
        return np.zeros(len(vectors), dtype=np.int64)
    Z = linkage(vectors, method=method, metric="euclidean")
    return _relabel(fcluster(Z, t=threshold, criterion="distance"))


def cluster_sequences(seqs, threshold=0.5, method="ward", mode="distance"):
    "Cluster sequences from Hamming distances or from one-hot vectors."
    seqs = list(seqs)
    if len(seqs) < 2:
        return np.zeros(len(seqs), dtype=np.int64)
    if mode == "distance":
        return cluster_and_cut(sequence_distances(seqs), threshold, method)
    elif mode == "vector":
        return cluster_vectors(one_hot_sequences(seqs), threshold, method)
    raise ValidationError("mode", f"expected 'distance' or 'vector', got {mode!r}")


#
# split assignment
#


def _subset_sum(unit_sizes, target):
    "Indices of units whose sizes sum as close to 'target' as possible, in unit order."
    reach = np.zeros((len(unit_sizes) + 1, target + 1), dtype=bool)
    reach[0, 0] = True
    for k, size in enumerate(unit_sizes):
        reach[k + 1] = reach[k]
        if size <= target:
            reach[k + 1, size:] |= reach[k, : target + 1 - size]
    best = int(np.flatnonzero(reach[-1]).max())
    chosen = []
    total = best
    for k in range(len(unit_sizes), 0, -1):
        if not reach[k - 1, total]:
            chosen.append(k - 1)
            total -= unit_sizes[k - 1]
    return sorted(chosen), best


def assign_splits(clusters, sizes, seed, ids=None):
    """Assign every item to train, public_test or private_test.

    'clusters' gives the cluster id of each item in item order. Clusters of
    size <= 3 go to private_test whole. If the private target is larger,
    one member (the lowest-index one) is taken from each of a seeded random
    choice of larger clusters. The rest is divided at the cluster level so
    the public set comes as close to its target as the cluster sizes allow
    without exceeding it; train takes everything else.
    """
    clusters = np.asarray(clusters, dtype=np.int64)
    n = len(clusters)
    if ids is None:
        ids = [str(i) for i in range(n)]
    ids = tuple(ids)
    if len(ids) != n:
        raise ValidationError("ids", f"{len(ids)} ids for {n} items")
    if min(sizes.train, sizes.public, sizes.private) < 0:
        raise ValidationError("sizes", "targets must be >= 0")
    if sizes.total > n:
        raise InfeasibleSplitError(
            f"targets sum to {sizes.total} but there are only {n} items"
        )

    labels, counts = np.unique(clusters, return_counts=True)
    members = {int(lab): np.flatnonzero(clusters == lab) for lab in labels}
    small = [int(lab) for lab, cnt in zip(labels, counts) if cnt <= SMALL_CLUSTER]
    large = [int(lab) for lab, cnt in zip(labels, counts) if cnt > SMALL_CLUSTER]
    n_small = int(sum(len(members[lab]) for lab in small))
    max_private = n_small + len(large)

    if sizes.private > max_private:
        raise InfeasibleSplitError(
            f"private target {sizes.private} is infeasible; at most {max_private} "
            f"({n_small} small-cluster members plus one from each of {len(large)} larger clusters)",
            max_private=max_private,
        )
    if sizes.private < n_small:
        raise InfeasibleSplitError(
            f"private target {sizes.private} is below the {n_small} members of clusters "
            f"with at most {SMALL_CLUSTER} members; the maximum feasible private size is {max_private}",
            max_private=max_private,
        )

    rng = np.random.default_rng(seed)
    splits = np.full(n, "train", dtype=object)
    for lab in small:
        splits[members[lab]] = "private_test"

    top_up = sizes.private - n_small
    picked = set(np.asarray(large)[rng.permutation(len(large))[:top_up]].tolist())
    units = []
    for lab in large:
        m = members[lab]
        if lab in picked:
            splits[m[0]] = "private_test"
            m = m[1:]
        units.append(m)

    order = rng.permutation(len(units))
    units = [units[i] for i in order]
    chosen, public_size = _subset_sum([len(u) for u in units], sizes.public)
    for k in chosen:
        splits[units[k]] = "public_test"

    if public_size != sizes.public:
        notify(
            f"warning: cluster sizes allow a public set of {public_size}, not {sizes.public}"
        )
    n_train = n - sizes.private - public_size
    if n_train != sizes.train:
        notify(f"warning: train set has {n_train} items (target {sizes.train})")

    return SplitAssignment(
        ids=ids,
        cluster_ids=tuple(int(x) for x in clusters),
        splits=tuple(str(s) for s in splits),
    )


def write_splits(assignment, path):
    with atomic_write(path, newline="") as fp:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(["id", "cluster_id", "split"])
        for row in assignment.rows():
            w.writerow(row)


def read_splits(path):
    ids = []
    clusters = []
    splits = []
    with open(path, newline="", encoding="utf-8") as fp:
        r = csv.DictReader(fp)
        if r.fieldnames != ["id", "cluster_id", "split"]:
            raise ParseError(f"{path}: expected header 'id,cluster_id,split'")
        for lineno, row in enumerate(r, start=2):
            try:
                clusters.append(int(row["cluster_id"]))
            except ValueError:
                raise ParseError("cluster_id must be an integer", line=lineno)
            ids.append(row["id"])
            splits.append(row["split"])
    return SplitAssignment(tuple(ids), tuple(clusters), tuple(splits))
