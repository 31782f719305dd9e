"""
Test sequence clustering and blind split assignment.
"""
import numpy as np
import pytest
from scipy.spatial.distance import pdist

from degkit import curation
from degkit.curation import (
    SplitSizes,
    assign_splits,
    cluster_and_cut,
    cluster_sequences,
    sequence_distance,
    sequence_distances,
)
from degkit.exceptions import InfeasibleSplitError, ValidationError

from .degkit_tst_utils import random_sequence


def _clusters_from_sizes(sizes):
    return np.repeat(np.arange(len(sizes)), sizes)


def test_sequence_distance():
    assert sequence_distance("ACGU", "ACGU") == 0.0
    assert sequence_distance("ACGU", "ACGA") == 0.25
    assert sequence_distance("", "") == 0.0
    with pytest.raises(ValidationError):
        sequence_distance("ACG", "AC")


def test_sequence_distances_condensed():
    d = sequence_distances(["AAAA", "AAAU", "UUUU"])
    assert np.allclose(d, [0.25, 1.0, 0.75])


def test_sequence_distances_need_equal_lengths():
    with pytest.raises(ValidationError):
        sequence_distances(["AAAA", "AAA"])


def test_one_hot_sequences():
    x = curation.one_hot_sequences(["AC", "GU"])
    assert x.shape == (2, 8)
    assert x[0].tolist() == [1, 0, 0, 0, 0, 1, 0, 0]
    assert x[1].tolist() == [0, 0, 1, 0, 0, 0, 0, 1]


def test_two_obvious_groups(linkage_method, rng):
    base_a = "A" * 30
    base_b = "U" * 30
    seqs = []
    for base in (base_a, base_b):
        for _ in range(5):
            s = list(base)
            for k in rng.choice(30, size=2, replace=False):
                s[k] = "G"
            seqs.append("".join(s))
    labels = cluster_sequences(seqs, threshold=0.5, method=linkage_method)
    assert len(set(labels[:5])) == 1
    assert len(set(labels[5:])) == 1
    assert labels[0] != labels[5]
    assert labels[0] == 0


def test_vector_mode():
    seqs = ["A" * 20] * 3 + ["C" * 20] * 3
    labels = cluster_sequences(seqs, threshold=1.0, mode="vector")
    assert labels.tolist() == [0, 0, 0, 1, 1, 1]


def test_cluster_and_cut_edge_cases():
    assert cluster_and_cut(np.zeros(0), 0.5).tolist() == [0]
    assert cluster_and_cut(np.array([0.9]), 0.5, method="average").tolist() == [0, 1]
    assert cluster_and_cut(np.array([0.1]), 0.5, method="average").tolist() == [0, 0]
    with pytest.raises(ValidationError):
        cluster_and_cut(np.array([0.1, 0.2]), 0.5)
    with pytest.raises(ValidationError):
        cluster_and_cut(np.array([0.1]), 0.0)
    with pytest.raises(ValidationError):
        cluster_and_cut(np.array([0.1]), 0.5, method="single")


def test_cluster_sequences_is_deterministic(rng):
    seqs = [random_sequence(rng, 25) for _ in range(40)]
    a = cluster_sequences(seqs, threshold=0.6)
    b = cluster_sequences(list(seqs), threshold=0.6)
    assert a.tolist() == b.tolist()


def test_split_sizes_parse():
    s = SplitSizes.parse("10,3,7")
    assert (s.train, s.public, s.private, s.total) == (10, 3, 7, 20)
    with pytest.raises(ValidationError):
        SplitSizes.parse("10,3")


def test_small_clusters_quarantined():
    # clusters of sizes 1, 2, 3 and 10
    clusters = _clusters_from_sizes([1, 2, 3, 10])
    result = assign_splits(clusters, SplitSizes(10, 0, 6), seed=1)
    assert result.counts() == {"train": 10, "public_test": 0, "private_test": 6}
    assert result.splits[:6] == ("private_test",) * 6

    result = assign_splits(clusters, SplitSizes(9, 0, 7), seed=1)
    assert result.counts()["private_test"] == 7
    assert result.splits[:6] == ("private_test",) * 6
    # the top-up comes from the large cluster
    assert result.splits[6] == "private_test"


def test_infeasible_private_target():
    clusters = _clusters_from_sizes([1, 2, 3, 10])
    with pytest.raises(InfeasibleSplitError) as exc:
        assign_splits(clusters, SplitSizes(8, 0, 8), seed=1)
    assert exc.value.max_private == 7
    with pytest.raises(InfeasibleSplitError) as exc:
        assign_splits(clusters, SplitSizes(11, 0, 5), seed=1)
    assert exc.value.max_private == 7


def test_targets_exceed_items():
    with pytest.raises(InfeasibleSplitError):
        assign_splits(_clusters_from_sizes([5, 5]), SplitSizes(8, 2, 1), seed=1)


def test_public_split_keeps_clusters_whole():
    clusters = _clusters_from_sizes([4, 5, 6, 7])
    result = assign_splits(clusters, SplitSizes(13, 9, 0), seed=3)
    assert result.counts() == {"train": 13, "public_test": 9, "private_test": 0}
    for c in set(clusters.tolist()):
        assert len({s for s, k in zip(result.splits, clusters) if k == c}) == 1


def test_public_split_shortfall_goes_to_train():
    clusters = _clusters_from_sizes([4, 4])
    result = assign_splits(clusters, SplitSizes(5, 3, 0), seed=3)
    assert result.counts() == {"train": 8, "public_test": 0, "private_test": 0}


def test_assign_splits_seeded(rng):
    clusters = rng.permutation(_clusters_from_sizes([1, 2, 8, 9, 10, 11, 12, 13, 14, 20]))
    a = assign_splits(clusters, SplitSizes(70, 20, 10), seed=5)
    b = assign_splits(clusters, SplitSizes(70, 20, 10), seed=5)
    assert a.splits == b.splits


def test_quarantine_over_random_clusterings():
    rng = np.random.default_rng(11)
    for trial in range(500):
        n = int(rng.integers(5, 60))
        clusters = rng.integers(0, int(rng.integers(1, n + 1)), size=n)
        labels, counts = np.unique(clusters, return_counts=True)
        n_small = int(counts[counts <= 3].sum())
        n_large = int((counts > 3).sum())
        private = n_small + int(rng.integers(0, n_large + 1))
        public = int(rng.integers(0, n - private + 1))
        sizes = SplitSizes(n - private - public, public, private)

        result = assign_splits(clusters, sizes, seed=trial)
        splits = np.array(result.splits)
        assert result.counts()["private_test"] == private

        for lab, count in zip(labels, counts):
            members = splits[clusters == lab]
            if count <= 3:
                assert set(members) == {"private_test"}
            else:
                assert (members == "private_test").sum() <= 1
                # the rest of the cluster stays together
                rest = set(members[members != "private_test"])
                assert len(rest) <= 1
        assert result.counts()["public_test"] <= public


def test_write_and_read_splits(runtmp):
    clusters = _clusters_from_sizes([2, 5])
    result = assign_splits(clusters, SplitSizes(4, 0, 3), seed=2, ids=list("abcdefg"))
    path = runtmp.output("splits.csv")
    curation.write_splits(result, path)
    with open(path) as fp:
        lines = fp.read().splitlines()
    assert lines[0] == "id,cluster_id,split"
    assert lines[1] == "a,0,private_test"

    again = curation.read_splits(path)
    assert again.ids == result.ids
    assert again.splits == result.splits
    assert again.cluster_ids == result.cluster_ids


def _merge_height(points, a, b, method):
    if method == "ward":
        na, nb = len(a), len(b)
        gap = np.linalg.norm(points[a].mean(axis=0) - points[b].mean(axis=0))
        return np.sqrt(2.0 * na * nb / (na + nb)) * gap
    return np.mean([np.linalg.norm(points[i] - points[j]) for i in a for j in b])


def _agglomerate(points, method):
    "Greedy pairwise merging; returns the merge heights and the partition after each merge."
    clusters = [[i] for i in range(len(points))]
    heights = []
    partitions = [{frozenset(c) for c in clusters}]
    while len(clusters) > 1:
        h, a, b = min(
            (_merge_height(points, clusters[a], clusters[b], method), a, b)
            for a in range(len(clusters))
            for b in range(a + 1, len(clusters))
        )
        clusters[a] = clusters[a] + clusters[b]
        del clusters[b]
        heights.append(h)
        partitions.append({frozenset(c) for c in clusters})
    return heights, partitions


def _partition(labels, order=None):
    order = np.arange(len(labels)) if order is None else order
    groups = {}
    for pos, label in enumerate(labels):
        groups.setdefault(label, set()).add(int(order[pos]))
    return {frozenset(g) for g in groups.values()}


def test_cluster_and_cut_matches_brute_force(linkage_method):
    rng = np.random.default_rng(77)
    for _ in range(40):
        n = int(rng.integers(3, 12))
        points = rng.normal(size=(n, 3))
        heights, partitions = _agglomerate(points, linkage_method)
        # cut halfway between two successive merges
        k = int(rng.integers(0, n - 1))
        upper = heights[k + 1] if k + 1 < len(heights) else heights[k] + 1.0
        threshold = (heights[k] + upper) / 2
        expected = partitions[k + 1]

        labels = cluster_and_cut(pdist(points), threshold, linkage_method)
        assert _partition(labels) == expected

        perm = rng.permutation(n)
        shuffled = cluster_and_cut(pdist(points[perm]), threshold, linkage_method)
        assert _partition(shuffled, order=perm) == expected
