"""Channel similarity, average-linkage clustering, and cluster fusion.

These are pure array-level primitives: no knowledge of the model graph.
Cluster ids are always the smallest member channel index, ties between
candidate merges are broken by the lexicographically smallest (id_a, id_b)
pair, and cluster-to-cluster distances are the plain mean of the member
pairwise distances. Those three rules pin the output bit-for-bit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError

log = logging.getLogger("fcos.cluster")

METRICS = ("cosine", "euclidean")
SCHEMES = ("mean", "l1-weighted")


@dataclass
class DistanceMatrix:
    values: np.ndarray  # [m, m] float64
    metric: str

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def validate(self) -> None:
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ShapeError(f"distance matrix must be square, got {v.shape}")
        if not np.array_equal(v, v.T):
            raise ShapeError("distance matrix is not symmetric")
        if np.any(np.diag(v) != 0.0):
            raise ShapeError("distance matrix has nonzero diagonal")
        hi = 2.0 if self.metric == "cosine" else 1.0
        if v.min() < 0.0 or v.max() > hi:
            raise ShapeError(f"{self.metric} distances outside [0, {hi}]")


@dataclass
class ClusterAssignment:
    labels: np.ndarray  # [m] int, values in [0, n)
    n: int
    merge_trace: list[tuple[int, int, float]] = field(default_factory=list)

    def members(self, label: int) -> np.ndarray:
        return np.nonzero(self.labels == label)[0]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n)


def channel_vectors(weight: np.ndarray, axis: str) -> np.ndarray:
    """Flattens conv weight [c_out, c_in, k] into per-channel row vectors."""
    if weight.ndim != 3:
        raise ShapeError(f"expected rank-3 conv weight, got shape {weight.shape}")
    if axis == "out":
        return weight.reshape(weight.shape[0], -1).astype(np.float64)
    if axis == "in":
        return np.transpose(weight, (1, 0, 2)).reshape(weight.shape[1], -1).astype(np.float64)
    raise ConfigError(f"axis must be 'out' or 'in', got {axis!r}")


def distance_matrix(vectors: np.ndarray, metric: str) -> DistanceMatrix:
    """Pairwise channel distances: 1 - similarity, exactly symmetric."""
    v = np.asarray(vectors, dtype=np.float64)
    if metric == "cosine":
        gram = v @ v.T
        gram = (gram + gram.T) / 2.0
        norms = np.sqrt(np.maximum(np.diag(gram), 0.0))
        zero = norms == 0.0
        safe = np.where(zero, 1.0, norms)
        sim = gram / np.outer(safe, safe)
        # zero-norm convention: two zero channels are identical, a zero and a
        # nonzero channel are maximally dissimilar
        sim[zero, :] = 0.0
        sim[:, zero] = 0.0
        sim[np.ix_(zero, zero)] = 1.0
        dist = np.clip(1.0 - sim, 0.0, 2.0)
    elif metric == "euclidean":
        sq = np.sum(v * v, axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (v @ v.T)
        d2 = np.maximum((d2 + d2.T) / 2.0, 0.0)
        d = np.sqrt(d2)
        dist = d / (1.0 + d)  # equals 1 - 1/(1+d)
    else:
        raise ConfigError(f"unknown metric {metric!r}; expected one of {METRICS}")
    np.fill_diagonal(dist, 0.0)
    dist = (dist + dist.T) / 2.0
    return DistanceMatrix(values=dist, metric=metric)


def channel_similarity_matrix(weight: np.ndarray, axis: str = "out", metric: str = "cosine") -> DistanceMatrix:
    return distance_matrix(channel_vectors(weight, axis), metric)


def _pair_distance(dist: np.ndarray, members_a, members_b) -> float:
    return float(dist[np.ix_(members_a, members_b)].mean())


def average_linkage_cluster(dmat: DistanceMatrix, n: int) -> ClusterAssignment:
    """Agglomerates the closest pair (mean linkage) until n clusters remain."""
    m = dmat.size
    if not 1 <= n <= m:
        raise ConfigError(f"cluster count {n} outside [1, {m}]")
    dist = dmat.values
    clusters: dict[int, list[int]] = {i: [i] for i in range(m)}
    pair: dict[tuple[int, int], float] = {}
    ids = sorted(clusters)
    for ai in range(len(ids)):
        for bi in range(ai + 1, len(ids)):
            a, b = ids[ai], ids[bi]
            pair[(a, b)] = float(dist[a, b])
    trace: list[tuple[int, int, float]] = []
    while len(clusters) > n:
        (a, b), d = min(pair.items(), key=lambda kv: (kv[1], kv[0]))
        trace.append((a, b, d))
        clusters[a] = sorted(clusters[a] + clusters[b])
        del clusters[b]
        pair = {k: v for k, v in pair.items() if b not in k}
        for c in clusters:
            if c == a:
                continue
            key = (min(a, c), max(a, c))
            pair[key] = _pair_distance(dist, clusters[key[0]], clusters[key[1]])
    labels = np.empty(m, dtype=np.int64)
    for new_label, cid in enumerate(sorted(clusters)):
        labels[clusters[cid]] = new_label
    return ClusterAssignment(labels=labels, n=len(clusters), merge_trace=trace)


def fuse_cluster_weights(slices: np.ndarray, assignment: ClusterAssignment, scheme: str = "mean") -> np.ndarray:
    """Fuses member slices per cluster into [n, ...] representatives.

    Convex combinations are evaluated anchored on the first member
    (first + sum_j alpha_j * (w_j - first)), so a cluster of identical
    members fuses to exactly that member.
    """
    slices = np.asarray(slices)
    if slices.shape[0] != assignment.labels.shape[0]:
        raise ShapeError(
            f"{slices.shape[0]} slices vs assignment over {assignment.labels.shape[0]} channels"
        )
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown fusion scheme {scheme!r}; expected one of {SCHEMES}")
    fused = np.empty((assignment.n,) + slices.shape[1:], dtype=slices.dtype)
    for label in range(assignment.n):
        members = assignment.members(label)
        group = slices[members]
        if scheme == "l1-weighted":
            mass = np.abs(group.reshape(len(members), -1)).sum(axis=1)
            total = mass.sum()
            if total == 0.0:
                log.info("cluster %d has zero L1 mass; falling back to mean fusion", label)
                alphas = np.full(len(members), 1.0 / len(members))
            else:
                alphas = mass / total
        else:
            alphas = np.full(len(members), 1.0 / len(members))
        anchor = group[0]
        deltas = group - anchor
        fused[label] = anchor + np.tensordot(alphas, deltas, axes=(0, 0))
    return fused


def cluster_channels(vectors: np.ndarray, keep: int, metric: str = "cosine") -> ClusterAssignment:
    return average_linkage_cluster(distance_matrix(vectors, metric), keep)


def reduce_slices(slices: np.ndarray, n: int, metric: str = "cosine", scheme: str = "mean") -> np.ndarray:
    """Clusters slices by flattened-vector similarity and fuses to n groups."""
    vectors = np.asarray(slices, dtype=np.float64).reshape(slices.shape[0], -1)
    assignment = cluster_channels(vectors, n, metric)
    return fuse_cluster_weights(slices, assignment, scheme)
