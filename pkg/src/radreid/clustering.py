"""Average-linkage agglomerative clustering and per-epoch cluster geometry."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .dataset import as_feature_matrix
from .errors import InvalidClusterCount, ShapeError


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray
    num_clusters: int

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise ShapeError("cluster labels must be 1-D")
        counts = np.bincount(labels, minlength=self.num_clusters) if labels.size else np.zeros(0)
        if labels.size and (labels.min() < 0 or len(counts) != self.num_clusters or np.any(counts == 0)):
            raise InvalidClusterCount("cluster labels must cover 0..C-1 with no empty cluster")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster)


@dataclass(frozen=True, eq=False)
class ClusterGeometry:
    """Frozen centroids and radii; arrays are private read-only copies."""

    centroids: np.ndarray
    radii: np.ndarray
    epoch_stamp: int

    def __post_init__(self):
        for name in ("centroids", "radii"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.centroids.ndim != 2 or self.radii.shape != (self.centroids.shape[0],):
            raise ShapeError("centroids must be C x D and radii length C")
        if np.any(self.radii < 0):
            raise ValueError("radii must be non-negative")

    @property
    def num_clusters(self) -> int:
        return self.centroids.shape[0]


def cluster_hierarchical(embeddings, C: int) -> ClusterAssignment:
    """Merge singletons by minimum average linkage until ``C`` clusters remain.

    Average linkage is the mean Euclidean distance over all cross-cluster
    pairs, maintained with the Lance-Williams update. A cluster keeps the
    index of its smallest member; ties go to the lexicographically smallest
    ``(i, j)`` pair. Final labels are numbered by smallest member.
    """
    x = as_feature_matrix(embeddings)
    n = x.shape[0]
    if not 1 <= C <= n:
        raise InvalidClusterCount(f"need 1 <= C <= N, got C={C}, N={n}")

    dist = cdist(x, x)
    np.fill_diagonal(dist, np.inf)
    sizes = np.ones(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    parent = np.arange(n)

    # cached minimum of dist[k, k+1:] per row
    row_val = np.full(n, np.inf)
    row_arg = np.full(n, -1, dtype=np.int64)

    def refresh(k):
        if k >= n - 1:
            row_val[k], row_arg[k] = np.inf, -1
            return
        j = int(np.argmin(dist[k, k + 1 :])) + k + 1
        row_val[k], row_arg[k] = dist[k, j], j

    for k in range(n):
        refresh(k)

    for _ in range(n - C):
        i = int(np.argmin(row_val))
        j = int(row_arg[i])
        ni, nj = sizes[i], sizes[j]

        merged = (ni * dist[i] + nj * dist[j]) / (ni + nj)
        merged[~active] = np.inf
        merged[[i, j]] = np.inf
        dist[i, :] = merged
        dist[:, i] = merged
        dist[j, :] = np.inf
        dist[:, j] = np.inf
        sizes[i] = ni + nj
        active[j] = False
        parent[parent == j] = i

        row_val[j], row_arg[j] = np.inf, -1
        refresh(i)
        for k in range(i):
            if not active[k]:
                continue
            if row_arg[k] in (i, j):
                refresh(k)
            else:
                v = dist[k, i]
                if v < row_val[k] or (v == row_val[k] and i < row_arg[k]):
                    row_val[k], row_arg[k] = v, i
        for k in range(i + 1, j):
            if active[k] and row_arg[k] == j:
                refresh(k)

    roots = np.unique(parent)
    relabel = {int(r): c for c, r in enumerate(roots)}
    return ClusterAssignment(np.array([relabel[int(p)] for p in parent]), len(roots))


def _row_norms(diff: np.ndarray) -> np.ndarray:
    return np.sqrt((diff * diff).sum(axis=-1))


def compute_geometry(embeddings, assignment: ClusterAssignment, epoch: int = 0) -> ClusterGeometry:
    x = as_feature_matrix(embeddings)
    labels = assignment.labels
    if labels.shape[0] != x.shape[0]:
        raise ShapeError(f"{labels.shape[0]} labels for {x.shape[0]} embeddings")
    C = assignment.num_clusters
    centroids = np.empty((C, x.shape[1]))
    radii = np.empty(C)
    for c in range(C):
        members = x[labels == c]
        centroids[c] = members.mean(axis=0)
        radii[c] = _row_norms(members - centroids[c]).max()
    return ClusterGeometry(centroids, radii, int(epoch))


def radial_distance(geometry: ClusterGeometry, embedding, cluster_index: int) -> float:
    if not 0 <= cluster_index < geometry.num_clusters:
        raise IndexError(f"cluster index {cluster_index} out of range 0..{geometry.num_clusters - 1}")
    diff = np.asarray(embedding, dtype=np.float64) - geometry.centroids[cluster_index]
    return float(_row_norms(diff[None, :])[0])


def cluster_schedule(c_start: int, c_end: int, epochs: int) -> list[int]:
    """Cluster count per epoch, shrinking linearly from ``c_start`` to ``c_end``."""
    if epochs <= 0:
        return []
    if epochs == 1:
        return [int(c_start)]
    return [int(round(c_start + (c_end - c_start) * e / (epochs - 1))) for e in range(epochs)]


def purity(assignment: ClusterAssignment, true_labels) -> float:
    """Fraction of samples sharing their cluster's majority identity."""
    true_labels = np.asarray(true_labels)
    total = 0
    for c in range(assignment.num_clusters):
        _, counts = np.unique(true_labels[assignment.labels == c], return_counts=True)
        total += counts.max()
    return total / len(true_labels)
