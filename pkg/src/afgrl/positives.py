"""Positive-pair discovery: cross-network k-NN, repeated K-means, and their
combination with graph adjacency.

For node ``i``: ``B_i`` are its k nearest neighbours (cosine, online vs
target embeddings), ``N_i`` its graph neighbours, ``C_i`` every node sharing
a cluster with ``i`` in at least one of M K-means runs, and the positives are
``(B_i & N_i) | (B_i & C_i) | {i}``.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import DimensionError
from .numerics import CsrMatrix, Rng, csr_from_pairs, make_rng, row_l2_normalize

KNN_BLOCK = 1024


def _top_k_excluding_self(a: np.ndarray, b: np.ndarray, k: int, offset: int) -> np.ndarray:
    sim = a @ b.T
    rows = np.arange(sim.shape[0])
    sim[rows, rows + offset] = -np.inf
    # stable sort on -sim keeps ascending index order among ties
    return np.argsort(-sim, axis=1, kind="stable")[:, :k]


def knn_cross(h_online: np.ndarray, h_target: np.ndarray, k: int) -> np.ndarray:
    """Indices of each node's ``k`` most cosine-similar other nodes.

    Row ``i`` of the result compares online row ``i`` against every target
    row ``j != i``; ties go to the smaller ``j``. Zero rows have similarity 0
    to everything.
    """
    h_online = np.asarray(h_online, dtype=np.float64)
    h_target = np.asarray(h_target, dtype=np.float64)
    if h_online.shape != h_target.shape:
        raise DimensionError(f"online {h_online.shape} vs target {h_target.shape}")
    n = h_online.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < N ({n}), got {k}")
    a = row_l2_normalize(h_online)
    b = row_l2_normalize(h_target)
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, KNN_BLOCK):
        stop = min(start + KNN_BLOCK, n)
        out[start:stop] = _top_k_excluding_self(a[start:stop], b, k, start)
    return out


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int
    inertia_history: List[float] = field(default_factory=list)


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * (x @ c.T) + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeans_pp(x: np.ndarray, n_clusters: int, rng: Rng) -> np.ndarray:
    n = x.shape[0]
    centers = [int(rng.integers(n))]
    closest = _sq_dists(x, x[centers[0]][None, :])[:, 0]
    for _ in range(1, n_clusters):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # every point already coincides with a centre
            idx = int(rng.integers(n))
        centers.append(idx)
        closest = np.minimum(closest, _sq_dists(x, x[idx][None, :])[:, 0])
    return x[centers].copy()


def kmeans(
    h: np.ndarray, n_clusters: int, max_iters: int = 100, rng: Optional[Rng] = None,
    normalize: bool = True,
) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding on L2-normalized rows.

    Stops when assignments stop changing or after ``max_iters`` rounds. An
    empty cluster takes over the point farthest from its current centroid.
    """
    x = row_l2_normalize(h) if normalize else np.asarray(h, dtype=np.float64)
    n = x.shape[0]
    if n_clusters > n:
        raise ValueError(f"K={n_clusters} exceeds number of points {n}")
    if n_clusters < 1 or max_iters < 1:
        raise ValueError("K and max_iters must be >= 1")
    rng = rng if rng is not None else make_rng(0, "kmeans")
    centroids = _kmeans_pp(x, n_clusters, rng)
    labels = None
    history: List[float] = []
    it = 0
    for it in range(1, max_iters + 1):
        d = _sq_dists(x, centroids)
        new_labels = d.argmin(axis=1)
        dist = d[np.arange(n), new_labels]
        _reseed_empty(x, new_labels, dist, centroids, n_clusters)
        history.append(float(dist.sum()))
        converged = labels is not None and np.array_equal(labels, new_labels)
        labels = new_labels
        if converged:
            break
        for c in range(n_clusters):
            members = labels == c
            if members.any():
                centroids[c] = x[members].mean(axis=0)
    d = _sq_dists(x, centroids)
    inertia = float(d[np.arange(n), labels].sum())
    return KMeansResult(labels.astype(np.int64), centroids, inertia, it, history)


def _reseed_empty(x, labels, dist, centroids, n_clusters) -> None:
    counts = np.bincount(labels, minlength=n_clusters)
    for c in np.nonzero(counts == 0)[0]:
        movable = counts[labels] > 1
        cand = np.where(movable, dist, -1.0)
        j = int(np.argmax(cand))
        if cand[j] <= 0:
            continue
        counts[labels[j]] -= 1
        counts[c] += 1
        labels[j] = c
        dist[j] = 0.0
        centroids[c] = x[j]


def run_kmeans(
    h_target: np.ndarray, n_clusters: int, runs: int, max_iters: int, seed: int,
    jobs: int = 1, stream=(),
) -> List[KMeansResult]:
    """``runs`` independent K-means fits; run ``j`` is seeded with ``seed + j``."""

    def one(j):
        return kmeans(h_target, n_clusters, max_iters, make_rng(seed + j, "kmeans", *stream))

    if jobs > 1 and runs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, range(runs)))
    return [one(j) for j in range(runs)]


def global_candidates(run_labels: Sequence[np.ndarray]) -> List[np.ndarray]:
    """``C_i``: union over runs of the nodes sharing ``i``'s cluster."""
    run_labels = [np.asarray(r, dtype=np.int64) for r in run_labels]
    if not run_labels:
        raise ValueError("need at least one clustering run")
    n = run_labels[0].shape[0]
    if any(r.shape[0] != n for r in run_labels):
        raise DimensionError("clustering runs cover different node counts")
    out = []
    for i in range(n):
        mask = np.zeros(n, dtype=bool)
        for r in run_labels:
            mask |= r == r[i]
        out.append(np.nonzero(mask)[0])
    return out


def real_positives(knn, adjacency_sets, cluster_sets) -> List[np.ndarray]:
    """Set-algebra form: ``(B_i & N_i) | (B_i & C_i) | {i}`` per node."""
    if not len(knn) == len(adjacency_sets) == len(cluster_sets):
        raise DimensionError("inconsistent node counts")
    out = []
    for i, (b, nb, c) in enumerate(zip(knn, adjacency_sets, cluster_sets)):
        b = set(int(v) for v in b)
        p = (b & set(int(v) for v in nb)) | (b & set(int(v) for v in c)) | {i}
        out.append(np.array(sorted(p), dtype=np.int64))
    return out


@dataclass
class NeighborSets:
    """Discovered candidate and positive sets for every node.

    ``positives`` is an N x N binary CSR matrix; row ``i`` lists ``P_i``.
    """

    knn: np.ndarray
    adjacency: CsrMatrix
    cluster_labels: np.ndarray  # (M, N)
    positives: CsrMatrix
    local_mask: np.ndarray  # (N, k): knn[i, t] is also a graph neighbour

    @property
    def n(self) -> int:
        return self.knn.shape[0]

    def positive_lists(self) -> List[np.ndarray]:
        p = self.positives
        return [p.indices[p.indptr[i] : p.indptr[i + 1]].copy() for i in range(self.n)]

    def sizes(self) -> np.ndarray:
        return np.diff(self.positives.indptr)

    @property
    def mean_positives(self) -> float:
        return float(self.sizes().mean())

    @property
    def knn_local_ratio(self) -> float:
        """Mean fraction of each ``B_i`` that is adjacent to ``i``."""
        return float(self.local_mask.mean())

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node_id", "positive_id"])
            for i, ps in enumerate(self.positive_lists()):
                for j in ps:
                    w.writerow([i, int(j)])


def _is_neighbor(adjacency: CsrMatrix, knn: np.ndarray) -> np.ndarray:
    n, k = knn.shape
    rows = np.repeat(np.arange(n), k)
    hits = np.asarray(adjacency[rows, knn.ravel()]).ravel() != 0
    return hits.reshape(n, k)


def build_positive_sets(knn: np.ndarray, adjacency: CsrMatrix, cluster_labels) -> NeighborSets:
    """Vectorized positive construction from k-NN, adjacency and cluster runs."""
    knn = np.asarray(knn, dtype=np.int64)
    labels = np.atleast_2d(np.asarray(cluster_labels, dtype=np.int64))
    n, k = knn.shape
    if adjacency.shape != (n, n) or labels.shape[1] != n:
        raise DimensionError("inconsistent node counts")
    local = _is_neighbor(adjacency, knn)
    same_cluster = np.zeros((n, k), dtype=bool)
    for run in labels:
        same_cluster |= run[knn] == run[:, None]
    keep = local | same_cluster
    rows = np.concatenate([np.repeat(np.arange(n), k)[keep.ravel()], np.arange(n)])
    cols = np.concatenate([knn.ravel()[keep.ravel()], np.arange(n)])
    pos = csr_from_pairs(n, n, rows, cols)
    pos.data[:] = 1.0
    return NeighborSets(knn, adjacency, labels, pos, local)


def discover_positives(
    h_online: np.ndarray,
    h_target: np.ndarray,
    adjacency: CsrMatrix,
    k: int,
    n_clusters: int,
    runs: int,
    kmeans_iters: int,
    seed: int,
    jobs: int = 1,
    stream=(),
) -> NeighborSets:
    knn = knn_cross(h_online, h_target, k)
    fits = run_kmeans(h_target, n_clusters, runs, kmeans_iters, seed, jobs, stream)
    return build_positive_sets(knn, adjacency, np.stack([f.labels for f in fits]))


def positives_from_lists(lists: Sequence[Sequence[int]], n: Optional[int] = None) -> CsrMatrix:
    """Binary CSR matrix whose row ``i`` holds ``lists[i]``."""
    n = len(lists) if n is None else n
    rows = np.concatenate([np.full(len(p), i, dtype=np.int64) for i, p in enumerate(lists)] or [np.zeros(0, np.int64)])
    cols = np.concatenate([np.asarray(p, dtype=np.int64) for p in lists] or [np.zeros(0, np.int64)])
    m = csr_from_pairs(n, n, rows, cols)
    m.data[:] = 1.0
    return m
