"""Graph container, GCN adjacency normalization, file I/O, SBM generation, splits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, GraphFormatError
from .numerics import CsrMatrix, Rng, csr_from_pairs, make_rng


@dataclass
class Graph:
    """Undirected, unweighted graph with dense node features.

    ``adjacency`` is a binary, symmetric CSR matrix without stored self-loops.
    """

    n: int
    adjacency: CsrMatrix
    features: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != self.n:
            raise DimensionError(
                f"features must have {self.n} rows, got shape {self.features.shape}"
            )
        if self.adjacency.shape != (self.n, self.n):
            raise DimensionError(f"adjacency shape {self.adjacency.shape} != ({self.n}, {self.n})")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.n,):
                raise DimensionError(f"labels must have length {self.n}")
            if self.n and self.labels.min() < 0:
                raise ValueError("labels must be non-negative")

    @classmethod
    def from_edges(cls, n: int, edges, features, labels=None) -> "Graph":
        """Symmetrize and de-duplicate ``edges``; self-loops are dropped."""
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise GraphFormatError(f"edge endpoint outside [0, {n})")
        e = e[e[:, 0] != e[:, 1]]
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        adj = csr_from_pairs(n, n, rows, cols)
        adj.data[:] = 1.0
        return cls(n=n, adjacency=adj, features=features, labels=labels)

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        if self.labels is None:
            return 0
        return int(self.labels.max()) + 1 if self.n else 0

    @property
    def num_edges(self) -> int:
        return self.adjacency.nnz // 2

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i] : a.indptr[i + 1]]

    def edge_list(self) -> np.ndarray:
        """Undirected edges as an (E, 2) array with ``i < j``, sorted."""
        coo = sp.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((coo.col, coo.row))
        return np.stack([coo.row[order], coo.col[order]], axis=1).astype(np.int64)


def normalize_adjacency(g: Graph) -> CsrMatrix:
    """Symmetric GCN normalization D^-1/2 (A + I) D^-1/2."""
    a_hat = (g.adjacency + sp.identity(g.n, format="csr", dtype=np.float64)).tocsr()
    a_hat.sort_indices()
    deg = np.asarray(a_hat.sum(axis=1)).ravel()
    rows = np.repeat(np.arange(g.n), np.diff(a_hat.indptr))
    out = a_hat.copy()
    # one product per entry, so (i, j) and (j, i) are bit-identical
    out.data = a_hat.data / np.sqrt(deg[rows] * deg[a_hat.indices])
    return out


# ---------------------------------------------------------------------------
# file formats


def _read_lines(path: Path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            yield lineno, raw.strip()


def read_features(path) -> np.ndarray:
    rows: list[list[float]] = []
    width = None
    for lineno, line in _read_lines(Path(path)):
        if not line or line.startswith("#"):
            continue
        try:
            row = [float(tok) for tok in line.split(",")]
        except ValueError as exc:
            raise GraphFormatError(f"{path}:{lineno}: malformed feature row ({exc})") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise GraphFormatError(
                f"{path}:{lineno}: expected {width} features, found {len(row)}"
            )
        rows.append(row)
    if not rows:
        raise GraphFormatError(f"{path}: no feature rows")
    feats = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(feats)):
        raise GraphFormatError(f"{path}: non-finite feature value")
    return feats


def read_edges(path, n: int) -> np.ndarray:
    edges = []
    for lineno, line in _read_lines(Path(path)):
        if not line or line.startswith("#"):
            continue
        toks = line.split()
        if len(toks) != 2:
            raise GraphFormatError(f"{path}:{lineno}: expected two node ids, got {line!r}")
        try:
            i, j = int(toks[0]), int(toks[1])
        except ValueError:
            raise GraphFormatError(f"{path}:{lineno}: non-integer node id in {line!r}") from None
        if i < 0 or j < 0:
            raise GraphFormatError(f"{path}:{lineno}: negative node id")
        if i >= n or j >= n:
            raise GraphFormatError(
                f"{path}:{lineno}: node id {max(i, j)} >= node count {n}"
            )
        edges.append((i, j))
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def read_labels(path) -> np.ndarray:
    labels = []
    for lineno, line in _read_lines(Path(path)):
        if not line or line.startswith("#"):
            continue
        try:
            labels.append(int(line))
        except ValueError:
            raise GraphFormatError(f"{path}:{lineno}: malformed label {line!r}") from None
        if labels[-1] < 0:
            raise GraphFormatError(f"{path}:{lineno}: negative label")
    return np.array(labels, dtype=np.int64)


def load_graph(edge_path, feature_path, label_path=None) -> Graph:
    """Read a graph from the edge / feature CSV / label text formats.

    The feature file's row count fixes the node count.
    """
    features = read_features(feature_path)
    n = features.shape[0]
    edges = read_edges(edge_path, n)
    labels = None
    if label_path is not None:
        labels = read_labels(label_path)
        if labels.shape[0] != n:
            raise GraphFormatError(
                f"{label_path}: {labels.shape[0]} labels but {n} feature rows"
            )
    return Graph.from_edges(n, edges, features, labels)


def save_graph(g: Graph, edge_path, feature_path, label_path=None) -> None:
    # repr() is the shortest round-tripping decimal form of a float64
    with open(edge_path, "w", encoding="utf-8", newline="\n") as fh:
        for i, j in g.edge_list():
            fh.write(f"{i} {j}\n")
    with open(feature_path, "w", encoding="utf-8", newline="\n") as fh:
        for row in g.features:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    if label_path is not None:
        if g.labels is None:
            raise ValueError("graph has no labels to save")
        with open(label_path, "w", encoding="utf-8", newline="\n") as fh:
            for y in g.labels:
                fh.write(f"{int(y)}\n")


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SbmSpec:
    block_sizes: Sequence[int]
    p_in: float
    p_out: float
    feature_dim: int
    feature_shift: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.block_sizes = [int(b) for b in self.block_sizes]
        if not self.block_sizes or min(self.block_sizes) < 1:
            raise ValueError("every block needs at least one node")
        if not 0.0 <= self.p_out <= self.p_in <= 1.0:
            raise ValueError("need 0 <= p_out <= p_in <= 1")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")


def generate_sbm(spec: SbmSpec, rng: Rng) -> Graph:
    """Planted-partition graph with class-shifted Gaussian features.

    Class ``c`` gets ``+feature_shift`` on feature columns
    ``[c*w, (c+1)*w)`` with ``w = feature_dim // num_classes``.
    """
    labels = np.repeat(np.arange(len(spec.block_sizes)), spec.block_sizes)
    n = labels.shape[0]
    rows, cols = [], []
    for i in range(n - 1):
        probs = np.where(labels[i + 1 :] == labels[i], spec.p_in, spec.p_out)
        hit = np.nonzero(rng.random(n - i - 1) < probs)[0] + i + 1
        rows.append(np.full(hit.shape[0], i))
        cols.append(hit)
    edges = (
        np.stack([np.concatenate(rows), np.concatenate(cols)], axis=1)
        if rows
        else np.zeros((0, 2), dtype=np.int64)
    )
    features = rng.standard_normal((n, spec.feature_dim))
    width = spec.feature_dim // len(spec.block_sizes)
    for c in range(len(spec.block_sizes)):
        features[labels == c, c * width : (c + 1) * width] += spec.feature_shift
    return Graph.from_edges(n, edges, features, labels)


# ---------------------------------------------------------------------------
# splits


@dataclass
class Splits:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "valid", "test"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            if arr.size == 0:
                raise ValueError(f"{name} split is empty")
            setattr(self, name, arr)
        union = np.concatenate([self.train, self.valid, self.test])
        if np.unique(union).size != union.size:
            raise ValueError("splits overlap")

    def masks(self, n: int):
        out = []
        for idx in (self.train, self.valid, self.test):
            m = np.zeros(n, dtype=bool)
            m[idx] = True
            out.append(m)
        return tuple(out)


def make_splits(n: int, ratios=(0.1, 0.1), seed: int = 0, rng: Optional[Rng] = None) -> Splits:
    """Random train/valid/test partition; train and valid sizes are floored."""
    r_train, r_valid = ratios
    if r_train <= 0 or r_valid <= 0 or r_train + r_valid >= 1:
        raise ValueError("ratios must be positive and sum to less than 1")
    if rng is None:
        rng = make_rng(seed, "splits")
    perm = rng.permutation(n)
    # small slack so 0.1 * 30 floors to 3, not 2
    n_train = math.floor(n * r_train + 1e-9)
    n_valid = math.floor(n * r_valid + 1e-9)
    if n_train == 0 or n_valid == 0 or n - n_train - n_valid == 0:
        raise ValueError(f"split of {n} nodes by {ratios} leaves an empty part")
    return Splits(
        train=np.sort(perm[:n_train]),
        valid=np.sort(perm[n_train : n_train + n_valid]),
        test=np.sort(perm[n_train + n_valid :]),
    )
