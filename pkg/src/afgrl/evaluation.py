"""Downstream evaluation of frozen node embeddings."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .errors import DimensionError
from .graph import Splits, make_splits
from .numerics import CsrMatrix, make_rng
from .positives import kmeans, knn_cross

DEFAULT_REG_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)


# ---------------------------------------------------------------------------
# linear probe


@dataclass
class ProbeResult:
    valid_accuracy: float
    test_accuracy: float
    reg: float
    train_accuracy: float = float("nan")


def _standardize(h: np.ndarray, train: np.ndarray) -> np.ndarray:
    mu = h[train].mean(axis=0)
    sd = h[train].std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    return (h - mu) / sd


def fit_logistic_regression(x, y, n_classes, reg, max_iter=2000, tol=1e-6):
    """Multinomial logistic regression, mean cross-entropy + reg/2 * ||W||^2.

    The bias is not penalized. Solved full-batch with L-BFGS until the
    projected gradient norm drops below ``tol``.
    """
    n, d = x.shape
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0

    def objective(theta):
        w = theta[: d * n_classes].reshape(d, n_classes)
        b = theta[d * n_classes :]
        logits = x @ w + b
        lse = logsumexp(logits, axis=1, keepdims=True)
        loss = -np.sum(onehot * (logits - lse)) / n + 0.5 * reg * np.sum(w * w)
        resid = (np.exp(logits - lse) - onehot) / n
        gw = x.T @ resid + reg * w
        gb = resid.sum(axis=0)
        return loss, np.concatenate([gw.ravel(), gb])

    theta0 = np.zeros(d * n_classes + n_classes)
    res = minimize(
        objective, theta0, jac=True, method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": tol, "ftol": 0.0},
    )
    w = res.x[: d * n_classes].reshape(d, n_classes)
    return w, res.x[d * n_classes :]


def _accuracy(x, y, w, b) -> float:
    if y.size == 0:
        return float("nan")
    return float(np.mean(np.argmax(x @ w + b, axis=1) == y))


def linear_probe(h, labels, splits: Splits, reg_grid: Sequence[float] = DEFAULT_REG_GRID) -> ProbeResult:
    """Fit one probe per regularization strength on the train split, pick the
    best by validation accuracy (first wins ties), report its test accuracy."""
    h = np.asarray(h, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if h.shape[0] != labels.shape[0]:
        raise DimensionError("embeddings and labels disagree on node count")
    missing = np.setdiff1d(np.unique(labels), np.unique(labels[splits.train]))
    if missing.size:
        raise ValueError(f"classes {missing.tolist()} are absent from the train split")
    n_classes = int(labels.max()) + 1
    x = _standardize(h, splits.train)
    best: Optional[ProbeResult] = None
    for reg in reg_grid:
        w, b = fit_logistic_regression(x[splits.train], labels[splits.train], n_classes, reg)
        res = ProbeResult(
            valid_accuracy=_accuracy(x[splits.valid], labels[splits.valid], w, b),
            test_accuracy=_accuracy(x[splits.test], labels[splits.test], w, b),
            reg=float(reg),
            train_accuracy=_accuracy(x[splits.train], labels[splits.train], w, b),
        )
        if best is None or res.valid_accuracy > best.valid_accuracy:
            best = res
    return best


@dataclass
class ClassificationSummary:
    mean: float
    std: float
    accuracies: List[float] = field(default_factory=list)


def classification_protocol(
    h, labels, n_splits: int = 20, seed: int = 0, ratios=(0.1, 0.1),
    reg_grid: Sequence[float] = DEFAULT_REG_GRID,
) -> ClassificationSummary:
    """Linear-probe test accuracy averaged over ``n_splits`` random splits."""
    accs = []
    for s in range(n_splits):
        splits = make_splits(len(labels), ratios, rng=make_rng(seed, "splits", s))
        accs.append(linear_probe(h, labels, splits, reg_grid).test_accuracy)
    return ClassificationSummary(float(np.mean(accs)), float(np.std(accs)), accs)


# ---------------------------------------------------------------------------
# clustering metrics


def _contingency(pred, truth) -> np.ndarray:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise DimensionError("pred and truth must be 1-D and of equal length")
    if pred.size == 0:
        raise ValueError("empty partition")
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(truth, return_inverse=True)
    table = np.zeros((p.max() + 1, t.max() + 1))
    np.add.at(table, (p, t), 1.0)
    return table


def _entropy(counts: np.ndarray) -> float:
    counts = counts[counts > 0]
    p = counts / counts.sum()
    return float(-np.sum(p * np.log(p)))


def _mutual_information(table: np.ndarray) -> float:
    n = table.sum()
    pi = table.sum(axis=1, keepdims=True)
    pj = table.sum(axis=0, keepdims=True)
    nz = table > 0
    return float(np.sum(table[nz] / n * np.log(table[nz] * n / (pi @ pj)[nz])))


def nmi(pred, truth) -> float:
    """Mutual information over the arithmetic mean of the two entropies."""
    table = _contingency(pred, truth)
    h_pred = _entropy(table.sum(axis=1))
    h_truth = _entropy(table.sum(axis=0))
    if h_pred == 0.0 and h_truth == 0.0:
        return 1.0
    score = _mutual_information(table) / (0.5 * (h_pred + h_truth))
    return float(min(max(score, 0.0), 1.0))


def homogeneity(pred, truth) -> float:
    """1 - H(truth | pred) / H(truth); 1 when truth has a single class."""
    table = _contingency(pred, truth)
    h_truth = _entropy(table.sum(axis=0))
    if h_truth == 0.0:
        return 1.0
    n = table.sum()
    h_cond = 0.0
    for row in table:
        h_cond += row.sum() / n * _entropy(row)
    return float(min(max(1.0 - h_cond / h_truth, 0.0), 1.0))


@dataclass
class ClusterScore:
    nmi: float
    homogeneity: float


def kmeans_eval(h, labels, n_clusters: Optional[int] = None, runs: int = 10, seed: int = 0,
                max_iters: int = 100) -> ClusterScore:
    """Best-inertia K-means (over ``runs`` seeds) scored against the labels."""
    labels = np.asarray(labels, dtype=np.int64)
    n_clusters = n_clusters or int(np.unique(labels).size)
    best = None
    for r in range(runs):
        fit = kmeans(h, n_clusters, max_iters, make_rng(seed + r, "kmeans-eval"))
        if best is None or fit.inertia < best.inertia:
            best = fit
    return ClusterScore(nmi(best.labels, labels), homogeneity(best.labels, labels))


# ---------------------------------------------------------------------------
# neighbourhood label agreement


def sim_at_n(h, labels, n: int) -> float:
    """Mean share of each node's ``n`` cosine nearest neighbours with its label."""
    labels = np.asarray(labels)
    if n >= labels.shape[0]:
        raise ValueError(f"n={n} must be smaller than the node count {labels.shape[0]}")
    nbrs = knn_cross(h, h, n)
    return float(np.mean(labels[nbrs] == labels[:, None]))


@dataclass
class RatioCurve:
    ks: List[int]
    knn: List[float]
    adjacency: float
    local: List[float]
    local_skipped: List[int]
    adjacency_skipped: int

    def rows(self):
        for i, k in enumerate(self.ks):
            yield k, self.knn[i], self.adjacency, self.local[i], self.local_skipped[i]


def correct_ratio_curve(h, labels, adjacency: CsrMatrix, ks: Sequence[int]) -> RatioCurve:
    """Same-label share of k-NN sets, graph neighbours, and their intersection.

    Nodes whose set is empty (isolated nodes, empty intersections) are left
    out of the mean; how many were left out is reported alongside.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    same = labels[adjacency.indices] == np.repeat(labels, np.diff(adjacency.indptr))
    deg = np.diff(adjacency.indptr)
    has_nbrs = deg > 0
    per_node = np.add.reduceat(same.astype(np.float64), adjacency.indptr[:-1][has_nbrs]) if same.size else np.zeros(0)
    adj_ratio = float(np.mean(per_node / deg[has_nbrs])) if has_nbrs.any() else float("nan")

    knn_ratios, local_ratios, skipped = [], [], []
    for k in ks:
        nbrs = knn_cross(h, h, int(k))
        match = labels[nbrs] == labels[:, None]
        knn_ratios.append(float(match.mean()))
        rows = np.repeat(np.arange(n), nbrs.shape[1])
        is_adj = (np.asarray(adjacency[rows, nbrs.ravel()]).ravel() != 0).reshape(nbrs.shape)
        sizes = is_adj.sum(axis=1)
        ok = sizes > 0
        skipped.append(int((~ok).sum()))
        if ok.any():
            local_ratios.append(float(np.mean((match & is_adj).sum(axis=1)[ok] / sizes[ok])))
        else:
            local_ratios.append(float("nan"))
    return RatioCurve(list(map(int, ks)), knn_ratios, adj_ratio, local_ratios, skipped,
                      int((~has_nbrs).sum()))
