"""Training objective and loop.

The objective pulls each node's prediction ``z_i`` toward the target
embeddings of its positives:

    L = -(1/N) * sum_i sum_{j in P_i} cos(z_i, h_j)

with target embeddings treated as constants. The symmetrized form adds the
reversed pairs ``cos(z_j, h_i)``.
"""

from __future__ import annotations

import dataclasses
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, NumericalError
from .graph import Graph, normalize_adjacency
from .model import (
    EVAL,
    TRAIN,
    AdamState,
    DualNetwork,
    Tape,
    adam_step,
    backward,
    ema_update,
    encoder_forward,
    predictor_forward,
)
from .numerics import DEFAULT_EPS, CsrMatrix, make_rng, row_l2_normalize
from .positives import NeighborSets, discover_positives, positives_from_lists

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    embedding_dim: int = 64
    layers: int = 1
    predictor_hidden: int = 0  # 0 -> 2 * embedding_dim
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    epochs: int = 200
    tau: float = 0.9
    k: int = 4
    clusters: int = 100
    kmeans_runs: int = 5
    kmeans_iters: int = 20
    refresh_period: int = 1  # 0 -> discover positives once, never refresh
    symmetrize: bool = True
    normalize_positives: bool = False
    batch_norm: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("embedding_dim", "layers", "k", "clusters", "kmeans_runs", "kmeans_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0 or self.refresh_period < 0 or self.predictor_hidden < 0:
            raise ValueError("epochs, refresh_period and predictor_hidden must be >= 0")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must be in [0, 1]")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")

    @property
    def hidden(self) -> int:
        return self.predictor_hidden or 2 * self.embedding_dim

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# objective


def _as_pair_matrix(positives, n: int) -> CsrMatrix:
    p = positives.positives if isinstance(positives, NeighborSets) else positives
    if not sp.issparse(p):
        p = positives_from_lists(p, n)
    p = sp.csr_matrix(p, dtype=np.float64)
    if p.shape != (n, n):
        raise DimensionError(f"positive matrix {p.shape} does not match {n} nodes")
    return p


def _row_normalized(p: CsrMatrix) -> CsrMatrix:
    sizes = np.diff(p.indptr).astype(np.float64)
    scale = np.divide(1.0, sizes, out=np.zeros_like(sizes), where=sizes > 0)
    return sp.diags(scale) @ p


def _cosine_objective(z: np.ndarray, h_target: np.ndarray, pairs: CsrMatrix) -> Tuple[float, np.ndarray]:
    """-(1/N) sum_ij pairs_ij cos(z_i, h_j) and its gradient in z."""
    n = z.shape[0]
    norms = np.sqrt(np.einsum("ij,ij->i", z, z))
    dead = norms < DEFAULT_EPS
    if dead.any():
        warnings.warn(f"{int(dead.sum())} prediction rows have zero norm; they contribute 0", RuntimeWarning)
    z_hat = row_l2_normalize(z)
    pulled = np.asarray(pairs @ row_l2_normalize(h_target))
    loss = -float(np.einsum("ij,ij->", z_hat, pulled)) / n
    g_hat = -pulled / n
    proj = np.einsum("ij,ij->i", z_hat, g_hat)
    safe = np.where(dead, 1.0, norms)
    grad = (g_hat - z_hat * proj[:, None]) / safe[:, None]
    grad[dead] = 0.0
    return loss, grad


def _validate(z, h_target):
    z = np.asarray(z, dtype=np.float64)
    h_target = np.asarray(h_target, dtype=np.float64)
    if z.shape != h_target.shape or z.ndim != 2:
        raise DimensionError(f"z {z.shape} vs target {h_target.shape}")
    return z, h_target


def afgrl_loss(z_online, h_target, positives, normalize_positives: bool = False):
    """Loss and gradient w.r.t. ``z_online``; inner sums are not averaged by default."""
    z, h = _validate(z_online, h_target)
    pairs = _as_pair_matrix(positives, z.shape[0])
    if normalize_positives:
        pairs = _row_normalized(pairs)
    return _cosine_objective(z, h, pairs)


def symmetrized_loss(z_online, h_target, positives, normalize_positives: bool = False):
    """Loss over pairs (i, j) plus reversed pairs (j, i) for j in P_i."""
    z, h = _validate(z_online, h_target)
    pairs = _as_pair_matrix(positives, z.shape[0])
    if normalize_positives:
        pairs = _row_normalized(pairs)
    return _cosine_objective(z, h, (pairs + pairs.T).tocsr())


# ---------------------------------------------------------------------------
# loop


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    mean_positives: float
    knn_local_ratio: float

    CSV_HEADER = "epoch,loss,mean_positives,knn_local_ratio"

    def csv_row(self) -> str:
        return f"{self.epoch},{self.loss!r},{self.mean_positives!r},{self.knn_local_ratio!r}"


def target_forward(net: DualNetwork, a_norm: CsrMatrix, x: np.ndarray) -> np.ndarray:
    """Target embeddings: batch-statistics pass, no tape, running stats untouched."""
    return encoder_forward(net.target, a_norm, x, TRAIN, tape=None, update_stats=False)


def train_epoch(
    net: DualNetwork,
    graph: Graph,
    a_norm: CsrMatrix,
    adam: AdamState,
    config: TrainConfig,
    epoch: int,
    cached_positives: Optional[NeighborSets] = None,
    jobs: int = 1,
) -> Tuple[EpochRecord, NeighborSets]:
    """One full-graph update: forward both networks, loss, backward, Adam, EMA.

    Positives are rediscovered from this epoch's embeddings when
    ``cached_positives`` is None.
    """
    tape = Tape()
    h_online = encoder_forward(net.online, a_norm, graph.features, TRAIN, tape)
    z = predictor_forward(net.predictor, h_online, TRAIN, tape)
    h_target = target_forward(net, a_norm, graph.features)

    positives = cached_positives
    if positives is None:
        positives = discover_positives(
            h_online, h_target, graph.adjacency, config.k, config.clusters,
            config.kmeans_runs, config.kmeans_iters, config.seed, jobs, stream=(epoch,),
        )

    objective = symmetrized_loss if config.symmetrize else afgrl_loss
    loss, grad = objective(z, h_target, positives, config.normalize_positives)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NumericalError(f"non-finite loss at epoch {epoch}: {loss}")

    grads = backward(tape, grad)
    adam_step(adam, net.online_parameters(), grads)
    ema_update(net)
    record = EpochRecord(epoch, loss, positives.mean_positives, positives.knn_local_ratio)
    return record, positives


@dataclass
class TrainResult:
    embeddings: np.ndarray
    metrics: List[EpochRecord]
    net: DualNetwork
    a_norm: CsrMatrix = field(repr=False)


def init_network(config: TrainConfig, in_dim: int) -> DualNetwork:
    rng = make_rng(config.seed, "init")
    return DualNetwork.init(
        in_dim, config.embedding_dim, config.hidden, config.layers, config.tau, rng,
        batch_norm=config.batch_norm,
    )


def embed(net: DualNetwork, a_norm: CsrMatrix, x: np.ndarray) -> np.ndarray:
    """Eval-mode online embeddings used for downstream tasks."""
    return encoder_forward(net.online, a_norm, x, EVAL)


def train(
    config: TrainConfig,
    graph: Graph,
    jobs: int = 1,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainResult:
    if config.k >= graph.n:
        raise ValueError(f"k={config.k} must be smaller than the node count {graph.n}")
    if config.clusters > graph.n:
        raise ValueError(f"clusters={config.clusters} exceeds the node count {graph.n}")
    a_norm = normalize_adjacency(graph)
    net = init_network(config, graph.num_features)
    adam = AdamState(lr=config.learning_rate, weight_decay=config.weight_decay)
    metrics: List[EpochRecord] = []
    positives = None
    for epoch in range(config.epochs):
        refresh = positives is None or (
            config.refresh_period > 0 and epoch % config.refresh_period == 0
        )
        record, positives = train_epoch(
            net, graph, a_norm, adam, config, epoch,
            cached_positives=None if refresh else positives, jobs=jobs,
        )
        metrics.append(record)
        log.debug("epoch %d loss %.6f |P| %.2f", epoch, record.loss, record.mean_positives)
        if on_epoch is not None:
            on_epoch(record)
    return TrainResult(embed(net, a_norm, graph.features), metrics, net, a_norm)
