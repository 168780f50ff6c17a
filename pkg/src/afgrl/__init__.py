"""Augmentation-free, negative-free self-supervised node embeddings."""

from .graph import Graph, SbmSpec, Splits, generate_sbm, load_graph, make_splits, normalize_adjacency, save_graph
from .training import TrainConfig, TrainResult, afgrl_loss, symmetrized_loss, train

__version__ = "0.1.0"

__all__ = [
    "Graph",
    "SbmSpec",
    "Splits",
    "TrainConfig",
    "TrainResult",
    "afgrl_loss",
    "generate_sbm",
    "load_graph",
    "make_splits",
    "normalize_adjacency",
    "save_graph",
    "symmetrized_loss",
    "train",
]
