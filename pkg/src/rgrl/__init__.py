"""Relational self-supervised node representation learning on graphs."""
from .graph import AugmentationConfig, SparseGraph, augment, build_graph, normalized_transition
from .kernels import BACKEND
from .trainer import MultiplexTrainer, TrainConfig, Trainer

__version__ = "0.1.0"

__all__ = [
    "AugmentationConfig", "BACKEND", "MultiplexTrainer", "SparseGraph", "TrainConfig", "Trainer",
    "augment", "build_graph", "normalized_transition",
]
