"""Graph-based alignment and uniformity embeddings for implicit-feedback recommendation."""

__version__ = "0.1.0"

from .dataset import InteractionDataset, RawInteraction, load_interactions, split_dataset
from .evaluator import RankingMetrics, evaluate
from .graph import BipartiteGraph, build_graph, khop_edge_count
from .loss import Batch, LossConfig, LossReport, backward, total_loss
from .model import EmbeddingModel, LayerStack, forward, init_model
from .trainer import TrainConfig, TrainLog, train

__all__ = [
    "Batch",
    "BipartiteGraph",
    "EmbeddingModel",
    "InteractionDataset",
    "LayerStack",
    "LossConfig",
    "LossReport",
    "RankingMetrics",
    "RawInteraction",
    "TrainConfig",
    "TrainLog",
    "backward",
    "build_graph",
    "evaluate",
    "forward",
    "init_model",
    "khop_edge_count",
    "load_interactions",
    "split_dataset",
    "total_loss",
    "train",
]
