"""Two-view graph fusion classifier for multimodal patient data."""

from .data import MultimodalDataset, kfold_split, synth_generate
from .graph import Graph, add_self_loops, knn_graph
from .metrics import MetricsReport, evaluate, roc_auc
from .train import TrainConfig, run_cv, train_one_fold

__version__ = "0.1.0"

__all__ = [
    "Graph",
    "MetricsReport",
    "MultimodalDataset",
    "TrainConfig",
    "add_self_loops",
    "evaluate",
    "kfold_split",
    "knn_graph",
    "roc_auc",
    "run_cv",
    "synth_generate",
    "train_one_fold",
]
