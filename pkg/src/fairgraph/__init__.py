"""Fair node classification on attributed graphs under social homophily."""

from .autodiff import Tensor, grad_check
from .graph import Graph, social_homophily, graph_density, average_degree, mean_aggregate
from .synthgen import SynthConfig, generate
from .data_io import DatasetSpec, SplitMasks, load_graph, save_graph, split
from .model import EagnnModel, ModelConfig, spectral_norm
from .trainer import TrainConfig, TrainHistory, train_eagnn, train_baseline, evaluate
from .estimator import GNNClassifier, EAGNNClassifier

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "grad_check",
    "Graph",
    "social_homophily",
    "graph_density",
    "average_degree",
    "mean_aggregate",
    "SynthConfig",
    "generate",
    "DatasetSpec",
    "SplitMasks",
    "load_graph",
    "save_graph",
    "split",
    "EagnnModel",
    "ModelConfig",
    "spectral_norm",
    "TrainConfig",
    "TrainHistory",
    "train_eagnn",
    "train_baseline",
    "evaluate",
    "GNNClassifier",
    "EAGNNClassifier",
]
