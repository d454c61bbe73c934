"""Self-supervised ensembles of independent sub-networks with a diversity hinge loss."""

from .autodiff import Graph, backward, forward, gradcheck
from .data import AugmentConfig, Dataset
from .losses import LossBreakdown, LossConfig, diversity_grad_oracle, total_loss
from .model import EmbeddingSet, ModelConfig, ModelParams
from .tensor import Tensor
from .train import TrainConfig, TrainTrace, linear_probe, pretrain

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "Dataset",
    "EmbeddingSet",
    "Graph",
    "LossBreakdown",
    "LossConfig",
    "ModelConfig",
    "ModelParams",
    "Tensor",
    "TrainConfig",
    "TrainTrace",
    "backward",
    "diversity_grad_oracle",
    "forward",
    "gradcheck",
    "linear_probe",
    "pretrain",
    "total_loss",
]
