"""Logit margins and embedding regularisers for long-tailed classification."""

from .data import ClassGaussianSpec, Dataset
from .losses import LossSpec, elm_objective
from .scorer import ScorerParams, forward, init_params
from .trainer import TrainConfig, train

__all__ = ["ClassGaussianSpec", "Dataset", "LossSpec", "ScorerParams", "TrainConfig", "elm_objective",
           "forward", "init_params", "train"]
__version__ = "0.1.0"
