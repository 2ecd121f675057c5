"""Confounder-aware gene expression prediction from short sequence windows
and per-base epigenomic signal tracks, with backdoor-adjusted training."""

from .autodiff import Parameter, Tensor, backward
from .data import GeneRecord, SplitSpec, encode_sequence, load_dataset, save_dataset, split, window_around_tss
from .evaluation import MetricTriple, metrics
from .gradcheck import finite_diff_gradient
from .losses import LossBreakdown, huber, total_loss, uniform_loss
from .model import ModelConfig, PrismModel
from .optim import Adam, LrSchedule, lr_at
from .synth import ScmConfig, generate, remove_tracks
from .training import TrainConfig, TrainState, train

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "GeneRecord",
    "LossBreakdown",
    "LrSchedule",
    "MetricTriple",
    "ModelConfig",
    "Parameter",
    "PrismModel",
    "ScmConfig",
    "SplitSpec",
    "Tensor",
    "TrainConfig",
    "TrainState",
    "backward",
    "encode_sequence",
    "finite_diff_gradient",
    "generate",
    "huber",
    "load_dataset",
    "lr_at",
    "metrics",
    "remove_tracks",
    "save_dataset",
    "split",
    "total_loss",
    "train",
    "uniform_loss",
    "window_around_tss",
]
