"""Decoder-only Transformer forecasting with Persistence Initialization."""
from .data import FREQUENCIES, SeriesRecord, build_split, get_frequency, load_m4_csv, sample_batch
from .model import PIConfig, PIModel, forecast, load_checkpoint, pi_forward, save_checkpoint
from .tensor import Tensor, no_grad
from .training import TrainConfig, train
from .transformer import TransformerConfig

__all__ = [
    "FREQUENCIES",
    "PIConfig",
    "PIModel",
    "SeriesRecord",
    "Tensor",
    "TrainConfig",
    "TransformerConfig",
    "build_split",
    "forecast",
    "get_frequency",
    "load_checkpoint",
    "load_m4_csv",
    "no_grad",
    "pi_forward",
    "sample_batch",
    "save_checkpoint",
    "train",
]
