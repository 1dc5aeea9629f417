"""MQ-TCN network, forecasts and checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .tcn import QuantileForecast, TcnConfig, TcnModel, receptive_field, sort_quantiles

__all__ = [
    "TcnConfig",
    "TcnModel",
    "QuantileForecast",
    "receptive_field",
    "sort_quantiles",
    "save_checkpoint",
    "load_checkpoint",
]
