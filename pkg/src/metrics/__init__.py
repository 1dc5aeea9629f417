"""Pinball loss and probabilistic evaluation metrics."""

from .evaluation import (
    IntervalSpec,
    MetricsReport,
    evaluate_forecasts,
    mean_pinball,
    normalized_deviation,
    picp,
    pinball_loss,
    pinball_loss_tensor,
    winkler,
)

__all__ = [
    "IntervalSpec",
    "MetricsReport",
    "evaluate_forecasts",
    "mean_pinball",
    "normalized_deviation",
    "picp",
    "pinball_loss",
    "pinball_loss_tensor",
    "winkler",
]
