"""
Pinball training loss and interval evaluation metrics.

All evaluation functions operate on the kWh scale: callers inverse-transform
model outputs before scoring.

Winkler score for an interval [L, U] at nominal coverage 1 - alpha:

- L <= y <= U:  U - L
- y < L:        U - L + 2 (L - y) / alpha
- y > U:        U - L + 2 (y - U) / alpha
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Sequence, Tuple

import numpy as np

from ..autodiff.tensor import Tensor, mean, mul, relu, sub
from ..utils.errors import DataError, NumericalError, ShapeError

logger = logging.getLogger("ChargeCast")


# ==================== TYPES ====================

@dataclass(frozen=True)
class IntervalSpec:
    """Prediction interval built from two quantile levels."""

    lower: float = 0.05
    upper: float = 0.90

    def __post_init__(self):
        if not 0.0 < self.lower < self.upper < 1.0:
            raise ValueError(f"interval levels must satisfy 0 < lower < upper < 1, got {self.lower}, {self.upper}")

    @property
    def alpha(self) -> float:
        return 1.0 - (self.upper - self.lower)

    @property
    def nominal_coverage(self) -> float:
        return 100.0 * (self.upper - self.lower)


@dataclass(frozen=True)
class MetricsReport:
    picp: float
    pinball: float
    winkler: float
    nd: float
    quantile_crossings: int
    n_steps: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def format_table(self, title: str = "") -> str:
        """Aligned table using the column names of the usual results table."""
        headers = ["PICP", "PinBall Loss", "WS", "ND", "Crossings", "N"]
        cells = [
            f"{self.picp:.2f}",
            f"{self.pinball:.4f}",
            f"{self.winkler:.4f}",
            f"{self.nd:.4f}",
            str(self.quantile_crossings),
            str(self.n_steps),
        ]
        widths = [max(len(h), len(c)) for h, c in zip(headers, cells)]
        lines = []
        if title:
            lines.append(title)
        lines.append("  ".join(h.rjust(w) for h, w in zip(headers, widths)))
        lines.append("  ".join("-" * w for w in widths))
        lines.append("  ".join(c.rjust(w) for c, w in zip(cells, widths)))
        return "\n".join(lines)


# ==================== PINBALL ====================

def _check_level(q: float) -> None:
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {q}")


def pinball_loss(q: float, y, y_hat):
    """max(q * e, (q - 1) * e) with e = y - y_hat; scalar or elementwise."""
    _check_level(q)
    error = np.asarray(y, dtype=np.float64) - np.asarray(y_hat, dtype=np.float64)
    loss = np.maximum(q * error, (q - 1.0) * error)
    return float(loss) if loss.ndim == 0 else loss


def mean_pinball(actuals: np.ndarray, forecasts: np.ndarray, quantiles: Sequence[float]) -> float:
    """
    Mean pinball over every horizon step and quantile level.

    Args:
        actuals: (..., horizon)
        forecasts: (..., horizon, |Q|)
        quantiles: levels matching the last forecast axis
    """
    actuals = np.asarray(actuals, dtype=np.float64)
    forecasts = np.asarray(forecasts, dtype=np.float64)
    if forecasts.shape != actuals.shape + (len(quantiles),):
        raise ShapeError(f"forecasts {forecasts.shape} do not match actuals {actuals.shape} x {len(quantiles)} quantiles")
    losses = [pinball_loss(q, actuals, forecasts[..., i]) for i, q in enumerate(quantiles)]
    return float(np.mean(np.stack(losses, axis=-1)))


def pinball_loss_tensor(predictions: Tensor, targets: np.ndarray, quantiles: Sequence[float]) -> Tensor:
    """
    Differentiable mean pinball over batch, horizon and all quantiles jointly.

    Uses q * relu(e) + (1 - q) * relu(-e), which equals max(q e, (q - 1) e).
    """
    for q in quantiles:
        _check_level(q)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape + (len(quantiles),):
        raise ShapeError(
            f"predictions {predictions.shape} do not match targets {targets.shape} x {len(quantiles)} quantiles"
        )
    levels = np.asarray(quantiles, dtype=np.float64)
    error = sub(Tensor(targets[..., None]), predictions)
    loss = mul(relu(error), levels) + mul(relu(-error), 1.0 - levels)
    return mean(loss)


# ==================== INTERVAL METRICS ====================

def _aligned(*series: Sequence[float]) -> Tuple[np.ndarray, ...]:
    arrays = tuple(np.asarray(s, dtype=np.float64).ravel() for s in series)
    lengths = {a.size for a in arrays}
    if len(lengths) != 1:
        raise ShapeError(f"series lengths differ: {[a.size for a in arrays]}")
    if arrays[0].size == 0:
        raise DataError("cannot score empty series")
    return arrays


def picp(actuals, lower, upper) -> float:
    """Percentage of actuals inside the closed interval [lower, upper]."""
    y, lo, hi = _aligned(actuals, lower, upper)
    covered = (lo <= y) & (y <= hi)
    return 100.0 * float(np.sum(covered)) / y.size


def winkler(actuals, lower, upper, alpha: float = 0.15, reduction: str = "mean") -> float:
    """Winkler interval score; `reduction` is 'mean' (default) or 'sum'."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    y, lo, hi = _aligned(actuals, lower, upper)
    if np.any(hi < lo):
        raise ValueError(
            f"{int(np.sum(hi < lo))} crossed intervals (upper < lower); sort quantiles before scoring"
        )
    width = hi - lo
    penalty = np.where(y < lo, 2.0 * (lo - y) / alpha, 0.0) + np.where(y > hi, 2.0 * (y - hi) / alpha, 0.0)
    scores = width + penalty
    if reduction == "mean":
        return float(np.mean(scores))
    if reduction == "sum":
        return float(np.sum(scores))
    raise ValueError(f"reduction must be 'mean' or 'sum', got {reduction}")


def normalized_deviation(actuals, point_forecasts) -> float:
    """sum |y - y_hat| / sum |y|."""
    y, y_hat = _aligned(actuals, point_forecasts)
    denominator = float(np.sum(np.abs(y)))
    if denominator == 0.0:
        raise NumericalError("normalized deviation is undefined: all actuals are zero (division by zero)")
    return float(np.sum(np.abs(y - y_hat))) / denominator


# ==================== REPORT ====================

def evaluate_forecasts(
    actuals: np.ndarray,
    forecasts: np.ndarray,
    quantiles: Sequence[float],
    interval: IntervalSpec = IntervalSpec(),
    sort: bool = False,
) -> MetricsReport:
    """
    Score kWh-scale quantile forecasts.

    Args:
        actuals: (N, horizon) observed kWh
        forecasts: (N, horizon, |Q|) predicted kWh
        quantiles: levels of the last forecast axis; must contain the interval levels and 0.5
        interval: levels forming the PICP/Winkler interval
        sort: repair quantile crossing before scoring

    Returns:
        MetricsReport over all N x horizon steps
    """
    quantiles = [float(q) for q in quantiles]
    actuals = np.asarray(actuals, dtype=np.float64)
    forecasts = np.asarray(forecasts, dtype=np.float64)
    if forecasts.shape != actuals.shape + (len(quantiles),):
        raise ShapeError(f"forecasts {forecasts.shape} do not match actuals {actuals.shape} x {len(quantiles)} quantiles")
    for level in (interval.lower, interval.upper, 0.5):
        if level not in quantiles:
            raise ValueError(f"quantile level {level} is required for evaluation but missing from {quantiles}")

    crossings = int(np.sum(np.diff(forecasts, axis=-1) < 0))
    if sort:
        forecasts = np.sort(forecasts, axis=-1)

    lower = forecasts[..., quantiles.index(interval.lower)]
    upper = forecasts[..., quantiles.index(interval.upper)]
    crossed = upper < lower
    if np.any(crossed):
        logger.warning(
            f"⚠️ {int(np.sum(crossed))} crossed intervals without --sort-quantiles; "
            f"scoring the envelope of the two quantiles"
        )
        lower, upper = np.minimum(lower, upper), np.maximum(lower, upper)

    median = forecasts[..., quantiles.index(0.5)]
    return MetricsReport(
        picp=picp(actuals, lower, upper),
        pinball=mean_pinball(actuals, forecasts, quantiles),
        winkler=winkler(actuals, lower, upper, alpha=interval.alpha),
        nd=normalized_deviation(actuals, median),
        quantile_crossings=crossings,
        n_steps=int(actuals.size),
    )
