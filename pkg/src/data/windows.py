"""
Lookback/horizon windows and blocked time-series splits.

A window starting at row s reads features and past target on rows
[s, s + p) and predicts rows [s + p, s + p + δ). Its origin is the timestamp
of the last lookback row, so step i of the horizon falls on origin + i hours.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..utils.errors import DataError
from .pipeline import ModelInputs

logger = logging.getLogger("ChargeCast")


@dataclass(frozen=True)
class WindowSample:
    features: np.ndarray
    categorical: np.ndarray
    past_target: np.ndarray
    horizon_target: np.ndarray
    horizon_kwh: np.ndarray
    origin: pd.Timestamp
    start: int

    @property
    def lookback(self) -> int:
        return len(self.past_target)

    @property
    def horizon(self) -> int:
        return len(self.horizon_target)

    @property
    def horizon_start(self) -> int:
        return self.start + self.lookback


def _window(inputs: ModelInputs, start: int, p: int, delta: int) -> WindowSample:
    stop = start + p
    return WindowSample(
        features=inputs.features[start:stop],
        categorical=inputs.categorical[start:stop],
        past_target=np.asarray(inputs.target[start:stop]),
        horizon_target=np.asarray(inputs.target[stop:stop + delta]),
        horizon_kwh=np.asarray(inputs.target_kwh[stop:stop + delta]),
        origin=inputs.timestamps[stop - 1],
        start=start,
    )


def window_count(length: int, p: int, delta: int, stride: int = 1) -> int:
    if length < p + delta:
        return 0
    return (length - p - delta) // stride + 1


def make_windows(
    inputs: ModelInputs,
    p: int,
    delta: int,
    stride: int = 1,
    start: int = 0,
    stop: Optional[int] = None,
) -> List[WindowSample]:
    """
    Every window lying entirely inside rows [start, stop).

    Raises:
        DataError: if the range is shorter than p + δ
    """
    if p < 1 or delta < 1 or stride < 1:
        raise ValueError(f"lookback, horizon and stride must be >= 1, got {p}, {delta}, {stride}")
    stop = len(inputs) if stop is None else stop
    length = stop - start
    if length < p + delta:
        raise DataError(
            f"range of {length} hours is too short: lookback {p} + horizon {delta} needs at least {p + delta}"
        )
    return [_window(inputs, s, p, delta) for s in range(start, stop - p - delta + 1, stride)]


def make_test_windows(inputs: ModelInputs, p: int, delta: int, test_start: int, stride: Optional[int] = None) -> List[WindowSample]:
    """
    Windows whose horizons tile the test tail from `test_start`.

    Lookbacks may reach back before `test_start`; horizons never do.
    """
    stride = delta if stride is None else stride
    if test_start < p:
        raise DataError(f"test range starts at hour {test_start}, before a full lookback of {p} hours is available")
    if len(inputs) - test_start < delta:
        raise DataError(f"test range of {len(inputs) - test_start} hours is shorter than the horizon {delta}")
    windows = [_window(inputs, h - p, p, delta) for h in range(test_start, len(inputs) - delta + 1, stride)]
    covered = windows[-1].horizon_start + delta
    if covered < len(inputs):
        logger.debug(f"Last {len(inputs) - covered} test hours do not fill a whole horizon and are not scored")
    return windows


def stack_windows(windows: Sequence[WindowSample]) -> Dict[str, np.ndarray]:
    """Batch arrays: features (B,p,d), categorical (B,p,c), past (B,p), target (B,δ), kwh (B,δ)."""
    if not windows:
        raise DataError("cannot stack an empty list of windows")
    return {
        "features": np.stack([w.features for w in windows]),
        "categorical": np.stack([w.categorical for w in windows]),
        "past_target": np.stack([w.past_target for w in windows]),
        "horizon_target": np.stack([w.horizon_target for w in windows]),
        "horizon_kwh": np.stack([w.horizon_kwh for w in windows]),
    }


# ==================== SPLITS ====================

@dataclass(frozen=True)
class Fold:
    index: int
    train: Tuple[int, int]
    validation: Tuple[int, int]


@dataclass(frozen=True)
class SplitPlan:
    """Row ranges are half-open [start, stop)."""

    length: int
    test: Tuple[int, int]
    folds: List[Fold] = field(default_factory=list)

    @property
    def test_start(self) -> int:
        return self.test[0]

    @property
    def fold_count(self) -> int:
        return len(self.folds)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "length": self.length,
            "test": list(self.test),
            "folds": [
                {"index": f.index, "train": list(f.train), "validation": list(f.validation)} for f in self.folds
            ],
        }


def plan_splits(length: int, test_frac: float = 0.10, folds: int = 5, min_segment: int = 1) -> SplitPlan:
    """
    Blocked, expanding-origin folds over the non-test rows.

    The last `test_frac` of rows form the test range. Fold f spans
    [0, N*f/folds) of the remaining N rows, training on its first 80 % and
    validating on the rest.

    Args:
        length: Number of hourly rows T
        test_frac: Fraction of rows held out at the end
        folds: Number of folds
        min_segment: Minimum rows per train/validation/test segment (p + δ to fit one window)

    Raises:
        DataError: if any segment is shorter than `min_segment`
    """
    if not 0.0 < test_frac < 1.0:
        raise ValueError(f"test_frac must lie in (0, 1), got {test_frac}")
    if folds < 1:
        raise ValueError("folds must be >= 1")
    n_test = max(1, int(np.floor(length * test_frac + 0.5)))
    n_rest = length - n_test
    if n_test < min_segment or n_rest < 1:
        raise DataError(
            f"series of {length} hours leaves a {n_test}-hour test range; at least {min_segment} hours are required"
        )

    plan_folds: List[Fold] = []
    for f in range(1, folds + 1):
        end = n_rest * f // folds
        split = end * 4 // 5
        train_len, val_len = split, end - split
        if min(train_len, val_len) < max(min_segment, 1):
            needed = int(np.ceil(max(min_segment, 1) * 5 * folds / (1 - test_frac)))
            raise DataError(
                f"fold {f} has {train_len} training and {val_len} validation hours; each needs at least "
                f"{max(min_segment, 1)} (roughly {needed} hours of data for {folds} folds)"
            )
        plan_folds.append(Fold(f - 1, (0, split), (split, end)))
    return SplitPlan(length, (n_rest, length), plan_folds)
