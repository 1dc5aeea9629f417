"""
Dynamic time warping for source-site selection.

Distances use squared pointwise cost over z-normalized hourly load, with a
boundary-anchored path moving by (1,0), (0,1) or (1,1) steps.
"""

import hashlib
import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..data.features import TARGET, FeatureFrame
from ..utils.cache import cache_distance, get_cached_distance
from ..utils.errors import DataError

logger = logging.getLogger("ChargeCast")


@dataclass(frozen=True)
class DtwResult:
    distance: float
    path_length: int
    band: Optional[int] = None
    source_id: Optional[str] = None
    target_id: Optional[str] = None

    def to_dict(self) -> Dict:
        return asdict(self)


def znormalize(series: Sequence[float]) -> np.ndarray:
    """Zero mean, unit variance; a constant series maps to zeros."""
    x = np.asarray(series, dtype=np.float64)
    std = float(x.std())
    if std == 0.0:
        return np.zeros_like(x)
    return (x - x.mean()) / std


def dtw_distance(a: Sequence[float], b: Sequence[float], band: Optional[int] = None) -> DtwResult:
    """
    Classic O(n·m) DTW.

    Args:
        a: First series
        b: Second series
        band: Sakoe-Chiba half-width; cells with |i - j| > band are unreachable

    Raises:
        DataError: if either series is empty
        ValueError: if band < |n - m| (no admissible path)
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    n, m = len(x), len(y)
    if n == 0 or m == 0:
        raise DataError("DTW needs two non-empty series")
    if band is not None and band < abs(n - m):
        raise ValueError(f"band {band} is narrower than the length difference |{n} - {m}|")

    cost = (x[:, None] - y[None, :]) ** 2
    table = np.full((n + 1, m + 1), math.inf)
    table[0, 0] = 0.0
    for i in range(1, n + 1):
        lo, hi = 1, m
        if band is not None:
            lo, hi = max(1, i - band), min(m, i + band)
        for j in range(lo, hi + 1):
            table[i, j] = cost[i - 1, j - 1] + min(table[i - 1, j - 1], table[i - 1, j], table[i, j - 1])

    # Traceback, preferring the diagonal on ties
    i, j, length = n, m, 1
    while (i, j) != (1, 1):
        moves = [(table[i - 1, j - 1], i - 1, j - 1), (table[i - 1, j], i - 1, j), (table[i, j - 1], i, j - 1)]
        _, i, j = min(moves, key=lambda move: move[0])
        length += 1
    return DtwResult(float(table[n, m]), length, band)


def _fingerprint(values: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(values, dtype=np.float64).tobytes()).hexdigest()


def downsample(series: np.ndarray, max_points: Optional[int]) -> np.ndarray:
    """Block means so at most `max_points` values remain."""
    if max_points is None or len(series) <= max_points:
        return series
    factor = math.ceil(len(series) / max_points)
    usable = len(series) - len(series) % factor
    return series[len(series) - usable:].reshape(-1, factor).mean(axis=1)


def recent_overlap(target: FeatureFrame, candidate: FeatureFrame, window_days: int) -> Tuple[pd.Timestamp, pd.Timestamp]:
    """Most recent window (at most `window_days` days) covered by both frames."""
    start = max(target.timestamps[0], candidate.timestamps[0])
    end = min(target.timestamps[-1], candidate.timestamps[-1])
    if end < start:
        raise DataError(f"sites {target.site_id} and {candidate.site_id} have no overlapping hours")
    start = max(start, end - pd.Timedelta(hours=window_days * 24 - 1))
    return start, end


def site_distance(
    target: FeatureFrame,
    candidate: FeatureFrame,
    window_days: int = 28,
    max_points: Optional[int] = 336,
    band: Optional[int] = None,
) -> DtwResult:
    """DTW between the z-normalized hourly load of two sites over their recent overlap; memoized."""
    start, end = recent_overlap(target, candidate, window_days)
    a = downsample(target.data[TARGET].loc[start:end].to_numpy(dtype=np.float64), max_points)
    b = downsample(candidate.data[TARGET].loc[start:end].to_numpy(dtype=np.float64), max_points)
    a, b = znormalize(a), znormalize(b)

    key = (candidate.site_id, target.site_id, _fingerprint(b), _fingerprint(a), band)
    cached = get_cached_distance(key)
    if cached is not None:
        return cached
    raw = dtw_distance(b, a, band)
    result = DtwResult(raw.distance, raw.path_length, band, candidate.site_id, target.site_id)
    cache_distance(key, result)
    return result


def rank_sources(
    target: FeatureFrame,
    candidates: Sequence[FeatureFrame],
    window_days: int = 28,
    max_points: Optional[int] = 336,
    band: Optional[int] = None,
) -> List[DtwResult]:
    """
    Candidate sources ordered by ascending DTW distance to the target, ties by site id.

    Raises:
        DataError: if there are no candidates or a candidate shares no hours with the target
    """
    if not candidates:
        raise DataError("source ranking needs at least one candidate")
    results = [site_distance(target, c, window_days, max_points, band) for c in candidates]
    ranked = sorted(results, key=lambda r: (r.distance, r.source_id))
    for position, r in enumerate(ranked, start=1):
        logger.info(f"🔍 #{position} {r.source_id}: DTW {r.distance:.4f} (path {r.path_length})")
    return ranked
