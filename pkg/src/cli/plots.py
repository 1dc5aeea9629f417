import logging
from pathlib import Path
from typing import Dict, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..metrics.evaluation import IntervalSpec
from ..model.tcn import quantile_label
from ..utils.errors import DataError, ShapeError
from ..utils.io import write_csv

logger = logging.getLogger("ChargeCast")


def evaluation_series(evaluation) -> Tuple[pd.DatetimeIndex, np.ndarray, np.ndarray]:
    """Flatten (N, δ, |Q|) test forecasts to hourly timestamps, actuals and (N·δ, |Q|) predictions."""
    n, delta, q = evaluation.predictions.shape
    stamps = [origin + pd.Timedelta(hours=step) for origin in evaluation.origins for step in range(1, delta + 1)]
    return pd.DatetimeIndex(stamps), evaluation.actuals.reshape(n * delta), evaluation.predictions.reshape(n * delta, q)


def emit_plot_data(
    timestamps: Sequence,
    actuals: np.ndarray,
    predictions: np.ndarray,
    quantiles: Sequence[float],
    out_dir: Union[str, Path],
    interval: IntervalSpec = IntervalSpec(),
) -> Dict[str, Path]:
    """
    Write plot-ready data for forecasts against actuals.

    plot_data.csv holds long-format rows (timestamp, series, value_kwh) with
    series in {actual, q05, q50, ...}; coverage_bands.csv holds
    (timestamp, lower, upper, actual, covered) for the evaluated interval.

    Raises:
        DataError: if there is nothing to plot
        ShapeError: if the series are not aligned
    """
    stamps = pd.DatetimeIndex(pd.to_datetime(list(timestamps), utc=True)) if len(timestamps) else pd.DatetimeIndex([])
    actuals = np.asarray(actuals, dtype=np.float64).ravel()
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.size == 0 or len(stamps) == 0:
        raise DataError("no forecasts to emit")
    if predictions.ndim != 2 or predictions.shape[1] != len(quantiles):
        raise ShapeError(f"predictions {predictions.shape} do not match {len(quantiles)} quantile levels")
    if not len(stamps) == len(actuals) == len(predictions):
        raise ShapeError(
            f"misaligned series: {len(stamps)} timestamps, {len(actuals)} actuals, {len(predictions)} forecasts"
        )

    iso = [ts.isoformat() for ts in stamps]
    blocks = [pd.DataFrame({"timestamp": iso, "series": "actual", "value_kwh": actuals})]
    for i, q in enumerate(quantiles):
        blocks.append(pd.DataFrame({"timestamp": iso, "series": quantile_label(q), "value_kwh": predictions[:, i]}))
    long_format = pd.concat(blocks, ignore_index=True)

    quantiles = [float(q) for q in quantiles]
    bands = pd.DataFrame({"timestamp": iso})
    if interval.lower in quantiles and interval.upper in quantiles:
        lower = predictions[:, quantiles.index(interval.lower)]
        upper = predictions[:, quantiles.index(interval.upper)]
        lower, upper = np.minimum(lower, upper), np.maximum(lower, upper)
        bands["lower"], bands["upper"], bands["actual"] = lower, upper, actuals
        bands["covered"] = ((lower <= actuals) & (actuals <= upper)).astype(int)
    else:
        raise ShapeError(f"interval levels {interval.lower}, {interval.upper} are not among {quantiles}")

    out_dir = Path(out_dir)
    paths = {
        "plot_data": write_csv(out_dir / "plot_data.csv", long_format),
        "coverage_bands": write_csv(out_dir / "coverage_bands.csv", bands),
    }
    logger.info(f"✅ Wrote plot data ({len(long_format)} rows) to {paths['plot_data']}")
    return paths
