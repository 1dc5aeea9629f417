"""
Hourly feature frames built from charging sessions.

Column kinds carried by a FeatureFrame:

    target       energy_kwh, kWh consumed in the hour
    numeric      active_stations, lag_24, lag_168 (min-max scaled by the pipeline)
    cyclic       hour/dow/month sin-cos pairs
    flag         is_holiday
    categorical  day_type (workday/weekend/holiday), weekday (Mon..Sun)
    station      station:<id> multi-hot activity (optional feature group)
"""

import logging
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..utils.errors import DataError
from ..utils.io import read_json, write_csv, write_json
from .sessions import SessionRecord

logger = logging.getLogger("ChargeCast")

TARGET = "energy_kwh"
HOUR_NS = 3_600_000_000_000
CYCLIC_PERIODS = {"hour": 24, "dow": 7, "month": 12}
WEEKDAY_NAMES = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"]
STATION_PREFIX = "station:"

ONEHOT_MAX_VOCAB = 5
EMBEDDING_MAX_VOCAB = 10


# ==================== FRAME ====================

@dataclass(frozen=True)
class FeatureFrame:
    """Contiguous hourly design matrix of one site plus its target column."""

    site_id: str
    data: pd.DataFrame
    column_kinds: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        index = self.data.index
        if not isinstance(index, pd.DatetimeIndex):
            raise DataError("feature frame must be indexed by timestamps")
        if len(index) == 0:
            raise DataError(f"feature frame for {self.site_id} is empty")
        if len(index) > 1:
            steps = np.diff(index.asi8)
            if np.any(steps != HOUR_NS):
                raise DataError(f"feature frame for {self.site_id} has gaps or unsorted hours")
        if TARGET not in self.data.columns:
            raise DataError(f"feature frame for {self.site_id} lacks the '{TARGET}' column")
        if self.data[TARGET].isna().any():
            raise DataError(f"feature frame for {self.site_id} has missing target hours")

    def __len__(self) -> int:
        return len(self.data)

    @property
    def timestamps(self) -> pd.DatetimeIndex:
        return self.data.index

    @property
    def target(self) -> np.ndarray:
        return self.data[TARGET].to_numpy(dtype=np.float64)

    def columns_of(self, kind: str) -> List[str]:
        return [c for c in self.data.columns if self.column_kinds.get(c) == kind]

    @property
    def station_columns(self) -> List[str]:
        return self.columns_of("station")

    def with_columns(self, columns: pd.DataFrame, kinds: Dict[str, str]) -> "FeatureFrame":
        data = self.data.copy()
        for name in columns.columns:
            data[name] = columns[name].to_numpy()
        return FeatureFrame(self.site_id, data, {**self.column_kinds, **kinds})

    def with_target(self, values: np.ndarray) -> "FeatureFrame":
        data = self.data.copy()
        data[TARGET] = np.asarray(values, dtype=np.float64)
        return FeatureFrame(self.site_id, data, dict(self.column_kinds))

    def slice_rows(self, start: int, stop: int) -> "FeatureFrame":
        return FeatureFrame(self.site_id, self.data.iloc[start:stop].copy(), dict(self.column_kinds))


# ==================== AGGREGATION ====================

def _last_hour(session: SessionRecord) -> pd.Timestamp:
    if session.disconnect > session.connect:
        return (session.disconnect - pd.Timedelta(microseconds=1)).floor("h")
    return session.connect.floor("h")


def aggregate_hourly(sessions: Sequence[SessionRecord], site: str) -> FeatureFrame:
    """
    Apportion session energy to hour bins by time overlap.

    The frame spans the first to the last session hour; hours without
    sessions hold zero. Station activity is kept as multi-hot columns.
    """
    site_sessions = [s for s in sessions if s.site_id == site]
    if not site_sessions:
        raise DataError(f"no sessions for site '{site}'")

    start = min(s.connect for s in site_sessions).floor("h")
    end = max(_last_hour(s) for s in site_sessions)
    index = pd.date_range(start, end, freq="h")
    hours = len(index)

    stations = sorted({s.station_id for s in site_sessions})
    station_pos = {sid: i for i, sid in enumerate(stations)}
    energy = np.zeros(hours, dtype=np.float64)
    active = np.zeros((hours, len(stations)), dtype=bool)

    origin = start.value
    for s in site_sessions:
        c = (s.connect.value - origin) / HOUR_NS
        d = (s.disconnect.value - origin) / HOUR_NS
        column = station_pos[s.station_id]
        if d <= c:
            h = int(math.floor(c))
            energy[h] += s.energy_kwh
            active[h, column] = True
            continue
        bins = np.arange(int(math.floor(c)), int(math.ceil(d)))
        overlap = np.minimum(bins + 1.0, d) - np.maximum(bins.astype(np.float64), c)
        energy[bins] += s.energy_kwh * overlap / (d - c)
        active[bins[overlap > 0], column] = True

    data = pd.DataFrame({TARGET: energy, "active_stations": active.sum(axis=1).astype(np.float64)}, index=index)
    station_frame = pd.DataFrame(
        active.astype(np.float64), index=index, columns=[f"{STATION_PREFIX}{sid}" for sid in stations]
    )
    data = pd.concat([data, station_frame], axis=1)
    kinds = {TARGET: "target", "active_stations": "numeric"}
    kinds.update({c: "station" for c in station_frame.columns})
    logger.info(f"✅ Aggregated {len(site_sessions)} sessions into {hours} hours for site {site}")
    return FeatureFrame(site, data, kinds)


# ==================== ANOMALIES ====================

@dataclass(frozen=True)
class AnomalyRecord:
    timestamp: pd.Timestamp
    original: float
    clipped: float


def filter_anomalies(
    frame: FeatureFrame, window: int = 168, k: float = 3.0
) -> Tuple[FeatureFrame, List[AnomalyRecord]]:
    """
    Clip target values outside [Q1 - k IQR, Q3 + k IQR] of their trailing window.

    Hours before the first full window use the first full window's bounds;
    windows with zero IQR are skipped.
    """
    y = frame.target
    if len(y) < window:
        raise DataError(f"anomaly filter needs at least {window} hours, frame has {len(y)}")
    if math.isinf(k):
        return frame, []

    series = pd.Series(y)
    rolling = series.rolling(window, min_periods=window)
    q1 = rolling.quantile(0.25).bfill().to_numpy()
    q3 = rolling.quantile(0.75).bfill().to_numpy()
    iqr = q3 - q1
    usable = iqr > 0
    low = q1 - k * iqr
    high = q3 + k * iqr

    clipped = y.copy()
    above = usable & (y > high)
    below = usable & (y < low)
    clipped[above] = high[above]
    clipped[below] = low[below]

    log: List[AnomalyRecord] = []
    for pos in np.flatnonzero(above | below):
        record = AnomalyRecord(frame.timestamps[pos], float(y[pos]), float(clipped[pos]))
        logger.debug(f"Clipped {record.timestamp}: {record.original:.3f} -> {record.clipped:.3f} kWh")
        log.append(record)
    if log:
        logger.info(f"⚠️ Clipped {len(log)} anomalous hours at site {frame.site_id}")
    return frame.with_target(clipped), log


# ==================== CALENDAR ====================

def encode_cyclic(timestamp) -> Dict[str, Tuple[float, float]]:
    """(sin, cos) pairs for hour of day, day of week and month."""
    ts = pd.Timestamp(timestamp)
    values = {"hour": ts.hour, "dow": ts.dayofweek, "month": ts.month - 1}
    return {
        name: (math.sin(2 * math.pi * v / CYCLIC_PERIODS[name]), math.cos(2 * math.pi * v / CYCLIC_PERIODS[name]))
        for name, v in values.items()
    }


def cyclic_features(index: pd.DatetimeIndex) -> pd.DataFrame:
    positions = {"hour": index.hour, "dow": index.dayofweek, "month": index.month - 1}
    out = pd.DataFrame(index=index)
    for name, values in positions.items():
        angle = 2 * np.pi * np.asarray(values, dtype=np.float64) / CYCLIC_PERIODS[name]
        out[f"{name}_sin"] = np.sin(angle)
        out[f"{name}_cos"] = np.cos(angle)
    return out


def add_calendar_features(
    frame: FeatureFrame, holidays: Optional[Iterable[Union[date, str]]] = None
) -> FeatureFrame:
    """Add cyclic encodings, holiday flag, day type, weekday and weekly/daily target lags."""
    index = frame.timestamps
    holiday_dates = {pd.Timestamp(d).date() for d in (holidays or [])}
    dates = pd.Series(index.date, index=index)

    is_holiday = dates.isin(holiday_dates).to_numpy()
    weekend = np.asarray(index.dayofweek >= 5)
    day_type = np.where(is_holiday, "holiday", np.where(weekend, "weekend", "workday"))
    weekday = np.asarray(WEEKDAY_NAMES, dtype=object)[np.asarray(index.dayofweek)]

    target = pd.Series(frame.target, index=index)
    columns = cyclic_features(index)
    columns["is_holiday"] = is_holiday.astype(np.float64)
    columns["day_type"] = day_type
    columns["weekday"] = weekday
    columns["lag_24"] = target.shift(24).fillna(0.0).to_numpy()
    columns["lag_168"] = target.shift(168).fillna(0.0).to_numpy()

    kinds = {c: "cyclic" for c in columns.columns if c.endswith(("_sin", "_cos"))}
    kinds.update({"is_holiday": "flag", "day_type": "categorical", "weekday": "categorical",
                  "lag_24": "numeric", "lag_168": "numeric"})
    return frame.with_columns(columns, kinds)


def build_feature_frame(
    sessions: Sequence[SessionRecord],
    site: str,
    holidays: Optional[Iterable[Union[date, str]]] = None,
    anomaly_window: int = 168,
    anomaly_k: float = 3.0,
) -> Tuple[FeatureFrame, List[AnomalyRecord]]:
    """Aggregate, clip anomalies, then derive calendar and lag features."""
    frame = aggregate_hourly(sessions, site)
    if len(frame) >= anomaly_window:
        frame, anomalies = filter_anomalies(frame, window=anomaly_window, k=anomaly_k)
    else:
        logger.warning(f"⚠️ Site {site} has {len(frame)} hours (< {anomaly_window}); anomaly filter skipped")
        anomalies = []
    return add_calendar_features(frame, holidays), anomalies


# ==================== MIN-MAX SCALING ====================

@dataclass
class MinMaxScaler:
    """Per-column min-max scaling; constant columns pass through unscaled."""

    minimums: Dict[str, float] = field(default_factory=dict)
    maximums: Dict[str, float] = field(default_factory=dict)
    constant: List[str] = field(default_factory=list)

    def transform_column(self, name: str, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if name in self.constant:
            return values.copy()
        lo, hi = self.minimums[name], self.maximums[name]
        return (values - lo) / (hi - lo)

    def inverse_column(self, name: str, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if name in self.constant:
            return values.copy()
        lo, hi = self.minimums[name], self.maximums[name]
        return values * (hi - lo) + lo

    @property
    def columns(self) -> List[str]:
        return list(self.minimums)

    def to_dict(self) -> Dict:
        return {"minimums": self.minimums, "maximums": self.maximums, "constant": self.constant}

    @classmethod
    def from_dict(cls, payload: Dict) -> "MinMaxScaler":
        return cls(dict(payload["minimums"]), dict(payload["maximums"]), list(payload["constant"]))


def fit_minmax(frame: FeatureFrame, columns: Sequence[str], rows: slice) -> MinMaxScaler:
    """Fit per-column bounds on `rows` (the training range) only."""
    scaler = MinMaxScaler()
    subset = frame.data.iloc[rows]
    if subset.empty:
        raise DataError("cannot fit a scaler on an empty training range")
    for name in columns:
        values = subset[name].to_numpy(dtype=np.float64)
        lo, hi = float(values.min()), float(values.max())
        scaler.minimums[name] = lo
        scaler.maximums[name] = hi
        if hi <= lo:
            scaler.constant.append(name)
            logger.warning(f"⚠️ Column '{name}' is constant on the training range; passed through unscaled")
    return scaler


def apply_minmax(frame: FeatureFrame, scaler: MinMaxScaler) -> FeatureFrame:
    data = frame.data.copy()
    for name in scaler.columns:
        data[name] = scaler.transform_column(name, data[name].to_numpy())
    return FeatureFrame(frame.site_id, data, dict(frame.column_kinds))


def invert_minmax(values: np.ndarray, scaler: MinMaxScaler, column: str = TARGET) -> np.ndarray:
    return scaler.inverse_column(column, values)


# ==================== CATEGORICALS ====================

def build_vocabulary(values: Iterable) -> List[str]:
    return sorted({str(v) for v in values})


@dataclass
class CategoricalPlan:
    """
    Encoding chosen from vocabulary size:
    2-5 values one-hot, 6-10 embedding indices, more than 10 one-hot then autoencoder.
    """

    column: str
    vocabulary: List[str]
    strategy: str
    embedding_dim: Optional[int] = None

    @property
    def size(self) -> int:
        return len(self.vocabulary)

    def column_names(self) -> List[str]:
        if self.strategy == "embedding":
            return [self.column]
        return [f"{self.column}={v}" for v in self.vocabulary]

    def transform(self, values: Sequence) -> np.ndarray:
        """One-hot matrix (T, |vocab|) or int indices (T,) with 0 reserved for unseen values."""
        lookup = {v: i for i, v in enumerate(self.vocabulary)}
        positions = np.array([lookup.get(str(v), -1) for v in values], dtype=np.int64)
        unseen = int(np.sum(positions < 0))
        if unseen:
            logger.warning(f"⚠️ {unseen} unseen '{self.column}' values mapped to the OOV index 0")
        if self.strategy == "embedding":
            return positions + 1
        onehot = np.zeros((len(positions), self.size), dtype=np.float64)
        seen = positions >= 0
        onehot[np.flatnonzero(seen), positions[seen]] = 1.0
        return onehot

    def to_dict(self) -> Dict:
        return {"column": self.column, "vocabulary": self.vocabulary, "strategy": self.strategy,
                "embedding_dim": self.embedding_dim}

    @classmethod
    def from_dict(cls, payload: Dict) -> "CategoricalPlan":
        return cls(payload["column"], list(payload["vocabulary"]), payload["strategy"], payload.get("embedding_dim"))


def encode_categorical(column: str, values: Iterable, vocabulary: Optional[Sequence[str]] = None) -> CategoricalPlan:
    """Choose the encoding of one categorical column from its training-range vocabulary."""
    vocab = list(vocabulary) if vocabulary is not None else build_vocabulary(values)
    if not vocab:
        raise DataError(f"categorical column '{column}' has an empty vocabulary")
    size = len(vocab)
    if size <= ONEHOT_MAX_VOCAB:
        return CategoricalPlan(column, vocab, "onehot")
    if size <= EMBEDDING_MAX_VOCAB:
        return CategoricalPlan(column, vocab, "embedding", embedding_dim=math.ceil(size / 2))
    return CategoricalPlan(column, vocab, "autoencoder")


# ==================== FRAME CACHE ====================

def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def save_frame(frame: FeatureFrame, path: Union[str, Path], extra: Optional[Dict] = None) -> Path:
    """Write the frame as CSV plus a `<name>.meta.json` sidecar with site id and column kinds."""
    path = Path(path)
    table = frame.data.copy()
    table.insert(0, "timestamp", [ts.isoformat() for ts in frame.timestamps])
    write_csv(path, table)
    meta = {"site_id": frame.site_id, "column_kinds": frame.column_kinds, "hours": len(frame)}
    meta.update(extra or {})
    write_json(_sidecar(path), meta)
    logger.info(f"✅ Wrote feature frame ({len(frame)} hours) to {path}")
    return path


def load_frame(path: Union[str, Path]) -> FeatureFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Feature frame not found: {path}")
    meta_path = _sidecar(path)
    if not meta_path.exists():
        raise FileNotFoundError(f"Feature frame sidecar not found: {meta_path}")
    meta = read_json(meta_path)
    kinds: Dict[str, str] = dict(meta["column_kinds"])
    dtypes = {c: str for c, kind in kinds.items() if kind == "categorical"}
    table = pd.read_csv(path, dtype=dtypes)
    if "timestamp" not in table.columns:
        raise DataError(f"feature frame {path} lacks a 'timestamp' column")
    index = pd.DatetimeIndex(pd.to_datetime(table.pop("timestamp"), utc=True))
    table.index = index
    return FeatureFrame(str(meta["site_id"]), table, kinds)
