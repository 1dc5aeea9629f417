"""
Fitted transformation from a FeatureFrame to model-ready arrays.

The pipeline is fitted on the training range only and serialized into every
checkpoint, so later frames are transformed identically. Targets handed to
the harness are wrapped in GuardedArray: reads at or beyond the protected
(test) index raise LeakageError until the guard is explicitly released.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..utils.errors import DataError, LeakageError
from ..utils.io import json_sha256
from .features import (
    TARGET,
    WEEKDAY_NAMES,
    CategoricalPlan,
    FeatureFrame,
    MinMaxScaler,
    encode_categorical,
    fit_minmax,
)
from .station_encoder import StationEncoder, compress_station_activity, fit_linear_autoencoder

logger = logging.getLogger("ChargeCast")

# Calendar categoricals have known domains; declaring them keeps widths equal across sites
DECLARED_VOCABULARIES = {
    "day_type": ["holiday", "weekend", "workday"],
    "weekday": list(WEEKDAY_NAMES),
}


# ==================== LEAKAGE GUARD ====================

class GuardedArray:
    """1-D array whose tail from `protected_from` is unreadable while locked."""

    def __init__(self, values: np.ndarray, protected_from: Optional[int] = None, label: str = "target"):
        self._values = np.asarray(values, dtype=np.float64)
        self.protected_from = protected_from
        self.label = label
        self.locked = protected_from is not None
        self.reads: List[Tuple[int, int]] = []

    def __len__(self) -> int:
        return len(self._values)

    def _check(self, lowest: int, highest: int) -> None:
        self.reads.append((lowest, highest))
        if self.locked and highest >= self.protected_from:
            raise LeakageError(
                f"read of protected {self.label} index {highest} (test range starts at {self.protected_from}) "
                f"before final evaluation"
            )

    def __getitem__(self, key):
        n = len(self._values)
        if isinstance(key, slice):
            start, stop, step = key.indices(n)
            positions = range(start, stop, step)
            if len(positions):
                self._check(min(positions[0], positions[-1]), max(positions[0], positions[-1]))
        elif isinstance(key, (int, np.integer)):
            pos = int(key) % n if n else 0
            self._check(pos, pos)
        else:
            positions = np.arange(n)[key]
            if np.size(positions):
                self._check(int(np.min(positions)), int(np.max(positions)))
        return self._values[key]

    def __array__(self, dtype=None, copy=None):
        if len(self._values):
            self._check(0, len(self._values) - 1)
        return self._values if dtype is None else self._values.astype(dtype)

    def unlock(self) -> None:
        self.locked = False

    def lock(self) -> None:
        self.locked = self.protected_from is not None


@dataclass
class ModelInputs:
    """Scaled arrays of one site, aligned on contiguous hourly timestamps."""

    features: np.ndarray
    categorical: np.ndarray
    target: GuardedArray
    target_kwh: GuardedArray
    timestamps: pd.DatetimeIndex
    feature_names: List[str] = field(default_factory=list)
    embedding_vocab_sizes: List[int] = field(default_factory=list)
    site_id: str = ""

    def __post_init__(self):
        n = len(self.features)
        if len(self.target) != n or len(self.target_kwh) != n or len(self.timestamps) != n or len(self.categorical) != n:
            raise DataError("model inputs are not aligned on a common length")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def input_channels(self) -> int:
        return int(self.features.shape[1])

    @property
    def protected_from(self) -> Optional[int]:
        return self.target.protected_from

    def release_test_targets(self) -> None:
        self.target.unlock()
        self.target_kwh.unlock()

    def protect_test_targets(self) -> None:
        self.target.lock()
        self.target_kwh.lock()

    @classmethod
    def from_arrays(
        cls,
        features: np.ndarray,
        target: np.ndarray,
        categorical: Optional[np.ndarray] = None,
        timestamps: Optional[pd.DatetimeIndex] = None,
        protected_from: Optional[int] = None,
        target_kwh: Optional[np.ndarray] = None,
        embedding_vocab_sizes: Optional[Sequence[int]] = None,
    ) -> "ModelInputs":
        """Wrap plain arrays; timestamps default to hourly UTC from 2020-01-01."""
        features = np.asarray(features, dtype=np.float64)
        if features.ndim == 1:
            features = features[:, None]
        n = len(features)
        if categorical is None:
            categorical = np.zeros((n, 0), dtype=np.int64)
        if timestamps is None:
            timestamps = pd.date_range("2020-01-01", periods=n, freq="h", tz="UTC")
        kwh = target if target_kwh is None else target_kwh
        return cls(
            features=features,
            categorical=np.asarray(categorical, dtype=np.int64),
            target=GuardedArray(target, protected_from),
            target_kwh=GuardedArray(kwh, protected_from, label="kWh target"),
            timestamps=timestamps,
            feature_names=[f"x{i}" for i in range(features.shape[1])],
            embedding_vocab_sizes=list(embedding_vocab_sizes or []),
        )


# ==================== PIPELINE ====================

@dataclass
class FeaturePipeline:
    """Scaler, categorical plans and encoders fitted on one training range."""

    scaler: MinMaxScaler
    numeric_columns: List[str]
    passthrough_columns: List[str]
    categorical_plans: List[CategoricalPlan]
    category_encoders: Dict[str, StationEncoder] = field(default_factory=dict)
    station_encoder: Optional[StationEncoder] = None
    train_end: int = 0
    test_start: Optional[int] = None

    @classmethod
    def fit(
        cls,
        frame: FeatureFrame,
        train_end: int,
        test_start: Optional[int] = None,
        use_station_activity: bool = False,
        station_code_dim: int = 30,
        station_encoder_epochs: int = 200,
        station_encoder_lr: float = 0.01,
        seed: int = 0,
    ) -> "FeaturePipeline":
        """
        Fit every learned transformation on rows [0, train_end).

        Raises:
            LeakageError: if the training range reaches into the test range
            DataError: if the training range is empty
        """
        if test_start is not None and train_end > test_start:
            raise LeakageError(f"training range ends at {train_end}, after the test range start {test_start}")
        if not 0 < train_end <= len(frame):
            raise DataError(f"training range [0, {train_end}) is invalid for a frame of {len(frame)} hours")
        rows = slice(0, train_end)
        train_data = frame.data.iloc[rows]

        numeric = frame.columns_of("numeric")
        scaler = fit_minmax(frame, numeric + [TARGET], rows)
        passthrough = frame.columns_of("cyclic") + frame.columns_of("flag")

        plans: List[CategoricalPlan] = []
        encoders: Dict[str, StationEncoder] = {}
        for column in frame.columns_of("categorical"):
            plan = encode_categorical(column, train_data[column], DECLARED_VOCABULARIES.get(column))
            if plan.strategy == "autoencoder":
                onehot = plan.transform(train_data[column])
                fitted, curve = fit_linear_autoencoder(
                    onehot, min(station_code_dim, len(plan.vocabulary) - 1),
                    epochs=station_encoder_epochs, lr=station_encoder_lr, seed=seed,
                )
                encoders[column] = StationEncoder(
                    list(plan.vocabulary), fitted["encoder.weight"], fitted["encoder.bias"],
                    fitted["decoder.weight"], fitted["decoder.bias"], curve,
                )
            plans.append(plan)

        station_encoder = None
        if use_station_activity and frame.station_columns:
            _, station_encoder = compress_station_activity(
                [frame], [rows], code_dim=station_code_dim,
                epochs=station_encoder_epochs, lr=station_encoder_lr, seed=seed,
            )

        pipeline = cls(
            scaler, numeric, passthrough, plans, encoders, station_encoder,
            int(train_end), None if test_start is None else int(test_start),
        )
        logger.info(
            f"✅ Fitted feature pipeline on {train_end} hours: {len(pipeline.feature_names)} feature columns, "
            f"{len(pipeline.embedding_vocab_sizes)} embedded categoricals"
        )
        return pipeline

    # ----- shape -----

    @property
    def feature_names(self) -> List[str]:
        names = list(self.numeric_columns) + list(self.passthrough_columns)
        for plan in self.categorical_plans:
            if plan.strategy == "onehot":
                names.extend(plan.column_names())
            elif plan.strategy == "autoencoder":
                names.extend(self.category_encoders[plan.column].output_names(prefix=f"{plan.column}_code"))
        if self.station_encoder is not None:
            names.extend(self.station_encoder.output_names())
        return names

    @property
    def embedding_plans(self) -> List[CategoricalPlan]:
        return [p for p in self.categorical_plans if p.strategy == "embedding"]

    @property
    def embedding_vocab_sizes(self) -> List[int]:
        return [p.size for p in self.embedding_plans]

    # ----- transforms -----

    def transform(self, frame: FeatureFrame, protected_from: Optional[int] = None) -> ModelInputs:
        """Scale and encode `frame`; targets from `protected_from` on stay locked."""
        data = frame.data
        missing = [c for c in self.numeric_columns + self.passthrough_columns if c not in data.columns]
        missing += [p.column for p in self.categorical_plans if p.column not in data.columns]
        if missing:
            raise DataError(f"frame for {frame.site_id} lacks pipeline columns: {', '.join(missing)}")

        blocks: List[np.ndarray] = []
        for name in self.numeric_columns:
            blocks.append(self.scaler.transform_column(name, data[name].to_numpy())[:, None])
        for name in self.passthrough_columns:
            blocks.append(data[name].to_numpy(dtype=np.float64)[:, None])
        indices: List[np.ndarray] = []
        for plan in self.categorical_plans:
            encoded = plan.transform(data[plan.column])
            if plan.strategy == "onehot":
                blocks.append(encoded)
            elif plan.strategy == "autoencoder":
                blocks.append(self.category_encoders[plan.column].encode(encoded))
            else:
                indices.append(encoded[:, None])
        if self.station_encoder is not None:
            blocks.append(self.station_encoder.encode(self.station_encoder.align(frame)))

        features = np.concatenate(blocks, axis=1) if blocks else np.zeros((len(frame), 0))
        categorical = np.concatenate(indices, axis=1) if indices else np.zeros((len(frame), 0), dtype=np.int64)
        kwh = frame.target
        scaled = self.scaler.transform_column(TARGET, kwh)
        return ModelInputs(
            features=features,
            categorical=categorical.astype(np.int64),
            target=GuardedArray(scaled, protected_from),
            target_kwh=GuardedArray(kwh, protected_from, label="kWh target"),
            timestamps=frame.timestamps,
            feature_names=self.feature_names,
            embedding_vocab_sizes=self.embedding_vocab_sizes,
            site_id=frame.site_id,
        )

    def inverse_target(self, values: np.ndarray) -> np.ndarray:
        return self.scaler.inverse_column(TARGET, values)

    # ----- persistence -----

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scaler": self.scaler.to_dict(),
            "numeric_columns": self.numeric_columns,
            "passthrough_columns": self.passthrough_columns,
            "categorical_plans": [p.to_dict() for p in self.categorical_plans],
            "category_encoders": {k: v.to_dict() for k, v in self.category_encoders.items()},
            "station_encoder": None if self.station_encoder is None else self.station_encoder.to_dict(),
            "train_end": self.train_end,
            "test_start": self.test_start,
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "FeaturePipeline":
        station = payload.get("station_encoder")
        return cls(
            scaler=MinMaxScaler.from_dict(payload["scaler"]),
            numeric_columns=list(payload["numeric_columns"]),
            passthrough_columns=list(payload["passthrough_columns"]),
            categorical_plans=[CategoricalPlan.from_dict(p) for p in payload["categorical_plans"]],
            category_encoders={k: StationEncoder.from_dict(v) for k, v in payload.get("category_encoders", {}).items()},
            station_encoder=None if station is None else StationEncoder.from_dict(station),
            train_end=int(payload["train_end"]),
            test_start=payload.get("test_start"),
        )

    def fingerprint(self) -> str:
        return json_sha256(self.to_dict())
